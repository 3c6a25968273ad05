#pragma once

// Inner loop: the Gaussian approximation pi_G(x | theta, y) at a fixed
// hyperparameter value.  Newton iterations with the analytic likelihood
// curvature, hard linear constraints handled by conditioning-by-kriging,
// and the Laplace evidence contribution
//   log pi(x*, y | theta) - log pi_G(x* | theta, y).
// All Gaussian log densities are taken with respect to the
// constraint-regularized precision; the kriging corrections below make the
// regularization cancel exactly.

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <vector>

#include "nla/assemble.hpp"
#include "nla/errors.hpp"
#include "nla/latent.hpp"
#include "nla/likelihood.hpp"
#include "nla/sparse.hpp"

namespace nla {

/// Precomputed pieces for conditioning a Gaussian on A x = e.
struct Kriging {
    Matrix W;  // Q^{-1} A^T
    Matrix S;  // A Q^{-1} A^T
    Eigen::LLT<Matrix> llt;
    double logdet = 0.0;
    bool empty = true;
};

inline Kriging make_kriging(const CholeskyHandle& chol, const ConstraintSet& cons) {
    Kriging k;
    if (cons.count() == 0) return k;
    k.empty = false;
    k.W = chol.solve(Matrix(cons.A.transpose()));
    k.S = cons.A * k.W;
    k.llt.compute(k.S);
    if (k.llt.info() != Eigen::Success)
        throw RankDeficientConstraint("kriging: constraint covariance is singular");
    k.logdet = 0.0;
    Matrix L = k.llt.matrixL();
    for (Eigen::Index i = 0; i < L.rows(); ++i) k.logdet += 2.0 * std::log(L(i, i));
    return k;
}

/// Mean of the Gaussian after conditioning on the constraints.
inline Vector krig_mean(const Kriging& k, const ConstraintSet& cons, const Vector& mu) {
    if (k.empty) return mu;
    return mu - k.W * k.llt.solve(cons.A * mu - cons.e);
}

/// log N(e; A mu, S): the correction that turns an unconstrained Gaussian
/// log density into the conditional one.
inline double krig_logdens(const Kriging& k, const ConstraintSet& cons, const Vector& mu) {
    if (k.empty) return 0.0;
    Vector r = cons.A * mu - cons.e;
    double quad = r.dot(k.llt.solve(r));
    double m = static_cast<double>(cons.count());
    return -0.5 * m * std::log(2.0 * M_PI) - 0.5 * k.logdet - 0.5 * quad;
}

/// Marginal variances after conditioning: var_i - sum_j (W S^{-1})_ij W_ij.
inline Vector krig_variances(const Kriging& k, const Vector& var_u) {
    if (k.empty) return var_u;
    Matrix M = k.llt.solve(Matrix(k.W.transpose())).transpose();  // W S^{-1}
    return var_u - (M.array() * k.W.array()).rowwise().sum().matrix();
}

/// Gaussian log density with precision Q (full form) and given log|Q|.
inline double gaussian_logdens(double logdet, const SpMat& Qfull, const Vector& x,
                               const Vector& mu) {
    Vector d = x - mu;
    double quad = d.dot(Qfull * d);
    double n = static_cast<double>(x.size());
    return 0.5 * logdet - 0.5 * n * std::log(2.0 * M_PI) - 0.5 * quad;
}

struct GaussianApprox {
    int n = 0;
    Vector x_star;  // constrained mode of pi(x | theta, y)
    Vector x_u;     // unconstrained mean of the fitted Gaussian
    Vector var;     // constrained marginal variances
    Vector cdiag;   // -d2 of the log likelihood per field index (0 elsewhere)
    Vector d3diag;  // d3 of the log likelihood per field index
    std::shared_ptr<const CholeskyHandle> chol;        // factor of Qstar
    std::shared_ptr<const CholeskyHandle> prior_chol;  // factor of the prior precision
    SparseSymmetric Qstar;
    Kriging kr;
    double loglik_sum = 0.0;
    double log_evidence = 0.0;  // log pi(x*, y | theta) - log pi_G(x*)
    int iters = 0;
};

namespace detail {

inline double loglik_total(const Assembled& a, const Vector& x) {
    double s = 0.0;
    for (const auto& o : a.obs) {
        int idx = a.data_offset + o.row;
        auto t = loglik(a.families[static_cast<std::size_t>(o.block)], o.y, x(idx),
                        a.block_tau[static_cast<std::size_t>(o.block)], o.ntrials);
        s += t.ll;
    }
    return s;
}

}  // namespace detail

/// Fits the Gaussian approximation by constrained Newton iteration.
/// `warm` seeds the expansion point (e.g. the previous theta's mode).
/// `light` skips the marginal variances and the evidence pieces; used for
/// the repeated conditional re-optimizations of the laplace strategy.
inline GaussianApprox fit_gaussian_approx(const Assembled& a, const Vector* warm = nullptr,
                                          bool light = false) {
    const int n = a.n;
    GaussianApprox ga;
    ga.n = n;
    Vector x = (warm != nullptr && warm->size() == n) ? *warm : Vector::Zero(n);

    SpMat Qp_full = a.Q.full();
    auto objective = [&](const Vector& v) {
        double quad = v.dot(Qp_full * v);
        double lin = a.b.dot(v);
        double ll = detail::loglik_total(a, v);
        return -0.5 * quad + lin + ll;
    };

    const int max_iters = 100;
    double f_old = objective(x);
    bool on_manifold = false;  // starting point need not satisfy the constraints
    for (int it = 0; it < max_iters; ++it) {
        ga.iters = it + 1;
        ga.cdiag = Vector::Zero(n);
        ga.d3diag = Vector::Zero(n);
        Vector b = a.b;
        for (const auto& o : a.obs) {
            int idx = a.data_offset + o.row;
            auto t = loglik(a.families[static_cast<std::size_t>(o.block)], o.y, x(idx),
                            a.block_tau[static_cast<std::size_t>(o.block)], o.ntrials);
            if (!std::isfinite(t.d1) || !std::isfinite(t.d2))
                throw NonFiniteEvaluation("fit: non-finite likelihood derivative");
            ga.cdiag(idx) += -t.d2;
            ga.d3diag(idx) += t.d3;
            b(idx) += t.d1 - t.d2 * x(idx);
        }
        SparseSymmetric Qstar = a.Q;
        for (int i = 0; i < n; ++i)
            if (ga.cdiag(i) != 0.0) Qstar.add(i, i, ga.cdiag(i));
        auto chol = std::make_shared<CholeskyHandle>(Qstar);
        Vector x_u = chol->solve(b);
        Kriging kr = make_kriging(*chol, a.constraints);
        Vector x_new = krig_mean(kr, a.constraints, x_u);

        // backtracking on the constrained manifold; the first step may jump
        // onto it from an infeasible start, so it is taken in full
        double alpha = 1.0;
        Vector x_try = x_new;
        double f_try = objective(x_try);
        if (on_manifold) {
            int halvings = 0;
            while ((!std::isfinite(f_try) || f_try < f_old - 1e-12 * (1.0 + std::abs(f_old))) &&
                   halvings < 40) {
                alpha *= 0.5;
                x_try = x + alpha * (x_new - x);
                f_try = objective(x_try);
                ++halvings;
            }
            if (!std::isfinite(f_try)) throw NonConvergence("fit: objective is non-finite");
        }
        double step = (x_try - x).lpNorm<Eigen::Infinity>();
        double scale = 1.0 + x_try.lpNorm<Eigen::Infinity>();
        x = x_try;
        f_old = f_try;
        on_manifold = true;
        bool done = step < 1e-9 * scale;
        if (done || it == max_iters - 1) {
            if (!done && (warm == nullptr))
                throw NonConvergence("fit: Newton iteration did not converge");
            ga.x_star = x;
            ga.x_u = x_u;
            ga.Qstar = std::move(Qstar);
            ga.chol = std::move(chol);
            ga.kr = std::move(kr);
            break;
        }
    }
    if (ga.chol == nullptr) throw NonConvergence("fit: Newton iteration did not converge");
    ga.loglik_sum = detail::loglik_total(a, ga.x_star);
    if (light) return ga;

    ga.var = krig_variances(ga.kr, ga.chol->marginal_variances());
    for (int i = 0; i < n; ++i)
        if (!(ga.var(i) > 0.0))
            throw NotPositiveDefinite("fit: nonpositive marginal variance");

    // evidence contribution: constrained prior density at x* plus the
    // likelihood, minus the constrained Gaussian-approximation density at x*
    ga.prior_chol = std::make_shared<CholeskyHandle>(a.Q);
    Vector mu_p = ga.prior_chol->solve(a.b);
    Kriging kp = make_kriging(*ga.prior_chol, a.constraints);
    double prior_ld = gaussian_logdens(ga.prior_chol->logdet(), Qp_full, ga.x_star, mu_p) -
                      krig_logdens(kp, a.constraints, mu_p);
    SpMat Qs_full = ga.Qstar.full();
    double approx_ld = gaussian_logdens(ga.chol->logdet(), Qs_full, ga.x_star, ga.x_u) -
                       krig_logdens(ga.kr, a.constraints, ga.x_u);
    ga.log_evidence = prior_ld + ga.loglik_sum - approx_ld;
    return ga;
}

/// log pi(theta | y) up to a constant, for a free internal-scale theta.
inline double log_posterior_theta(const ModelSpec& spec, const HyperRegistry& reg,
                                  const Vector& theta_free, GaussianApprox* out = nullptr,
                                  const Vector* warm = nullptr) {
    Vector full = reg.expand(theta_free);
    ThetaView tv(reg, full);
    Assembled a = assemble_joint(spec, tv);
    GaussianApprox ga = fit_gaussian_approx(a, warm);
    double lp = reg.log_prior(full) + ga.log_evidence;
    if (out != nullptr) *out = std::move(ga);
    return lp;
}

}  // namespace nla
