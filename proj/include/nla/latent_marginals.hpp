#pragma once

// Conditional marginals pi(x_i | theta, y) at three accuracy levels, their
// mixture integration over the explored theta points, and posteriors of
// linear combinations of the latent field (fast moment-based and enlarged
// field variants).

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "nla/assemble.hpp"
#include "nla/errors.hpp"
#include "nla/gaussian_approx.hpp"
#include "nla/marginal.hpp"

namespace nla {

enum class Strategy { Gaussian, SimplifiedLaplace, Laplace };

inline Strategy strategy_from_name(const std::string& s) {
    if (s == "gaussian") return Strategy::Gaussian;
    if (s == "simplified_laplace") return Strategy::SimplifiedLaplace;
    if (s == "laplace") return Strategy::Laplace;
    throw SpecError("unknown strategy '" + s + "'");
}

/// One latent conditional at a fixed theta.  The gaussian strategy is fully
/// described by (mean, sd); the corrected strategies carry a 9-point
/// log-density tabulation interpolated by a natural cubic spline with
/// gaussian tails of scale sd.
struct ConditionalMarginal {
    Strategy strategy = Strategy::Gaussian;
    double mean = 0.0;
    double sd = 1.0;
    Vector abscissas;  // empty for gaussian
    Vector logdens;    // shifted so max is 0
};

namespace detail {

/// Interpolates a log density: a gaussian baseline -(v-c)^2/(2 s^2) is
/// subtracted first and the residual fitted with a natural cubic spline, so
/// an exactly quadratic log density is reproduced exactly and the tails
/// continue the baseline with the residual extended linearly.
struct LogSpline {
    Vector x, y, m;  // residual values and their spline second derivatives
    double center = 0.0, scale = 1.0;

    LogSpline(const Vector& xs, const Vector& raw, double c, double s)
        : x(xs), y(raw), center(c), scale(s) {
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            double d = (x(i) - center) / scale;
            y(i) += 0.5 * d * d;
        }
        const Eigen::Index n = x.size();
        m = Vector::Zero(n);
        if (n < 3) return;
        Matrix T = Matrix::Zero(n - 2, n - 2);
        Vector r(n - 2);
        for (Eigen::Index i = 1; i + 1 < n; ++i) {
            double h0 = x(i) - x(i - 1);
            double h1 = x(i + 1) - x(i);
            if (i > 1) T(i - 1, i - 2) = h0 / 6.0;
            T(i - 1, i - 1) = (h0 + h1) / 3.0;
            if (i + 2 < n) T(i - 1, i) = h1 / 6.0;
            r(i - 1) = (y(i + 1) - y(i)) / h1 - (y(i) - y(i - 1)) / h0;
        }
        m.segment(1, n - 2) = T.ldlt().solve(r);
    }

    double slope_at_end(bool right) const {
        const Eigen::Index n = x.size();
        if (right) {
            double h = x(n - 1) - x(n - 2);
            return (y(n - 1) - y(n - 2)) / h + h * (2.0 * m(n - 1) + m(n - 2)) / 6.0;
        }
        double h = x(1) - x(0);
        return (y(1) - y(0)) / h - h * (2.0 * m(0) + m(1)) / 6.0;
    }

    double operator()(double v) const {
        const Eigen::Index n = x.size();
        double base = (v - center) / scale;
        base = -0.5 * base * base;
        if (v <= x(0)) return base + y(0) + slope_at_end(false) * (v - x(0));
        if (v >= x(n - 1)) return base + y(n - 1) + slope_at_end(true) * (v - x(n - 1));
        Eigen::Index lo = 0, hi = n - 1;
        while (hi - lo > 1) {
            Eigen::Index mid = (lo + hi) / 2;
            (x(mid) <= v ? lo : hi) = mid;
        }
        double h = x(hi) - x(lo);
        double a = (x(hi) - v) / h;
        double b = (v - x(lo)) / h;
        return base + a * y(lo) + b * y(hi) +
               ((a * a * a - a) * m(lo) + (b * b * b - b) * m(hi)) * h * h / 6.0;
    }
};

inline LogSpline make_spline(const ConditionalMarginal& cm) {
    // abscissas are mode + {-2..2} * 0.5 * sd0: recover the original scale
    // from the spacing so the baseline is independent of later moment updates
    const Eigen::Index mid = cm.abscissas.size() / 2;
    double sd0 = 2.0 * (cm.abscissas(mid + 1) - cm.abscissas(mid));
    return LogSpline(cm.abscissas, cm.logdens, cm.abscissas(mid), sd0);
}

inline double conditional_logdens_at(const ConditionalMarginal& cm, double v) {
    if (cm.strategy == Strategy::Gaussian || cm.abscissas.size() == 0) {
        double d = (v - cm.mean) / cm.sd;
        return -0.5 * d * d;
    }
    return make_spline(cm)(v);
}

/// Tabulates the conditional as a proper density and refreshes its moments.
inline Marginal conditional_tabulated(ConditionalMarginal& cm) {
    Vector x = linspace(cm.mean - 6.0 * cm.sd, cm.mean + 6.0 * cm.sd, kMarginalPoints);
    Vector f(kMarginalPoints);
    if (cm.strategy == Strategy::Gaussian || cm.abscissas.size() == 0) {
        for (int i = 0; i < kMarginalPoints; ++i) {
            double d = (x(i) - cm.mean) / cm.sd;
            f(i) = std::exp(-0.5 * d * d);
        }
    } else {
        LogSpline sp = make_spline(cm);
        for (int i = 0; i < kMarginalPoints; ++i) f(i) = std::exp(sp(x(i)));
    }
    Marginal m = make_marginal(x, f);
    if (cm.strategy != Strategy::Gaussian && cm.abscissas.size() > 0) {
        cm.mean = m.mean;
        cm.sd = m.sd;
    }
    return m;
}

}  // namespace detail

/// Conditional marginal of latent index i under the given strategy.
inline ConditionalMarginal conditional_marginal(const Assembled& a, const GaussianApprox& ga,
                                                int i, Strategy strategy) {
    if (i < 0 || i >= a.n) throw DimensionMismatch("conditional_marginal: index out of range");
    ConditionalMarginal cm;
    cm.strategy = strategy;
    cm.mean = ga.x_star(i);
    cm.sd = std::sqrt(ga.var(i));
    if (strategy == Strategy::Gaussian) return cm;

    static const double kSteps[9] = {-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0};
    SpMat Qp_full = a.Q.full();
    Vector abscissas(9), logdens(9);

    if (strategy == Strategy::SimplifiedLaplace) {
        // evaluate the true log joint along the conditional-mean line of the
        // constrained gaussian approximation: captures the likelihood's
        // location and skewness corrections without re-optimization
        Vector ei = Vector::Zero(a.n);
        ei(i) = 1.0;
        Vector col = ga.chol->solve(ei);
        if (!ga.kr.empty) col -= ga.kr.W * ga.kr.llt.solve(a.constraints.A * col);
        Vector dir = col / col(i);  // moves x_i by one unit, stays on constraints
        for (int k = 0; k < 9; ++k) {
            double t = kSteps[k] * cm.sd;
            Vector x = ga.x_star + t * dir;
            abscissas(k) = ga.x_star(i) + t;
            logdens(k) = -0.5 * x.dot(Qp_full * x) + a.b.dot(x) + detail::loglik_total(a, x);
        }
    } else {
        // laplace: re-optimize x_{-i} at each abscissa by appending x_i = v
        // as an extra linear constraint, then apply Eq.-(6) structure
        Assembled a2 = a;
        const int kc = a.constraints.count();
        a2.constraints.A.conservativeResize(kc + 1, a.n);
        a2.constraints.A.row(kc).setZero();
        a2.constraints.A(kc, i) = 1.0;
        a2.constraints.e.conservativeResize(kc + 1);
        for (int k = 0; k < 9; ++k) {
            double v = ga.x_star(i) + kSteps[k] * cm.sd;
            a2.constraints.e(kc) = v;
            GaussianApprox cond = fit_gaussian_approx(a2, &ga.x_star, /*light=*/true);
            const Vector& xc = cond.x_star;
            double joint = -0.5 * xc.dot(Qp_full * xc) + a.b.dot(xc) + cond.loglik_sum;
            SpMat Qs_full = cond.Qstar.full();
            double denom = gaussian_logdens(cond.chol->logdet(), Qs_full, xc, cond.x_u) -
                           krig_logdens(cond.kr, a2.constraints, cond.x_u);
            abscissas(k) = v;
            logdens(k) = joint - denom;
        }
    }
    logdens.array() -= logdens.maxCoeff();
    cm.abscissas = abscissas;
    cm.logdens = logdens;
    detail::conditional_tabulated(cm);  // refresh mean/sd from the density
    return cm;
}

/// Eq.-(2) mixture over explored theta points.  `lps` are log posterior
/// densities, `deltas` the integration weights from the exploration.
inline Marginal integrate_marginal(std::vector<ConditionalMarginal> comps,
                                   const std::vector<double>& lps,
                                   const std::vector<double>& deltas) {
    if (comps.empty() || comps.size() != lps.size() || comps.size() != deltas.size())
        throw EmptyGrid("integrate_marginal: no grid points");
    const std::size_t K = comps.size();
    double lp_max = lps[0];
    for (double v : lps) lp_max = std::max(lp_max, v);
    std::vector<double> w(K);
    double sw = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        w[k] = std::exp(lps[k] - lp_max) * deltas[k];
        sw += w[k];
    }
    for (auto& v : w) v /= sw;

    // per-component proper densities on their own ranges, plus mixture moments
    std::vector<Marginal> tabs;
    tabs.reserve(K);
    double mu = 0.0, ex2 = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        tabs.push_back(detail::conditional_tabulated(comps[k]));
        mu += w[k] * tabs.back().mean;
        ex2 += w[k] * (tabs.back().sd * tabs.back().sd + tabs.back().mean * tabs.back().mean);
    }
    double sd = std::sqrt(std::max(ex2 - mu * mu, 1e-300));

    Vector x = linspace(mu - 5.0 * sd, mu + 5.0 * sd, kMarginalPoints);
    Vector f = Vector::Zero(kMarginalPoints);
    for (std::size_t k = 0; k < K; ++k)
        for (int a = 0; a < kMarginalPoints; ++a)
            f(a) += w[k] * marginal_density_at(tabs[k], x(a));
    return make_marginal(x, f);
}

// ---------------------------------------------------------------------------
// linear combinations

/// Resolves the model's lincomb definitions into rows over the full field.
inline Matrix lincomb_rows(const ModelSpec& spec, const Assembled& a) {
    Matrix B = Matrix::Zero(static_cast<Eigen::Index>(spec.lincombs.size()), a.n);
    for (std::size_t j = 0; j < spec.lincombs.size(); ++j) {
        const auto& lc = spec.lincombs[j];
        if (lc.terms.empty()) throw SpecError("lincomb '" + lc.name + "' has no terms");
        for (const auto& t : lc.terms) {
            const IndexEntry& en = a.entry(t.component);
            int off = t.is_fixed_effect ? 0 : t.index - 1;
            if (off < 0 || off >= en.length)
                throw DimensionMismatch("lincomb '" + lc.name + "': index out of range");
            B(static_cast<Eigen::Index>(j), en.offset + off) += t.weight;
        }
        if (B.row(static_cast<Eigen::Index>(j)).cwiseAbs().maxCoeff() == 0.0)
            throw SpecError("lincomb '" + lc.name + "' has all-zero weights");
    }
    return B;
}

/// Mean and covariance of v = B x under one fitted conditional.  `mu`
/// (optional) overrides the mean vector, e.g. with strategy-corrected
/// per-element conditional means.
inline void lincomb_moments(const GaussianApprox& ga, const Matrix& B, Vector* mean, Matrix* cov,
                            const Vector* mu = nullptr) {
    if (B.cols() != ga.n) throw DimensionMismatch("lincomb: B column count");
    *mean = B * (mu != nullptr ? *mu : ga.x_star);
    Matrix V = ga.chol->solve(Matrix(B.transpose()));  // n x k
    Matrix C = B * V;
    if (!ga.kr.empty) {
        Matrix AV = ga.kr.W.transpose() * B.transpose();  // (A Sigma B')' pieces
        C -= AV.transpose() * ga.kr.llt.solve(AV);
    }
    *cov = 0.5 * (C + C.transpose());
}

/// Per-lincomb posterior marginals by moment matching at each theta point
/// and Eq.-(2) mixture integration.
inline std::vector<Marginal> lincomb_fast(const std::vector<const GaussianApprox*>& fits,
                                          const std::vector<double>& lps,
                                          const std::vector<double>& deltas, const Matrix& B,
                                          const std::vector<Vector>* strategy_means = nullptr) {
    if (fits.empty()) throw EmptyGrid("lincomb_fast: no grid points");
    const Eigen::Index k = B.rows();
    std::vector<Vector> means(fits.size());
    std::vector<Matrix> covs(fits.size());
    for (std::size_t p = 0; p < fits.size(); ++p)
        lincomb_moments(*fits[p], B, &means[p], &covs[p],
                        strategy_means != nullptr ? &(*strategy_means)[p] : nullptr);
    std::vector<Marginal> out;
    out.reserve(static_cast<std::size_t>(k));
    for (Eigen::Index j = 0; j < k; ++j) {
        std::vector<ConditionalMarginal> comps(fits.size());
        for (std::size_t p = 0; p < fits.size(); ++p) {
            comps[p].strategy = Strategy::Gaussian;
            comps[p].mean = means[p](j);
            comps[p].sd = std::sqrt(covs[p](j, j));
        }
        out.push_back(integrate_marginal(std::move(comps), lps, deltas));
    }
    return out;
}

/// Posterior correlation matrix of the lincombs by the law of total
/// covariance over the theta mixture.
inline Matrix lincomb_correlation(const std::vector<const GaussianApprox*>& fits,
                                  const std::vector<double>& lps,
                                  const std::vector<double>& deltas, const Matrix& B) {
    if (fits.empty()) throw EmptyGrid("lincomb_correlation: no grid points");
    const Eigen::Index k = B.rows();
    double lp_max = lps[0];
    for (double v : lps) lp_max = std::max(lp_max, v);
    double sw = 0.0;
    Vector mu = Vector::Zero(k);
    Matrix M2 = Matrix::Zero(k, k);
    for (std::size_t p = 0; p < fits.size(); ++p) {
        double w = std::exp(lps[p] - lp_max) * deltas[p];
        Vector m;
        Matrix c;
        lincomb_moments(*fits[p], B, &m, &c);
        sw += w;
        mu += w * m;
        M2 += w * (c + m * m.transpose());
    }
    mu /= sw;
    Matrix cov = M2 / sw - mu * mu.transpose();
    Matrix corr(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j)
            corr(i, j) = cov(i, j) / std::sqrt(cov(i, i) * cov(j, j));
    for (Eigen::Index i = 0; i < k; ++i) corr(i, i) = 1.0;
    return corr;
}

/// Appends the lincombs as an extra latent block v = Bx tied with
/// high-precision gaussian links; the full pipeline then treats v as part
/// of the field (the accurate but costlier approach).
inline Assembled augment_lincombs(const ModelSpec& spec, const Assembled& a,
                                  double tau_exponent = 15.0) {
    const Eigen::Index k = static_cast<Eigen::Index>(spec.lincombs.size());
    if (k == 0) return a;
    Matrix B = lincomb_rows(spec, a);
    Assembled out;
    out.n = a.n + static_cast<int>(k);
    out.index = a.index;
    out.index.push_back({"lincombs", a.n, static_cast<int>(k)});
    out.obs = a.obs;
    out.data_offset = a.data_offset;
    out.block_tau = a.block_tau;
    out.families = a.families;
    out.b = Vector::Zero(out.n);
    out.b.head(a.n) = a.b;
    out.constraints.A = Matrix::Zero(a.constraints.count(), out.n);
    out.constraints.A.leftCols(a.n) = a.constraints.A;
    out.constraints.e = a.constraints.e;

    std::vector<Triplet> ts;
    const SpMat& lower = a.Q.lower();
    for (int j = 0; j < lower.outerSize(); ++j)
        for (SpMat::InnerIterator it(lower, j); it; ++it)
            ts.emplace_back(it.row(), it.col(), it.value());
    const double tau = std::exp(tau_exponent);
    for (Eigen::Index j = 0; j < k; ++j) {
        std::vector<std::pair<int, double>> v;
        v.emplace_back(a.n + static_cast<int>(j), 1.0);
        for (int c = 0; c < a.n; ++c)
            if (B(j, c) != 0.0) v.emplace_back(c, -B(j, c));
        detail::add_outer(ts, v, tau);
    }
    out.Q = SparseSymmetric(out.n, ts);
    return out;
}

}  // namespace nla
