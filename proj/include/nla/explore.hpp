#pragma once

// Outer loop over hyperparameters: BFGS mode finding with finite-difference
// gradients, the z-parametrization theta(z) = theta* + V Lambda^{1/2} z, and
// the two exploration schemes (dense z-grid, central composite design).
// Everything here works on an abstract log target so the same code runs on
// synthetic densities in tests.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "nla/errors.hpp"
#include "nla/sparse.hpp"

namespace nla {

using LogTarget = std::function<double(const Vector&)>;

struct ModeResult {
    Vector mode;    // internal scale
    double lp = 0;  // log target at the mode
    Matrix H;       // negative Hessian of the log target at the mode
    Matrix V;       // eigenvectors: Sigma = V diag(lambda) V^T
    Vector lambda;  // eigenvalues of the covariance Sigma = H^{-1}
    int evals = 0;
    int iters = 0;

    int dim() const { return static_cast<int>(mode.size()); }

    Vector theta_of_z(const Vector& z) const {
        if (dim() == 0) return mode;
        return mode + V * (lambda.array().sqrt() * z.array()).matrix();
    }

    Vector z_of_theta(const Vector& theta) const {
        if (dim() == 0) return theta;
        return (V.transpose() * (theta - mode)).array() / lambda.array().sqrt();
    }
};

struct ThetaPoint {
    Vector z;
    Vector theta;
    double lp = 0;
    double weight = 0;  // integration weight Delta_k (see ThetaGrid)
};

/// Integration points: posterior mass at point k is proportional to
/// exp(lp_k) * weight_k for both exploration schemes.
struct ThetaGrid {
    ModeResult mode;
    std::vector<ThetaPoint> points;
    bool ccd = false;
    double dz = 1.0;
    int evals = 0;  // log-target evaluations spent on exploration
};

struct ExploreOptions {
    double grad_step = 0.005;
    double grad_tol = 1e-4;
    int max_iters = 200;
    double dz = 1.0;
    double drop = 2.5;  // accept z while lp_mode - lp < drop... (grid)
    int budget = 10000;
    double f0 = 1.1;  // CCD scaling
};

namespace detail {

inline Vector fd_gradient(const LogTarget& f, const Vector& x, double h, int* evals) {
    const int m = static_cast<int>(x.size());
    Vector g(m);
    for (int i = 0; i < m; ++i) {
        Vector xp = x, xm = x;
        xp(i) += h;
        xm(i) -= h;
        g(i) = (f(xp) - f(xm)) / (2.0 * h);
        *evals += 2;
    }
    return g;
}

inline Matrix fd_hessian(const LogTarget& f, const Vector& x, double f0, double h, int* evals) {
    const int m = static_cast<int>(x.size());
    Matrix H(m, m);
    std::vector<double> fp(static_cast<std::size_t>(m)), fm(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        Vector xp = x, xm = x;
        xp(i) += h;
        xm(i) -= h;
        fp[static_cast<std::size_t>(i)] = f(xp);
        fm[static_cast<std::size_t>(i)] = f(xm);
        *evals += 2;
        H(i, i) = (fp[static_cast<std::size_t>(i)] - 2.0 * f0 + fm[static_cast<std::size_t>(i)]) / (h * h);
    }
    for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j) {
            Vector a = x, b = x, c = x, d = x;
            a(i) += h; a(j) += h;
            b(i) += h; b(j) -= h;
            c(i) -= h; c(j) += h;
            d(i) -= h; d(j) -= h;
            H(i, j) = H(j, i) = (f(a) - f(b) - f(c) + f(d)) / (4.0 * h * h);
            *evals += 4;
        }
    return H;
}

}  // namespace detail

/// BFGS maximization of the log target; the returned decomposition has its
/// eigenvalues floored so theta_of_z is always well defined.
inline ModeResult find_mode(const LogTarget& f, const Vector& init,
                            const ExploreOptions& opt = {}) {
    const int m = static_cast<int>(init.size());
    ModeResult res;
    if (m == 0) {
        res.mode = init;
        res.lp = f(init);
        res.evals = 1;
        res.H = Matrix::Zero(0, 0);
        res.V = Matrix::Zero(0, 0);
        res.lambda = Vector::Zero(0);
        return res;
    }

    Vector x = init;
    double fx = f(x);
    int evals = 1;
    if (!std::isfinite(fx)) throw NonFiniteEvaluation("find_mode: log target at init");
    Vector g = detail::fd_gradient(f, x, opt.grad_step, &evals);
    Matrix Binv = Matrix::Identity(m, m);  // inverse Hessian approximation of -f

    int it = 0;
    for (; it < opt.max_iters; ++it) {
        if (g.lpNorm<Eigen::Infinity>() < opt.grad_tol) break;
        Vector dir = Binv * g;  // ascent direction
        if (dir.dot(g) <= 0.0) {
            Binv = Matrix::Identity(m, m);
            dir = g;
        }
        double alpha = 1.0;
        Vector x_new;
        double f_new = -std::numeric_limits<double>::infinity();
        int halvings = 0;
        while (halvings < 40) {
            x_new = x + alpha * dir;
            f_new = f(x_new);
            ++evals;
            if (std::isfinite(f_new) && f_new >= fx + 1e-4 * alpha * dir.dot(g)) break;
            alpha *= 0.5;
            ++halvings;
        }
        if (halvings >= 40) break;  // no ascent left at this resolution
        Vector g_new = detail::fd_gradient(f, x_new, opt.grad_step, &evals);
        Vector s = x_new - x;
        Vector yv = -(g_new - g);  // gradient change of -f
        double sy = s.dot(yv);
        if (sy > 1e-12 * s.norm() * yv.norm()) {
            Matrix I = Matrix::Identity(m, m);
            Matrix A = I - s * yv.transpose() / sy;
            Binv = A * Binv * A.transpose() + s * s.transpose() / sy;
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    if (it == opt.max_iters) throw NonConvergence("find_mode: BFGS did not converge");

    res.mode = x;
    res.lp = fx;
    res.iters = it;
    res.H = -detail::fd_hessian(f, x, fx, opt.grad_step, &evals);
    res.H = 0.5 * (res.H + res.H.transpose());

    Eigen::SelfAdjointEigenSolver<Matrix> es(res.H);
    Vector mu = es.eigenvalues();
    double mu_max = mu.maxCoeff();
    if (!(mu_max > 0.0)) throw NotPositiveDefinite("find_mode: Hessian has no positive curvature");
    // floor repairs near-flat directions so the z-parametrization stays usable
    double floor = 1e-6 * mu_max;
    res.lambda = Vector(m);
    for (int i = 0; i < m; ++i) res.lambda(i) = 1.0 / std::max(mu(i), floor);
    res.V = es.eigenvectors();
    res.evals = evals;
    return res;
}

namespace detail {

inline std::vector<int> key_of(const Vector& z, double dz) {
    std::vector<int> k(static_cast<std::size_t>(z.size()));
    for (Eigen::Index i = 0; i < z.size(); ++i)
        k[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(z(i) / dz));
    return k;
}

}  // namespace detail

/// Breadth-first walk over the integer z-lattice, keeping points whose log
/// target is within `drop` of the mode. Weight per point: dz^m.
inline ThetaGrid explore_grid(const LogTarget& f, const ModeResult& mode,
                              const ExploreOptions& opt = {}) {
    const int m = mode.dim();
    ThetaGrid grid;
    grid.mode = mode;
    grid.dz = opt.dz;
    if (m == 0) {
        grid.points.push_back({Vector::Zero(0), mode.mode, mode.lp, 1.0});
        return grid;
    }

    std::map<std::vector<int>, double> seen;  // lattice key -> lp
    std::vector<std::vector<int>> frontier;
    const std::vector<int> origin(static_cast<std::size_t>(m), 0);
    seen[origin] = mode.lp;
    frontier.push_back(origin);
    grid.points.push_back({Vector::Zero(m), mode.mode, mode.lp, std::pow(opt.dz, m)});

    while (!frontier.empty()) {
        std::vector<std::vector<int>> next;
        for (const auto& key : frontier) {
            for (int axis = 0; axis < m; ++axis) {
                for (int dir : {-1, 1}) {
                    auto nk = key;
                    nk[static_cast<std::size_t>(axis)] += dir;
                    if (seen.count(nk)) continue;
                    Vector z(m);
                    for (int i = 0; i < m; ++i) z(i) = nk[static_cast<std::size_t>(i)] * opt.dz;
                    Vector th = mode.theta_of_z(z);
                    double lp = f(th);
                    ++grid.evals;
                    seen[nk] = lp;
                    if (std::isfinite(lp) && mode.lp - lp < opt.drop) {
                        grid.points.push_back({z, th, lp, std::pow(opt.dz, m)});
                        next.push_back(nk);
                        if (static_cast<int>(grid.points.size()) > opt.budget)
                            throw PointBudgetExceeded("explore_grid: point budget exceeded");
                    }
                }
            }
        }
        frontier = std::move(next);
    }
    return grid;
}

/// Central composite design: center, 2m axial points and a (possibly
/// half-fraction) factorial cube, all non-center points at radius f0*sqrt(m).
/// Weights are chosen so a standard Gaussian integrates exactly to its first
/// two moments; the stored weight folds in exp(|z|^2/2) so that
/// exp(lp_k) * weight_k is the mixture mass for Gaussian-like targets.
inline ThetaGrid ccd_design(const LogTarget& f, const ModeResult& mode,
                            const ExploreOptions& opt = {}) {
    const int m = mode.dim();
    ThetaGrid grid;
    grid.mode = mode;
    grid.ccd = true;
    grid.dz = opt.dz;
    if (m == 0) {
        grid.points.push_back({Vector::Zero(0), mode.mode, mode.lp, 1.0});
        return grid;
    }
    if (m == 1) {
        // degenerate design: three Gauss-Hermite-like points
        std::vector<double> zs = {0.0, -opt.f0, opt.f0};
        for (double zv : zs) {
            Vector z(1);
            z << zv;
            Vector th = mode.theta_of_z(z);
            double lp = (zv == 0.0) ? mode.lp : f(th);
            if (zv != 0.0) ++grid.evals;
            double w = (zv == 0.0) ? 1.0 - 1.0 / (opt.f0 * opt.f0)
                                   : 0.5 / (opt.f0 * opt.f0);
            grid.points.push_back({z, th, lp, w * std::exp(0.5 * z.squaredNorm())});
        }
        return grid;
    }

    const double r = opt.f0 * std::sqrt(static_cast<double>(m));
    std::vector<Vector> zs;
    zs.push_back(Vector::Zero(m));
    for (int i = 0; i < m; ++i)
        for (int dir : {1, -1}) {
            Vector z = Vector::Zero(m);
            z(i) = dir * r;
            zs.push_back(z);
        }
    // factorial corners at +/- f0 per coordinate; half fraction from m = 6
    // with the last sign given by the product of the others
    const bool half = m >= 6;
    const int gen = half ? m - 1 : m;
    for (int mask = 0; mask < (1 << gen); ++mask) {
        Vector z(m);
        int prod = 1;
        for (int i = 0; i < gen; ++i) {
            int s = (mask >> i) & 1 ? 1 : -1;
            z(i) = s * opt.f0;
            prod *= s;
        }
        if (half) z(m - 1) = prod * opt.f0;
        zs.push_back(z);
    }

    const int np = static_cast<int>(zs.size()) - 1;
    const double w_sphere = 1.0 / (np * opt.f0 * opt.f0);
    const double w0 = 1.0 - 1.0 / (opt.f0 * opt.f0);
    for (std::size_t k = 0; k < zs.size(); ++k) {
        const Vector& z = zs[k];
        Vector th = mode.theta_of_z(z);
        double lp;
        if (k == 0) {
            lp = mode.lp;
        } else {
            lp = f(th);
            ++grid.evals;
        }
        if (!std::isfinite(lp)) throw NonFiniteEvaluation("ccd_design: log target at design point");
        double w = (k == 0) ? w0 : w_sphere;
        grid.points.push_back({z, th, lp, w * std::exp(0.5 * z.squaredNorm())});
    }
    return grid;
}

}  // namespace nla
