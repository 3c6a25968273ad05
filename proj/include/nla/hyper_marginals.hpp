#pragma once

// Posterior marginals of the hyperparameters from an already-explored
// ThetaGrid: the asymmetric-Gaussian interpolant (directional -2-drop
// scales, lattice integration) and the default integration-free algorithm
// (probes along the conditional-mean line, two-piece Gaussian).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "nla/errors.hpp"
#include "nla/explore.hpp"
#include "nla/hyper.hpp"
#include "nla/marginal.hpp"

namespace nla {

/// Directional scaling parameters in z-units: sigma_j^+ / sigma_j^-.
struct DirectionalScales {
    Vector pos;
    Vector neg;
};

namespace detail {

/// Distance along one signed axis at which the log-density drop reaches 2,
/// by linear interpolation in (distance, drop); extrapolates from the
/// outermost pair when the drop never brackets 2.
inline double drop2_distance(const std::vector<std::pair<double, double>>& pts) {
    // pts: (distance > 0, drop), sorted by distance, implicit (0, 0) start
    double x_prev = 0.0, d_prev = 0.0;
    for (const auto& [x, d] : pts) {
        if (d >= 2.0) {
            if (d == d_prev) return x;
            return x_prev + (2.0 - d_prev) * (x - x_prev) / (d - d_prev);
        }
        x_prev = x;
        d_prev = d;
    }
    // unbracketed: continue the last segment
    double x0 = 0.0, d0 = 0.0;
    if (pts.size() >= 2) {
        x0 = pts[pts.size() - 2].first;
        d0 = pts[pts.size() - 2].second;
    }
    double slope = (d_prev - d0) / (x_prev - x0);
    if (!(slope > 0.0)) return -1.0;  // degenerate axis
    return x_prev + (2.0 - d_prev) / slope;
}

}  // namespace detail

/// Fits the -2-drop scales from the axis evaluations the exploration left
/// behind (lattice points for the grid strategy, axial points for CCD).
inline DirectionalScales fit_scales(const ThetaGrid& grid) {
    const int m = grid.mode.dim();
    DirectionalScales sc;
    sc.pos = Vector::Ones(m);
    sc.neg = Vector::Ones(m);
    for (int j = 0; j < m; ++j) {
        for (int sign : {1, -1}) {
            std::vector<std::pair<double, double>> pts;
            for (const auto& p : grid.points) {
                // points lying on the +/- j axis only
                bool on_axis = true;
                for (int i = 0; i < m; ++i)
                    if (i != j && p.z(i) != 0.0) on_axis = false;
                if (!on_axis) continue;
                double t = p.z(j) * sign;
                if (t <= 0.0) continue;
                pts.emplace_back(t, grid.mode.lp - p.lp);
            }
            std::sort(pts.begin(), pts.end());
            if (pts.empty())
                throw DegenerateAxis("fit_scales: no evaluations along an axis");
            double d2 = detail::drop2_distance(pts);
            if (!(d2 > 0.0))
                throw DegenerateAxis("fit_scales: axis density does not decay");
            (sign > 0 ? sc.pos : sc.neg)(j) = d2 / 2.0;
        }
    }
    return sc;
}

/// Eq.-(7) interpolant value at a standardized point z.
inline double asym_gaussian_logf(const DirectionalScales& sc, const Vector& z) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        double sig = z(i) >= 0.0 ? sc.pos(i) : sc.neg(i);
        s -= 0.5 * z(i) * z(i) / (sig * sig);
    }
    return s;
}

/// Marginal of theta_j under the asymmetric-Gaussian interpolant, computed
/// by summing the interpolant over a lattice orthogonal to the theta_j
/// direction (so every lattice slice holds theta_j fixed exactly).
inline Marginal asym_gaussian_marginal(const ThetaGrid& grid, const DirectionalScales& sc, int j,
                                       int dim_cap = 5, int nodes = 25, double range = 6.0) {
    const int m = grid.mode.dim();
    if (j < 0 || j >= m) throw DimensionMismatch("asym_gaussian_marginal: axis out of range");
    if (m > dim_cap)
        throw DimensionCapExceeded("asym_gaussian_marginal: too many hyperparameters for the lattice");

    // theta_j - theta*_j = c . z with c from the standardizing map
    Vector c(m);
    for (int i = 0; i < m; ++i) c(i) = grid.mode.V(j, i) * std::sqrt(grid.mode.lambda(i));
    double cn = c.norm();
    if (!(cn > 0.0)) throw DegenerateAxis("asym_gaussian_marginal: axis has no spread");

    // orthonormal frame with the first column along c
    Matrix B = Matrix::Identity(m, m);
    B.col(0) = c / cn;
    Eigen::HouseholderQR<Matrix> qr(B.col(0));
    Matrix Qf = qr.householderQ();
    if ((Qf.col(0) - B.col(0)).norm() > 1.0) Qf = -Qf;  // fix the sign convention
    // Qf.col(0) == +/- c/cn; columns 1..m-1 span the orthogonal complement

    double smax = std::max(sc.pos.maxCoeff(), sc.neg.maxCoeff());
    Vector t = linspace(grid.mode.mode(j) - range * cn * smax,
                        grid.mode.mode(j) + range * cn * smax, kMarginalPoints);
    Vector dens = Vector::Zero(kMarginalPoints);

    const int k = m - 1;
    std::vector<int> idx(static_cast<std::size_t>(std::max(k, 1)), 0);
    Vector w = Vector::Zero(k);
    for (int a = 0; a < kMarginalPoints; ++a) {
        double s = (t(a) - grid.mode.mode(j)) / cn;
        double total = 0.0;
        if (k == 0) {
            Vector z = Qf.col(0) * s;
            total = std::exp(asym_gaussian_logf(sc, z));
        } else {
            std::fill(idx.begin(), idx.end(), 0);
            while (true) {
                for (int i = 0; i < k; ++i)
                    w(i) = -range * smax + 2.0 * range * smax * idx[static_cast<std::size_t>(i)] / (nodes - 1);
                Vector z = Qf.col(0) * s + Qf.rightCols(k) * w;
                total += std::exp(asym_gaussian_logf(sc, z));
                int i = 0;
                while (i < k && ++idx[static_cast<std::size_t>(i)] == nodes) {
                    idx[static_cast<std::size_t>(i)] = 0;
                    ++i;
                }
                if (i == k) break;
            }
        }
        dens(a) = total;
    }
    return make_marginal(t, dens);
}

/// Two-piece Gaussian tabulated over mode +/- 6 sd and normalized.
inline Marginal two_piece_gaussian(double mu, double sig_neg, double sig_pos) {
    Vector x = linspace(mu - 6.0 * sig_neg, mu + 6.0 * sig_pos, kMarginalPoints);
    Vector f(kMarginalPoints);
    for (int i = 0; i < kMarginalPoints; ++i) {
        double d = x(i) - mu;
        double sig = d >= 0.0 ? sig_pos : sig_neg;
        f(i) = std::exp(-0.5 * d * d / (sig * sig));
    }
    return make_marginal(x, f);
}

/// Integration-free marginal of theta_j: probes log pi(theta|y) along the
/// conditional-mean line at +/-1 and +/-2 marginal sds and fits directional
/// curvatures, per Lemma-1 structure.  Costs four extra evaluations of the
/// target per axis.  `evals` (optional) accumulates that count.
inline Marginal integration_free_marginal(const ThetaGrid& grid, const LogTarget& f, int j,
                                          int* evals = nullptr) {
    const ModeResult& mode = grid.mode;
    const int m = mode.dim();
    if (j < 0 || j >= m) throw DimensionMismatch("integration_free_marginal: axis out of range");
    Matrix Sigma = mode.V * mode.lambda.asDiagonal() * mode.V.transpose();
    double sjj = Sigma(j, j);
    if (!(sjj > 0.0)) throw DegenerateAxis("integration_free_marginal: axis has no spread");
    double sd = std::sqrt(sjj);
    Vector dir = Sigma.col(j) / sjj;  // conditional-mean line; dir(j) == 1

    auto probe = [&](double t_target) {
        double t = t_target;
        for (int tries = 0; tries <= 5; ++tries) {
            double v = f(mode.mode + t * dir);
            if (evals != nullptr) ++(*evals);
            if (std::isfinite(v)) return std::make_pair(t, v);
            t *= 0.5;  // step inward
        }
        throw NonFiniteEvaluation("integration_free_marginal: probe failed");
    };

    double sig[2];
    const double sig_cap = 25.0 * sd;  // plateau / near-improper tail guard
    for (int side = 0; side < 2; ++side) {
        double s = side == 0 ? -1.0 : 1.0;
        auto [t1, l1] = probe(s * sd);
        auto [t2, l2] = probe(s * 2.0 * sd);
        // one-sided second derivative through the mode (zero gradient there):
        // the 1-sd probe sets the scale, the deeper probe is the fallback
        // when the drop at 1 sd is below noise
        double d1 = mode.lp - l1, d2 = mode.lp - l2;
        double v;
        if (d1 > 1e-12)
            v = std::abs(t1) / std::sqrt(2.0 * d1);
        else if (d2 > 1e-12)
            v = std::abs(t2) / std::sqrt(2.0 * d2);
        else
            v = sig_cap;
        sig[side] = std::min(v, sig_cap);
    }
    return two_piece_gaussian(mode.mode(j), sig[0], sig[1]);
}

/// Marginal of theta_j by direct numerical marginalization of the explored
/// points: each point contributes its posterior mass, smoothed with a
/// gaussian kernel whose width is `bw_z` lattice steps mapped to theta_j
/// units.
inline Marginal grid_kde_marginal(const ThetaGrid& grid, int j, double bw_z) {
    const int m = grid.mode.dim();
    if (j < 0 || j >= m) throw DimensionMismatch("grid_kde_marginal: axis out of range");
    if (grid.points.empty()) throw EmptyGrid("grid_kde_marginal: no points");
    // theta_j - theta*_j = c . z; one z-lattice step projects to |c| at most
    Vector c(m);
    for (int i = 0; i < m; ++i) c(i) = grid.mode.V(j, i) * std::sqrt(grid.mode.lambda(i));
    double h = bw_z * c.norm();
    if (!(h > 0.0)) throw DegenerateAxis("grid_kde_marginal: axis has no spread");
    double lo = grid.points.front().theta(j), hi = lo;
    for (const auto& p : grid.points) {
        lo = std::min(lo, p.theta(j));
        hi = std::max(hi, p.theta(j));
    }
    Vector x = linspace(lo - 3.0 * h, hi + 3.0 * h, kMarginalPoints);
    Vector dens = Vector::Zero(kMarginalPoints);
    for (const auto& p : grid.points) {
        double w = std::exp(p.lp - grid.mode.lp) * p.weight;
        for (int a = 0; a < kMarginalPoints; ++a) {
            double d = (x(a) - p.theta(j)) / h;
            dens(a) += w * std::exp(-0.5 * d * d);
        }
    }
    return make_marginal(x, dens);
}

/// Refined-grid method: a second, finer exploration pass (halved z-step,
/// deepened drop threshold) marginalized directly.  The reference the cheap
/// algorithms are checked against.
inline Marginal refined_grid_marginal(const LogTarget& f, const ModeResult& mode, int j,
                                      ExploreOptions opt = {}) {
    opt.dz *= 0.5;
    opt.drop = std::max(opt.drop, 5.0);
    ThetaGrid fine = explore_grid(f, mode, opt);
    return grid_kde_marginal(fine, j, 0.5 * opt.dz);
}

/// Transforms an internal-scale marginal to the natural scale with the
/// change-of-variables Jacobian.
inline Marginal natural_marginal(const Marginal& m, const HyperTransform& tr) {
    if (tr.kind == HyperTransform::Identity) return m;
    std::vector<double> xs, fs;
    for (Eigen::Index i = 0; i < m.abscissas.size(); ++i) {
        double v = m.abscissas(i);
        double x = tr.natural(v);
        // overflowed or collapsed abscissas (exp saturation in extreme
        // tails) carry no usable density; drop them
        if (!std::isfinite(x)) continue;
        if (!xs.empty() && !(x > xs.back())) continue;
        double dn = tr.dnat(v);
        xs.push_back(x);
        fs.push_back(m.densities(i) / std::max(std::abs(dn), 1e-300));
    }
    if (xs.size() < 2) throw DegenerateAxis("natural_marginal: transform collapses the tabulation");
    Vector x(static_cast<Eigen::Index>(xs.size())), f(static_cast<Eigen::Index>(xs.size()));
    for (std::size_t i = 0; i < xs.size(); ++i) {
        x(static_cast<Eigen::Index>(i)) = xs[i];
        f(static_cast<Eigen::Index>(i)) = fs[i];
    }
    return make_marginal(x, f);
}

}  // namespace nla
