#pragma once

// Tabulated univariate posterior densities and their summaries.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <vector>

#include "nla/errors.hpp"
#include "nla/sparse.hpp"

namespace nla {

inline constexpr int kMarginalPoints = 161;

/// A proper univariate density tabulated on strictly increasing abscissas,
/// normalized so the trapezoid integral is 1.
struct Marginal {
    Vector abscissas;
    Vector densities;
    double mean = 0.0;
    double sd = 0.0;
    double q025 = 0.0;
    double q500 = 0.0;
    double q975 = 0.0;

    double quantile(double p) const;
};

inline double trapezoid(const Vector& x, const Vector& f) {
    double s = 0.0;
    for (Eigen::Index i = 0; i + 1 < x.size(); ++i)
        s += 0.5 * (f(i) + f(i + 1)) * (x(i + 1) - x(i));
    return s;
}

/// Quantile by monotone linear interpolation of the trapezoid CDF.
inline double tabulated_quantile(const Vector& x, const Vector& dens, double p) {
    double cum = 0.0;
    for (Eigen::Index i = 0; i + 1 < x.size(); ++i) {
        double seg = 0.5 * (dens(i) + dens(i + 1)) * (x(i + 1) - x(i));
        if (cum + seg >= p && seg > 0.0) {
            // linear density over the segment; invert the quadratic cdf piece
            double need = p - cum;
            double a = dens(i);
            double b = dens(i + 1);
            double h = x(i + 1) - x(i);
            // solve need = a*t + (b-a)/(2h) * t^2 for t in [0,h]
            double c2 = (b - a) / (2.0 * h);
            double t;
            if (std::abs(c2) < 1e-300) {
                t = need / std::max(a, 1e-300);
            } else {
                double disc = a * a + 4.0 * c2 * need;
                t = (-a + std::sqrt(std::max(disc, 0.0))) / (2.0 * c2);
            }
            if (!(t >= 0.0)) t = 0.0;
            if (t > h) t = h;
            return x(i) + t;
        }
        cum += seg;
    }
    return x(x.size() - 1);
}

/// Normalizes a tabulated (possibly unnormalized) density and fills in
/// the summary statistics.
inline Marginal make_marginal(const Vector& x, const Vector& f) {
    if (x.size() != f.size() || x.size() < 2)
        throw DimensionMismatch("make_marginal: bad tabulation");
    for (Eigen::Index i = 0; i + 1 < x.size(); ++i)
        if (!(x(i + 1) > x(i))) throw DimensionMismatch("make_marginal: abscissas not increasing");
    Vector dens = f.cwiseMax(0.0);
    double z = trapezoid(x, dens);
    if (!(z > 0.0) || !std::isfinite(z))
        throw NonFiniteEvaluation("make_marginal: density does not normalize");
    dens /= z;
    Marginal m;
    m.abscissas = x;
    m.densities = dens;
    Vector xf = x.cwiseProduct(dens);
    m.mean = trapezoid(x, xf);
    Vector x2f = x.cwiseProduct(xf);
    double ex2 = trapezoid(x, x2f);
    m.sd = std::sqrt(std::max(ex2 - m.mean * m.mean, 0.0));
    m.q025 = tabulated_quantile(x, dens, 0.025);
    m.q500 = tabulated_quantile(x, dens, 0.5);
    m.q975 = tabulated_quantile(x, dens, 0.975);
    return m;
}

inline double Marginal::quantile(double p) const { return tabulated_quantile(abscissas, densities, p); }

/// Evaluates a marginal's density at an arbitrary point by linear
/// interpolation (zero outside the tabulated range).
inline double marginal_density_at(const Marginal& m, double v) {
    const Vector& x = m.abscissas;
    if (v <= x(0) || v >= x(x.size() - 1)) return 0.0;
    Eigen::Index lo = 0, hi = x.size() - 1;
    while (hi - lo > 1) {
        Eigen::Index mid = (lo + hi) / 2;
        if (x(mid) <= v)
            lo = mid;
        else
            hi = mid;
    }
    double t = (v - x(lo)) / (x(hi) - x(lo));
    return (1.0 - t) * m.densities(lo) + t * m.densities(hi);
}

inline Vector linspace(double a, double b, int n) {
    Vector v(n);
    for (int i = 0; i < n; ++i) v(i) = a + (b - a) * i / (n - 1);
    return v;
}

}  // namespace nla
