#pragma once

// Shared helpers for the test suites. Oracles here are deliberately dense
// and brute-force; they must stay independent of the library code paths
// they are used to check.

#include <Eigen/Dense>
#include <random>

#include "nla/sparse.hpp"

namespace testutil {

using nla::Matrix;
using nla::Vector;

/// Dense stationary AR1 covariance: Sigma_ij = phi^|i-j| / tau.
inline Matrix ar1_covariance(int n, double phi, double tau) {
    Matrix s(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) s(i, j) = std::pow(phi, std::abs(i - j)) / tau;
    return s;
}

/// AR1 precision via numeric inversion of the dense covariance.
inline Matrix ar1_precision_oracle(int n, double phi, double tau) {
    return ar1_covariance(n, phi, tau).inverse();
}

/// Random sparse-ish symmetric positive definite matrix (diagonally dominant).
inline nla::SparseSymmetric random_pd(int n, std::mt19937& rng, double density = 0.05) {
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    std::bernoulli_distribution keep(density);
    std::vector<nla::Triplet> ts;
    std::vector<double> rowsum(n, 0.0);
    for (int j = 0; j < n; ++j)
        for (int i = j + 1; i < n; ++i)
            if (keep(rng)) {
                double v = unif(rng);
                ts.emplace_back(i, j, v);
                rowsum[i] += std::abs(v);
                rowsum[j] += std::abs(v);
            }
    for (int i = 0; i < n; ++i) ts.emplace_back(i, i, rowsum[i] + 1.0 + 0.5 * (unif(rng) + 1.0));
    return nla::SparseSymmetric(n, ts);
}

/// Trapezoid integral of tabulated values.
inline double trapezoid(const Vector& x, const Vector& f) {
    double s = 0.0;
    for (int i = 0; i + 1 < x.size(); ++i) s += 0.5 * (f(i) + f(i + 1)) * (x(i + 1) - x(i));
    return s;
}

/// Total variation distance between two densities tabulated on the same grid.
inline double total_variation(const Vector& x, const Vector& f, const Vector& g) {
    Vector d = (f - g).cwiseAbs();
    return 0.5 * trapezoid(x, d);
}

}  // namespace testutil
