#pragma once

// Symmetric sparse matrices in precision form plus the factorization
// machinery used everywhere else: Cholesky with a deterministic AMD
// ordering, triangular solves, log-determinant, selected inversion for
// marginal variances and Kronecker products.

#include <Eigen/Core>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "nla/errors.hpp"

namespace nla {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// Symmetric matrix stored as the lower triangle in coordinate form.
/// Values are precisions unless a caller says otherwise.
class SparseSymmetric {
public:
    SparseSymmetric() = default;

    explicit SparseSymmetric(Eigen::Index n) : n_(n) {
        if (n < 1) throw DimensionMismatch("SparseSymmetric: n must be >= 1");
    }

    /// Builds from coordinate entries; duplicates are summed, upper-triangle
    /// coordinates are mirrored into the lower triangle.
    SparseSymmetric(Eigen::Index n, const std::vector<Triplet>& entries) : SparseSymmetric(n) {
        std::vector<Triplet> lower;
        lower.reserve(entries.size());
        for (const auto& t : entries) {
            if (t.row() >= n || t.col() >= n || t.row() < 0 || t.col() < 0)
                throw DimensionMismatch("SparseSymmetric: entry out of range");
            if (t.row() >= t.col())
                lower.emplace_back(t.row(), t.col(), t.value());
            else
                lower.emplace_back(t.col(), t.row(), t.value());
        }
        SpMat L(n, n);
        L.setFromTriplets(lower.begin(), lower.end());
        L.prune(0.0, 0.0);
        lower_ = std::move(L);
        lower_.makeCompressed();
    }

    Eigen::Index size() const { return n_; }

    /// Lower triangle (including diagonal) as a compressed Eigen matrix.
    const SpMat& lower() const { return lower_; }

    /// Full symmetric expansion.
    SpMat full() const {
        SpMat u = SpMat(lower_.transpose());
        SpMat f = lower_ + u;
        // diagonal got counted twice
        for (Eigen::Index i = 0; i < n_; ++i) f.coeffRef(i, i) -= lower_.coeff(i, i);
        f.prune([](Eigen::Index, Eigen::Index, double v) { return v != 0.0; });
        f.makeCompressed();
        return f;
    }

    Matrix dense() const { return Matrix(full()); }

    void add(Eigen::Index i, Eigen::Index j, double v) {
        if (i >= n_ || j >= n_ || i < 0 || j < 0)
            throw DimensionMismatch("SparseSymmetric::add: index out of range");
        if (i >= j)
            lower_.coeffRef(i, j) += v;
        else
            lower_.coeffRef(j, i) += v;
    }

    SparseSymmetric& operator+=(const SparseSymmetric& other) {
        if (other.n_ != n_) throw DimensionMismatch("SparseSymmetric::+=: size mismatch");
        lower_ += other.lower_;
        return *this;
    }

    static SparseSymmetric identity(Eigen::Index n) {
        std::vector<Triplet> ts;
        ts.reserve(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) ts.emplace_back(i, i, 1.0);
        return SparseSymmetric(n, ts);
    }

    static SparseSymmetric from_dense(const Matrix& d) {
        std::vector<Triplet> ts;
        for (Eigen::Index j = 0; j < d.cols(); ++j)
            for (Eigen::Index i = j; i < d.rows(); ++i)
                if (d(i, j) != 0.0) ts.emplace_back(i, j, d(i, j));
        return SparseSymmetric(d.rows(), ts);
    }

private:
    Eigen::Index n_ = 0;
    SpMat lower_;
};

/// Sparse Cholesky factor of a symmetric positive definite matrix.
/// Read-only after construction; safe to share across threads.
class CholeskyHandle {
public:
    explicit CholeskyHandle(const SparseSymmetric& Q) : n_(Q.size()) {
        SpMat full = Q.full();
        llt_.compute(full);
        if (llt_.info() != Eigen::Success)
            throw NotPositiveDefinite("factorize: matrix is not positive definite");
        const SpMat& L = llt_.matrixL();
        logdet_ = 0.0;
        for (Eigen::Index j = 0; j < n_; ++j) {
            double d = L.coeff(j, j);
            // legitimate pivots span many orders of magnitude here (linkage
            // terms at exp(15) next to near-flat priors), so only outright
            // nonpositive or nonfinite pivots are rejected
            if (!(d > 0.0) || !std::isfinite(d))
                throw NotPositiveDefinite("factorize: nonpositive pivot");
            logdet_ += 2.0 * std::log(d);
        }
    }

    Eigen::Index size() const { return n_; }
    double logdet() const { return logdet_; }

    Vector solve(const Vector& b) const {
        if (b.size() != n_) throw DimensionMismatch("solve: rhs length mismatch");
        return llt_.solve(b);
    }

    Matrix solve(const Matrix& B) const {
        if (B.rows() != n_) throw DimensionMismatch("solve: rhs rows mismatch");
        return llt_.solve(B);
    }

    /// Diagonal of the inverse via the Takahashi recursion over the filled
    /// pattern of the factor; the dense inverse is never formed.
    Vector marginal_variances() const {
        SpMat L = llt_.matrixL();
        L.makeCompressed();
        const Eigen::Index n = n_;
        const int* outer = L.outerIndexPtr();
        const int* rows = L.innerIndexPtr();
        const double* vals = L.valuePtr();

        // sigma holds selected-inverse entries on the pattern of L (permuted order)
        std::vector<double> sigma(static_cast<std::size_t>(L.nonZeros()), 0.0);

        auto find_entry = [&](Eigen::Index col, Eigen::Index row) -> std::int64_t {
            const int* b = rows + outer[col];
            const int* e = rows + outer[col + 1];
            const int* it = std::lower_bound(b, e, static_cast<int>(row));
            if (it == e || *it != row) return -1;
            return it - rows;
        };

        for (Eigen::Index j = n - 1; j >= 0; --j) {
            const int begin = outer[j];
            const int end = outer[j + 1];
            const double dj = vals[begin];  // L_jj (first entry in the column)
            const double inv_dj2 = 1.0 / (dj * dj);
            // process rows of column j from the bottom up
            for (int pi = end - 1; pi >= begin; --pi) {
                const Eigen::Index i = rows[pi];
                double acc = 0.0;
                for (int pk = begin + 1; pk < end; ++pk) {
                    const Eigen::Index k = rows[pk];
                    const double lkj = vals[pk] / dj;  // unit-factor entry
                    std::int64_t pos;
                    if (k >= i)
                        pos = find_entry(i, k);
                    else
                        pos = find_entry(k, i);
                    if (pos >= 0) acc += lkj * sigma[static_cast<std::size_t>(pos)];
                }
                if (i == j)
                    sigma[static_cast<std::size_t>(pi)] = inv_dj2 - acc;
                else
                    sigma[static_cast<std::size_t>(pi)] = -acc;
            }
        }

        // map permuted diagonal back to original ordering
        Vector out(n);
        const auto& perm = llt_.permutationP();
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index pi = perm.indices()(i);
            std::int64_t pos = find_entry(pi, pi);
            out(i) = sigma[static_cast<std::size_t>(pos)];
        }
        return out;
    }

private:
    Eigen::Index n_;
    Eigen::SimplicialLLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> llt_;
    double logdet_ = 0.0;
};

inline CholeskyHandle factorize(const SparseSymmetric& Q) { return CholeskyHandle(Q); }

/// Kronecker product of two symmetric matrices; result index
/// (i*nB + k, j*nB + l) carries A_ij * B_kl.
inline SparseSymmetric kron(const SparseSymmetric& A, const SparseSymmetric& B,
                            std::size_t entry_cap = 10000000) {
    const Eigen::Index nA = A.size();
    const Eigen::Index nB = B.size();
    SpMat af = A.full();
    SpMat bf = B.full();
    std::size_t est = static_cast<std::size_t>(af.nonZeros()) * static_cast<std::size_t>(bf.nonZeros());
    if (est > entry_cap)
        throw DimensionMismatch("kron: entry count exceeds cap");
    std::vector<Triplet> ts;
    ts.reserve(est / 2 + 1);
    for (Eigen::Index ja = 0; ja < af.outerSize(); ++ja)
        for (SpMat::InnerIterator ita(af, ja); ita; ++ita)
            for (Eigen::Index jb = 0; jb < bf.outerSize(); ++jb)
                for (SpMat::InnerIterator itb(bf, jb); itb; ++itb) {
                    Eigen::Index r = ita.row() * nB + itb.row();
                    Eigen::Index c = ita.col() * nB + itb.col();
                    if (r >= c) ts.emplace_back(r, c, ita.value() * itb.value());
                }
    return SparseSymmetric(nA * nB, ts);
}

}  // namespace nla
