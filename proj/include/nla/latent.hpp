#pragma once

// GMRF building blocks and their composition into the joint latent field:
// per-component precision builders, replicate and group (Kronecker)
// expansion, the copy tie, the predictor linkage and the eta* layer.
//
// Intrinsic blocks are returned with their linear constraints; the
// assembled precision is made positive definite by adding unit-weight
// outer products of the normalized constraint vectors. Conditioning on the
// constraints afterwards cancels those terms exactly, so means, variances
// and evidence values are unaffected by the regularization.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "nla/errors.hpp"
#include "nla/hyper.hpp"
#include "nla/model.hpp"
#include "nla/sparse.hpp"

namespace nla {

struct ConstraintSet {
    Matrix A;  // k x n
    Vector e;  // k

    int count() const { return static_cast<int>(A.rows()); }

    static ConstraintSet none(int n) {
        ConstraintSet c;
        c.A = Matrix::Zero(0, n);
        c.e = Vector::Zero(0);
        return c;
    }
};

/// Resolves natural-scale hyperparameter values by registry name.
class ThetaView {
public:
    ThetaView(const HyperRegistry& reg, const Vector& full_internal)
        : reg_(reg), full_(full_internal) {
        if (full_.size() != reg.total())
            throw DimensionMismatch("ThetaView: internal vector length mismatch");
    }

    double natural(const std::string& name) const {
        for (int i = 0; i < reg_.total(); ++i)
            if (reg_.info(i).name == name)
                return reg_.info(i).transform.natural(full_(i));
        throw SpecError("hyperparameter '" + name + "' not found");
    }

    double internal(const std::string& name) const {
        for (int i = 0; i < reg_.total(); ++i)
            if (reg_.info(i).name == name) return full_(i);
        throw SpecError("hyperparameter '" + name + "' not found");
    }

    const HyperRegistry& registry() const { return reg_; }
    const Vector& full() const { return full_; }

private:
    const HyperRegistry& reg_;
    Vector full_;
};

// ---------------------------------------------------------------------------
// elementary precision builders (natural-scale parameters)

inline SparseSymmetric iid_precision(int n, double tau) {
    if (!(tau > 0.0)) throw InvalidHyper("iid: tau must be positive");
    std::vector<Triplet> ts;
    for (int i = 0; i < n; ++i) ts.emplace_back(i, i, tau);
    return SparseSymmetric(n, ts);
}

/// AR1 with marginal precision tau and lag-one correlation phi;
/// innovation precision kappa = tau / (1 - phi^2).
inline SparseSymmetric ar1_precision(int n, double tau, double phi) {
    if (!(tau > 0.0)) throw InvalidHyper("ar1: tau must be positive");
    if (!(std::abs(phi) < 1.0)) throw InvalidHyper("ar1: |phi| must be < 1");
    double kappa = tau / (1.0 - phi * phi);
    std::vector<Triplet> ts;
    for (int i = 0; i < n; ++i) {
        double d = (i == 0 || i == n - 1) ? kappa : kappa * (1.0 + phi * phi);
        if (n == 1) d = tau;
        ts.emplace_back(i, i, d);
        if (i > 0) ts.emplace_back(i, i - 1, -kappa * phi);
    }
    return SparseSymmetric(n, ts);
}

/// First-order random walk, intrinsic: D^T D scaled by kappa.
inline SparseSymmetric rw1_precision(int n, double kappa) {
    if (!(kappa > 0.0)) throw InvalidHyper("rw1: kappa must be positive");
    std::vector<Triplet> ts;
    for (int i = 0; i < n; ++i) {
        double d = (i == 0 || i == n - 1) ? 1.0 : 2.0;
        ts.emplace_back(i, i, kappa * d);
        if (i > 0) ts.emplace_back(i, i - 1, -kappa);
    }
    return SparseSymmetric(n, ts);
}

/// Second-order random walk, intrinsic: D2^T D2 scaled by kappa.
inline SparseSymmetric rw2_precision(int n, double kappa) {
    if (!(kappa > 0.0)) throw InvalidHyper("rw2: kappa must be positive");
    if (n < 3) throw InvalidHyper("rw2: size must be >= 3");
    Matrix d2 = Matrix::Zero(n - 2, n);
    for (int i = 0; i < n - 2; ++i) {
        d2(i, i) = 1.0;
        d2(i, i + 1) = -2.0;
        d2(i, i + 2) = 1.0;
    }
    Matrix q = kappa * d2.transpose() * d2;
    return SparseSymmetric::from_dense(q);
}

/// Intrinsic CAR on a graph: Q_ii = kappa * degree, Q_ij = -kappa on edges.
inline SparseSymmetric besag_precision(const std::vector<std::vector<int>>& graph, double kappa) {
    if (!(kappa > 0.0)) throw InvalidHyper("besag: kappa must be positive");
    int n = static_cast<int>(graph.size());
    std::vector<Triplet> ts;
    for (int i = 0; i < n; ++i) {
        ts.emplace_back(i, i, kappa * static_cast<double>(graph[static_cast<std::size_t>(i)].size()));
        for (int j : graph[static_cast<std::size_t>(i)])
            if (j < i) ts.emplace_back(i, j, -kappa);
    }
    return SparseSymmetric(n, ts);
}

/// Connected components of an undirected adjacency list.
inline std::vector<std::vector<int>> graph_components(const std::vector<std::vector<int>>& graph) {
    int n = static_cast<int>(graph.size());
    std::vector<int> label(static_cast<std::size_t>(n), -1);
    std::vector<std::vector<int>> comps;
    for (int s = 0; s < n; ++s) {
        if (label[static_cast<std::size_t>(s)] >= 0) continue;
        int id = static_cast<int>(comps.size());
        comps.emplace_back();
        std::vector<int> stack{s};
        label[static_cast<std::size_t>(s)] = id;
        while (!stack.empty()) {
            int v = stack.back();
            stack.pop_back();
            comps[static_cast<std::size_t>(id)].push_back(v);
            for (int w : graph[static_cast<std::size_t>(v)])
                if (label[static_cast<std::size_t>(w)] < 0) {
                    label[static_cast<std::size_t>(w)] = id;
                    stack.push_back(w);
                }
        }
    }
    for (auto& c : comps) std::sort(c.begin(), c.end());
    return comps;
}

/// 2x2 or 3x3 cross-precision from marginal precisions and correlations.
inline Matrix cross_precision(const Vector& precs, const Vector& cors) {
    int d = static_cast<int>(precs.size());
    Matrix cov(d, d);
    int c = 0;
    for (int i = 0; i < d; ++i) {
        if (!(precs(i) > 0.0)) throw InvalidHyper("iid2d/iid3d: precisions must be positive");
        cov(i, i) = 1.0 / precs(i);
    }
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j, ++c) {
            double r = cors(c);
            if (!(std::abs(r) < 1.0)) throw InvalidHyper("iid2d/iid3d: |correlation| must be < 1");
            cov(i, j) = cov(j, i) = r / std::sqrt(precs(i) * precs(j));
        }
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success)
        throw InvalidHyper("iid2d/iid3d: correlation matrix is not positive definite");
    return cov.inverse();
}

/// iid2d/iid3d over `blocks` units laid out as (a_1..a_n, b_1..b_n, ...).
inline SparseSymmetric iidkd_precision(int dim, int blocks, const Vector& precs, const Vector& cors) {
    Matrix q = cross_precision(precs, cors);
    int n = dim * blocks;
    std::vector<Triplet> ts;
    for (int u = 0; u < blocks; ++u)
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j <= i; ++j) ts.emplace_back(i * blocks + u, j * blocks + u, q(i, j));
    return SparseSymmetric(n, ts);
}

/// Exchangeable (uniform correlation) precision with unit marginal variance.
inline SparseSymmetric exchangeable_precision(int g, double rho) {
    if (g == 1) return SparseSymmetric::identity(1);
    if (!(rho > -1.0 / (g - 1) && rho < 1.0))
        throw InvalidHyper("exchangeable: correlation outside (-1/(g-1), 1)");
    double a = (1.0 + (g - 2.0) * rho) / ((1.0 - rho) * (1.0 + (g - 1.0) * rho));
    double b = -rho / ((1.0 - rho) * (1.0 + (g - 1.0) * rho));
    std::vector<Triplet> ts;
    for (int i = 0; i < g; ++i) {
        ts.emplace_back(i, i, a);
        for (int j = 0; j < i; ++j) ts.emplace_back(i, j, b);
    }
    return SparseSymmetric(g, ts);
}

// ---------------------------------------------------------------------------
// component-level builders

struct BlockPrecision {
    SparseSymmetric Q;
    ConstraintSet constraints;
};

/// Precision and constraints of one component block (single replicate,
/// no grouping).
inline BlockPrecision build_precision(const LatentComponent& c, const ThetaView& theta) {
    BlockPrecision out;
    int n = c.size;
    switch (c.kind) {
        case LatentKind::Iid:
            out.Q = iid_precision(n, theta.natural(c.name + "_prec"));
            out.constraints = ConstraintSet::none(n);
            break;
        case LatentKind::Ar1:
            out.Q = ar1_precision(n, theta.natural(c.name + "_prec"), theta.natural(c.name + "_rho"));
            out.constraints = ConstraintSet::none(n);
            break;
        case LatentKind::Rw1: {
            out.Q = rw1_precision(n, theta.natural(c.name + "_prec"));
            out.constraints.A = Matrix::Ones(1, n);
            out.constraints.e = Vector::Zero(1);
            break;
        }
        case LatentKind::Rw2: {
            out.Q = rw2_precision(n, theta.natural(c.name + "_prec"));
            int k = c.rw2_extra_constraint ? 2 : 1;
            out.constraints.A = Matrix::Zero(k, n);
            out.constraints.A.row(0).setOnes();
            if (k == 2)
                for (int i = 0; i < n; ++i)
                    out.constraints.A(1, i) = i - 0.5 * (n - 1);  // centered linear trend
            out.constraints.e = Vector::Zero(k);
            break;
        }
        case LatentKind::Besag: {
            auto comps = graph_components(c.graph);
            if (comps.size() > 1 && !c.allow_disconnected)
                throw DisconnectedGraph("besag component '" + c.name + "': graph has " +
                                        std::to_string(comps.size()) + " connected components");
            out.Q = besag_precision(c.graph, theta.natural(c.name + "_prec"));
            out.constraints.A = Matrix::Zero(static_cast<Eigen::Index>(comps.size()), n);
            for (std::size_t k = 0; k < comps.size(); ++k)
                for (int v : comps[k]) out.constraints.A(static_cast<Eigen::Index>(k), v) = 1.0;
            out.constraints.e = Vector::Zero(static_cast<Eigen::Index>(comps.size()));
            break;
        }
        case LatentKind::Iid2d: {
            Vector p(2), r(1);
            p << theta.natural(c.name + "_prec1"), theta.natural(c.name + "_prec2");
            r << theta.natural(c.name + "_cor12");
            out.Q = iidkd_precision(2, n / 2, p, r);
            out.constraints = ConstraintSet::none(n);
            break;
        }
        case LatentKind::Iid3d: {
            Vector p(3), r(3);
            p << theta.natural(c.name + "_prec1"), theta.natural(c.name + "_prec2"),
                theta.natural(c.name + "_prec3");
            r << theta.natural(c.name + "_cor12"), theta.natural(c.name + "_cor13"),
                theta.natural(c.name + "_cor23");
            out.Q = iidkd_precision(3, n / 3, p, r);
            out.constraints = ConstraintSet::none(n);
            break;
        }
    }
    return out;
}

namespace detail {

/// Block-diagonal r-fold expansion with per-block constraint replication.
inline BlockPrecision blockdiag_expand(const BlockPrecision& block, int r) {
    if (r == 1) return block;
    int n = static_cast<int>(block.Q.size());
    BlockPrecision out;
    out.Q = kron(SparseSymmetric::identity(r), block.Q);
    int k = block.constraints.count();
    out.constraints.A = Matrix::Zero(static_cast<Eigen::Index>(k) * r, static_cast<Eigen::Index>(n) * r);
    out.constraints.e = Vector::Zero(static_cast<Eigen::Index>(k) * r);
    for (int rep = 0; rep < r; ++rep)
        for (int ci = 0; ci < k; ++ci) {
            out.constraints.A.block(rep * k + ci, rep * n, 1, n) = block.constraints.A.row(ci);
            out.constraints.e(rep * k + ci) = block.constraints.e(ci);
        }
    return out;
}

/// Drops linearly dependent constraint rows (deterministic, keeps the
/// earliest independent set). Used only for internally generated
/// redundancy in grouped intrinsic-on-intrinsic models.
inline ConstraintSet prune_constraints(const ConstraintSet& cs) {
    int k = cs.count();
    if (k <= 1) return cs;
    std::vector<int> keep;
    Matrix basis(cs.A.cols(), 0);
    for (int i = 0; i < k; ++i) {
        Vector v = cs.A.row(i).transpose();
        Vector res = v;
        if (basis.cols() > 0) res -= basis * (basis.transpose() * v);
        if (res.norm() > 1e-10 * std::max(1.0, v.norm())) {
            res.normalize();
            basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
            basis.col(basis.cols() - 1) = res;
            keep.push_back(i);
        }
    }
    ConstraintSet out;
    out.A = Matrix::Zero(static_cast<Eigen::Index>(keep.size()), cs.A.cols());
    out.e = Vector::Zero(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i) {
        out.A.row(static_cast<Eigen::Index>(i)) = cs.A.row(keep[i]);
        out.e(static_cast<Eigen::Index>(i)) = cs.e(keep[i]);
    }
    return out;
}

}  // namespace detail

/// Conditionally independent replications sharing hyperparameters.
inline BlockPrecision replicate_expand(const LatentComponent& c, const ThetaView& theta) {
    return detail::blockdiag_expand(build_precision(c, theta), c.replicate_count);
}

/// Kronecker (group) expansion: Q = Q_group (x) Q_component, with group
/// precision standardized to unit marginal scale.
inline BlockPrecision group_expand(const LatentComponent& c, const ThetaView& theta) {
    BlockPrecision base = build_precision(c, theta);
    if (!c.group || c.group->count == 1) return base;
    int g = c.group->count;
    int n = static_cast<int>(base.Q.size());

    SparseSymmetric qg;
    bool group_intrinsic = false;
    switch (c.group->model) {
        case GroupModel::Ar1:
            qg = ar1_precision(g, 1.0, theta.natural(c.name + "_group_rho"));
            break;
        case GroupModel::Exchangeable:
            qg = exchangeable_precision(g, theta.natural(c.name + "_group_rho"));
            break;
        case GroupModel::Rw1:
            qg = rw1_precision(g, 1.0);
            group_intrinsic = true;
            break;
        case GroupModel::Rw2:
            qg = rw2_precision(g, 1.0);
            group_intrinsic = true;
            break;
    }

    BlockPrecision out;
    out.Q = kron(qg, base.Q);

    // component constraints applied per group
    int kc = base.constraints.count();
    std::vector<Matrix> rows;
    std::vector<double> rhs;
    for (int gg = 0; gg < g; ++gg)
        for (int ci = 0; ci < kc; ++ci) {
            Matrix row = Matrix::Zero(1, g * n);
            row.block(0, gg * n, 1, n) = base.constraints.A.row(ci);
            rows.push_back(row);
            rhs.push_back(base.constraints.e(ci));
        }
    // intrinsic group model: the across-group sum of every element is
    // constrained to zero
    if (group_intrinsic)
        for (int i = 0; i < n; ++i) {
            Matrix row = Matrix::Zero(1, g * n);
            for (int gg = 0; gg < g; ++gg) row(0, gg * n + i) = 1.0;
            rows.push_back(row);
            rhs.push_back(0.0);
        }
    out.constraints.A = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), g * n);
    out.constraints.e = Vector::Zero(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.constraints.A.row(static_cast<Eigen::Index>(i)) = rows[i];
        out.constraints.e(static_cast<Eigen::Index>(i)) = rhs[i];
    }
    if (group_intrinsic && kc > 0) out.constraints = detail::prune_constraints(out.constraints);
    return out;
}

/// Full expansion of one component: grouping first, then replication.
inline BlockPrecision expand_component(const LatentComponent& c, const ThetaView& theta) {
    BlockPrecision grouped = group_expand(c, theta);
    return detail::blockdiag_expand(grouped, c.replicate_count);
}

}  // namespace nla
