#pragma once

// Assembly of the joint latent field at a given hyperparameter value:
// x = (eta* [when A is present], eta, components..., fixed effects).
// The likelihood attaches to the first block; everything else is tied
// to it through high-precision Gaussian links.

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "nla/errors.hpp"
#include "nla/latent.hpp"
#include "nla/likelihood.hpp"
#include "nla/model.hpp"

namespace nla {

struct IndexEntry {
    std::string name;
    int offset = 0;
    int length = 0;
};

/// The joint field at one theta: regularized prior precision, linear term,
/// constraints, the observation map and component offsets.
struct Assembled {
    int n = 0;
    SparseSymmetric Q;   // prior precision, constraint-regularized
    Vector b;            // linear term (Q mu = b)
    ConstraintSet constraints;
    std::vector<IndexEntry> index;
    std::vector<Observation> obs;  // row field index = data_offset + obs.row
    int data_offset = 0;           // offset of the data-connected block
    std::vector<double> block_tau;  // per likelihood block: gaussian precision (1 otherwise)
    std::vector<Family> families;

    const IndexEntry& entry(const std::string& name) const {
        for (const auto& en : index)
            if (en.name == name) return en;
        throw SpecError("assemble: no field block named '" + name + "'");
    }
};

namespace detail {

/// Adds kappa * v v^T for a sparse coefficient list v.
inline void add_outer(std::vector<Triplet>& ts, const std::vector<std::pair<int, double>>& v,
                      double kappa) {
    for (std::size_t a = 0; a < v.size(); ++a)
        for (std::size_t b = 0; b <= a; ++b)
            ts.emplace_back(v[a].first, v[b].first, kappa * v[a].second * v[b].second);
}

inline double column_value(const DataSet& d, const std::string& col, int row) {
    auto it = d.columns.find(col);
    if (it == d.columns.end()) throw SpecError("assemble: data column '" + col + "' not found");
    if (row >= static_cast<int>(it->second.size()))
        throw DimensionMismatch("assemble: row beyond column length");
    return it->second[static_cast<std::size_t>(row)];
}

}  // namespace detail

/// Resolves the component element index a predictor row points at,
/// or -1 when the component does not enter that row.
inline int component_element(const ModelSpec& spec, const LatentComponent& c, int row) {
    const LatentComponent* src = c.copy_of.empty() ? &c : spec.find_component(c.copy_of);
    double iv = detail::column_value(spec.data, c.index_column, row);
    if (std::isnan(iv)) return -1;
    int idx = static_cast<int>(iv) - 1;
    int g = (src->group ? src->group->count : 1);
    int per_rep = src->size * g;
    int rep = 0, grp = 0;
    if (!c.replicate_column.empty()) {
        double rv = detail::column_value(spec.data, c.replicate_column, row);
        if (std::isnan(rv)) return -1;
        rep = static_cast<int>(rv) - 1;
    }
    if (!c.group_column.empty()) {
        double gv = detail::column_value(spec.data, c.group_column, row);
        if (std::isnan(gv)) return -1;
        grp = static_cast<int>(gv) - 1;
    }
    int element;
    if (c.replicate_column.empty() && c.group_column.empty()) {
        element = idx;  // index addresses the expanded field directly
    } else {
        element = rep * per_rep + grp * src->size + idx;
    }
    if (element < 0 || element >= src->total_size())
        throw DimensionMismatch("assemble: component '" + c.name + "' index out of range at row " +
                                std::to_string(row + 1));
    return element;
}

inline Assembled assemble_joint(const ModelSpec& spec, const ThetaView& theta) {
    const int n_eta = spec.n_eta();
    const bool has_A = spec.A.has_value();
    const int n_star = has_A ? static_cast<int>(spec.A->rows()) : 0;

    Assembled out;
    int off = 0;
    if (has_A) {
        out.index.push_back({"eta_star", off, n_star});
        off += n_star;
    }
    out.index.push_back({"eta", off, n_eta});
    int eta_off = off;
    off += n_eta;
    std::map<std::string, int> comp_off;
    for (const auto& c : spec.components) {
        const LatentComponent* src = c.copy_of.empty() ? &c : spec.find_component(c.copy_of);
        if (src == nullptr) throw SpecError("assemble: unknown copy source '" + c.copy_of + "'");
        int len = src->total_size();
        out.index.push_back({c.name, off, len});
        comp_off[c.name] = off;
        off += len;
    }
    for (const auto& fe : spec.fixed_effects) {
        out.index.push_back({fe.name, off, 1});
        off += 1;
    }
    out.n = off;
    out.data_offset = has_A ? 0 : eta_off;

    std::vector<Triplet> ts;
    out.b = Vector::Zero(out.n);

    std::vector<Matrix> cons_rows;
    std::vector<double> cons_rhs;

    // component priors and their constraints
    for (const auto& c : spec.components) {
        int o = comp_off[c.name];
        if (!c.copy_of.empty()) continue;  // copy blocks carry only the tie
        BlockPrecision bp = expand_component(c, theta);
        const SpMat& lower = bp.Q.lower();
        for (int j = 0; j < lower.outerSize(); ++j)
            for (SpMat::InnerIterator it(lower, j); it; ++it)
                ts.emplace_back(o + it.row(), o + it.col(), it.value());
        for (int ci = 0; ci < bp.constraints.count(); ++ci) {
            Matrix row = Matrix::Zero(1, out.n);
            row.block(0, o, 1, bp.constraints.A.cols()) = bp.constraints.A.row(ci);
            cons_rows.push_back(row);
            cons_rhs.push_back(bp.constraints.e(ci));
        }
    }

    // copy ties: tau_c * (x_copy - psi x_src)^2 per element
    for (const auto& c : spec.components) {
        if (c.copy_of.empty()) continue;
        const LatentComponent* src = spec.find_component(c.copy_of);
        int oc = comp_off[c.name];
        int os = comp_off[c.copy_of];
        double tau_c = std::exp(c.tau_copy_exponent);
        double psi = c.copy_scale_unknown ? theta.internal(c.name + "_beta") : 1.0;
        for (int i = 0; i < src->total_size(); ++i)
            detail::add_outer(ts, {{oc + i, 1.0}, {os + i, -psi}}, tau_c);
    }

    // predictor linkage: kappa_eta * (eta_r - sum of component/fixed terms)^2
    const double kappa_eta = std::exp(spec.config.kappa_eta_exponent);
    for (int r = 0; r < n_eta; ++r) {
        std::vector<std::pair<int, double>> v;
        v.emplace_back(eta_off + r, 1.0);
        for (const auto& c : spec.components) {
            int el = component_element(spec, c, r);
            if (el < 0) continue;
            double w = 1.0;
            if (!c.weight_column.empty()) {
                double wv = detail::column_value(spec.data, c.weight_column, r);
                w = std::isnan(wv) ? 0.0 : wv;
            }
            if (w != 0.0) v.emplace_back(comp_off[c.name] + el, -w);
        }
        for (const auto& fe : spec.fixed_effects) {
            double z = fe.intercept ? 1.0 : detail::column_value(spec.data, fe.column, r);
            if (std::isnan(z)) z = 0.0;
            if (z != 0.0) v.emplace_back(out.entry(fe.name).offset, -z);
        }
        detail::add_outer(ts, v, kappa_eta);
    }

    // eta* layer: kappa_A * (eta*_i - (A eta)_i)^2
    if (has_A) {
        const double kappa_A = std::exp(spec.config.kappa_A_exponent);
        const SpMat& A = *spec.A;
        for (int i = 0; i < n_star; ++i) {
            std::vector<std::pair<int, double>> v;
            v.emplace_back(i, 1.0);
            for (int j = 0; j < A.cols(); ++j) {
                double a = A.coeff(i, j);
                if (a != 0.0) v.emplace_back(eta_off + j, -a);
            }
            detail::add_outer(ts, v, kappa_A);
        }
    }

    // fixed effect priors (flat priors get a tiny floor so the joint
    // precision stays factorizable; it cancels in posterior differences)
    for (const auto& fe : spec.fixed_effects) {
        int j = out.entry(fe.name).offset;
        double p = std::max(fe.prior_prec, spec.config.fixed_prec_floor);
        ts.emplace_back(j, j, p);
        out.b(j) += p * fe.prior_mean;
    }

    // constraint regularization: + u u^T per normalized constraint row
    out.constraints.A = Matrix::Zero(static_cast<Eigen::Index>(cons_rows.size()), out.n);
    out.constraints.e = Vector::Zero(static_cast<Eigen::Index>(cons_rows.size()));
    for (std::size_t i = 0; i < cons_rows.size(); ++i) {
        out.constraints.A.row(static_cast<Eigen::Index>(i)) = cons_rows[i];
        out.constraints.e(static_cast<Eigen::Index>(i)) = cons_rhs[i];
        Vector u = cons_rows[i].row(0).transpose();
        u.normalize();
        std::vector<std::pair<int, double>> v;
        for (int j = 0; j < out.n; ++j)
            if (u(j) != 0.0) v.emplace_back(j, u(j));
        detail::add_outer(ts, v, 1.0);
    }

    // rank check on the combined constraint set
    if (out.constraints.count() > 0) {
        Eigen::ColPivHouseholderQR<Matrix> qr(out.constraints.A.transpose());
        if (qr.rank() < out.constraints.count())
            throw RankDeficientConstraint("assemble: constraint rows are linearly dependent");
    }

    out.Q = SparseSymmetric(out.n, ts);

    // observation map and per-block gaussian precisions
    out.families.reserve(spec.likelihoods.size());
    for (const auto& lk : spec.likelihoods) out.families.push_back(lk.family);
    Matrix ntr = spec.data.ntrials;
    if (ntr.size() == 0) ntr = Matrix::Constant(spec.data.rows, static_cast<Eigen::Index>(spec.likelihoods.size()), std::nan(""));
    // fill ntrials columns from named data columns when given
    for (std::size_t k = 0; k < spec.likelihoods.size(); ++k) {
        const auto& lk = spec.likelihoods[k];
        if (lk.family == Family::Binomial && !lk.ntrials_column.empty()) {
            const auto& col = spec.data.columns.at(lk.ntrials_column);
            for (int r = 0; r < spec.data.rows && r < static_cast<int>(col.size()); ++r)
                ntr(r, static_cast<Eigen::Index>(k)) = col[static_cast<std::size_t>(r)];
        }
    }
    out.obs = bind_responses(spec.data.response, out.families, &ntr);
    const int n_rows = spec.n_obs_rows();
    for (const auto& o : out.obs)
        if (o.row >= n_rows)
            throw DimensionMismatch("assemble: observed response at row " + std::to_string(o.row + 1) +
                                    " beyond the observation block");
    int k = 0;
    for (const auto& lk : spec.likelihoods) {
        ++k;
        double tau = 1.0;
        if (lk.family == Family::Gaussian)
            tau = theta.natural("prec_obs" + (spec.likelihoods.size() > 1 ? std::to_string(k) : ""));
        out.block_tau.push_back(tau);
    }
    return out;
}

}  // namespace nla
