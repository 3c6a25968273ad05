#pragma once

// Declarative model description: latent components, likelihood blocks,
// fixed effects, the optional observation matrix and linear combinations,
// together with the bound data table. Immutable once validated.

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "nla/errors.hpp"
#include "nla/hyper.hpp"
#include "nla/likelihood.hpp"
#include "nla/sparse.hpp"

namespace nla {

enum class LatentKind { Iid, Ar1, Rw1, Rw2, Besag, Iid2d, Iid3d };

inline std::string latent_kind_name(LatentKind k) {
    switch (k) {
        case LatentKind::Iid: return "iid";
        case LatentKind::Ar1: return "ar1";
        case LatentKind::Rw1: return "rw1";
        case LatentKind::Rw2: return "rw2";
        case LatentKind::Besag: return "besag";
        case LatentKind::Iid2d: return "iid2d";
        case LatentKind::Iid3d: return "iid3d";
    }
    return "?";
}

inline LatentKind latent_kind_from_name(const std::string& s) {
    if (s == "iid") return LatentKind::Iid;
    if (s == "ar1") return LatentKind::Ar1;
    if (s == "rw1") return LatentKind::Rw1;
    if (s == "rw2") return LatentKind::Rw2;
    if (s == "besag") return LatentKind::Besag;
    if (s == "iid2d") return LatentKind::Iid2d;
    if (s == "iid3d") return LatentKind::Iid3d;
    throw SpecError("unknown latent model '" + s + "'");
}

enum class GroupModel { Ar1, Exchangeable, Rw1, Rw2 };

inline std::string group_model_name(GroupModel g) {
    switch (g) {
        case GroupModel::Ar1: return "ar1";
        case GroupModel::Exchangeable: return "exchangeable";
        case GroupModel::Rw1: return "rw1";
        case GroupModel::Rw2: return "rw2";
    }
    return "?";
}

inline GroupModel group_model_from_name(const std::string& s) {
    if (s == "ar1") return GroupModel::Ar1;
    if (s == "exchangeable") return GroupModel::Exchangeable;
    if (s == "rw1") return GroupModel::Rw1;
    if (s == "rw2") return GroupModel::Rw2;
    throw SpecError("unknown group model '" + s + "'");
}

/// Per-hyperparameter user settings; priors default per slot type.
struct HyperSetting {
    std::optional<PriorSpec> prior;
    bool fixed = false;
    double fixed_value = 0.0;         // natural scale
    std::optional<double> initial;    // natural scale
};

struct GroupSpec {
    int count = 1;
    GroupModel model = GroupModel::Exchangeable;
};

struct LatentComponent {
    std::string name;
    LatentKind kind = LatentKind::Iid;
    int size = 0;  // elements per replicate-and-group block
    int replicate_count = 1;
    std::optional<GroupSpec> group;

    // besag only
    std::vector<std::vector<int>> graph;  // 0-based adjacency
    bool allow_disconnected = false;

    bool rw2_extra_constraint = false;

    // data binding
    std::string index_column;
    std::string weight_column;     // optional multiplicative weight
    std::string replicate_column;  // optional, values 1..replicate_count
    std::string group_column;      // optional, values 1..group count

    // copy: when non-empty this component is a near-identical copy of
    // another one and carries no model of its own
    std::string copy_of;
    bool copy_scale_unknown = false;
    double tau_copy_exponent = 15.0;  // tie precision exp(15)

    std::map<std::string, HyperSetting> hyper;

    int total_size() const {
        int g = group ? group->count : 1;
        return size * replicate_count * g;
    }
};

struct FixedEffect {
    std::string name;
    std::string column;  // empty for the intercept
    bool intercept = false;
    double prior_mean = 0.0;
    double prior_prec = 0.001;  // intercept default 0 (flat)
};

struct LikelihoodSpec {
    Family family = Family::Gaussian;
    std::string ntrials_column;  // binomial
    std::map<std::string, HyperSetting> hyper;
};

struct LincombTerm {
    std::string component;  // component name, or fixed effect name with kind below
    bool is_fixed_effect = false;
    int index = 1;  // 1-based within the component
    double weight = 1.0;
};

struct Lincomb {
    std::string name;
    std::vector<LincombTerm> terms;
};

struct DataSet {
    int rows = 0;
    std::map<std::string, std::vector<double>> columns;  // NaN for NA
    Matrix response;  // rows x K, NaN for missing
    Matrix ntrials;   // rows x K, NaN where absent
};

struct ModelConfig {
    double kappa_eta_exponent = 15.0;  // predictor tie precision exp(15)
    double kappa_A_exponent = 15.0;    // eta* layer precision exp(15)
    // Flat fixed-effect priors get this effective precision so the joint
    // prior stays factorizable next to the exp(15) linkage terms.
    double fixed_prec_floor = 1e-4;
};

struct ModelSpec {
    std::vector<LatentComponent> components;
    std::vector<LikelihoodSpec> likelihoods;
    std::vector<FixedEffect> fixed_effects;
    std::optional<SpMat> A;  // observation matrix, eta* = A eta
    std::vector<Lincomb> lincombs;
    DataSet data;
    ModelConfig config;

    /// Number of predictor rows (columns of A when present, else data rows).
    int n_eta() const { return A ? static_cast<int>(A->cols()) : data.rows; }
    /// Number of observation-level predictor rows.
    int n_obs_rows() const { return A ? static_cast<int>(A->rows()) : data.rows; }

    const LatentComponent* find_component(const std::string& name) const {
        for (const auto& c : components)
            if (c.name == name) return &c;
        return nullptr;
    }
};

namespace detail {

inline const HyperSetting* find_setting(const std::map<std::string, HyperSetting>& m,
                                        const std::string& key) {
    auto it = m.find(key);
    return it == m.end() ? nullptr : &it->second;
}

inline HyperInfo make_hyper(const std::string& name, HyperTransform tr, PriorSpec default_prior,
                            const HyperSetting* s, double default_natural_init) {
    HyperInfo h;
    h.name = name;
    h.transform = tr;
    h.prior = (s && s->prior) ? *s->prior : default_prior;
    if (s && s->fixed) {
        h.fixed = true;
        h.fixed_internal = tr.internal(s->fixed_value);
    }
    double init_nat = (s && s->initial) ? *s->initial : default_natural_init;
    h.init_internal = tr.internal(init_nat);
    return h;
}

}  // namespace detail

/// Hyperparameter registry in declaration order: likelihood blocks first,
/// then latent components.
inline HyperRegistry build_registry(const ModelSpec& spec) {
    using detail::find_setting;
    using detail::make_hyper;
    HyperRegistry reg;
    HyperTransform log_tr{HyperTransform::Log};
    HyperTransform cor_tr{HyperTransform::CorrFisher};
    HyperTransform id_tr{HyperTransform::Identity};

    int k = 0;
    for (const auto& lk : spec.likelihoods) {
        ++k;
        if (lk.family == Family::Gaussian) {
            std::string nm = "prec_obs" + (spec.likelihoods.size() > 1 ? std::to_string(k) : "");
            reg.add(make_hyper(nm, log_tr, default_precision_prior(), find_setting(lk.hyper, "prec"), 1.0));
        }
    }
    for (const auto& c : spec.components) {
        if (!c.copy_of.empty()) {
            if (c.copy_scale_unknown)
                reg.add(make_hyper(c.name + "_beta", id_tr, PriorSpec{PriorSpec::Gaussian, 1.0, 10.0},
                                   find_setting(c.hyper, "beta"), 1.0));
        } else {
            switch (c.kind) {
                case LatentKind::Iid:
                case LatentKind::Rw1:
                case LatentKind::Rw2:
                case LatentKind::Besag:
                    reg.add(make_hyper(c.name + "_prec", log_tr, default_precision_prior(),
                                       find_setting(c.hyper, "prec"), 1.0));
                    break;
                case LatentKind::Ar1:
                    reg.add(make_hyper(c.name + "_prec", log_tr, default_precision_prior(),
                                       find_setting(c.hyper, "prec"), 1.0));
                    reg.add(make_hyper(c.name + "_rho", cor_tr, default_correlation_prior(),
                                       find_setting(c.hyper, "rho"), 0.0));
                    break;
                case LatentKind::Iid2d:
                    reg.add(make_hyper(c.name + "_prec1", log_tr, default_precision_prior(),
                                       find_setting(c.hyper, "prec1"), 1.0));
                    reg.add(make_hyper(c.name + "_prec2", log_tr, default_precision_prior(),
                                       find_setting(c.hyper, "prec2"), 1.0));
                    reg.add(make_hyper(c.name + "_cor12", cor_tr, default_correlation_prior(),
                                       find_setting(c.hyper, "cor12"), 0.0));
                    break;
                case LatentKind::Iid3d:
                    for (int j = 1; j <= 3; ++j)
                        reg.add(make_hyper(c.name + "_prec" + std::to_string(j), log_tr,
                                           default_precision_prior(),
                                           find_setting(c.hyper, "prec" + std::to_string(j)), 1.0));
                    for (const char* cn : {"cor12", "cor13", "cor23"})
                        reg.add(make_hyper(c.name + "_" + cn, cor_tr, default_correlation_prior(),
                                           find_setting(c.hyper, cn), 0.0));
                    break;
            }
            if (c.group) {
                if (c.group->model == GroupModel::Ar1)
                    reg.add(make_hyper(c.name + "_group_rho", cor_tr, default_correlation_prior(),
                                       find_setting(c.hyper, "group_rho"), 0.0));
                else if (c.group->model == GroupModel::Exchangeable) {
                    double lo = c.group->count > 1 ? -1.0 / (c.group->count - 1) : -1.0;
                    HyperTransform tr{HyperTransform::IntervalLogit, lo, 1.0};
                    reg.add(make_hyper(c.name + "_group_rho", tr, default_correlation_prior(),
                                       find_setting(c.hyper, "group_rho"), (lo + 1.0) / 2.0));
                }
            }
        }
    }
    return reg;
}

/// All violations of the model invariants; an empty list means the model
/// can be assembled.
inline std::vector<std::string> validate(const ModelSpec& spec) {
    std::vector<std::string> diag;
    const DataSet& d = spec.data;

    if (spec.likelihoods.empty()) diag.push_back("no likelihood blocks defined");
    if (d.response.rows() != d.rows && d.rows > 0)
        diag.push_back("response matrix rows do not match data rows");
    if (d.response.cols() != static_cast<Eigen::Index>(spec.likelihoods.size()))
        diag.push_back("response matrix has " + std::to_string(d.response.cols()) +
                       " columns but " + std::to_string(spec.likelihoods.size()) +
                       " likelihood blocks are defined");

    // each response row owned by at most one block
    for (Eigen::Index r = 0; r < d.response.rows(); ++r) {
        int cnt = 0;
        for (Eigen::Index kk = 0; kk < d.response.cols(); ++kk)
            if (!std::isnan(d.response(r, kk))) ++cnt;
        if (cnt > 1)
            diag.push_back("response row " + std::to_string(r + 1) + " has " + std::to_string(cnt) +
                           " non-missing entries");
    }

    std::set<std::string> names;
    for (std::size_t ci = 0; ci < spec.components.size(); ++ci) {
        const auto& c = spec.components[ci];
        std::string where = "component '" + c.name + "': ";
        if (c.name.empty()) diag.push_back("component " + std::to_string(ci) + " has no name");
        if (!names.insert(c.name).second) diag.push_back(where + "duplicate name");

        if (!c.copy_of.empty()) {
            bool found = false;
            for (std::size_t cj = 0; cj < ci; ++cj)
                if (spec.components[cj].name == c.copy_of) {
                    found = true;
                    if (!spec.components[cj].copy_of.empty())
                        diag.push_back(where + "copy source is itself a copy");
                }
            if (!found) diag.push_back(where + "copy source '" + c.copy_of + "' not found before it");
            if (!(c.tau_copy_exponent > 0.0)) diag.push_back(where + "tau_copy must be positive");
        } else {
            if (c.size < 1) diag.push_back(where + "size must be >= 1");
            if (c.replicate_count < 1) diag.push_back(where + "replicate count must be >= 1");
            if (c.group && c.group->count < 1) diag.push_back(where + "group count must be >= 1");
            if (c.kind == LatentKind::Iid2d && c.size % 2 != 0)
                diag.push_back(where + "iid2d size must be even");
            if (c.kind == LatentKind::Iid3d && c.size % 3 != 0)
                diag.push_back(where + "iid3d size must be divisible by 3");
            if (c.kind == LatentKind::Besag) {
                if (static_cast<int>(c.graph.size()) != c.size)
                    diag.push_back(where + "graph node count does not match size");
            }
        }

        // index binding
        const LatentComponent* src = c.copy_of.empty() ? &c : spec.find_component(c.copy_of);
        int sz = src != nullptr ? src->size : c.size;
        auto it = d.columns.find(c.index_column);
        if (c.index_column.empty() || it == d.columns.end()) {
            diag.push_back(where + "index column '" + c.index_column + "' not found in data");
        } else {
            int per_rep = sz * (src && src->group ? src->group->count : 1);
            int limit = c.replicate_column.empty() && c.group_column.empty()
                            ? (src != nullptr ? src->total_size() : sz)
                            : sz;
            (void)per_rep;
            for (int r = 0; r < spec.n_eta() && r < static_cast<int>(it->second.size()); ++r) {
                double v = it->second[static_cast<std::size_t>(r)];
                if (std::isnan(v)) continue;
                int idx = static_cast<int>(v);
                if (idx < 1 || idx > limit) {
                    diag.push_back(where + "index value " + std::to_string(idx) + " at row " +
                                   std::to_string(r + 1) + " outside 1.." + std::to_string(limit));
                    break;
                }
            }
        }
    }

    for (const auto& fe : spec.fixed_effects) {
        if (!fe.intercept && d.columns.find(fe.column) == d.columns.end())
            diag.push_back("fixed effect '" + fe.name + "': column '" + fe.column + "' not found");
    }

    if (spec.A) {
        if (spec.A->cols() > d.rows)
            diag.push_back("A matrix has more columns than data rows");
        if (spec.A->rows() > d.rows)
            diag.push_back("A matrix has more rows than data rows");
    }

    for (const auto& lc : spec.lincombs) {
        if (lc.terms.empty()) diag.push_back("lincomb '" + lc.name + "' has no terms");
        bool all_zero = true;
        for (const auto& t : lc.terms) {
            if (t.weight != 0.0) all_zero = false;
            if (t.is_fixed_effect) {
                bool ok = false;
                for (const auto& fe : spec.fixed_effects)
                    if (fe.name == t.component) ok = true;
                if (!ok)
                    diag.push_back("lincomb '" + lc.name + "': fixed effect '" + t.component +
                                   "' not found");
            } else {
                const auto* c = spec.find_component(t.component);
                if (c == nullptr)
                    diag.push_back("lincomb '" + lc.name + "': component '" + t.component +
                                   "' not found");
                else {
                    const LatentComponent* src = c->copy_of.empty() ? c : spec.find_component(c->copy_of);
                    if (src && (t.index < 1 || t.index > src->total_size()))
                        diag.push_back("lincomb '" + lc.name + "': index " + std::to_string(t.index) +
                                       " out of range");
                }
            }
        }
        if (all_zero) diag.push_back("lincomb '" + lc.name + "' has all-zero weights");
    }

    for (std::size_t k = 0; k < spec.likelihoods.size(); ++k) {
        const auto& lk = spec.likelihoods[k];
        if (lk.family == Family::Binomial && !lk.ntrials_column.empty() &&
            d.columns.find(lk.ntrials_column) == d.columns.end())
            diag.push_back("likelihood " + std::to_string(k + 1) + ": ntrials column '" +
                           lk.ntrials_column + "' not found");
    }

    return diag;
}

}  // namespace nla
