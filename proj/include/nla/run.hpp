#pragma once

// End-to-end pipeline: hyperparameter mode search, exploration, per-point
// Gaussian approximations, latent / hyperparameter / lincomb marginals,
// and the on-disk result bundle (per-quantity density CSVs, a summary
// JSON and a run manifest).

#include <atomic>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "nla/explore.hpp"
#include "nla/gaussian_approx.hpp"
#include "nla/hyper_marginals.hpp"
#include "nla/io.hpp"
#include "nla/latent_marginals.hpp"

namespace nla {

enum class IntStrategy { Grid, Ccd, Auto };
enum class HyperMethod { IntegrationFree, AsymGaussian, RefinedGrid };
enum class LincombMode { DerivedOnly, Enlarged };

inline Strategy strategy_from_flag(const std::string& s) {
    if (s == "gaussian") return Strategy::Gaussian;
    if (s == "simplified-laplace" || s == "simplified_laplace") return Strategy::SimplifiedLaplace;
    if (s == "laplace") return Strategy::Laplace;
    throw SpecError("unknown strategy '" + s + "'");
}

inline std::string strategy_flag(Strategy s) {
    switch (s) {
        case Strategy::Gaussian: return "gaussian";
        case Strategy::SimplifiedLaplace: return "simplified-laplace";
        case Strategy::Laplace: return "laplace";
    }
    return "?";
}

inline IntStrategy int_strategy_from_flag(const std::string& s) {
    if (s == "grid") return IntStrategy::Grid;
    if (s == "ccd") return IntStrategy::Ccd;
    if (s == "auto") return IntStrategy::Auto;
    throw SpecError("unknown integration strategy '" + s + "'");
}

inline std::string int_strategy_flag(IntStrategy s) {
    switch (s) {
        case IntStrategy::Grid: return "grid";
        case IntStrategy::Ccd: return "ccd";
        case IntStrategy::Auto: return "auto";
    }
    return "?";
}

inline HyperMethod hyper_method_from_flag(const std::string& s) {
    if (s == "integration-free") return HyperMethod::IntegrationFree;
    if (s == "asym-gaussian") return HyperMethod::AsymGaussian;
    if (s == "refined-grid") return HyperMethod::RefinedGrid;
    throw SpecError("unknown hyperparameter marginal method '" + s + "'");
}

inline std::string hyper_method_flag(HyperMethod h) {
    switch (h) {
        case HyperMethod::IntegrationFree: return "integration-free";
        case HyperMethod::AsymGaussian: return "asym-gaussian";
        case HyperMethod::RefinedGrid: return "refined-grid";
    }
    return "?";
}

inline LincombMode lincomb_mode_from_flag(const std::string& s) {
    if (s == "derived-only") return LincombMode::DerivedOnly;
    if (s == "enlarged") return LincombMode::Enlarged;
    throw SpecError("unknown lincomb mode '" + s + "'");
}

inline std::string lincomb_mode_flag(LincombMode m) {
    return m == LincombMode::DerivedOnly ? "derived-only" : "enlarged";
}

struct RunConfig {
    Strategy strategy = Strategy::SimplifiedLaplace;
    IntStrategy int_strategy = IntStrategy::Auto;
    HyperMethod hyper_method = HyperMethod::IntegrationFree;
    LincombMode lincomb_mode = LincombMode::DerivedOnly;
    int workers = 0;  // 0: all available cores
    ExploreOptions explore;
};

struct NamedMarginal {
    std::string name;
    Marginal marginal;
};

struct RunResult {
    ModeResult mode;
    int n_points = 0;
    bool used_ccd = false;
    int mode_evals = 0;
    int explore_evals = 0;
    int hyper_extra_evals = 0;  // evaluations spent on hyper marginals only
    long evidence_evals = 0;    // total log pi(theta | y) evaluations

    std::vector<std::string> hyper_names;
    std::vector<Marginal> hyper_internal;
    std::vector<Marginal> hyper_natural;
    std::vector<NamedMarginal> fixed;   // fixed effects
    std::vector<NamedMarginal> latent;  // component elements
    std::vector<NamedMarginal> lincombs;
    Matrix lincomb_correlation;  // empty unless >= 2 lincombs
};

namespace detail {

/// Static partition over [0, n); results written per index stay
/// deterministic regardless of the worker count.
template <typename Fn>
inline void parallel_for(int n, int workers, Fn&& fn) {
    if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
    if (workers < 1) workers = 1;
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next(0);
    std::vector<std::thread> pool;
    std::exception_ptr err;
    std::mutex err_mu;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            try {
                for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!err) err = std::current_exception();
                next.store(n);
            }
        });
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace detail

/// Runs the full approximation pipeline.  `last_theta`, when given, is
/// updated before every evidence evaluation so a numerical failure can be
/// reported with the hyperparameter value that triggered it.
inline RunResult run_pipeline(const ModelSpec& spec, const RunConfig& cfg,
                              Vector* last_theta = nullptr) {
    {
        auto diags = validate(spec);
        if (!diags.empty()) {
            std::string msg = "model validation failed:";
            for (const auto& d : diags) msg += "\n  - " + d;
            throw SpecError(msg);
        }
    }
    HyperRegistry reg = build_registry(spec);
    const int m = reg.free_count();

    auto warm = std::make_shared<Vector>();
    LogTarget f = [&spec, &reg, warm, last_theta](const Vector& th) {
        if (last_theta != nullptr) *last_theta = th;
        try {
            GaussianApprox ga;
            double lp = log_posterior_theta(spec, reg, th, &ga,
                                            warm->size() > 0 ? warm.get() : nullptr);
            *warm = ga.x_star;
            return lp;
        } catch (const NotPositiveDefinite&) {
        } catch (const InvalidHyper&) {
        } catch (const NonConvergence&) {
        } catch (const DomainError&) {
        } catch (const NonFiniteEvaluation&) {
        }
        return -std::numeric_limits<double>::infinity();
    };

    RunResult res;
    res.mode = find_mode(f, reg.initial_free(), cfg.explore);
    res.mode_evals = res.mode.evals;

    const bool use_ccd =
        cfg.int_strategy == IntStrategy::Ccd || (cfg.int_strategy == IntStrategy::Auto && m > 5);
    ThetaGrid grid =
        use_ccd ? ccd_design(f, res.mode, cfg.explore) : explore_grid(f, res.mode, cfg.explore);
    res.used_ccd = use_ccd;
    res.explore_evals = grid.evals;
    const int K = static_cast<int>(grid.points.size());
    res.n_points = K;

    // full Gaussian approximation at every retained point
    std::vector<Assembled> assembled(static_cast<std::size_t>(K));
    std::vector<GaussianApprox> fits(static_cast<std::size_t>(K));
    detail::parallel_for(K, cfg.workers, [&](int k) {
        Vector full = reg.expand(grid.points[static_cast<std::size_t>(k)].theta);
        ThetaView tv(reg, full);
        assembled[static_cast<std::size_t>(k)] = assemble_joint(spec, tv);
        fits[static_cast<std::size_t>(k)] =
            fit_gaussian_approx(assembled[static_cast<std::size_t>(k)]);
    });

    std::vector<double> lps(static_cast<std::size_t>(K)), deltas(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        lps[static_cast<std::size_t>(k)] = grid.points[static_cast<std::size_t>(k)].lp;
        deltas[static_cast<std::size_t>(k)] = grid.points[static_cast<std::size_t>(k)].weight;
    }

    // hyperparameter marginals
    res.hyper_names = reg.free_names();
    if (m > 0) {
        std::vector<Marginal> internal(static_cast<std::size_t>(m));
        if (cfg.hyper_method == HyperMethod::IntegrationFree) {
            for (int j = 0; j < m; ++j)
                internal[static_cast<std::size_t>(j)] =
                    integration_free_marginal(grid, f, j, &res.hyper_extra_evals);
        } else if (cfg.hyper_method == HyperMethod::AsymGaussian) {
            DirectionalScales sc = fit_scales(grid);
            for (int j = 0; j < m; ++j)
                internal[static_cast<std::size_t>(j)] = asym_gaussian_marginal(grid, sc, j);
        } else {
            ExploreOptions fine_opt = cfg.explore;
            fine_opt.dz *= 0.5;
            fine_opt.drop = std::max(fine_opt.drop, 5.0);
            ThetaGrid fine = explore_grid(f, res.mode, fine_opt);
            res.hyper_extra_evals += fine.evals;
            for (int j = 0; j < m; ++j)
                internal[static_cast<std::size_t>(j)] = grid_kde_marginal(fine, j, 0.5 * fine_opt.dz);
        }
        res.hyper_internal = internal;
        std::vector<int> free_idx = reg.free_indices();
        for (int j = 0; j < m; ++j)
            res.hyper_natural.push_back(natural_marginal(
                internal[static_cast<std::size_t>(j)],
                reg.info(free_idx[static_cast<std::size_t>(j)]).transform));
    }
    res.evidence_evals = static_cast<long>(res.mode_evals) + res.explore_evals + res.hyper_extra_evals;

    // latent quantities: component elements and fixed effects
    struct Quantity {
        std::string name;
        int field_index;
        bool is_fixed;
    };
    std::vector<Quantity> quants;
    for (const auto& c : spec.components) {
        const IndexEntry& en = assembled[0].entry(c.name);
        for (int i = 0; i < en.length; ++i)
            quants.push_back({c.name + "[" + std::to_string(i + 1) + "]", en.offset + i, false});
    }
    for (const auto& fe : spec.fixed_effects)
        quants.push_back({fe.name, assembled[0].entry(fe.name).offset, true});

    std::vector<Marginal> qmarg(quants.size());
    detail::parallel_for(static_cast<int>(quants.size()), cfg.workers, [&](int qi) {
        std::vector<ConditionalMarginal> comps(static_cast<std::size_t>(K));
        for (int k = 0; k < K; ++k)
            comps[static_cast<std::size_t>(k)] =
                conditional_marginal(assembled[static_cast<std::size_t>(k)],
                                     fits[static_cast<std::size_t>(k)],
                                     quants[static_cast<std::size_t>(qi)].field_index, cfg.strategy);
        qmarg[static_cast<std::size_t>(qi)] = integrate_marginal(std::move(comps), lps, deltas);
    });
    for (std::size_t qi = 0; qi < quants.size(); ++qi) {
        auto& dst = quants[qi].is_fixed ? res.fixed : res.latent;
        dst.push_back({quants[qi].name, qmarg[qi]});
    }

    // linear combinations
    if (!spec.lincombs.empty()) {
        Matrix B = lincomb_rows(spec, assembled[0]);
        if (cfg.lincomb_mode == LincombMode::DerivedOnly) {
            std::vector<const GaussianApprox*> ptrs;
            for (const auto& ga : fits) ptrs.push_back(&ga);
            // the mean of v uses the active strategy's corrected per-element
            // conditional means on the lincomb support
            std::vector<Vector> mu(static_cast<std::size_t>(K));
            const std::vector<Vector>* mu_ptr = nullptr;
            if (cfg.strategy != Strategy::Gaussian) {
                std::vector<int> support;
                for (Eigen::Index c = 0; c < B.cols(); ++c)
                    if (B.col(c).cwiseAbs().maxCoeff() != 0.0) support.push_back(static_cast<int>(c));
                detail::parallel_for(K, cfg.workers, [&](int k) {
                    mu[static_cast<std::size_t>(k)] = fits[static_cast<std::size_t>(k)].x_star;
                    for (int i : support)
                        mu[static_cast<std::size_t>(k)](i) =
                            conditional_marginal(assembled[static_cast<std::size_t>(k)],
                                                 fits[static_cast<std::size_t>(k)], i, cfg.strategy)
                                .mean;
                });
                mu_ptr = &mu;
            }
            std::vector<Marginal> ms = lincomb_fast(ptrs, lps, deltas, B, mu_ptr);
            for (std::size_t j = 0; j < spec.lincombs.size(); ++j)
                res.lincombs.push_back({spec.lincombs[j].name, ms[j]});
        } else {
            const int L = static_cast<int>(spec.lincombs.size());
            std::vector<Assembled> aug(static_cast<std::size_t>(K));
            std::vector<GaussianApprox> aug_fits(static_cast<std::size_t>(K));
            detail::parallel_for(K, cfg.workers, [&](int k) {
                aug[static_cast<std::size_t>(k)] =
                    augment_lincombs(spec, assembled[static_cast<std::size_t>(k)]);
                aug_fits[static_cast<std::size_t>(k)] =
                    fit_gaussian_approx(aug[static_cast<std::size_t>(k)]);
            });
            int voff = aug[0].entry("lincombs").offset;
            std::vector<Marginal> ms(static_cast<std::size_t>(L));
            detail::parallel_for(L, cfg.workers, [&](int j) {
                std::vector<ConditionalMarginal> comps(static_cast<std::size_t>(K));
                for (int k = 0; k < K; ++k)
                    comps[static_cast<std::size_t>(k)] = conditional_marginal(
                        aug[static_cast<std::size_t>(k)], aug_fits[static_cast<std::size_t>(k)],
                        voff + j, cfg.strategy);
                ms[static_cast<std::size_t>(j)] = integrate_marginal(std::move(comps), lps, deltas);
            });
            for (std::size_t j = 0; j < spec.lincombs.size(); ++j)
                res.lincombs.push_back({spec.lincombs[j].name, ms[j]});
        }
        if (spec.lincombs.size() >= 2) {
            std::vector<const GaussianApprox*> ptrs;
            for (const auto& ga : fits) ptrs.push_back(&ga);
            res.lincomb_correlation = lincomb_correlation(ptrs, lps, deltas, B);
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// result bundle on disk

namespace detail {

inline std::string sanitize_name(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-')
            out += c;
        else if (out.empty() || out.back() != '_')
            out += '_';
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out;
}

inline void write_marginal_csv(const std::string& path, const Marginal& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SpecError("cannot write '" + path + "'");
    out << "abscissa,density\n";
    for (Eigen::Index i = 0; i < m.abscissas.size(); ++i)
        out << format_double(m.abscissas(i)) << "," << format_double(m.densities(i)) << "\n";
}

inline Json summary_entry(const std::string& name, const Marginal& m) {
    return Json{{"name", name},   {"mean", m.mean},   {"sd", m.sd},
                {"q0.025", m.q025}, {"q0.5", m.q500}, {"q0.975", m.q975}};
}

}  // namespace detail

/// Writes the marginal CSVs, summary.json and manifest.json.  Everything
/// except the manifest (which records wall time) is byte-deterministic.
inline void write_run(const RunResult& res, const RunConfig& cfg, const std::string& out_dir,
                      double seconds = 0.0) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir + "/marginals");

    for (std::size_t j = 0; j < res.hyper_names.size(); ++j) {
        std::string base = detail::sanitize_name(res.hyper_names[j]);
        detail::write_marginal_csv(out_dir + "/marginals/hyper_" + base + ".csv",
                                   res.hyper_natural[j]);
        detail::write_marginal_csv(out_dir + "/marginals/hyper_" + base + "_internal.csv",
                                   res.hyper_internal[j]);
    }
    for (const auto& nm : res.fixed)
        detail::write_marginal_csv(
            out_dir + "/marginals/fixed_" + detail::sanitize_name(nm.name) + ".csv", nm.marginal);
    for (const auto& nm : res.latent)
        detail::write_marginal_csv(
            out_dir + "/marginals/latent_" + detail::sanitize_name(nm.name) + ".csv", nm.marginal);
    for (const auto& nm : res.lincombs)
        detail::write_marginal_csv(
            out_dir + "/marginals/lincomb_" + detail::sanitize_name(nm.name) + ".csv", nm.marginal);

    Json summary;
    summary["hyperparameters"] = Json::array();
    for (std::size_t j = 0; j < res.hyper_names.size(); ++j) {
        Json h = detail::summary_entry(res.hyper_names[j], res.hyper_natural[j]);
        h["internal"] = detail::summary_entry(res.hyper_names[j], res.hyper_internal[j]);
        summary["hyperparameters"].push_back(std::move(h));
    }
    summary["fixed_effects"] = Json::array();
    for (const auto& nm : res.fixed)
        summary["fixed_effects"].push_back(detail::summary_entry(nm.name, nm.marginal));
    summary["latent"] = Json::array();
    for (const auto& nm : res.latent)
        summary["latent"].push_back(detail::summary_entry(nm.name, nm.marginal));
    summary["lincombs"] = Json::array();
    for (const auto& nm : res.lincombs)
        summary["lincombs"].push_back(detail::summary_entry(nm.name, nm.marginal));
    if (res.lincomb_correlation.size() > 0) {
        Json corr = Json::array();
        for (Eigen::Index i = 0; i < res.lincomb_correlation.rows(); ++i) {
            Json row = Json::array();
            for (Eigen::Index j = 0; j < res.lincomb_correlation.cols(); ++j)
                row.push_back(res.lincomb_correlation(i, j));
            corr.push_back(std::move(row));
        }
        summary["lincomb_correlation"] = std::move(corr);
    }
    {
        std::ofstream out(out_dir + "/summary.json", std::ios::binary);
        out << summary.dump(2) << "\n";
    }

    Json manifest;
    manifest["config"] = {{"strategy", strategy_flag(cfg.strategy)},
                          {"int_strategy", int_strategy_flag(cfg.int_strategy)},
                          {"hyper_marginal", hyper_method_flag(cfg.hyper_method)},
                          {"lincomb_mode", lincomb_mode_flag(cfg.lincomb_mode)},
                          {"workers", cfg.workers}};
    Json mode_theta = Json::array();
    for (Eigen::Index i = 0; i < res.mode.mode.size(); ++i) mode_theta.push_back(res.mode.mode(i));
    manifest["mode"] = {{"theta", std::move(mode_theta)}, {"log_posterior", res.mode.lp}};
    manifest["exploration"] = {{"scheme", res.used_ccd ? "ccd" : "grid"}, {"points", res.n_points}};
    manifest["evaluations"] = {{"mode", res.mode_evals},
                               {"exploration", res.explore_evals},
                               {"hyper_marginal", res.hyper_extra_evals},
                               {"evidence_total", res.evidence_evals}};
    manifest["seconds"] = seconds;
    {
        std::ofstream out(out_dir + "/manifest.json", std::ios::binary);
        out << manifest.dump(2) << "\n";
    }
}

namespace detail {

inline void table_section(std::ostringstream& os, const std::string& title, const Json& rows) {
    if (rows.empty()) return;
    os << title << "\n";
    os << "  " << std::left << std::setw(24) << "name" << std::right << std::setw(12) << "mean"
       << std::setw(12) << "sd" << std::setw(12) << "q0.025" << std::setw(12) << "q0.5"
       << std::setw(12) << "q0.975" << "\n";
    for (const Json& r : rows) {
        os << "  " << std::left << std::setw(24) << r.at("name").get<std::string>() << std::right
           << std::fixed << std::setprecision(4) << std::setw(12) << r.at("mean").get<double>()
           << std::setw(12) << r.at("sd").get<double>() << std::setw(12)
           << r.at("q0.025").get<double>() << std::setw(12) << r.at("q0.5").get<double>()
           << std::setw(12) << r.at("q0.975").get<double>() << "\n";
        os.unsetf(std::ios::fixed);
    }
    os << "\n";
}

}  // namespace detail

/// Renders the summary of a result bundle as a fixed-width text table;
/// sections without content are omitted.
inline std::string summarize(const std::string& out_dir) {
    std::ifstream in(out_dir + "/summary.json");
    if (!in) throw MissingBundle("no summary.json under '" + out_dir + "'");
    Json summary;
    try {
        summary = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw MissingBundle("corrupt summary.json under '" + out_dir + "': " + e.what());
    }
    std::ostringstream os;
    detail::table_section(os, "Fixed effects", summary.value("fixed_effects", Json::array()));
    detail::table_section(os, "Latent field", summary.value("latent", Json::array()));
    detail::table_section(os, "Hyperparameters (natural scale)",
                          summary.value("hyperparameters", Json::array()));
    detail::table_section(os, "Linear combinations", summary.value("lincombs", Json::array()));
    return os.str();
}

}  // namespace nla
