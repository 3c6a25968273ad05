// Batch front end: `nla fit` runs the full pipeline on a model JSON +
// data CSV and writes the result bundle; `nla summarize` renders the
// bundle's summary table.
//
// Exit codes: 0 success, 2 specification / validation problems,
// 3 numerical failure (the failing hyperparameter value is reported).

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "nla/run.hpp"

namespace {

int run_fit(const std::string& model_path, const std::string& data_path,
            const std::string& strategy, const std::string& int_strategy,
            const std::string& hyper_marginal, const std::string& lincomb_mode, int workers,
            const std::string& out_dir) {
    nla::ModelSpec spec;
    nla::RunConfig cfg;
    try {
        spec = nla::load_model_file(model_path, data_path);
        cfg.strategy = nla::strategy_from_flag(strategy);
        cfg.int_strategy = nla::int_strategy_from_flag(int_strategy);
        cfg.hyper_method = nla::hyper_method_from_flag(hyper_marginal);
        cfg.lincomb_mode = nla::lincomb_mode_from_flag(lincomb_mode);
        cfg.workers = workers;
        if (const char* tie = std::getenv("NLA_TIE_EXPONENT")) {
            double e = std::stod(tie);
            spec.config.kappa_A_exponent = e;
            for (auto& c : spec.components)
                if (!c.copy_of.empty()) c.tau_copy_exponent = e;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    nla::Vector last_theta;
    try {
        auto t0 = std::chrono::steady_clock::now();
        nla::RunResult res = nla::run_pipeline(spec, cfg, &last_theta);
        double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        nla::write_run(res, cfg, out_dir, seconds);
    } catch (const nla::SpecError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        if (last_theta.size() > 0) {
            std::cerr << "at theta (internal scale):";
            for (Eigen::Index i = 0; i < last_theta.size(); ++i) std::cerr << " " << last_theta(i);
            std::cerr << "\n";
        }
        return 3;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"approximate Bayesian inference for latent Gaussian models"};
    app.require_subcommand(1);

    std::string model_path, data_path, out_dir;
    std::string strategy = "simplified-laplace";
    std::string int_strategy = "auto";
    std::string hyper_marginal = "integration-free";
    std::string lincomb_mode = "derived-only";
    int workers = 0;

    CLI::App* fit = app.add_subcommand("fit", "fit a model and write the result bundle");
    fit->add_option("--model", model_path, "model specification JSON")->required();
    fit->add_option("--data", data_path, "data table CSV")->required();
    fit->add_option("--strategy", strategy, "gaussian | simplified-laplace | laplace");
    fit->add_option("--int-strategy", int_strategy, "grid | ccd | auto");
    fit->add_option("--hyper-marginal", hyper_marginal,
                    "integration-free | asym-gaussian | refined-grid");
    fit->add_option("--lincomb-mode", lincomb_mode, "derived-only | enlarged");
    fit->add_option("--workers", workers, "worker threads (0 = all cores)");
    fit->add_option("--out", out_dir, "output directory")->required();

    std::string bundle_dir;
    CLI::App* summ = app.add_subcommand("summarize", "print the summary table of a result bundle");
    summ->add_option("dir", bundle_dir, "result bundle directory")->required();

    CLI11_PARSE(app, argc, argv);

    if (fit->parsed())
        return run_fit(model_path, data_path, strategy, int_strategy, hyper_marginal, lincomb_mode,
                       workers, out_dir);

    try {
        std::cout << nla::summarize(bundle_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
