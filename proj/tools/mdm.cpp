// Command-line front end: train, evaluate, sweep and inspect.
//
// Exit codes: 0 success, 2 configuration error, 3 numeric failure.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mdm/cli.hpp"
#include "mdm/render.hpp"

namespace {

std::vector<double> parse_grid(const std::string& spec) {
    std::vector<double> grid;
    auto colon1 = spec.find(':');
    if (colon1 != std::string::npos) {
        auto colon2 = spec.find(':', colon1 + 1);
        if (colon2 == std::string::npos) throw mdm::ConfigError("grid range must be start:step:end");
        double start = std::stod(spec.substr(0, colon1));
        double step = std::stod(spec.substr(colon1 + 1, colon2 - colon1 - 1));
        double end = std::stod(spec.substr(colon2 + 1));
        if (!(step > 0)) throw mdm::ConfigError("grid step must be positive");
        for (double v = start; v <= end + 1e-9; v += step) grid.push_back(v);
        return grid;
    }
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) grid.push_back(std::stod(tok));
    }
    if (grid.empty()) throw mdm::ConfigError("empty Eb/N0 grid");
    return grid;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"autoencoder codebook design and BER evaluation for code-domain NOMA"};
    app.require_subcommand(1);

    // train
    std::string train_config, train_out;
    std::optional<std::uint64_t> train_seed;
    std::uint64_t seed_value = 0;
    auto* train = app.add_subcommand("train", "train a model from a config file and export its codebook");
    train->add_option("--config", train_config, "experiment config file")->required()->check(CLI::ExistingFile);
    auto* seed_opt = train->add_option("--seed", seed_value, "seed override");
    train->add_option("--out", train_out, "output directory")->required();

    // evaluate
    std::string eval_system, eval_out, eval_detector = "mld", eval_grid = "0:1:12", eval_svg;
    mdm::McOptions eval_mc;
    auto* evaluate = app.add_subcommand("evaluate", "measure BER and metrics of a codebook file or model dir");
    evaluate->add_option("system", eval_system, "codebook file or model directory")->required();
    evaluate->add_option("--out", eval_out, "output directory")->required();
    evaluate->add_option("--detector", eval_detector, "mld or nn")->check(CLI::IsMember({"mld", "nn"}));
    evaluate->add_option("--ebn0", eval_grid, "Eb/N0 grid: comma list or start:step:end");
    evaluate->add_option("--seed", eval_mc.seed, "Monte Carlo seed");
    evaluate->add_option("--max-bits", eval_mc.max_bits, "per-point bit cap");
    evaluate->add_option("--min-errors", eval_mc.min_errors, "per-point error target");
    evaluate->add_option("--workers", eval_mc.workers, "worker threads");
    evaluate->add_option("--svg", eval_svg, "also render the BER curve to this SVG file");

    // sweep
    std::string sweep_kind, sweep_config, sweep_out, sweep_grid = "0:1:12", sweep_detector = "mld";
    std::string sweep_deltas = "0,0.01,0.05,0.1";
    mdm::McOptions sweep_mc;
    int sweep_workers = 1;
    auto* sweep = app.add_subcommand("sweep", "run a comparison grid of experiments");
    sweep->add_option("kind", sweep_kind, "delta, pnl or mu_vs_su")
        ->required()
        ->check(CLI::IsMember({"delta", "pnl", "mu_vs_su"}));
    sweep->add_option("--config", sweep_config, "base experiment config")->required()->check(CLI::ExistingFile);
    sweep->add_option("--out", sweep_out, "output directory")->required();
    sweep->add_option("--ebn0", sweep_grid, "Eb/N0 grid");
    sweep->add_option("--detector", sweep_detector, "mld or nn")->check(CLI::IsMember({"mld", "nn"}));
    sweep->add_option("--deltas", sweep_deltas, "delta values for the delta sweep");
    sweep->add_option("--workers", sweep_workers, "concurrent sweep cells");
    sweep->add_option("--seed", sweep_mc.seed, "Monte Carlo seed");
    sweep->add_option("--max-bits", sweep_mc.max_bits, "per-point bit cap");
    sweep->add_option("--min-errors", sweep_mc.min_errors, "per-point error target");

    // inspect
    std::string inspect_system, inspect_svg;
    auto* inspect = app.add_subcommand("inspect", "print metrics of a codebook file or model dir");
    inspect->add_option("system", inspect_system, "codebook file or model directory")->required();
    inspect->add_option("--svg", inspect_svg, "render the constellation to this SVG file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*train) {
            if (seed_opt->count() > 0) train_seed = seed_value;
            auto out = mdm::cmd_train(train_config, train_seed, train_out, &std::cerr);
            std::cout << "encoder: " << out.encoder_path << "\n";
            std::cout << "decoder: " << out.decoder_path << "\n";
            if (!out.codebook_path.empty()) std::cout << "codebook: " << out.codebook_path << "\n";
            std::cout << "report: " << out.report_path << "\n";
        } else if (*evaluate) {
            mdm::EvaluateOptions opts;
            opts.detector = eval_detector;
            opts.ebn0_grid = parse_grid(eval_grid);
            opts.mc = eval_mc;
            auto out = mdm::cmd_evaluate(eval_system, opts, eval_out);
            if (!eval_svg.empty()) {
                std::ofstream f(eval_svg);
                mdm::write_ber_svg(f, {{eval_detector, out.curve}});
            }
            std::cout << "ber: " << out.ber_path << "\n";
            std::cout << "metrics: " << out.metrics_path << "\n";
        } else if (*sweep) {
            mdm::SweepOptions opts;
            opts.kind = sweep_kind;
            opts.ebn0_grid = parse_grid(sweep_grid);
            opts.detector = sweep_detector;
            opts.mc = sweep_mc;
            opts.workers = sweep_workers;
            opts.deltas = parse_grid(sweep_deltas);
            auto results = mdm::cmd_sweep(sweep_config, opts, sweep_out, &std::cerr);
            bool any_failed = false;
            for (const auto& r : results) {
                std::cout << r.name << ": " << (r.ok ? "ok" : "failed: " + r.error) << "\n";
                any_failed = any_failed || !r.ok;
            }
            if (any_failed) return 3;
        } else if (*inspect) {
            mdm::cmd_inspect(inspect_system, std::cout);
            if (!inspect_svg.empty()) {
                auto sys = mdm::load_system(inspect_system);
                std::ofstream f(inspect_svg);
                mdm::write_constellation_svg(f, sys.books, sys.sc);
            }
        }
    } catch (const mdm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
