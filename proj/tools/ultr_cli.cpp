#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ultr/experiment.hpp"

// Pipeline entry point: one subcommand per stage so theorem verification and
// reporting run without any training.

int main(int argc, char** argv) {
    CLI::App app{"Unbiased learning-to-rank laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    long long seed_override = -1;

    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "config file (key = value lines)");
        sub->add_option("--out", out_dir, "output directory")->capture_default_str();
        sub->add_option("--seed", seed_override, "override the config seed");
    };

    auto* simulate = app.add_subcommand("simulate", "generate the click log");
    auto* train_sim =
        app.add_subcommand("train-simulator", "train the user simulator on the log");
    auto* train_ranker =
        app.add_subcommand("train-ranker", "train a ranker under the config objective");
    auto* evaluate = app.add_subcommand("evaluate", "score the trained ranker");
    auto* verify =
        app.add_subcommand("verify-theorems", "run the bias/variance oracle checks");
    auto* report = app.add_subcommand("report", "join per-method metrics into a table");
    for (auto* sub : {simulate, train_sim, train_ranker, evaluate, verify, report})
        add_common(sub);

    CLI11_PARSE(app, argc, argv);

    try {
        ultr::Config cfg = config_path.empty() ? ultr::Config()
                                               : ultr::Config::from_file(config_path);
        if (seed_override >= 0) cfg.set("seed", std::to_string(seed_override));

        if (simulate->parsed()) ultr::cmd_simulate(cfg, out_dir);
        if (train_sim->parsed()) ultr::cmd_train_simulator(cfg, out_dir);
        if (train_ranker->parsed()) ultr::cmd_train_ranker(cfg, out_dir);
        if (evaluate->parsed()) ultr::cmd_evaluate(cfg, out_dir);
        if (verify->parsed()) return ultr::cmd_verify_theorems(cfg, out_dir);
        if (report->parsed()) ultr::cmd_report(cfg, out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
