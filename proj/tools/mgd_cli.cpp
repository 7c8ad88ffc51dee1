// Experiment harness CLI. Subcommands map one-to-one onto the runners in
// mgd/experiment.hpp; all output is CSV in the --out directory.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mgd/mgd.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::int64_t seed = -1;  // -1: take from config (default 0)
    int workers = 1;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, CommonArgs& args) {
    sub->add_option("--config", args.config_path, "flat key=value config file");
    sub->add_option("--out", args.out_dir, "output directory for CSV files");
    sub->add_option("--seed", args.seed, "base seed (overrides the config)");
    sub->add_option("--workers", args.workers, "parallel worker count")
        ->check(CLI::PositiveNumber);
    sub->add_option("--set", args.overrides, "extra key=value config overrides");
}

mgd::ExperimentContext make_context(const CommonArgs& args) {
    mgd::ExperimentContext ctx;
    ctx.cfg = args.config_path.empty() ? mgd::FlatConfig{}
                                       : mgd::FlatConfig::parse_file(args.config_path);
    for (const std::string& kv : args.overrides) {
        std::string::size_type eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("--set expects key=value, got '" + kv + "'");
        ctx.cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (args.seed >= 0) ctx.cfg.set("seed", std::to_string(args.seed));
    ctx.seed = static_cast<std::uint64_t>(ctx.cfg.get_long("seed", 0));
    ctx.out_dir = args.out_dir;
    ctx.workers = args.workers;
    return ctx;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multiplexed gradient descent experiment harness"};
    app.require_subcommand(1);

    CommonArgs angle_args, train_args, tau_args, adam_args, moments_args;
    CLI::App* angle = app.add_subcommand("angle", "gradient-alignment first-passage experiment");
    add_common(angle, angle_args);
    CLI::App* train = app.add_subcommand("train", "training-time experiment");
    add_common(train, train_args);
    CLI::App* tau = app.add_subcommand("tau-scan", "weight-update economy vs tau_theta");
    add_common(tau, tau_args);
    CLI::App* adam = app.add_subcommand("adam-scan", "vanilla vs Adam update economy");
    add_common(adam, adam_args);
    CLI::App* moments = app.add_subcommand("moments", "estimator moment verification");
    add_common(moments, moments_args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (angle->parsed()) mgd::run_angle_experiment(make_context(angle_args));
        if (train->parsed()) mgd::run_training_experiment(make_context(train_args));
        if (tau->parsed()) mgd::run_tau_scan(make_context(tau_args));
        if (adam->parsed()) mgd::run_adam_scan(make_context(adam_args));
        if (moments->parsed()) mgd::run_moments(make_context(moments_args));
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
