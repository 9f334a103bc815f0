#include <iostream>

#include "CLI11.hpp"
#include "mdev/cli.hpp"

namespace {

void add_run_options(CLI::App* sub, mdev::RunConfig& cfg) {
    sub->add_option("--kappa", cfg.kappa, "MDP exponent in (1/2, 1); 0 keeps the scenario default");
    sub->add_option("--deltas", cfg.deltas, "thresholds for the S-curves")->delimiter(',');
    sub->add_option("--epsilons", cfg.epsilons, "thresholds for conditions (i)/(ii)")->delimiter(',');
    sub->add_option("--checkpoints", cfg.checkpoints, "checkpoint times, increasing")->delimiter(',');
    sub->add_option("--paths,-N", cfg.paths, "Monte Carlo path count");
    sub->add_option("--step", cfg.step, "integration step");
    sub->add_option("--seed", cfg.seed, "master seed");
    sub->add_option("--scheme", cfg.scheme, "auto|euler|tamed|exact");
    sub->add_flag("--stationary", cfg.stationary_start, "stationary start");
    sub->add_option("--workers", cfg.workers, "worker threads");
    sub->add_option("--out,-o", cfg.out_dir, "output directory");
    sub->add_option("--format", cfg.format, "csv or json curves");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"moderate-deviation toolkit for ergodic diffusions"};
    app.require_subcommand(1);

    mdev::RunConfig cfg;
    cfg.out_dir = mdev::default_output_dir();

    auto* example = app.add_subcommand("example", "full pipeline for a scenario");
    example->add_option("scenario", cfg.scenario, "builtin name or scenario file")->required();
    example->add_flag("--dump-ensemble", cfg.dump_ensemble, "also write the raw ensemble");
    add_run_options(example, cfg);

    auto* rate = app.add_subcommand("rate", "evaluate J, J_gamma and contractions");
    rate->add_option("--Q", cfg.q_spec, "matrix, e.g. diag:2,0 or 1,0;0,2")->required();
    rate->add_option("--Y", cfg.y_spec, "vector, e.g. 1,0")->required();
    rate->add_option("--gamma", cfg.gamma, "also evaluate the regularized rate");
    rate->add_option("--T", cfg.contract_t_spec, "contraction map; reports j(T Y)");
    rate->add_option("--out,-o", cfg.out_dir, "output directory");

    auto* simulate = app.add_subcommand("simulate", "raw ensemble dump");
    simulate->add_option("scenario", cfg.scenario, "builtin name or scenario file")->required();
    add_run_options(simulate, cfg);

    auto* verify = app.add_subcommand("verify", "conditions (i)/(ii) next to the deterministic bounds");
    verify->add_option("scenario", cfg.scenario, "builtin name or scenario file")->required();
    add_run_options(verify, cfg);

    auto* estimator = app.add_subcommand("estimator", "drift-estimator MDP experiment");
    estimator->add_option("--theta", cfg.theta, "true drift parameter");
    estimator->add_option("--negligibility-eps", cfg.negligibility_eps,
                          "threshold of the companion bracket curve");
    add_run_options(estimator, cfg);

    auto* report = app.add_subcommand("report", "merge summary.json files");
    report->add_option("dir", cfg.report_dir, "directory to scan")->required();
    report->add_option("--out,-o", cfg.out_dir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    if (example->parsed()) cfg.command = mdev::Command::Example;
    else if (rate->parsed()) cfg.command = mdev::Command::Rate;
    else if (simulate->parsed()) cfg.command = mdev::Command::Simulate;
    else if (verify->parsed()) cfg.command = mdev::Command::Verify;
    else if (estimator->parsed()) cfg.command = mdev::Command::Estimator;
    else cfg.command = mdev::Command::Report;

    return mdev::run(cfg, std::cout);
}
