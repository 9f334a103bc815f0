#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "mdev/cli.hpp"

using namespace mdev;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

RunConfig small_example(const std::string& scenario, const fs::path& out) {
    RunConfig cfg;
    cfg.command = Command::Example;
    cfg.scenario = scenario;
    cfg.checkpoints = {5.0, 10.0};
    cfg.paths = 400;
    cfg.step = 0.05;
    cfg.seed = 7;
    cfg.deltas = {1.0};
    cfg.epsilons = {0.2};
    cfg.out_dir = out.string();
    return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("run config: canonical text round-trips and hashes stably") {
    RunConfig cfg;
    cfg.command = Command::Example;
    cfg.scenario = "cubic";
    cfg.seed = 99;
    cfg.deltas = {0.5, 1.0};
    const std::string text = cfg.canonical_text();
    const RunConfig back = run_config_from_key_values(parse_key_values(text));
    CHECK(back.canonical_text() == text);
    CHECK(back.config_hash() == cfg.config_hash());

    // workers and output locations are presentation-only
    RunConfig other = cfg;
    other.workers = 16;
    other.out_dir = "elsewhere";
    CHECK(other.config_hash() == cfg.config_hash());

    CHECK_THROWS_AS(run_config_from_key_values(parse_key_values("commandz = x\n")),
                    std::invalid_argument);
}

TEST_CASE("rate command prints the pseudoinverse rate") {
    RunConfig cfg;
    cfg.command = Command::Rate;
    cfg.q_spec = "diag:2,0";
    cfg.y_spec = "1,0";
    cfg.gamma = 1e-6;
    cfg.contract_t_spec = "1,0;0,1";
    std::ostringstream log;
    CHECK(run(cfg, log) == 0);
    CHECK(log.str().find("J(Y) = 0.25") != std::string::npos);
    CHECK(log.str().find("J_gamma(Y) = 0.2499") != std::string::npos);
    CHECK(log.str().find("j(T Y) = 0.25") != std::string::npos);

    cfg.y_spec = "0,1";
    std::ostringstream log2;
    CHECK(run(cfg, log2) == 0);
    CHECK(log2.str().find("J(Y) = inf") != std::string::npos);
}

TEST_CASE("example pipeline on ou-quadratic produces a coherent report") {
    const fs::path out = fresh_dir("mdev_cli_example");
    const RunConfig cfg = small_example("ou-quadratic", out);
    std::ostringstream log;
    REQUIRE(run(cfg, log) == 0);

    const auto summary = nlohmann::json::parse(read_text((out / "summary.json").string()));
    CHECK(summary["scenario"] == "ou-quadratic");
    CHECK(summary["required_assumptions_pass"] == true);
    CHECK(summary["corrector"]["method"] == "quadratic");
    const double q_stat = summary["Q"]["stationary"]["value"][0][0].get<double>();
    CHECK(q_stat == doctest::Approx(0.5).epsilon(1e-6));
    const double q_closed = summary["Q"]["closed_form"]["value"][0][0].get<double>();
    CHECK(q_closed == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(fs::exists(out / "s_curve_delta_0.csv"));
    CHECK(fs::exists(out / "cond_i_eps_0.csv"));
    CHECK(fs::exists(out / "cond_ii_eps_0.csv"));
    CHECK(fs::exists(out / "run_config.txt"));

    // run_config.txt re-parses to the same hash (round-trip invariant)
    const auto kv = parse_key_values(read_text((out / "run_config.txt").string()));
    CHECK(run_config_from_key_values(kv).config_hash() == cfg.config_hash());
    fs::remove_all(out);
}

TEST_CASE("example reruns are byte-identical across seeds and worker counts") {
    const fs::path out1 = fresh_dir("mdev_cli_det1");
    const fs::path out2 = fresh_dir("mdev_cli_det2");
    RunConfig cfg1 = small_example("cubic", out1);
    RunConfig cfg2 = small_example("cubic", out2);
    cfg2.workers = 4;

    std::ostringstream log;
    REQUIRE(run(cfg1, log) == 0);
    REQUIRE(run(cfg2, log) == 0);
    for (const char* name : {"s_curve_delta_0.csv", "cond_i_eps_0.csv", "cond_ii_eps_0.csv",
                             "summary.json"})
        CHECK(read_text((out1 / name).string()) == read_text((out2 / name).string()));
    fs::remove_all(out1);
    fs::remove_all(out2);
}

TEST_CASE("langevin example reports nonsingular controllability") {
    const fs::path out = fresh_dir("mdev_cli_langevin");
    RunConfig cfg = small_example("langevin", out);
    cfg.paths = 200;
    std::ostringstream log;
    REQUIRE(run(cfg, log) == 0);
    CHECK(log.str().find("controllability: nonsingular") != std::string::npos);
    const auto summary = nlohmann::json::parse(read_text((out / "summary.json").string()));
    CHECK(summary["controllability"] == "nonsingular");
    CHECK(summary.contains("gaussian_oracle"));
    fs::remove_all(out);
}

TEST_CASE("exit codes: config error, scenario failure, simulation abort") {
    std::ostringstream log;

    RunConfig bad;
    bad.command = Command::Example;
    bad.scenario = "";  // missing
    CHECK(run(bad, log) == 2);

    RunConfig unknown = small_example("no-such-scenario", fresh_dir("mdev_cli_unknown"));
    CHECK(run(unknown, log) == 2);

    // unstable linear drift: the Hurwitz assumption fails hard
    const fs::path dir = fresh_dir("mdev_cli_fail3");
    const std::string scenario_file = (dir / "unstable.scenario").string();
    write_text_atomic(scenario_file,
                      "label = unstable\ndim = 1\ndrift = linear\nA = 0.5\n"
                      "diffusion = identity\nobservable = identity\n");
    RunConfig fail3 = small_example(scenario_file, dir / "out");
    CHECK(run(fail3, log) == 3);

    // forced plain Euler on a violently unstable drift: every path overflows
    const std::string explosive = (dir / "explosive.scenario").string();
    write_text_atomic(explosive,
                      "label = explosive\ndim = 1\ndrift = linear\nA = 100\n"
                      "diffusion = identity\nobservable = identity\nx0 = 1\n");
    RunConfig fail4;
    fail4.command = Command::Simulate;
    fail4.scenario = explosive;
    fail4.checkpoints = {50.0, 100.0};
    fail4.step = 0.5;
    fail4.paths = 8;
    fail4.scheme = "euler";
    fail4.out_dir = (dir / "out4").string();
    CHECK(run(fail4, log) == 4);
    fs::remove_all(dir);
}

TEST_CASE("verify command writes the side-by-side csv") {
    const fs::path out = fresh_dir("mdev_cli_verify");
    RunConfig cfg = small_example("cubic", out);
    cfg.command = Command::Verify;
    cfg.paths = 300;
    std::ostringstream log;
    REQUIRE(run(cfg, log) == 0);
    const std::string csv = read_text((out / "verify.csv").string());
    CHECK(csv.find("bound_a1_tail,bound_a1_integral,bound_a2") != std::string::npos);
    CHECK(fs::exists(out / "lyapunov_n_0.csv"));
    const auto summary = nlohmann::json::parse(read_text((out / "summary.json").string()));
    CHECK(summary["drift_diagnostics"]["verdict"] == "pass");
    CHECK(summary["drift_diagnostics"]["c"].get<double>() == doctest::Approx(2.0).epsilon(1e-4));
    fs::remove_all(out);
}

TEST_CASE("estimator command emits reference -delta^2/(4 theta)") {
    const fs::path out = fresh_dir("mdev_cli_estimator");
    RunConfig cfg;
    cfg.command = Command::Estimator;
    cfg.theta = 1.0;
    cfg.checkpoints = {20.0, 40.0};
    cfg.paths = 2000;
    cfg.step = 0.05;
    cfg.deltas = {1.0};
    cfg.seed = 3;
    cfg.out_dir = out.string();
    std::ostringstream log;
    REQUIRE(run(cfg, log) == 0);
    const std::string csv = read_text((out / "error_curve_delta_0.csv").string());
    CHECK(csv.find(",-0.25\n") != std::string::npos);
    CHECK(fs::exists(out / "negligibility_eps_0.csv"));
    fs::remove_all(out);
}

TEST_CASE("report merges summaries") {
    const fs::path root = fresh_dir("mdev_cli_report");
    RunConfig cfg = small_example("ou-quadratic", root / "runA");
    cfg.paths = 100;
    std::ostringstream log;
    REQUIRE(run(cfg, log) == 0);

    RunConfig rep;
    rep.command = Command::Report;
    rep.report_dir = root.string();
    rep.out_dir = (root / "merged").string();
    REQUIRE(run(rep, log) == 0);
    const auto merged = nlohmann::json::parse(read_text((root / "merged" / "report.json").string()));
    REQUIRE(merged.is_array());
    CHECK(merged.size() == 1);
    CHECK(merged[0]["scenario"] == "ou-quadratic");
    fs::remove_all(root);
}

TEST_CASE("no command writes outside its output directory") {
    const fs::path sandbox = fresh_dir("mdev_cli_sandbox");
    const fs::path out = sandbox / "only-here";
    RunConfig cfg = small_example("ou-quadratic", out);
    cfg.paths = 100;
    std::ostringstream log;
    REQUIRE(run(cfg, log) == 0);
    std::size_t outside = 0;
    for (const auto& entry : fs::directory_iterator(sandbox))
        if (entry.path() != out) ++outside;
    CHECK(outside == 0);
    fs::remove_all(sandbox);
}

TEST_CASE("default output directory honours the environment") {
    setenv("MDEV_OUT_DIR", "/tmp/mdev-env-dir", 1);
    CHECK(default_output_dir() == "/tmp/mdev-env-dir");
    unsetenv("MDEV_OUT_DIR");
    CHECK(default_output_dir() == "mdev-out");
}

TEST_SUITE_END();
