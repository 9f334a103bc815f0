#pragma once

#include <iosfwd>

#include "mdev/estimator.hpp"
#include "mdev/io.hpp"

namespace mdev {

enum class Command { Example, Rate, Simulate, Verify, Estimator, Report };
std::string to_string(Command c);

/// Thrown when a scenario's required assumptions fail hard; maps to exit 3.
class ScenarioFailure : public std::runtime_error {
public:
    explicit ScenarioFailure(const std::string& what) : std::runtime_error(what) {}
};

/// One CLI invocation. The canonical serialization below is the config-hash
/// input and re-parses to an equivalent RunConfig; workers, output directory
/// and format are presentation-only and excluded from the hash, so a rerun
/// with a different worker count is byte-identical.
struct RunConfig {
    Command command = Command::Example;
    std::string scenario;
    double kappa = 0.0;  // 0 = keep the scenario's own kappa
    Vec deltas{1.0};
    Vec epsilons{0.1, 0.2};
    std::vector<double> checkpoints{25.0, 50.0, 100.0, 200.0};
    std::size_t paths = 10000;
    double step = 0.01;
    std::uint64_t seed = 12345;
    std::string scheme = "auto";  // auto | euler | tamed | exact
    bool stationary_start = false;
    bool dump_ensemble = false;
    double theta = 1.0;              // estimator command
    double negligibility_eps = 0.2;  // estimator companion curve
    std::string q_spec;              // rate command: "diag:2,0" or "2,0;0,1"
    std::string y_spec;
    double gamma = 0.0;              // rate command: J_gamma when positive
    std::string contract_t_spec;     // rate command: optional T for contraction
    std::string report_dir;          // report command

    unsigned workers = 1;
    std::string out_dir = "mdev-out";
    std::string format = "csv";  // csv | json curves

    void validate() const;
    std::string canonical_text() const;
    std::uint64_t config_hash() const;
};

RunConfig run_config_from_key_values(const KeyValues& kv);

/// Default output directory: $MDEV_OUT_DIR when set, else "mdev-out".
std::string default_output_dir();

/// Executes the command, writing artifacts under cfg.out_dir and progress to
/// `log`. Returns the process exit status: 0 success, 2 config error,
/// 3 scenario failure, 4 simulation abort threshold exceeded, 1 other errors.
int run(const RunConfig& cfg, std::ostream& log);

}  // namespace mdev
