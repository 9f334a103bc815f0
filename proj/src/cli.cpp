#include "mdev/cli.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mdev/rng.hpp"

namespace mdev {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, v);
    return buf;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string format_short(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

Matrix parse_q_spec(const std::string& spec) {
    if (spec.rfind("diag:", 0) == 0) return Matrix::diagonal(parse_vector(spec.substr(5)));
    if (spec.rfind("dense:", 0) == 0) return parse_matrix(spec.substr(6));
    return parse_matrix(spec);
}

Json matrix_json(const Matrix& m) {
    Json rows = Json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

Json covariance_json(const CovarianceQ& q) {
    Json out;
    out["method"] = to_string(q.method);
    out["value"] = matrix_json(q.q);
    out["estimated_error"] = q.estimated_error;
    return out;
}

Json assumptions_json(const AssumptionReport& report) {
    Json out;
    for (const auto& [name, check] : report.checks) {
        Json entry;
        entry["verdict"] = to_string(check.verdict);
        for (const auto& [ck, cv] : check.constants) entry[ck] = cv;
        entry["detail"] = check.detail;
        out[name] = entry;
    }
    out["grid"] = report.grid_description;
    return out;
}

Scheme resolve_scheme(const std::string& name, const DiffusionScenario& s) {
    if (name == "euler") return Scheme::Euler;
    if (name == "tamed") return Scheme::TamedEuler;
    if (name == "exact") return Scheme::ExactLinear;
    return s.linear_part ? Scheme::ExactLinear : Scheme::Euler;
}

/// Euler-family runs start from the configured step and halve it until the
/// coupled pilot change of S^kappa at the last checkpoint is below 1%.
double effective_step(const RunConfig& cfg, const DiffusionScenario& s, Scheme scheme,
                      std::ostream& log) {
    if (scheme == Scheme::ExactLinear) return cfg.step;
    const double refined = pilot_refined_step(s, cfg.checkpoints.back(), cfg.step);
    if (refined < cfg.step * 0.75)
        log << "pilot batch refined the step from " << cfg.step << " to " << refined << "\n";
    return refined;
}

struct BuiltCorrector {
    Corrector u;
    std::string method;
    std::optional<TabulatedDensity> density;  // when the 1-D route was used
    double known_gradient_deviation = std::numeric_limits<double>::quiet_NaN();
};

/// Route selection: quadratic observables take the Lyapunov route, linear
/// observables the exact -C A^{-1} x form, 1-D scenarios the tabulated
/// density route, remaining linear scenarios the Gaussian semigroup route;
/// a known closed form is kept as a cross-check. The per-step cost matters:
/// simulate_batch evaluates the gradient on every step, so quadrature-backed
/// correctors are a last resort.
BuiltCorrector build_corrector(const DiffusionScenario& s) {
    BuiltCorrector out;
    if (s.observable_gamma && s.linear_part) {
        out.u = solve_poisson_quadratic(*s.linear_part, *s.observable_gamma);
        out.method = "quadratic";
    } else if (s.linear_part && s.linear_observable) {
        out.u = corrector_linear_observable(*s.linear_part, *s.linear_observable);
        out.method = "linear_closed";
    } else if (s.dimension == 1) {
        out.density = invariant_density_1d(s, 16001);
        out.u = solve_poisson_1d(s, *out.density);
        out.method = "tabulated1d";
    } else if (s.linear_part) {
        GaussianCorrectorOptions opt;
        opt.hermite_order = 16;
        out.u = corrector_linear_gaussian(*s.linear_part, s.observable, s.observable_dim, opt);
        out.method = "gaussian_quadrature";
    } else if (s.known_corrector) {
        out.u = corrector_from_closed_form(s);
        out.method = "closed_form";
    } else {
        throw std::invalid_argument("no corrector route applies to scenario '" + s.label + "'");
    }

    if (s.known_corrector && out.method != "closed_form") {
        NormalStream rng(53, 0);
        double worst = 0.0;
        for (int rep = 0; rep < 9; ++rep) {
            Vec x(s.dimension);
            rng.fill(x.data(), s.dimension);
            const Matrix gap = out.u.gradient(x) - s.known_corrector->gradient(x);
            worst = std::max(worst, gap.max_abs());
        }
        out.known_gradient_deviation = worst;
    }
    return out;
}

std::string csv_name(const std::string& stem, std::size_t index) {
    return stem + "_" + std::to_string(index) + ".csv";
}

}  // namespace

std::string to_string(Command c) {
    switch (c) {
        case Command::Example: return "example";
        case Command::Rate: return "rate";
        case Command::Simulate: return "simulate";
        case Command::Verify: return "verify";
        case Command::Estimator: return "estimator";
        default: return "report";
    }
}

std::string default_output_dir() {
    const char* env = std::getenv("MDEV_OUT_DIR");
    return env && *env ? env : "mdev-out";
}

void RunConfig::validate() const {
    const bool needs_scenario = command == Command::Example || command == Command::Simulate ||
                                command == Command::Verify;
    if (needs_scenario && scenario.empty())
        throw std::invalid_argument("config: key 'scenario' is required for this command");
    if (command == Command::Rate && (q_spec.empty() || y_spec.empty()))
        throw std::invalid_argument("config: rate needs keys 'Q' and 'Y'");
    if (kappa != 0.0 && (!(kappa > 0.5) || !(kappa < 1.0)))
        throw std::invalid_argument("config: key 'kappa' must lie inside (1/2, 1)");
    double prev = 0.0;
    for (double t : checkpoints) {
        if (!(t > prev)) throw std::invalid_argument("config: key 'checkpoints' must be positive increasing");
        prev = t;
    }
    if (checkpoints.empty()) throw std::invalid_argument("config: key 'checkpoints' is empty");
    if (!(step > 0.0)) throw std::invalid_argument("config: key 'step' must be positive");
    if (paths < 1) throw std::invalid_argument("config: key 'paths' must be at least 1");
    if (!(theta > 0.0)) throw std::invalid_argument("config: key 'theta' must be positive");
    for (double d : deltas)
        if (d < 0.0) throw std::invalid_argument("config: key 'deltas' must be nonnegative");
    for (double e : epsilons)
        if (!(e > 0.0)) throw std::invalid_argument("config: key 'epsilons' must be positive");
    if (gamma < 0.0) throw std::invalid_argument("config: key 'gamma' must be nonnegative");
    if (scheme != "auto" && scheme != "euler" && scheme != "tamed" && scheme != "exact")
        throw std::invalid_argument("config: key 'scheme' must be auto|euler|tamed|exact");
    if (format != "csv" && format != "json")
        throw std::invalid_argument("config: key 'format' must be csv or json");
}

std::string RunConfig::canonical_text() const {
    std::string out;
    out += "command = " + to_string(command) + "\n";
    if (!scenario.empty()) out += "scenario = " + scenario + "\n";
    out += "kappa = " + format_double(kappa) + "\n";
    out += "deltas = " + format_vector(deltas) + "\n";
    out += "epsilons = " + format_vector(epsilons) + "\n";
    out += "checkpoints = " + format_vector(checkpoints) + "\n";
    out += "paths = " + std::to_string(paths) + "\n";
    out += "step = " + format_double(step) + "\n";
    out += "seed = " + std::to_string(seed) + "\n";
    out += "scheme = " + scheme + "\n";
    out += "stationary = " + std::string(stationary_start ? "1" : "0") + "\n";
    out += "dump_ensemble = " + std::string(dump_ensemble ? "1" : "0") + "\n";
    out += "theta = " + format_double(theta) + "\n";
    out += "negligibility_eps = " + format_double(negligibility_eps) + "\n";
    out += "gamma = " + format_double(gamma) + "\n";
    if (!q_spec.empty()) out += "Q = " + q_spec + "\n";
    if (!y_spec.empty()) out += "Y = " + y_spec + "\n";
    if (!contract_t_spec.empty()) out += "T = " + contract_t_spec + "\n";
    if (!report_dir.empty()) out += "dir = " + report_dir + "\n";
    return out;
}

std::uint64_t RunConfig::config_hash() const { return fnv1a_hash(canonical_text()); }

RunConfig run_config_from_key_values(const KeyValues& kv) {
    static const std::set<std::string> known{
        "command", "scenario", "kappa", "deltas", "epsilons", "checkpoints", "paths",
        "step", "seed", "scheme", "stationary", "dump_ensemble", "theta",
        "negligibility_eps", "gamma", "Q", "Y", "T", "dir"};
    for (const auto& [k, v] : kv)
        if (!known.count(k)) throw std::invalid_argument("config: unknown key '" + k + "'");

    RunConfig cfg;
    const std::string command = find_key(kv, "command", "example");
    if (command == "example") cfg.command = Command::Example;
    else if (command == "rate") cfg.command = Command::Rate;
    else if (command == "simulate") cfg.command = Command::Simulate;
    else if (command == "verify") cfg.command = Command::Verify;
    else if (command == "estimator") cfg.command = Command::Estimator;
    else if (command == "report") cfg.command = Command::Report;
    else throw std::invalid_argument("config: unknown command '" + command + "'");

    cfg.scenario = find_key(kv, "scenario", "");
    cfg.kappa = std::stod(find_key(kv, "kappa", "0"));
    if (has_key(kv, "deltas")) cfg.deltas = parse_vector(find_key(kv, "deltas", ""));
    if (has_key(kv, "epsilons")) cfg.epsilons = parse_vector(find_key(kv, "epsilons", ""));
    if (has_key(kv, "checkpoints")) cfg.checkpoints = parse_vector(find_key(kv, "checkpoints", ""));
    cfg.paths = static_cast<std::size_t>(std::stoull(find_key(kv, "paths", "10000")));
    cfg.step = std::stod(find_key(kv, "step", "0.01"));
    cfg.seed = std::stoull(find_key(kv, "seed", "12345"));
    cfg.scheme = find_key(kv, "scheme", "auto");
    cfg.stationary_start = find_key(kv, "stationary", "0") == "1";
    cfg.dump_ensemble = find_key(kv, "dump_ensemble", "0") == "1";
    cfg.theta = std::stod(find_key(kv, "theta", "1"));
    cfg.negligibility_eps = std::stod(find_key(kv, "negligibility_eps", "0.2"));
    cfg.gamma = std::stod(find_key(kv, "gamma", "0"));
    cfg.q_spec = find_key(kv, "Q", "");
    cfg.y_spec = find_key(kv, "Y", "");
    cfg.contract_t_spec = find_key(kv, "T", "");
    cfg.report_dir = find_key(kv, "dir", "");
    return cfg;
}

namespace {

struct OutputWriter {
    fs::path dir;
    std::string header;
    std::vector<std::string> files;

    void write(const std::string& name, const std::string& content) {
        write_text_atomic((dir / name).string(), content);
        files.push_back(name);
    }
};

void write_summary(OutputWriter& out, Json& summary) {
    summary["files"] = out.files;
    out.write("summary.json", summary.dump(2) + "\n");
}

std::string run_header(const RunConfig& cfg, const std::string& label) {
    return "config_hash=" + hex64(cfg.config_hash()) + "\nseed=" + std::to_string(cfg.seed) +
           "\nscenario=" + label;
}

Json curve_json(const MdpCurve& curve) {
    Json rows = Json::array();
    for (const auto& row : curve.rows) {
        Json r;
        r["t"] = row.t;
        r["k"] = row.exceed_count;
        r["N"] = row.paths;
        r["p_hat"] = row.p_hat;
        r["rho_log_p"] = row.rho_log_p;
        r["se_log"] = row.se_log;
        r["clamped"] = row.clamped;
        rows.push_back(r);
    }
    Json out;
    out["statistic"] = to_string(curve.statistic);
    out["threshold"] = curve.threshold;
    out["reference"] = std::isfinite(curve.reference) ? Json(curve.reference) : Json("-inf");
    out["rows"] = rows;
    return out;
}

void emit_curve(OutputWriter& out, const RunConfig& cfg, Json& summary_curves,
                const std::string& stem, std::size_t index, const MdpCurve& curve) {
    if (cfg.format == "csv") out.write(csv_name(stem, index), curve_csv(curve, out.header));
    summary_curves[stem].push_back(curve_json(curve));
}

int run_example(const RunConfig& cfg, std::ostream& log) {
    DiffusionScenario s = load_scenario(cfg.scenario);
    if (cfg.kappa != 0.0) s.kappa = cfg.kappa;
    s.validate();

    OutputWriter out{fs::path(cfg.out_dir), run_header(cfg, s.label), {}};
    fs::create_directories(out.dir);

    Json summary;
    summary["command"] = "example";
    summary["scenario"] = s.label;
    summary["config_hash"] = hex64(cfg.config_hash());
    summary["seed"] = cfg.seed;
    summary["kappa"] = s.kappa;

    const AssumptionReport report = check_assumptions(s);
    summary["assumptions"] = assumptions_json(report);
    summary["required_assumptions_pass"] = report.required_pass(s);
    if (s.linear_part) {
        const bool hurwitz = report.verdict("A_hurwitz") == Verdict::Pass;
        const bool controllable = report.verdict("A_B") == Verdict::Pass;
        summary["hurwitz"] = hurwitz;
        summary["controllability"] = controllable ? "nonsingular" : "singular";
        log << "controllability: " << (controllable ? "nonsingular" : "singular") << "\n";
    }
    if (!report.required_pass(s)) {
        std::string failed;
        for (const auto& name : s.required_assumptions)
            if (report.verdict(name) != Verdict::Pass) failed += " " + name;
        write_summary(out, summary);
        throw ScenarioFailure("scenario '" + s.label + "' fails required assumptions:" + failed);
    }

    BuiltCorrector built = build_corrector(s);
    Json corrector_info;
    corrector_info["method"] = built.method;
    if (std::isfinite(built.known_gradient_deviation))
        corrector_info["known_gradient_deviation"] = built.known_gradient_deviation;
    summary["corrector"] = corrector_info;
    if (built.u.table) out.write("corrector.csv", corrector_csv(*built.u.table, out.header));

    // Q by every applicable route; the stationary quadrature is primary.
    Json q_json;
    std::optional<CovarianceQ> q_primary;
    if (built.density) {
        const auto q = compute_Q_stationary(s, built.u, *built.density);
        q_json["stationary"] = covariance_json(q);
        q_primary = q;
    } else if (s.linear_part) {
        const Matrix p =
            solve_lyapunov(s.linear_part->a, s.linear_part->b * s.linear_part->b.transposed());
        const auto q = compute_Q_stationary(s, built.u, p, 32);
        q_json["stationary"] = covariance_json(q);
        q_primary = q;
    }
    {
        GreenKuboOptions opt;
        opt.mc_path_time = 6000.0;
        const auto q = compute_Q_green_kubo(s, opt);
        q_json["green_kubo"] = covariance_json(q);
        if (!q_primary) q_primary = q;
    }
    if (s.observable_gamma && s.linear_part) {
        const Matrix bbt = s.linear_part->b * s.linear_part->b.transposed();
        if (symmetric_eigen(bbt).values.front() > 0.0) {
            const auto q = q_closed_form_quadratic(*s.linear_part, *s.observable_gamma);
            q_json["closed_form"] = covariance_json(q);
        }
    }
    summary["Q"] = q_json;
    const RateFunction rf = RateFunction::from_q(q_primary->q);
    summary["q_rank"] = rf.rank;
    log << "Q = " << format_short(q_primary->q(0, 0)) << " (method " << to_string(q_primary->method)
        << ", rank " << rf.rank << ")\n";

    SimConfig sim_cfg;
    sim_cfg.checkpoints = cfg.checkpoints;
    sim_cfg.paths = cfg.paths;
    sim_cfg.seed = cfg.seed;
    sim_cfg.scheme = resolve_scheme(cfg.scheme, s);
    sim_cfg.step = effective_step(cfg, s, sim_cfg.scheme, log);
    sim_cfg.stationary_start = cfg.stationary_start;
    sim_cfg.workers = cfg.workers;
    const PathEnsemble ens = simulate_batch(s, built.u, sim_cfg);
    summary["aborted_paths"] = ens.aborted_paths;
    summary["effective_scheme"] = to_string(ens.effective_scheme);

    Json curves;
    Json references;
    for (std::size_t i = 0; i < cfg.deltas.size(); ++i) {
        const auto curve =
            empirical_rate_curve(ens, CurveStatistic::SNormExceedsDelta, cfg.deltas[i], rf.q);
        emit_curve(out, cfg, curves, "s_curve_delta", i, curve);
        references[format_short(cfg.deltas[i])] = curve.reference;
    }
    for (std::size_t i = 0; i < cfg.epsilons.size(); ++i) {
        emit_curve(out, cfg, curves, "cond_i_eps", i,
                   empirical_rate_curve(ens, CurveStatistic::CorrectorCondition, cfg.epsilons[i]));
        emit_curve(out, cfg, curves, "cond_ii_eps", i,
                   empirical_rate_curve(ens, CurveStatistic::BracketCondition, cfg.epsilons[i], rf.q));
    }
    summary["references"] = references;

    // Exact Gaussian oracle alongside, when it applies.
    if (s.linear_part && s.linear_observable && s.observable_dim == 1) {
        Json oracle;
        for (std::size_t i = 0; i < cfg.deltas.size(); ++i) {
            Json column = Json::array();
            for (double t : cfg.checkpoints)
                column.push_back(gaussian_exact_rate(*s.linear_part, *s.linear_observable, s.kappa,
                                                     cfg.deltas[i], t, cfg.stationary_start));
            oracle[format_short(cfg.deltas[i])] = column;
        }
        summary["gaussian_oracle"] = oracle;
    }

    if (s.contraction) {
        Json contraction;
        for (double delta : cfg.deltas) {
            if (s.contraction->rows() != 1) break;
            contraction[format_short(delta)] = contract_rate(rf, *s.contraction, {delta});
        }
        summary["contraction_rate"] = contraction;
    }

    if (cfg.dump_ensemble) {
        out.write("ensemble.csv", ensemble_csv(ens, out.header));
        write_ensemble_binary((out.dir / "ensemble.bin").string(), ens, cfg.config_hash());
        out.files.push_back("ensemble.bin");
    }
    if (cfg.format == "json") summary["curves"] = curves;
    out.write("run_config.txt", cfg.canonical_text());
    write_summary(out, summary);
    log << "wrote " << out.files.size() << " files to " << cfg.out_dir << "\n";
    return 0;
}

int run_rate(const RunConfig& cfg, std::ostream& log) {
    const Matrix q = parse_q_spec(cfg.q_spec);
    const Vec y = parse_vector(cfg.y_spec);
    const RateFunction rf = RateFunction::from_q(q);
    const double j = rate_J(rf, y);
    log << "J(Y) = " << format_short(j) << "\n";
    if (cfg.gamma > 0.0)
        log << "J_gamma(Y) = " << format_short(rate_J_regularized(rf, y, cfg.gamma)) << "\n";
    if (!cfg.contract_t_spec.empty()) {
        const Matrix t_map = parse_matrix(cfg.contract_t_spec);
        const Vec ty = t_map * y;
        log << "j(T Y) = " << format_short(contract_rate(rf, t_map, ty)) << "\n";
    }
    return 0;
}

int run_simulate(const RunConfig& cfg, std::ostream& log) {
    DiffusionScenario s = load_scenario(cfg.scenario);
    if (cfg.kappa != 0.0) s.kappa = cfg.kappa;
    const BuiltCorrector built = build_corrector(s);

    SimConfig sim_cfg;
    sim_cfg.checkpoints = cfg.checkpoints;
    sim_cfg.paths = cfg.paths;
    sim_cfg.seed = cfg.seed;
    sim_cfg.scheme = resolve_scheme(cfg.scheme, s);
    sim_cfg.step = effective_step(cfg, s, sim_cfg.scheme, log);
    sim_cfg.stationary_start = cfg.stationary_start;
    sim_cfg.workers = cfg.workers;
    const PathEnsemble ens = simulate_batch(s, built.u, sim_cfg);

    OutputWriter out{fs::path(cfg.out_dir), run_header(cfg, s.label), {}};
    fs::create_directories(out.dir);
    out.write("ensemble.csv", ensemble_csv(ens, out.header));
    write_ensemble_binary((out.dir / "ensemble.bin").string(), ens, cfg.config_hash());
    out.files.push_back("ensemble.bin");

    Json summary;
    summary["command"] = "simulate";
    summary["scenario"] = s.label;
    summary["config_hash"] = hex64(cfg.config_hash());
    summary["seed"] = cfg.seed;
    summary["paths"] = ens.paths;
    summary["aborted_paths"] = ens.aborted_paths;
    summary["effective_scheme"] = to_string(ens.effective_scheme);
    out.write("run_config.txt", cfg.canonical_text());
    write_summary(out, summary);
    log << "wrote ensemble (" << ens.paths << " paths) to " << cfg.out_dir << "\n";
    return 0;
}

int run_verify(const RunConfig& cfg, std::ostream& log) {
    DiffusionScenario s = load_scenario(cfg.scenario);
    if (cfg.kappa != 0.0) s.kappa = cfg.kappa;

    OutputWriter out{fs::path(cfg.out_dir), run_header(cfg, s.label), {}};
    fs::create_directories(out.dir);

    Json summary;
    summary["command"] = "verify";
    summary["scenario"] = s.label;
    summary["config_hash"] = hex64(cfg.config_hash());
    summary["seed"] = cfg.seed;

    const AssumptionReport report = check_assumptions(s);
    summary["assumptions"] = assumptions_json(report);
    if (!report.required_pass(s)) {
        write_summary(out, summary);
        throw ScenarioFailure("scenario '" + s.label + "' fails required assumptions");
    }

    const BuiltCorrector built = build_corrector(s);
    std::optional<CovarianceQ> q;
    if (built.density) {
        q = compute_Q_stationary(s, built.u, *built.density);
    } else if (s.linear_part) {
        const Matrix p =
            solve_lyapunov(s.linear_part->a, s.linear_part->b * s.linear_part->b.transposed());
        q = compute_Q_stationary(s, built.u, p, 32);
    } else {
        q = compute_Q_green_kubo(s);
    }

    // Lyapunov functional: the I-forced quadratic form for linear systems,
    // |x|^2 otherwise with the exponent read off the fitted drift power.
    std::function<double(const Vec&)> v;
    double ell = 1.0;
    if (s.linear_part) {
        const Matrix gv = solve_lyapunov(s.linear_part->a, Matrix::identity(s.dimension),
                                         LyapunovConvention::Transposed);
        v = [gv](const Vec& x) { return dot(x, gv * x); };
    } else {
        v = [](const Vec& x) { return dot(x, x); };
        if (report.has("A_b")) {
            const double alpha = report.checks.at("A_b").constants.count("alpha")
                                     ? report.checks.at("A_b").constants.at("alpha")
                                     : 1.0;
            ell = std::max(1.0, 0.5 * (alpha + 1.0));
        }
    }

    std::vector<Vec> grid;
    if (s.dimension == 1) {
        for (double x = -5.0; x <= 5.0; x += 0.125) grid.push_back({x});
    } else {
        NormalStream rng(61, 0);
        for (int k = 0; k < 256; ++k) {
            Vec x(s.dimension);
            rng.fill(x.data(), s.dimension);
            for (double& xi : x) xi *= 2.5;
            grid.push_back(x);
        }
    }
    const DriftDiagnostics diag = drift_diagnostics(s, v, ell, 1.0, grid);
    Json diag_json;
    diag_json["verdict"] = to_string(diag.verdict);
    diag_json["c"] = diag.c;
    diag_json["c_frak"] = diag.c_frak;
    diag_json["c_bold"] = diag.c_bold;
    diag_json["ell"] = diag.ell;
    summary["drift_diagnostics"] = diag_json;
    log << "drift envelope: " << to_string(diag.verdict) << " (c=" << format_short(diag.c)
        << ", c_frak=" << format_short(diag.c_frak) << ", c_bold=" << format_short(diag.c_bold)
        << ")\n";

    const double n_level =
        diag.verdict == Verdict::Pass ? 3.0 * (diag.c_frak + diag.c) / diag.c : 4.0;
    summary["lyapunov_n"] = n_level;

    SimConfig sim_cfg;
    sim_cfg.checkpoints = cfg.checkpoints;
    sim_cfg.paths = cfg.paths;
    sim_cfg.seed = cfg.seed;
    sim_cfg.scheme = resolve_scheme(cfg.scheme, s);
    sim_cfg.step = effective_step(cfg, s, sim_cfg.scheme, log);
    sim_cfg.stationary_start = cfg.stationary_start;
    sim_cfg.workers = cfg.workers;
    const PathEnsemble ens = simulate_batch(s, built.u, sim_cfg, LyapunovSpec{v, diag.ell});
    summary["aborted_paths"] = ens.aborted_paths;

    Json curves;
    std::vector<MdpCurve> cond_i, cond_ii;
    for (std::size_t i = 0; i < cfg.epsilons.size(); ++i) {
        cond_i.push_back(
            empirical_rate_curve(ens, CurveStatistic::CorrectorCondition, cfg.epsilons[i]));
        cond_ii.push_back(
            empirical_rate_curve(ens, CurveStatistic::BracketCondition, cfg.epsilons[i], q->q));
        emit_curve(out, cfg, curves, "cond_i_eps", i, cond_i.back());
        emit_curve(out, cfg, curves, "cond_ii_eps", i, cond_ii.back());
    }
    const auto lyap_curve =
        empirical_rate_curve(ens, CurveStatistic::LyapunovIntegralExceeds, n_level);
    emit_curve(out, cfg, curves, "lyapunov_n", 0, lyap_curve);

    // Side-by-side file: empirical conditions next to the deterministic
    // bounds with the fitted constants.
    {
        const double eps = cfg.epsilons.front();
        const double v0 = v(s.initial_point);
        std::string csv;
        {
            std::istringstream lines(out.header);
            std::string line;
            while (std::getline(lines, line)) csv += "# " + line + "\n";
        }
        csv +=
            "t,cond_i_rho_log_p,cond_i_se,cond_ii_rho_log_p,cond_ii_se,lyap_rho_log_p,lyap_se,"
            "bound_a1_tail,bound_a1_integral,bound_a2\n";
        for (std::size_t k = 0; k < cfg.checkpoints.size(); ++k) {
            const double t = cfg.checkpoints[k];
            double a1t = std::numeric_limits<double>::quiet_NaN();
            double a1i = a1t, a2 = a1t;
            if (diag.verdict == Verdict::Pass) {
                const auto b =
                    bound_A1(diag.c, diag.c_frak, diag.c_bold, v0, eps, n_level, s.kappa, t);
                a1t = b.tail;
                a1i = b.integral;
                a2 = bound_A2(eps, n_level, s.kappa, t);
            }
            csv += format_double(t) + "," + format_double(cond_i.front().rows[k].rho_log_p) + "," +
                   format_double(cond_i.front().rows[k].se_log) + "," +
                   format_double(cond_ii.front().rows[k].rho_log_p) + "," +
                   format_double(cond_ii.front().rows[k].se_log) + "," +
                   format_double(lyap_curve.rows[k].rho_log_p) + "," +
                   format_double(lyap_curve.rows[k].se_log) + "," + format_double(a1t) + "," +
                   format_double(a1i) + "," + format_double(a2) + "\n";
        }
        out.write("verify.csv", csv);
    }

    if (cfg.format == "json") summary["curves"] = curves;
    out.write("run_config.txt", cfg.canonical_text());
    write_summary(out, summary);
    log << "wrote " << out.files.size() << " files to " << cfg.out_dir << "\n";
    return 0;
}

int run_estimator_cmd(const RunConfig& cfg, std::ostream& log) {
    EstimatorConfig est;
    est.theta = cfg.theta;
    est.kappa = cfg.kappa != 0.0 ? cfg.kappa : 0.6;
    est.checkpoints = cfg.checkpoints;
    est.step = cfg.step;
    est.paths = cfg.paths;
    est.seed = cfg.seed;
    est.workers = cfg.workers;
    est.stationary_start = cfg.stationary_start;
    const EstimatorExperiment exp =
        estimator_mdp_experiment(est, cfg.deltas, cfg.negligibility_eps);

    OutputWriter out{fs::path(cfg.out_dir), run_header(cfg, "estimator"), {}};
    fs::create_directories(out.dir);

    Json summary;
    summary["command"] = "estimator";
    summary["config_hash"] = hex64(cfg.config_hash());
    summary["seed"] = cfg.seed;
    summary["theta"] = cfg.theta;
    summary["kappa"] = est.kappa;
    summary["degenerate_paths"] = exp.degenerate_paths;
    summary["step_flagged"] = exp.step_flagged;

    Json curves;
    Json oracle;
    for (std::size_t i = 0; i < exp.error_curves.size(); ++i) {
        emit_curve(out, cfg, curves, "error_curve_delta", i, exp.error_curves[i]);
        Json column = Json::array();
        for (double v : exp.oracle_rows[i]) column.push_back(v);
        oracle[format_short(cfg.deltas[i])] = column;
    }
    emit_curve(out, cfg, curves, "negligibility_eps", 0, exp.negligibility_curve);
    summary["gaussian_oracle"] = oracle;
    Json references;
    for (double delta : cfg.deltas)
        references[format_short(delta)] = -delta * delta / (4.0 * cfg.theta);
    summary["references"] = references;

    if (cfg.format == "json") summary["curves"] = curves;
    out.write("run_config.txt", cfg.canonical_text());
    write_summary(out, summary);
    log << "estimator curves for " << cfg.deltas.size() << " deltas written to " << cfg.out_dir
        << "\n";
    return 0;
}

int run_report(const RunConfig& cfg, std::ostream& log) {
    const fs::path root = cfg.report_dir.empty() ? fs::path(cfg.out_dir) : fs::path(cfg.report_dir);
    if (!fs::exists(root)) throw std::invalid_argument("report: directory does not exist: " + root.string());
    Json merged = Json::array();
    std::vector<fs::path> found;
    for (const auto& entry : fs::recursive_directory_iterator(root))
        if (entry.is_regular_file() && entry.path().filename() == "summary.json")
            found.push_back(entry.path());
    std::sort(found.begin(), found.end());
    for (const auto& path : found) {
        Json item = Json::parse(read_text(path.string()));
        item["source"] = path.string();
        merged.push_back(item);
    }
    OutputWriter out{fs::path(cfg.out_dir), run_header(cfg, "report"), {}};
    fs::create_directories(out.dir);
    out.write("report.json", merged.dump(2) + "\n");
    log << "merged " << merged.size() << " summaries into report.json\n";
    return 0;
}

}  // namespace

int run(const RunConfig& cfg, std::ostream& log) {
    try {
        cfg.validate();
        switch (cfg.command) {
            case Command::Example: return run_example(cfg, log);
            case Command::Rate: return run_rate(cfg, log);
            case Command::Simulate: return run_simulate(cfg, log);
            case Command::Verify: return run_verify(cfg, log);
            case Command::Estimator: return run_estimator_cmd(cfg, log);
            case Command::Report: return run_report(cfg, log);
        }
        return 1;
    } catch (const ScenarioFailure& e) {
        log << "scenario failure: " << e.what() << "\n";
        return 3;
    } catch (const SimulationAbort& e) {
        log << "simulation aborted: " << e.what() << "\n";
        return 4;
    } catch (const std::invalid_argument& e) {
        log << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace mdev
