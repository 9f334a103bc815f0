#include "mdev/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <thread>

#include "mdev/rng.hpp"

namespace mdev {

std::string to_string(Scheme s) {
    switch (s) {
        case Scheme::Euler: return "euler";
        case Scheme::TamedEuler: return "tamed_euler";
        default: return "exact_linear";
    }
}

void SimConfig::validate() const {
    if (checkpoints.empty()) throw std::invalid_argument("SimConfig: no checkpoints");
    double prev = 0.0;
    for (double t : checkpoints) {
        if (!(t > prev)) throw std::invalid_argument("SimConfig: checkpoints must be positive increasing");
        prev = t;
    }
    double spacing = checkpoints.front();
    for (std::size_t k = 1; k < checkpoints.size(); ++k)
        spacing = std::min(spacing, checkpoints[k] - checkpoints[k - 1]);
    if (!(step > 0.0)) throw std::invalid_argument("SimConfig: step must be positive");
    if (step > spacing / 10.0 + 1e-12)
        throw std::invalid_argument("SimConfig: step must not exceed a tenth of the checkpoint spacing");
    if (paths < 1) throw std::invalid_argument("SimConfig: need at least one path");
}

Vec step_euler(const DiffusionScenario& s, const Vec& x, double h, const Vec& noise, bool tamed) {
    if (!(h > 0.0)) throw std::invalid_argument("step_euler: h must be positive");
    Vec b = s.drift(x);
    if (tamed) {
        const double scale = 1.0 + h * norm(b);
        for (double& v : b) v /= scale;
    }
    const Vec kick = s.diffusion(x) * noise;
    Vec out = x;
    const double sqrt_h = std::sqrt(h);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i] * h + sqrt_h * kick[i];
    return out;
}

ExactLinearStepper::ExactLinearStepper(const LinearPart& sys, double h)
    : propagator_(mat_exp(sys.a, h)), factor_(psd_factor(covariance_horizon(sys.a, sys.b, h))) {}

Vec ExactLinearStepper::step(const Vec& x, const Vec& noise) const {
    Vec out = propagator_ * x;
    const Vec kick = factor_ * noise;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += kick[i];
    return out;
}

namespace {

struct Segment {
    double t_end = 0.0;
    std::size_t steps = 0;
    double h = 0.0;
};

std::vector<Segment> build_segments(const std::vector<double>& checkpoints, double step) {
    std::vector<Segment> segments;
    double t_prev = 0.0;
    for (double t : checkpoints) {
        Segment seg;
        seg.t_end = t;
        const double span = t - t_prev;
        seg.steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(span / step - 1e-9)));
        seg.h = span / static_cast<double>(seg.steps);
        segments.push_back(seg);
        t_prev = t;
    }
    return segments;
}

// Heuristic relaxation rate from the drift's dissipation at unit radius,
// used for the automatic burn-in of nonlinear stationary starts.
double relaxation_rate(const DiffusionScenario& s) {
    NormalStream rng(23, 0);
    double rate = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 8; ++k) {
        Vec z(s.dimension);
        rng.fill(z.data(), s.dimension);
        const double len = norm(z);
        if (len == 0.0) continue;
        for (double& v : z) v /= len;
        rate = std::min(rate, -dot(z, s.drift(z)));
    }
    return std::clamp(rate, 0.05, 20.0);
}

}  // namespace

double pilot_refined_step(const DiffusionScenario& s, double t_end, double h0,
                          std::size_t pilot_paths, double tol, std::uint64_t seed,
                          int max_halvings) {
    if (!(h0 > 0.0) || !(t_end > 0.0))
        throw std::invalid_argument("pilot_refined_step: bad horizon or step");
    const std::size_t m = s.noise_dimension;
    const bool tamed = s.superlinear_drift;

    double h = h0;
    for (int level = 0; level <= max_halvings; ++level) {
        const auto n_coarse = static_cast<std::size_t>(std::ceil(t_end / h - 1e-9));
        const double hc = t_end / static_cast<double>(n_coarse);
        const double hf = 0.5 * hc;
        double sum_diff = 0.0, sum_scale = 0.0;
        for (std::size_t path = 0; path < pilot_paths; ++path) {
            NormalStream rng(seed, path);
            Vec xc = s.initial_point, xf = s.initial_point;
            Vec int_c(s.observable_dim, 0.0), int_f(s.observable_dim, 0.0);
            Vec z1(m), z2(m), zsum(m);
            for (std::size_t i = 0; i < n_coarse; ++i) {
                rng.fill(z1.data(), m);
                rng.fill(z2.data(), m);
                // fine: two half steps with the raw increments
                for (const Vec* z : {&z1, &z2}) {
                    const Vec hx = s.observable(xf);
                    for (std::size_t c = 0; c < hx.size(); ++c) int_f[c] += hf * hx[c];
                    xf = step_euler(s, xf, hf, *z, tamed);
                }
                // coarse: one step with the summed increment, variance matched
                for (std::size_t j = 0; j < m; ++j)
                    zsum[j] = (z1[j] + z2[j]) / std::numbers::sqrt2;
                const Vec hx = s.observable(xc);
                for (std::size_t c = 0; c < hx.size(); ++c) int_c[c] += hc * hx[c];
                xc = step_euler(s, xc, hc, zsum, tamed);
            }
            sum_diff += norm(int_c - int_f);
            sum_scale += norm(int_f);
        }
        const double change = sum_diff / (sum_scale + 1e-12);
        if (change < tol || level == max_halvings) return hc;
        h = hc / 2.0;
    }
    return h;
}

PathEnsemble simulate_batch(const DiffusionScenario& s, const Corrector& u, const SimConfig& cfg,
                            const std::optional<LyapunovSpec>& lyapunov) {
    s.validate();
    cfg.validate();
    if (u.state_dim != s.dimension || u.observable_dim != s.observable_dim)
        throw std::invalid_argument("simulate_batch: corrector does not match the scenario");

    Scheme scheme = cfg.scheme;
    if (scheme == Scheme::ExactLinear && !s.linear_part)
        throw std::invalid_argument("simulate_batch: exact_linear scheme needs a linear scenario");
    if (scheme == Scheme::Euler && s.superlinear_drift) scheme = Scheme::TamedEuler;

    const std::size_t d = s.dimension;
    const std::size_t q = s.observable_dim;
    const std::size_t n_paths = cfg.paths;
    const std::vector<Segment> segments = build_segments(cfg.checkpoints, cfg.step);
    const std::size_t n_ck = segments.size();

    // Exact joint sampling of (X, int H ds) for linear observables: the
    // augmented system d(X,Y) = (AX, CX) dt + (B,0) dW is itself linear, so
    // the integral needs no Riemann sum at all.
    const bool augmented = scheme == Scheme::ExactLinear && s.linear_observable.has_value();

    std::vector<ExactLinearStepper> steppers;
    std::size_t state_dim = d;
    std::size_t noise_dim = s.noise_dimension;
    if (scheme == Scheme::ExactLinear) {
        LinearPart sys = *s.linear_part;
        if (augmented) {
            const Matrix& c = *s.linear_observable;
            Matrix a_aug(d + q, d + q);
            Matrix b_aug(d + q, s.linear_part->b.cols());
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) a_aug(i, j) = s.linear_part->a(i, j);
            for (std::size_t i = 0; i < q; ++i)
                for (std::size_t j = 0; j < d; ++j) a_aug(d + i, j) = c(i, j);
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < s.linear_part->b.cols(); ++j)
                    b_aug(i, j) = s.linear_part->b(i, j);
            sys = LinearPart{a_aug, b_aug};
            state_dim = d + q;
        }
        noise_dim = state_dim;
        steppers.reserve(n_ck);
        for (const Segment& seg : segments) steppers.emplace_back(sys, seg.h);
    }

    // Constant diffusion detection saves two allocations per step.
    Matrix const_sigma;
    bool sigma_is_const = false;
    {
        NormalStream rng(29, 0);
        Vec z(d);
        rng.fill(z.data(), d);
        const Matrix s0 = s.diffusion(Vec(d, 0.0));
        const Matrix s1 = s.diffusion(z);
        rng.fill(z.data(), d);
        const Matrix s2 = s.diffusion(z);
        if ((s0 - s1).max_abs() == 0.0 && (s0 - s2).max_abs() == 0.0) {
            sigma_is_const = true;
            const_sigma = s0;
        }
    }

    Matrix stationary_factor;
    if (cfg.stationary_start && s.linear_part)
        stationary_factor = psd_factor(
            solve_lyapunov(s.linear_part->a, s.linear_part->b * s.linear_part->b.transposed()));
    double burn_time = 0.0;
    if (cfg.stationary_start && !s.linear_part)
        burn_time = cfg.burn_in >= 0.0 ? cfg.burn_in : 10.0 / relaxation_rate(s);

    PathEnsemble ens;
    ens.scenario_label = s.label;
    ens.config = cfg;
    ens.effective_scheme = scheme;
    ens.kappa = s.kappa;
    ens.paths = n_paths;
    ens.q = q;
    ens.checkpoints = cfg.checkpoints;
    ens.s_kappa.assign(n_paths * n_ck * q, 0.0);
    ens.corrector_term.assign(n_paths * n_ck * q, 0.0);
    ens.martingale.assign(n_paths * n_ck * q, 0.0);
    ens.bracket.assign(n_paths * n_ck * q * q, 0.0);
    ens.has_lyapunov = lyapunov.has_value();
    if (ens.has_lyapunov) {
        ens.lyap_value.assign(n_paths * n_ck, 0.0);
        ens.lyap_integral.assign(n_paths * n_ck, 0.0);
    }

    std::atomic<std::size_t> aborted{0};
    std::atomic<bool> identity_violated{false};

    auto run_path = [&](std::size_t path) {
        NormalStream rng(cfg.seed, path);
        Vec noise(noise_dim);

        Vec state(state_dim, 0.0);
        for (std::size_t i = 0; i < d; ++i) state[i] = s.initial_point[i];
        if (cfg.stationary_start) {
            if (s.linear_part) {
                Vec z(d);
                rng.fill(z.data(), d);
                const Vec x0 = stationary_factor * z;
                for (std::size_t i = 0; i < d; ++i) state[i] = x0[i];
            } else {
                const auto burn_steps =
                    static_cast<std::size_t>(std::ceil(burn_time / cfg.step));
                Vec x(state.begin(), state.begin() + d);
                for (std::size_t i = 0; i < burn_steps; ++i) {
                    rng.fill(noise.data(), s.noise_dimension);
                    Vec nz(noise.begin(), noise.begin() + s.noise_dimension);
                    x = step_euler(s, x, cfg.step, nz, scheme == Scheme::TamedEuler);
                }
                for (std::size_t i = 0; i < d; ++i) state[i] = x[i];
            }
        }

        Vec x0(state.begin(), state.begin() + d);
        const Vec u0 = u.value(x0);

        Vec int_h(q, 0.0);
        Vec bracket_acc(q * q, 0.0);
        double int_vl = 0.0;
        bool alive = true;

        Vec x(d);
        for (std::size_t k = 0; k < n_ck && alive; ++k) {
            const Segment& seg = segments[k];
            for (std::size_t istep = 0; istep < seg.steps; ++istep) {
                std::copy(state.begin(), state.begin() + d, x.begin());
                // Left-point accumulators.
                if (!augmented) {
                    const Vec hx = s.observable(x);
                    for (std::size_t c = 0; c < q; ++c) int_h[c] += seg.h * hx[c];
                }
                {
                    const Matrix g = u.gradient(x);
                    const Matrix a =
                        sigma_is_const ? const_sigma * const_sigma.transposed() : s.diffusion_squared(x);
                    for (std::size_t c = 0; c < q; ++c)
                        for (std::size_t e = 0; e < q; ++e) {
                            double acc = 0.0;
                            for (std::size_t i = 0; i < d; ++i)
                                for (std::size_t j = 0; j < d; ++j)
                                    acc += g(c, i) * a(i, j) * g(e, j);
                            bracket_acc[c * q + e] += seg.h * acc;
                        }
                }
                if (lyapunov) int_vl += seg.h * std::pow(lyapunov->v(x), lyapunov->ell);

                if (scheme == Scheme::ExactLinear) {
                    rng.fill(noise.data(), noise_dim);
                    state = steppers[k].step(state, noise);
                } else {
                    rng.fill(noise.data(), s.noise_dimension);
                    Vec nz(noise.begin(), noise.begin() + s.noise_dimension);
                    Vec xn(state.begin(), state.begin() + d);
                    xn = step_euler(s, xn, seg.h, nz, scheme == Scheme::TamedEuler);
                    std::copy(xn.begin(), xn.end(), state.begin());
                }
                for (double v : state)
                    if (!std::isfinite(v)) {
                        alive = false;
                        break;
                    }
                if (!alive) break;
            }
            if (!alive) {
                ++aborted;
                const double nan = std::numeric_limits<double>::quiet_NaN();
                for (std::size_t kk = k; kk < n_ck; ++kk) {
                    for (std::size_t c = 0; c < q; ++c) {
                        const std::size_t row = (path * n_ck + kk) * q + c;
                        ens.s_kappa[row] = nan;
                        ens.corrector_term[row] = nan;
                        ens.martingale[row] = nan;
                    }
                    if (ens.has_lyapunov) {
                        ens.lyap_value[path * n_ck + kk] = nan;
                        ens.lyap_integral[path * n_ck + kk] = nan;
                    }
                }
                break;
            }

            const double t = seg.t_end;
            const double t_pow = std::pow(t, s.kappa);
            std::copy(state.begin(), state.begin() + d, x.begin());
            const Vec ut = u.value(x);
            for (std::size_t c = 0; c < q; ++c) {
                const double integral = augmented ? state[d + c] : int_h[c];
                const double s_val = integral / t_pow;
                const double corr = (u0[c] - ut[c]) / t_pow;
                const double mart = ut[c] - u0[c] + integral;
                const std::size_t row = (path * n_ck + k) * q + c;
                ens.s_kappa[row] = s_val;
                ens.corrector_term[row] = corr;
                ens.martingale[row] = mart;
                // The decomposition is exact algebra; a violation means a bug.
                if (std::abs(s_val - corr - mart / t_pow) > 1e-9 * (1.0 + std::abs(s_val)))
                    identity_violated = true;
            }
            for (std::size_t ce = 0; ce < q * q; ++ce)
                ens.bracket[(path * n_ck + k) * q * q + ce] = bracket_acc[ce];
            if (ens.has_lyapunov) {
                ens.lyap_value[path * n_ck + k] = lyapunov->v(x);
                ens.lyap_integral[path * n_ck + k] = int_vl;
            }
        }
    };

    const unsigned workers = std::max(1u, cfg.workers);
    if (workers == 1) {
        for (std::size_t p = 0; p < n_paths; ++p) run_path(p);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(workers);
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&, w]() {
                try {
                    const std::size_t lo = n_paths * w / workers;
                    const std::size_t hi = n_paths * (w + 1) / workers;
                    for (std::size_t p = lo; p < hi; ++p) run_path(p);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (const auto& err : errors)
            if (err) std::rethrow_exception(err);
    }

    ens.aborted_paths = aborted.load();
    if (identity_violated.load())
        throw NumericError("simulate_batch: corrector decomposition identity violated beyond 1e-9");
    if (static_cast<double>(ens.aborted_paths) > 0.001 * static_cast<double>(n_paths))
        throw SimulationAbort("simulate_batch: " + std::to_string(ens.aborted_paths) + " of " +
                              std::to_string(n_paths) +
                              " paths aborted on non-finite states (over the 0.1% threshold)");
    return ens;
}

}  // namespace mdev
