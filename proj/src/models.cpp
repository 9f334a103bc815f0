#include "mdev/models.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mdev/quadrature.hpp"
#include "mdev/rng.hpp"

namespace mdev {

namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

Vec random_point(std::size_t d, double scale, NormalStream& rng) {
    Vec x(d);
    for (auto& v : x) v = scale * rng.next();
    return x;
}

void check_finite(const Vec& v, const char* who) {
    for (double x : v)
        if (!std::isfinite(x)) throw std::runtime_error(std::string(who) + " returned a non-finite value");
}

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
};

LineFit least_squares(const Vec& x, const Vec& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double denom = n * sxx - sx * sx;
    LineFit fit;
    fit.slope = denom != 0.0 ? (n * sxy - sx * sy) / denom : 0.0;
    fit.intercept = (sy - fit.slope * sx) / n;
    return fit;
}

}  // namespace

Matrix DiffusionScenario::diffusion_squared(const Vec& x) const {
    const Matrix s = diffusion(x);
    return s * s.transposed();
}

void DiffusionScenario::validate() const {
    if (!(kappa > 0.5) || !(kappa < 1.0))
        throw std::invalid_argument("DiffusionScenario: kappa must lie strictly inside (1/2, 1)");
    if (dimension == 0 || observable_dim == 0)
        throw std::invalid_argument("DiffusionScenario: dimensions must be positive");
    if (!drift || !diffusion || !observable)
        throw std::invalid_argument("DiffusionScenario: drift, diffusion and observable are required");
    if (initial_point.size() != dimension)
        throw std::invalid_argument("DiffusionScenario: initial point has wrong dimension");

    NormalStream rng(17, 0);
    for (int rep = 0; rep < 5; ++rep) {
        const Vec x = random_point(dimension, 1.5, rng);
        const Vec b = drift(x);
        const Matrix s = diffusion(x);
        const Vec h = observable(x);
        if (b.size() != dimension) throw std::invalid_argument("DiffusionScenario: drift dimension mismatch");
        if (s.rows() != dimension || s.cols() != noise_dimension)
            throw std::invalid_argument("DiffusionScenario: diffusion dimension mismatch");
        if (h.size() != observable_dim)
            throw std::invalid_argument("DiffusionScenario: observable dimension mismatch");
        if (linear_part) {
            const Vec ax = linear_part->a * x;
            double defect = 0.0;
            for (std::size_t i = 0; i < dimension; ++i) defect = std::max(defect, std::abs(b[i] - ax[i]));
            if (defect > 1e-12 * (1.0 + norm(ax)))
                throw std::invalid_argument("DiffusionScenario: drift disagrees with the linear part");
            if ((s - linear_part->b).max_abs() > 1e-12)
                throw std::invalid_argument("DiffusionScenario: diffusion disagrees with the linear part");
        }
        if (linear_observable) {
            const Vec cx = *linear_observable * x;
            for (std::size_t i = 0; i < observable_dim; ++i)
                if (std::abs(h[i] - cx[i]) > 1e-12 * (1.0 + std::abs(cx[i])))
                    throw std::invalid_argument("DiffusionScenario: observable disagrees with C x");
        }
        if (observable_gamma) {
            const double quad = dot(x, *observable_gamma * x) - observable_offset;
            if (std::abs(h[0] - quad) > 1e-10 * (1.0 + std::abs(quad)))
                throw std::invalid_argument("DiffusionScenario: observable disagrees with its quadratic form");
        }
    }
}

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::Pass: return "pass";
        case Verdict::Fail: return "fail";
        default: return "inconclusive";
    }
}

Verdict AssumptionReport::verdict(const std::string& name) const {
    const auto it = checks.find(name);
    return it == checks.end() ? Verdict::Inconclusive : it->second.verdict;
}

bool AssumptionReport::required_pass(const DiffusionScenario& s) const {
    return std::all_of(s.required_assumptions.begin(), s.required_assumptions.end(),
                       [this](const std::string& name) { return verdict(name) == Verdict::Pass; });
}

AssumptionReport check_assumptions(const DiffusionScenario& s, const SamplingGrid& grid) {
    s.validate();
    if (grid.radial_points == 0 || grid.directions == 0 || grid.pair_samples == 0)
        throw std::invalid_argument("check_assumptions: empty sampling grid");
    if (!(grid.inner_radius > 0.0) || !(grid.outer_radius > grid.inner_radius))
        throw std::invalid_argument("check_assumptions: bad annulus radii");

    NormalStream rng(grid.seed, 0);
    const std::size_t d = s.dimension;

    // Annulus sample points: log-spaced radii, fixed signs in 1-D, random
    // unit directions otherwise.
    std::vector<Vec> points;
    const double log_lo = std::log(grid.inner_radius);
    const double log_hi = std::log(grid.outer_radius);
    for (std::size_t j = 0; j < grid.radial_points; ++j) {
        const double frac = grid.radial_points == 1
                                ? 0.0
                                : static_cast<double>(j) / static_cast<double>(grid.radial_points - 1);
        const double radius = std::exp(log_lo + frac * (log_hi - log_lo));
        if (d == 1) {
            points.push_back({radius});
            points.push_back({-radius});
        } else {
            for (std::size_t k = 0; k < grid.directions; ++k) {
                Vec dir = random_point(d, 1.0, rng);
                const double len = norm(dir);
                if (len == 0.0) continue;
                for (auto& v : dir) v *= radius / len;
                points.push_back(std::move(dir));
            }
        }
    }

    AssumptionReport report;
    {
        std::ostringstream os;
        os << "annulus |z| in [" << grid.inner_radius << ", " << grid.outer_radius << "], "
           << grid.radial_points << " radii x " << (d == 1 ? 2 : grid.directions)
           << " directions, " << grid.pair_samples << " pairs, seed " << grid.seed;
        report.grid_description = os.str();
    }

    // (A_b): <z, b(z)> <= -r |z|^{1+alpha} outside the inner radius.
    {
        AssumptionCheck check;
        Vec log_r, log_neg_s;
        std::size_t violations = 0;
        for (const Vec& z : points) {
            const Vec b = s.drift(z);
            check_finite(b, "drift");
            const double sz = dot(z, b);
            if (sz >= 0.0) {
                ++violations;
            } else {
                log_r.push_back(std::log(norm(z)));
                log_neg_s.push_back(std::log(-sz));
            }
        }
        if (violations == 0 && !log_r.empty()) {
            const LineFit fit = least_squares(log_r, log_neg_s);
            const double alpha = fit.slope - 1.0;
            double envelope = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < log_r.size(); ++i)
                envelope = std::min(envelope, std::exp(log_neg_s[i] - (1.0 + alpha) * log_r[i]));
            check.constants["alpha"] = alpha;
            check.constants["r"] = envelope;
            check.constants["C"] = grid.inner_radius;
            if (envelope > 1e-6) {
                check.verdict = Verdict::Pass;
                check.detail = "dissipative on all samples";
            } else {
                check.verdict = Verdict::Inconclusive;
                check.detail = "dissipative on samples but the fitted constant degenerates";
            }
        } else if (violations <= points.size() / 5) {
            check.verdict = Verdict::Inconclusive;
            check.detail = std::to_string(violations) + "/" + std::to_string(points.size()) +
                           " samples violate <z,b(z)> < 0";
        } else {
            check.verdict = Verdict::Fail;
            check.detail = std::to_string(violations) + "/" + std::to_string(points.size()) +
                           " samples violate <z,b(z)> < 0";
        }
        report.checks["A_b"] = std::move(check);
    }

    // (A_sigma_a): lambda I <= a(z) <= Lambda I via extreme eigenvalues.
    {
        AssumptionCheck check;
        double lambda = std::numeric_limits<double>::infinity();
        double big_lambda = 0.0;
        std::vector<Vec> interior = points;
        interior.push_back(Vec(d, 0.0));
        for (int k = 1; k <= 4; ++k)
            interior.push_back(random_point(d, grid.inner_radius * 0.5, rng));
        for (const Vec& z : interior) {
            const Matrix a = s.diffusion_squared(z);
            if (!a.all_finite()) throw std::runtime_error("diffusion returned a non-finite value");
            const SymmetricEigen eig = symmetric_eigen(a);
            lambda = std::min(lambda, eig.values.front());
            big_lambda = std::max(big_lambda, eig.values.back());
        }
        check.constants["lambda"] = lambda;
        check.constants["Lambda"] = big_lambda;
        if (lambda > 0.0 && std::isfinite(big_lambda)) {
            check.verdict = Verdict::Pass;
            check.detail = "uniformly elliptic and bounded on samples";
        } else {
            check.verdict = Verdict::Fail;
            check.detail = "diffusion matrix degenerates on samples";
        }
        report.checks["A_sigma_a"] = std::move(check);
    }

    // (A'_{b,sigma}): two-point dissipativity with constant nu.
    {
        AssumptionCheck check;
        double nu = std::numeric_limits<double>::infinity();
        std::size_t violations = 0;
        for (std::size_t k = 0; k < grid.pair_samples; ++k) {
            const Vec x = random_point(d, 0.5 * grid.outer_radius, rng);
            const Vec y = random_point(d, 0.5 * grid.outer_radius, rng);
            const Vec dxy = x - y;
            const double dist2 = dot(dxy, dxy);
            if (dist2 < 1e-16) continue;
            const Vec db = s.drift(x) - s.drift(y);
            check_finite(db, "drift");
            const Matrix ds = s.diffusion(x) - s.diffusion(y);
            const double g = 2.0 * dot(dxy, db) + ds.frobenius_norm() * ds.frobenius_norm();
            if (g >= 0.0 && g > 1e-14 * dist2) ++violations;
            nu = std::min(nu, -g / dist2);
        }
        check.constants["nu"] = nu;
        if (violations == 0 && nu > 1e-3) {
            check.verdict = Verdict::Pass;
            check.detail = "two-point dissipativity holds on all sampled pairs";
        } else if (violations <= grid.pair_samples / 5) {
            check.verdict = Verdict::Inconclusive;
            check.detail = "holds on most pairs but the constant degenerates";
        } else {
            check.verdict = Verdict::Fail;
            check.detail = std::to_string(violations) + "/" + std::to_string(grid.pair_samples) +
                           " pairs violate the dissipativity inequality";
        }
        report.checks["A_prime_b_sigma"] = std::move(check);
    }

    if (s.linear_part) {
        {
            AssumptionCheck check;
            const double abscissa = spectral_abscissa(s.linear_part->a);
            check.constants["abscissa"] = abscissa;
            check.verdict = abscissa < 0.0 ? Verdict::Pass : Verdict::Fail;
            check.detail = abscissa < 0.0 ? "A is Hurwitz" : "A has an eigenvalue with nonnegative real part";
            report.checks["A_hurwitz"] = std::move(check);
        }
        {
            AssumptionCheck check;
            const auto gram = controllability_gramian(s.linear_part->a, s.linear_part->b);
            check.constants["rank"] = static_cast<double>(gram.rank);
            check.verdict = gram.nonsingular ? Verdict::Pass : Verdict::Fail;
            check.detail = gram.nonsingular ? "controllability gramian nonsingular"
                                            : "controllability gramian singular";
            report.checks["A_B"] = std::move(check);
        }
        {
            AssumptionCheck check;
            const Matrix bbt = s.linear_part->b * s.linear_part->b.transposed();
            const double min_eig = symmetric_eigen(bbt).values.front();
            check.constants["bb_min_eigenvalue"] = min_eig;
            check.verdict = min_eig > 0.0 ? Verdict::Pass : Verdict::Fail;
            check.detail = min_eig > 0.0 ? "BB* positive definite" : "BB* singular";
            report.checks["A_BB_positive"] = std::move(check);
        }
    }
    return report;
}

DiffusionScenario ou_scenario(double theta, double kappa) {
    if (!(theta > 0.0)) throw std::invalid_argument("ou_scenario: theta must be positive");
    DiffusionScenario s;
    s.dimension = 1;
    s.noise_dimension = 1;
    s.observable_dim = 1;
    s.drift = [theta](const Vec& x) { return Vec{-theta * x[0]}; };
    s.diffusion = [](const Vec&) { return Matrix(1, 1, {1.0}); };
    s.observable = [](const Vec& x) { return Vec{x[0]}; };
    s.linear_part = LinearPart{Matrix(1, 1, {-theta}), Matrix(1, 1, {1.0})};
    s.linear_observable = Matrix(1, 1, {1.0});
    s.known_corrector = ClosedFormCorrector{
        [theta](const Vec& x) { return Vec{x[0] / theta}; },
        [theta](const Vec&) { return Matrix(1, 1, {1.0 / theta}); }};
    s.kappa = kappa;
    s.initial_point = {1.0};
    s.required_assumptions = {"A_hurwitz", "A_B"};
    s.label = "ou(theta=" + std::to_string(theta) + ")";
    s.notes = "dX = -theta X dt + dW; drift-estimation scenario of the statistical application";
    return s;
}

DiffusionScenario builtin_scenario(const std::string& name) {
    DiffusionScenario s;
    s.kappa = 0.6;

    auto unit_sigma_1d = [](const Vec&) { return Matrix(1, 1, {1.0}); };

    if (name == "cubic") {
        s.dimension = s.noise_dimension = s.observable_dim = 1;
        s.drift = [](const Vec& x) { return Vec{-x[0] * x[0] * x[0]}; };
        s.diffusion = unit_sigma_1d;
        s.observable = [](const Vec& x) { return Vec{x[0] * x[0] * x[0]}; };
        s.known_corrector = ClosedFormCorrector{
            [](const Vec& x) { return Vec{x[0]}; },
            [](const Vec&) { return Matrix(1, 1, {1.0}); }};
        s.initial_point = {0.0};
        s.superlinear_drift = true;
        s.required_assumptions = {"A_b", "A_sigma_a"};
        s.label = "cubic";
        s.notes = "d=1, b=-x^3, sigma=1, H=x^3; dissipative with alpha=3. H grows at cubic "
                  "order, outside the admissible growth window for alpha=3, but the identity "
                  "corrector U(x)=x gives the MDP directly with Q=1.";
    } else if (name == "ou-sign") {
        s.dimension = s.noise_dimension = s.observable_dim = 1;
        s.drift = [](const Vec& x) { return Vec{-x[0]}; };
        s.diffusion = unit_sigma_1d;
        s.observable = [](const Vec& x) { return Vec{sign(x[0])}; };
        s.linear_part = LinearPart{Matrix(1, 1, {-1.0}), Matrix(1, 1, {1.0})};
        s.initial_point = {0.0};
        s.required_assumptions = {"A_prime_b_sigma", "A_sigma_a"};
        s.label = "ou-sign";
        s.notes = "OU with H=sign(x), sign(0)=0; H is bounded and odd, mean-zero by symmetry. "
                  "Outside the Lipschitz classes; handled by the split H = H' + H'' with "
                  "H' = sign(x) e^{-|x|} fast-decaying and H'' Lipschitz.";
    } else if (name == "langevin") {
        s.dimension = 2;
        s.noise_dimension = 2;
        s.observable_dim = 1;
        const Matrix a = Matrix::from_rows({{0, 1}, {-1, -1}});
        const Matrix b = Matrix::diagonal({0.0, 1.0});
        s.drift = [a](const Vec& x) { return a * x; };
        s.diffusion = [b](const Vec&) { return b; };
        s.observable = [](const Vec& x) { return Vec{x[0]}; };
        s.linear_part = LinearPart{a, b};
        s.linear_observable = Matrix::from_rows({{1, 0}});
        s.known_corrector = ClosedFormCorrector{
            [](const Vec& x) { return Vec{x[0] + x[1]}; },
            [](const Vec&) { return Matrix::from_rows({{1, 1}}); }};
        s.initial_point = {0.0, 0.0};
        s.required_assumptions = {"A_hurwitz", "A_B"};
        s.label = "langevin";
        s.notes = "Linear Langevin block system with unit mass, friction and stiffness "
                  "(Lambda = Gamma = sigma = 1, d=1 blocks); BB* is singular but the pair "
                  "(A,B) is controllable. H is the position coordinate.";
    } else if (name == "smooth-component") {
        s.dimension = 2;
        s.noise_dimension = 2;
        s.observable_dim = 2;
        const Matrix a = Matrix::from_rows({{0, 1}, {-1, -1}});
        const Matrix b = Matrix::diagonal({0.0, 1.0});
        s.drift = [a](const Vec& x) { return a * x; };
        s.diffusion = [b](const Vec&) { return b; };
        s.observable = [](const Vec& x) { return x; };
        s.linear_part = LinearPart{a, b};
        s.linear_observable = Matrix::identity(2);
        s.contraction = Matrix::from_rows({{1, 0}});
        s.known_corrector = ClosedFormCorrector{
            [](const Vec& x) { return Vec{x[0] + x[1], -x[0]}; },
            [](const Vec&) { return Matrix::from_rows({{1, 1}, {-1, 0}}); }};
        s.initial_point = {0.0, 0.0};
        s.required_assumptions = {"A_hurwitz", "A_B"};
        s.label = "smooth-component";
        s.notes = "Companion form of z^2 + z + 1 (a1=a2=1, b=1); only the last coordinate is "
                  "driven by noise. The smooth first component's MDP follows by contraction "
                  "with T = [1 0].";
    } else if (name == "quadratic-sign") {
        s.dimension = s.noise_dimension = 1;
        s.observable_dim = 2;
        s.drift = [](const Vec& x) { return Vec{-x[0]}; };
        s.diffusion = unit_sigma_1d;
        s.observable = [](const Vec& x) {
            const double sg = sign(x[0]);
            return Vec{0.5 * sg, x[0] * x[0] * sg - 0.5 * sg};
        };
        s.linear_part = LinearPart{Matrix(1, 1, {-1.0}), Matrix(1, 1, {1.0})};
        s.contraction = Matrix::from_rows({{1, 1}});
        s.initial_point = {0.0};
        s.required_assumptions = {"A_hurwitz", "A_B"};
        s.label = "quadratic-sign";
        s.notes = "OU with H(x)=x^2 sign(x), embedded as the vector (sign/2, x^2 sign - sign/2) "
                  "and recovered by contraction with T = [1 1]. The second component has the "
                  "closed corrector x|x|/2.";
    } else if (name == "ou-linear") {
        s = ou_scenario(1.0, 0.6);
        s.initial_point = {0.0};
        s.label = "ou-linear";
        s.notes = "OU with H=x; the workhorse linear-Gaussian case, exact in every route.";
    } else if (name == "ou-quadratic") {
        s.dimension = s.noise_dimension = s.observable_dim = 1;
        s.drift = [](const Vec& x) { return Vec{-x[0]}; };
        s.diffusion = unit_sigma_1d;
        s.observable = [](const Vec& x) { return Vec{x[0] * x[0] - 0.5}; };
        s.linear_part = LinearPart{Matrix(1, 1, {-1.0}), Matrix(1, 1, {1.0})};
        s.observable_gamma = Matrix(1, 1, {1.0});
        s.observable_offset = 0.5;
        s.initial_point = {0.0};
        s.required_assumptions = {"A_hurwitz", "A_BB_positive"};
        s.label = "ou-quadratic";
        s.notes = "OU with the centered quadratic H = x^2 - 1/2 (Gamma = 1); quadratic-corrector "
                  "route with Q = 1/2.";
    } else if (name == "estimator") {
        s = ou_scenario(1.0, 0.6);
        s.label = "estimator";
    } else {
        std::string known;
        for (const auto& n : builtin_scenario_names()) known += (known.empty() ? "" : ", ") + n;
        throw std::invalid_argument("unknown scenario '" + name + "'; available: " + known);
    }
    s.validate();
    return s;
}

std::vector<std::string> builtin_scenario_names() {
    return {"cubic",          "ou-sign",   "langevin",     "smooth-component",
            "quadratic-sign", "ou-linear", "ou-quadratic", "estimator"};
}

double TabulatedDensity::operator()(double x) const {
    if (values.empty()) return 0.0;
    const double pos = (x - x_lo) / step;
    const double last = static_cast<double>(values.size() - 1);
    if (pos < 0.0 || pos > last) return 0.0;
    if (pos >= last) return values.back();
    const auto i = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    return values[i] * (1.0 - frac) + values[i + 1] * frac;
}

namespace {

// 4-point Gauss-Legendre on [-1, 1].
constexpr double kGlNode[] = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563,
                              0.8611363115940526};
constexpr double kGlWeight[] = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461,
                                0.3478548451374538};

// 2 b / a, the log-slope of the 1-D invariant density candidate.
double log_density_slope(const DiffusionScenario& s, double x) {
    const Vec b = s.drift({x});
    const double a = s.diffusion_squared({x})(0, 0);
    if (!(a > 0.0))
        throw std::runtime_error("invariant_density_1d: diffusion vanishes at x=" + std::to_string(x));
    const double v = 2.0 * b[0] / a;
    if (!std::isfinite(v)) throw std::runtime_error("invariant_density_1d: drift/diffusion non-finite");
    return v;
}

double segment_integral(const DiffusionScenario& s, double lo, double hi) {
    const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
    double sum = 0.0;
    for (int k = 0; k < 4; ++k) sum += kGlWeight[k] * log_density_slope(s, mid + half * kGlNode[k]);
    return sum * half;
}

}  // namespace

TabulatedDensity invariant_density_1d(const DiffusionScenario& s, double lo, double hi,
                                      std::size_t npoints) {
    if (s.dimension != 1) throw std::invalid_argument("invariant_density_1d: requires d = 1");
    if (!(hi > lo) || npoints < 9)
        throw std::invalid_argument("invariant_density_1d: bad domain or grid");

    TabulatedDensity table;
    table.x_lo = lo;
    table.step = (hi - lo) / static_cast<double>(npoints - 1);

    // Cumulative log-density phi(x) = int_lo^x 2b/a, per-cell Gauss-Legendre.
    Vec phi(npoints, 0.0);
    for (std::size_t i = 1; i < npoints; ++i)
        phi[i] = phi[i - 1] + segment_integral(s, table.x_at(i - 1), table.x_at(i));
    const double phi_max = *std::max_element(phi.begin(), phi.end());

    table.values.resize(npoints);
    for (std::size_t i = 0; i < npoints; ++i) {
        const double a = s.diffusion_squared({table.x_at(i)})(0, 0);
        table.values[i] = std::exp(phi[i] - phi_max) / a;
    }
    const double mass = simpson_tabulated(table.values, table.step);
    if (!std::isfinite(mass) || !(mass > 0.0))
        throw std::runtime_error("invariant_density_1d: diverging normalizer");

    // Tail-mass bound from the exponential decay rate at each boundary; a
    // wrong-signed rate means the candidate density does not decay there.
    const double slope_lo = log_density_slope(s, lo);
    const double slope_hi = log_density_slope(s, hi);
    if (!(slope_lo > 0.0) || !(slope_hi < 0.0))
        throw std::runtime_error("invariant_density_1d: density not decaying at the boundary");
    const double tail = table.values.front() / slope_lo + table.values.back() / (-slope_hi);
    if (tail > 1e-12 * mass)
        throw std::runtime_error("invariant_density_1d: truncated tail mass exceeds 1e-12");

    for (auto& v : table.values) v /= mass;
    return table;
}

TabulatedDensity invariant_density_1d(const DiffusionScenario& s, std::size_t npoints) {
    if (s.dimension != 1) throw std::invalid_argument("invariant_density_1d: requires d = 1");

    // Expand each side geometrically until the unnormalized density falls to
    // 1e-16 of its running peak and keeps decaying.
    double lo = -1.0, hi = 1.0;
    double log_w_lo = 0.0, log_w_hi = 0.0;  // log density relative to x = 0
    double log_peak = 0.0;
    for (int pass = 0;; ++pass) {
        log_peak = std::max({log_peak, log_w_lo, log_w_hi});
        const bool lo_done = log_w_lo - log_peak <= std::log(1e-16) && log_density_slope(s, lo) > 0.0;
        const bool hi_done = log_w_hi - log_peak <= std::log(1e-16) && log_density_slope(s, hi) < 0.0;
        if (lo_done && hi_done) break;
        if (pass >= 120 || hi > 1e12)
            throw std::runtime_error("invariant_density_1d: candidate density is not integrable");
        if (!hi_done) {
            const double next = hi * 1.35;
            log_w_hi += segment_integral(s, hi, next);
            hi = next;
        }
        if (!lo_done) {
            const double next = lo * 1.35;
            log_w_lo += segment_integral(s, lo, next);
            lo = next;
        }
    }
    return invariant_density_1d(s, lo, hi, npoints);
}

}  // namespace mdev
