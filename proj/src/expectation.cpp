#include "rbsde_lab/expectation.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "detail/random.hpp"

namespace rbsde {

Driver Driver::zero() {
    Driver d;
    d.name = "zero";
    d.kind = DriverKind::zero;
    d.function = [](double, double, double, double) { return 0.0; };
    return d;
}

Driver Driver::linear(double a, double b, double c) {
    Driver d;
    d.name = "linear";
    d.kind = DriverKind::linear;
    d.coefficients = {a, b, c};
    d.lipschitz = std::max(std::abs(a), std::abs(b));
    d.depends_on = {a != 0.0, b != 0.0, false};
    d.function = [a, b, c](double, double y, double z, double) { return a * y + b * z + c; };
    return d;
}

Driver Driver::abs_z(double scale) {
    Driver d;
    d.name = "abs_z";
    d.lipschitz = std::abs(scale);
    d.depends_on = {false, true, false};
    d.function = [scale](double, double, double z, double) { return scale * std::abs(z); };
    return d;
}

Driver Driver::custom(std::string name, Function function, double lipschitz, DriverDependence depends_on) {
    Driver d;
    d.name = std::move(name);
    d.lipschitz = lipschitz;
    d.depends_on = depends_on;
    d.function = std::move(function);
    return d;
}

namespace {

double param_or(const DriverParams& params, const std::string& key, double fallback) {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
}

Driver custom_by_id(const std::string& id, const DriverParams& params, double jump_intensity) {
    if (id == "y_squared") {
        // Not Lipschitz; kept in the registry as a validator target.
        return Driver::custom("custom:y_squared", [](double, double y, double, double) { return y * y; }, 1.0,
                              {true, false, false});
    }
    if (id == "sin_y") {
        const double scale = param_or(params, "scale", 0.5);
        return Driver::custom("custom:sin_y",
                              [scale](double, double y, double, double) { return scale * std::sin(y); },
                              std::abs(scale), {true, false, false});
    }
    if (id == "neg_abs_z") {
        const double scale = param_or(params, "scale", 1.0);
        return Driver::custom("custom:neg_abs_z",
                              [scale](double, double, double z, double) { return -scale * std::abs(z); },
                              std::abs(scale), {false, true, false});
    }
    if (id == "mixed") {
        // K * (sin(y)/2 + |z|/2) + c: nonlinear in both arguments.
        const double scale = param_or(params, "scale", 0.5);
        const double c = param_or(params, "c", 0.0);
        return Driver::custom(
            "custom:mixed",
            [scale, c](double, double y, double z, double) { return scale * (0.5 * std::sin(y) + 0.5 * std::abs(z)) + c; },
            std::abs(scale), {true, true, false});
    }
    if (id == "jump_linear") {
        const double a = param_or(params, "a", 0.0);
        const double b = param_or(params, "b", 0.0);
        const double g = param_or(params, "g", 0.0);
        const double c = param_or(params, "c", 0.0);
        if (g != 0.0 && !(jump_intensity > 0.0)) {
            throw Error(ErrorCode::ConfigParseError, "custom:jump_linear with g != 0 needs a jump intensity > 0");
        }
        Driver d = Driver::custom(
            "custom:jump_linear",
            [a, b, g, c](double, double y, double z, double k) { return a * y + b * z + g * k + c; },
            std::max({std::abs(a), std::abs(b), g == 0.0 ? 0.0 : std::abs(g) / std::sqrt(jump_intensity)}),
            {a != 0.0, b != 0.0, g != 0.0});
        const double theta = g == 0.0 ? 0.0 : g / jump_intensity;
        d.jump_monotonicity = JumpMonotonicitySpec{
            [theta](double, double, double, double, double) { return theta; }, std::abs(theta)};
        return d;
    }
    throw Error(ErrorCode::ConfigParseError, "unknown custom driver id '" + id + "'");
}

}  // namespace

std::vector<std::string> custom_driver_ids() {
    return {"y_squared", "sin_y", "neg_abs_z", "mixed", "jump_linear"};
}

Driver make_driver(const std::string& kind, const DriverParams& params, std::optional<double> declared_k,
                   double jump_intensity) {
    Driver d;
    if (kind == "zero") {
        d = Driver::zero();
    } else if (kind == "linear") {
        d = Driver::linear(param_or(params, "a", 0.0), param_or(params, "b", 0.0), param_or(params, "c", 0.0));
    } else if (kind == "abs_z") {
        d = Driver::abs_z(param_or(params, "scale", 1.0));
    } else if (kind.rfind("custom:", 0) == 0) {
        d = custom_by_id(kind.substr(7), params, jump_intensity);
    } else {
        throw Error(ErrorCode::ConfigParseError, "unknown driver kind '" + kind + "'");
    }
    if (declared_k) {
        if (!(*declared_k >= 0.0)) throw Error(ErrorCode::ConfigParseError, "driver K must be nonnegative");
        d.lipschitz = *declared_k;
    }
    return d;
}

namespace {

double checked(double v, const char* what) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteDriverValue, std::string("driver returned ") + what);
    return v;
}

}  // namespace

DriverReport validate_driver(const Driver& d, std::size_t sample_count, std::uint64_t seed, const SamplingBox& box) {
    if (sample_count == 0) throw Error(ErrorCode::HypothesisViolated, "sample_count must be at least 1");
    std::mt19937_64 rng(seed);
    DriverReport report;
    const bool use_k = d.depends_on.jump;
    for (std::size_t i = 0; i < sample_count; ++i) {
        DriverSample s{};
        s.t = detail::uniform(rng, 0.0, box.t_max);
        // The first samples pin the corners of the box.
        if (i < 4) {
            s.y1 = (i & 1) ? box.y_abs : -box.y_abs;
            s.y2 = (i & 2) ? box.y_abs : -box.y_abs * 0.5;
            s.z1 = (i & 2) ? box.z_abs : -box.z_abs;
            s.z2 = (i & 1) ? -box.z_abs * 0.5 : box.z_abs;
        } else {
            s.y1 = detail::uniform(rng, -box.y_abs, box.y_abs);
            s.y2 = detail::uniform(rng, -box.y_abs, box.y_abs);
            s.z1 = detail::uniform(rng, -box.z_abs, box.z_abs);
            s.z2 = detail::uniform(rng, -box.z_abs, box.z_abs);
        }
        if (use_k) {
            s.k1 = detail::uniform(rng, -box.k_abs, box.k_abs);
            s.k2 = detail::uniform(rng, -box.k_abs, box.k_abs);
        }
        const double f1 = checked(d(s.t, s.y1, s.z1, s.k1), "a non-finite value");
        const double f2 = checked(d(s.t, s.y2, s.z2, s.k2), "a non-finite value");
        const double dist = std::abs(s.y1 - s.y2) + std::abs(s.z1 - s.z2) + box.jump_weight * std::abs(s.k1 - s.k2);
        const double diff = std::abs(f1 - f2);
        ++report.samples;
        if (dist == 0.0) continue;
        s.ratio = diff / dist;
        report.empirical_k = std::max(report.empirical_k, s.ratio);
        if (diff > d.lipschitz * dist * (1.0 + 1e-12) + 1e-14) {
            ++report.violation_count;
            if (report.violations.size() < 16) report.violations.push_back(s);
        }
    }
    report.ok = report.violation_count == 0;
    return report;
}

JumpMonotonicityReport check_jump_monotonicity(const Driver& d, double jump_intensity, std::size_t sample_count,
                                               std::uint64_t seed, const SamplingBox& box) {
    std::mt19937_64 rng(seed);
    JumpMonotonicityReport report;
    const double bound = d.jump_monotonicity ? d.jump_monotonicity->bound : 0.0;
    for (std::size_t i = 0; i < sample_count; ++i) {
        const double t = detail::uniform(rng, 0.0, box.t_max);
        const double y = detail::uniform(rng, -box.y_abs, box.y_abs);
        const double z = detail::uniform(rng, -box.z_abs, box.z_abs);
        const double k1 = detail::uniform(rng, -box.k_abs, box.k_abs);
        const double k2 = detail::uniform(rng, -box.k_abs, box.k_abs);
        const double theta = d.jump_monotonicity ? d.jump_monotonicity->theta(t, y, z, k1, k2) : 0.0;
        const double lhs = d(t, y, z, k1) - d(t, y, z, k2);
        const double rhs = jump_intensity * theta * (k1 - k2);
        ++report.samples;
        const bool theta_bad = theta < -1.0 || std::abs(theta) > bound;
        const bool ineq_bad = lhs < rhs - 1e-12 * std::max(1.0, std::abs(rhs));
        if (theta_bad) ++report.theta_out_of_range;
        if (ineq_bad) ++report.inequality_violations;
        if ((theta_bad || ineq_bad) && report.first_violation.empty()) {
            std::ostringstream os;
            os.precision(17);
            os << "t=" << t << " y=" << y << " z=" << z << " k1=" << k1 << " k2=" << k2 << " theta=" << theta
               << " f(k1)-f(k2)=" << lhs << " lambda*theta*(k1-k2)=" << rhs;
            report.first_violation = os.str();
        }
    }
    report.ok = report.theta_out_of_range == 0 && report.inequality_violations == 0;
    return report;
}

double implicit_driver_value(const Driver& d, double t, double dt, double mean, double z, double k, double lower,
                             const StepOptions& options) {
    if (!d.depends_on.y) return checked(d(t, mean, z, k), "a non-finite value");
    double y = std::max(mean, lower);
    for (int it = 0; it < options.max_iterations; ++it) {
        const double next = std::max(mean + checked(d(t, y, z, k), "a non-finite value") * dt, lower);
        if (std::abs(next - y) <= options.tolerance * std::max(1.0, std::abs(next))) {
            return checked(d(t, next, z, k), "a non-finite value");
        }
        y = next;
    }
    throw Error(ErrorCode::StepContractionFailure, "implicit step did not converge");
}

namespace {

void require_step_contraction(const Lattice& lattice, const Driver& d) {
    if (d.lipschitz * lattice.dt() >= 0.5) {
        throw Error(ErrorCode::StepContractionFailure,
                    "K*dt = " + std::to_string(d.lipschitz * lattice.dt()) + " must be < 1/2");
    }
}

}  // namespace

BSDESolution solve_bsde(const Lattice& lattice, const Driver& d, const StoppingRule& tau, const NodeValues& terminal,
                        const SweepOrder& order) {
    require_step_contraction(lattice, d);
    if (terminal.size() != lattice.size() || tau.size() != lattice.size()) {
        throw Error(ErrorCode::MismatchedInstances, "terminal values or rule do not match the lattice");
    }
    BSDESolution sol{lattice.make_values(), lattice.make_values(), lattice.make_values()};
    const double dt = lattice.dt();
    for (int k = lattice.steps(); k >= 0; --k) {
        const double t = lattice.time(k);
        for (NodeId n : level_nodes(lattice, k, order)) {
            switch (tau.phase(n)) {
                case StoppingRule::Phase::after:
                    break;
                case StoppingRule::Phase::at:
                    if (std::isnan(terminal[n])) {
                        throw Error(ErrorCode::MissingTerminalValue, "no terminal value where tau stops",
                                    lattice.path_word(n));
                    }
                    sol.y[n] = terminal[n];
                    break;
                case StoppingRule::Phase::before: {
                    const MartingaleComponent m = martingale_component(lattice, sol.y, n);
                    const double fv = implicit_driver_value(d, t, dt, m.mean, m.z, m.jump,
                                                            -std::numeric_limits<double>::infinity());
                    sol.y[n] = m.mean + fv * dt;
                    sol.z[n] = m.z;
                    if (lattice.has_jumps()) sol.jump[n] = m.jump;
                    break;
                }
            }
        }
    }
    return sol;
}

NodeValues f_expectation(const Lattice& lattice, const Driver& d, const StoppingRule& sigma, const StoppingRule& tau,
                         const NodeValues& terminal) {
    if (!sigma.precedes(tau)) {
        throw Error(ErrorCode::StoppingOrderViolation, "sigma must not exceed tau on any path");
    }
    const BSDESolution sol = solve_bsde(lattice, d, tau, terminal);
    NodeValues out = lattice.make_values();
    for (NodeId n = 0; n < lattice.size(); ++n) {
        if (sigma.stops_at(n)) out[n] = sol.y[n];
    }
    return out;
}

double beta_norm(const Lattice& lattice, const NodeValues& x, double beta, NormFlavor flavor) {
    const auto value = [&](NodeId n) { return std::isnan(x[n]) ? 0.0 : x[n]; };
    const int n_steps = lattice.steps();
    if (flavor == NormFlavor::h2) {
        double total = 0.0;
        for (int k = 0; k < n_steps; ++k) {
            const double w = std::exp(beta * lattice.time(k)) * lattice.dt();
            double level_sum = 0.0;
            for (NodeId n = lattice.level_begin(k); n < lattice.level_end(k); ++n) {
                level_sum += lattice.probability(n) * value(n) * value(n);
            }
            if (level_sum != 0.0) total += w * level_sum;
        }
        return total;
    }
    // Snell envelope of e^{beta t} x_t^2.
    NodeValues envelope = lattice.make_values();
    for (int k = n_steps; k >= 0; --k) {
        const double w = std::exp(beta * lattice.time(k));
        for (NodeId n = lattice.level_begin(k); n < lattice.level_end(k); ++n) {
            const double square = value(n) * value(n);
            const double stop = square == 0.0 ? 0.0 : w * square;
            envelope[n] = k == n_steps ? stop : std::max(stop, conditional_expectation(lattice, envelope, n));
        }
    }
    return envelope[lattice.root()];
}

}  // namespace rbsde
