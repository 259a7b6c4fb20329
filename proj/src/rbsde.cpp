#include "rbsde_lab/rbsde.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "detail/random.hpp"

namespace rbsde {

namespace {

constexpr double kExact = 1e-12;
constexpr double kRoundingFloor = 1e-12;
constexpr double kMaxWeightExponent = 600.0;

void require_valid_obstacle(const Lattice& lattice, const LadlagProcess& xi) {
    const LadlagReport report = validate_ladlag(lattice, xi);
    if (!report.ok) {
        const NodeId n = report.non_finite.empty() ? report.violations.front() : report.non_finite.front();
        throw Error(ErrorCode::ObstacleInvalid,
                    report.non_finite.empty() ? "right limit exceeds point value" : "non-finite obstacle value",
                    lattice.path_word(n));
    }
}

void fill_cumulative(const Lattice& lattice, RBSDESolution& sol) {
    if (!lattice.is_tree()) return;
    sol.a = lattice.make_values();
    sol.c = lattice.make_values();
    sol.a[lattice.root()] = 0.0;
    sol.c[lattice.root()] = sol.d_c[lattice.root()];
    for (int k = 0; k < lattice.steps(); ++k) {
        for (NodeId n = lattice.level_begin(k); n < lattice.level_end(k); ++n) {
            for (NodeId child : lattice.children(n)) {
                sol.a[child] = sol.a[n] + sol.d_a[n];
                sol.c[child] = lattice.is_terminal(child) ? sol.c[n] : sol.c[n] + sol.d_c[child];
            }
        }
    }
}

// Shared two-phase reflected backward pass; `driver_value(n, t, m, lower)`
// supplies f_k for the continuation at node n.
template <class DriverValue>
RBSDESolution reflect_backward(const Lattice& lattice, const LadlagProcess& xi, const SweepOrder& order,
                               DriverValue&& driver_value) {
    require_valid_obstacle(lattice, xi);
    RBSDESolution sol;
    sol.y = lattice.make_values();
    sol.y_plus = lattice.make_values();
    sol.z = lattice.make_values();
    sol.jump = lattice.make_values();
    sol.d_a = lattice.make_values();
    sol.d_c = lattice.make_values();
    sol.driver_values = lattice.make_values();
    sol.obstacle = xi;

    const int n_steps = lattice.steps();
    for (NodeId n = lattice.level_begin(n_steps); n < lattice.level_end(n_steps); ++n) sol.y[n] = xi.point[n];

    const double dt = lattice.dt();
    for (int k = n_steps - 1; k >= 0; --k) {
        const double t = lattice.time(k);
        for (NodeId n : level_nodes(lattice, k, order)) {
            const MartingaleComponent m = martingale_component(lattice, sol.y, n);
            const double fv = driver_value(n, t, m, xi.right_limit[n]);
            const double continuation = m.mean + fv * dt;
            const double y_plus = std::max(continuation, xi.right_limit[n]);
            const double y = std::max(y_plus, xi.point[n]);
            sol.driver_values[n] = fv;
            sol.z[n] = m.z;
            if (lattice.has_jumps()) sol.jump[n] = m.jump;
            sol.y_plus[n] = y_plus;
            sol.d_a[n] = y_plus - continuation;
            sol.y[n] = y;
            sol.d_c[n] = y - y_plus;
        }
    }
    fill_cumulative(lattice, sol);
    return sol;
}

NodeValues picard_state(const Lattice& lattice, const RBSDESolution& sol) {
    // The driver reads Y_plus on (t_k, t_{k+1}); the terminal level carries Y_N.
    NodeValues state = sol.y_plus;
    const int n_steps = lattice.steps();
    for (NodeId n = lattice.level_begin(n_steps); n < lattice.level_end(n_steps); ++n) state[n] = sol.y[n];
    return state;
}

double picard_distance(const Lattice& lattice, double beta, const NodeValues& y1, const NodeValues& z1,
                       const NodeValues& k1, const NodeValues& y2, const NodeValues& z2, const NodeValues& k2) {
    NodeValues dy(lattice.size(), 0.0), dz(lattice.size(), 0.0), dk(lattice.size(), 0.0);
    for (NodeId n = 0; n < lattice.size(); ++n) {
        dy[n] = y1[n] - y2[n];
        dz[n] = lattice.is_terminal(n) ? 0.0 : z1[n] - z2[n];
        dk[n] = lattice.has_jumps() && !lattice.is_terminal(n) ? k1[n] - k2[n] : 0.0;
    }
    double total = beta_norm(lattice, dy, beta, NormFlavor::s2) + beta_norm(lattice, dz, beta, NormFlavor::h2);
    if (lattice.has_jumps()) total += lattice.jump_intensity() * beta_norm(lattice, dk, beta, NormFlavor::h2);
    return std::sqrt(total);
}

}  // namespace

double automatic_beta(double lipschitz, double horizon) {
    return std::max(1.0, 8.0 * lipschitz * (lipschitz + 2.0) * (horizon + 1.0));
}

RBSDESolution solve_rbsde_frozen(const Lattice& lattice, const NodeValues& driver_values, const LadlagProcess& xi,
                                 const SweepOrder& order) {
    if (driver_values.size() != lattice.size()) {
        throw Error(ErrorCode::MismatchedInstances, "driver process does not match the lattice");
    }
    return reflect_backward(lattice, xi, order, [&](NodeId n, double, const MartingaleComponent&, double) {
        const double fv = driver_values[n];
        if (!std::isfinite(fv)) {
            throw Error(ErrorCode::NonFiniteDriverValue, "frozen driver value is not finite", lattice.path_word(n));
        }
        return fv;
    });
}

RBSDESolution solve_rbsde_implicit(const Lattice& lattice, const Driver& d, const LadlagProcess& xi,
                                   const SweepOrder& order) {
    if (d.lipschitz * lattice.dt() >= 0.5) {
        throw Error(ErrorCode::StepContractionFailure, "K*dt must be < 1/2");
    }
    const double dt = lattice.dt();
    return reflect_backward(lattice, xi, order, [&](NodeId, double t, const MartingaleComponent& m, double lower) {
        return implicit_driver_value(d, t, dt, m.mean, m.z, m.jump, lower);
    });
}

RBSDEResult solve_rbsde(const Lattice& lattice, const Driver& d, const LadlagProcess& xi,
                        const PicardOptions& options) {
    if (d.lipschitz * lattice.dt() >= 0.5) {
        throw Error(ErrorCode::StepContractionFailure,
                    "K*dt = " + std::to_string(d.lipschitz * lattice.dt()) + " must be < 1/2");
    }
    require_valid_obstacle(lattice, xi);

    RBSDEResult result;
    PicardDiagnostics& diag = result.diagnostics;
    diag.beta_automatic = !options.beta.has_value();
    diag.beta = options.beta.value_or(automatic_beta(d.lipschitz, lattice.grid().horizon()));
    const int n_steps = lattice.steps();
    const NodeValues zeros(lattice.size(), 0.0);

    const auto driver_process = [&](const NodeValues& y, const NodeValues& z, const NodeValues& k) {
        NodeValues f = lattice.make_values();
        for (int lvl = 0; lvl < n_steps; ++lvl) {
            const double t = lattice.time(lvl);
            for (NodeId n = lattice.level_begin(lvl); n < lattice.level_end(lvl); ++n) {
                f[n] = d(t, y[n], z[n], lattice.has_jumps() ? k[n] : 0.0);
            }
        }
        return f;
    };

    if (!d.depends_on_solution()) {
        result.solution = solve_rbsde_frozen(lattice, driver_process(zeros, zeros, zeros), xi, options.order);
        diag.iterations = 1;
        diag.differences.push_back(picard_distance(lattice, diag.beta, picard_state(lattice, result.solution),
                                                   result.solution.z, result.solution.jump, zeros, zeros, zeros));
        diag.converged = true;
        return result;
    }

    NodeValues y_state, z_state, k_state;
    double last_scale = 0.0;
    for (int restart = 0;; ++restart) {
        y_state = zeros;
        z_state = zeros;
        k_state = zeros;
        diag.iterations = 0;
        diag.differences.clear();
        diag.ratios.clear();
        diag.converged = false;
        bool restart_needed = false;
        for (int it = 1; it <= options.max_iterations; ++it) {
            RBSDESolution next =
                solve_rbsde_frozen(lattice, driver_process(y_state, z_state, k_state), xi, options.order);
            NodeValues next_y = picard_state(lattice, next);
            const double diff =
                picard_distance(lattice, diag.beta, next_y, next.z, next.jump, y_state, z_state, k_state);
            const double scale = picard_distance(lattice, diag.beta, next_y, next.z, next.jump, zeros, zeros, zeros);
            diag.iterations = it;
            diag.differences.push_back(diff);
            if (it >= 2) {
                const double prev = diag.differences[diag.differences.size() - 2];
                diag.ratios.push_back(prev > 0.0 ? diff / prev : 0.0);
            }
            last_scale = scale;
            y_state = std::move(next_y);
            z_state = std::move(next.z);
            k_state = std::move(next.jump);
            if (diff <= options.tolerance * std::max(1.0, scale)) {
                diag.converged = true;
                break;
            }
            // Ratios below the rounding floor of the weighted norm carry no information.
            const bool resolved = diff > kRoundingFloor * scale;
            const bool room = 2.0 * diag.beta * lattice.grid().horizon() <= kMaxWeightExponent;
            if (diag.beta_automatic && resolved && room && !diag.ratios.empty() && diag.ratios.back() >= 0.9 &&
                restart < 5) {
                restart_needed = true;
                break;
            }
        }
        if (!restart_needed) break;
        diag.beta *= 2.0;
        diag.beta_restarts = restart + 1;
    }

    const bool stalled_at_rounding = !diag.differences.empty() &&
                                     diag.differences.back() <= kRoundingFloor * last_scale;
    if (!diag.converged && !stalled_at_rounding && !diag.ratios.empty() && diag.ratios.back() >= 1.0) {
        throw Error(ErrorCode::PicardDivergence, "Picard iteration stalled with contraction ratio " +
                                                     std::to_string(diag.ratios.back()));
    }
    result.solution = solve_rbsde_implicit(lattice, d, xi, options.order);
    diag.final_residual = picard_distance(lattice, diag.beta, picard_state(lattice, result.solution),
                                          result.solution.z, result.solution.jump, y_state, z_state, k_state);
    return result;
}

double budget_residual(const Lattice& lattice, const RBSDESolution& sol) {
    const auto dw = lattice.brownian_increments();
    const double dt = lattice.dt();
    double worst = 0.0;
    for (int k = 0; k < lattice.steps(); ++k) {
        for (NodeId n = lattice.level_begin(k); n < lattice.level_end(k); ++n) {
            const auto kids = lattice.children(n);
            for (std::size_t b = 0; b < kids.size(); ++b) {
                double rhs = sol.y[kids[b]] + sol.driver_values[n] * dt + sol.d_a[n] + sol.d_c[n] - sol.z[n] * dw[b];
                if (lattice.has_jumps()) rhs -= sol.jump[n] * lattice.compensated_jump(static_cast<int>(b));
                const double scale = std::max(1.0, std::abs(sol.y[n]));
                worst = std::max(worst, std::abs(sol.y[n] - rhs) / scale);
            }
        }
    }
    return worst;
}

SkorokhodReport check_skorokhod(const Lattice& lattice, const RBSDESolution& sol, const LadlagProcess& xi) {
    SkorokhodReport report;
    for (NodeId n = 0; n < lattice.size(); ++n) {
        if (lattice.is_terminal(n)) {
            if (std::abs(sol.y[n] - xi.point[n]) > kExact) report.barrier_violations.push_back(n);
            continue;
        }
        if (sol.d_a[n] > 0.0) {
            ++report.interval_pushes;
            if (std::abs(sol.y_plus[n] - xi.right_limit[n]) > kExact) report.interval_violations.push_back(n);
        }
        if (sol.d_c[n] > 0.0) {
            ++report.point_pushes;
            if (std::abs(sol.y[n] - xi.point[n]) > kExact) report.point_violations.push_back(n);
        }
        if (std::abs(sol.d_c[n] - (sol.y[n] - sol.y_plus[n])) > kExact) report.point_violations.push_back(n);
        if (sol.y[n] < xi.point[n] - kExact || sol.y_plus[n] < xi.right_limit[n] - kExact) {
            report.barrier_violations.push_back(n);
        }
        if (sol.d_a[n] < -kExact || sol.d_c[n] < -kExact) report.sign_violations.push_back(n);
    }
    report.max_budget_residual = budget_residual(lattice, sol);
    report.ok = report.interval_violations.empty() && report.point_violations.empty() &&
                report.barrier_violations.empty() && report.sign_violations.empty() &&
                report.max_budget_residual <= kExact;
    return report;
}

MertensAttempt try_mertens_decompose(const Lattice& lattice, const Driver& d, const LadlagProcess& x) {
    MertensAttempt attempt;
    MertensDecomposition out{lattice.make_values(), lattice.make_values(), lattice.make_values(),
                             lattice.make_values()};
    const double dt = lattice.dt();
    for (int k = 0; k < lattice.steps(); ++k) {
        const double t = lattice.time(k);
        for (NodeId n = lattice.level_begin(k); n < lattice.level_end(k); ++n) {
            const MartingaleComponent m = martingale_component(lattice, x.point, n);
            const double x_plus = x.right_limit[n];
            out.z[n] = m.z;
            if (lattice.has_jumps()) out.jump[n] = m.jump;
            out.d_c[n] = x.point[n] - x_plus;
            out.d_a[n] = x_plus - m.mean - d(t, x_plus, m.z, m.jump) * dt;
            if (!attempt.witness && out.d_c[n] < -kExact) {
                attempt.witness = n;
                attempt.reason = "right limit exceeds point value (dC < 0)";
            }
            if (!attempt.witness && out.d_a[n] < -kExact) {
                attempt.witness = n;
                attempt.reason = "f-conditional expectation exceeds right limit (dA < 0)";
            }
        }
    }
    if (!attempt.witness) attempt.decomposition = std::move(out);
    return attempt;
}

MertensDecomposition mertens_decompose(const Lattice& lattice, const Driver& d, const LadlagProcess& x) {
    MertensAttempt attempt = try_mertens_decompose(lattice, d, x);
    if (!attempt.decomposition) {
        throw Error(ErrorCode::NotSupermartingale, attempt.reason, lattice.path_word(*attempt.witness));
    }
    return std::move(*attempt.decomposition);
}

DiscreteSemimartingale to_semimartingale(const Lattice& lattice, const RBSDESolution& sol) {
    DiscreteSemimartingale s;
    s.value = sol.y;
    s.value_plus = sol.y_plus;
    s.z = sol.z;
    s.jump = sol.jump;
    s.right_jump = sol.d_c;
    s.drift = lattice.make_values();
    const double dt = lattice.dt();
    for (int k = 0; k < lattice.steps(); ++k) {
        for (NodeId n = lattice.level_begin(k); n < lattice.level_end(k); ++n) {
            s.drift[n] = -sol.driver_values[n] * dt - sol.d_a[n];
        }
    }
    return s;
}

namespace {

bool same_values(const NodeValues& a, const NodeValues& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::isnan(a[i]) != std::isnan(b[i])) return false;
        if (!std::isnan(a[i]) && a[i] != b[i]) return false;
    }
    return true;
}

}  // namespace

AprioriReport apriori_z_check(const Lattice& lattice, const RBSDESolution& first, const RBSDESolution& second,
                              double epsilon, double beta) {
    if (first.y.size() != lattice.size() || second.y.size() != lattice.size() ||
        !same_values(first.obstacle.point, second.obstacle.point) ||
        !same_values(first.obstacle.right_limit, second.obstacle.right_limit)) {
        throw Error(ErrorCode::MismatchedInstances, "solutions do not share lattice and obstacle");
    }
    if (!(epsilon > 0.0) || beta < 1.0 / (epsilon * epsilon)) {
        throw Error(ErrorCode::HypothesisViolated, "need epsilon > 0 and beta >= 1/epsilon^2");
    }
    NodeValues dz(lattice.size(), 0.0), dk(lattice.size(), 0.0), df(lattice.size(), 0.0);
    for (NodeId n = 0; n < lattice.size(); ++n) {
        if (lattice.is_terminal(n)) continue;
        dz[n] = first.z[n] - second.z[n];
        df[n] = first.driver_values[n] - second.driver_values[n];
        if (lattice.has_jumps()) dk[n] = first.jump[n] - second.jump[n];
    }
    AprioriReport report;
    report.lhs = beta_norm(lattice, dz, beta, NormFlavor::h2);
    if (lattice.has_jumps()) report.lhs += lattice.jump_intensity() * beta_norm(lattice, dk, beta, NormFlavor::h2);
    report.rhs = epsilon * epsilon * beta_norm(lattice, df, beta, NormFlavor::h2);
    report.pass = report.lhs <= report.rhs * 1.05;
    return report;
}

ComparisonReport compare_solutions(const Lattice& lattice, const Driver& first_driver, const RBSDESolution& first,
                                   const Driver& second_driver, const RBSDESolution& second,
                                   std::size_t driver_samples, std::uint64_t seed) {
    if (first.y.size() != lattice.size() || second.y.size() != lattice.size()) {
        throw Error(ErrorCode::MismatchedInstances, "solutions do not match the lattice");
    }
    for (NodeId n = 0; n < lattice.size(); ++n) {
        const bool point_ok = second.obstacle.point[n] <= first.obstacle.point[n];
        const bool right_ok =
            lattice.is_terminal(n) || second.obstacle.right_limit[n] <= first.obstacle.right_limit[n];
        if (!point_ok || !right_ok) {
            throw Error(ErrorCode::HypothesisViolated, "second obstacle is not dominated by the first",
                        lattice.path_word(n));
        }
    }
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < driver_samples; ++i) {
        const double t = detail::uniform(rng, 0.0, lattice.grid().horizon());
        const double y = detail::uniform(rng, -10.0, 10.0);
        const double z = detail::uniform(rng, -10.0, 10.0);
        const double k = lattice.has_jumps() ? detail::uniform(rng, -10.0, 10.0) : 0.0;
        if (second_driver(t, y, z, k) > first_driver(t, y, z, k) + kExact) {
            throw Error(ErrorCode::HypothesisViolated, "second driver is not dominated by the first");
        }
    }
    ComparisonReport report;
    report.max_excess = -std::numeric_limits<double>::infinity();
    for (NodeId n = 0; n < lattice.size(); ++n) {
        const double excess = second.y[n] - first.y[n];
        if (excess > report.max_excess) report.max_excess = excess;
        if (excess > kExact && !report.witness) report.witness = n;
    }
    report.pass = !report.witness.has_value();
    return report;
}

void write_solution_csv(std::ostream& out, const Lattice& lattice, const RBSDESolution& sol) {
    out << "level,path_word,t,xi,xi_plus,Y,Y_plus,Z,dA,dC";
    if (lattice.has_jumps()) out << ",k_jump";
    out << '\n';
    char buf[64];
    const auto field = [&](double v) {
        out << ',';
        if (std::isnan(v)) return;
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf;
    };
    for (NodeId n = 0; n < lattice.size(); ++n) {
        out << lattice.level(n) << ',' << lattice.path_word(n);
        field(lattice.time_of(n));
        field(sol.obstacle.point[n]);
        field(sol.obstacle.right_limit[n]);
        field(sol.y[n]);
        field(sol.y_plus[n]);
        field(sol.z[n]);
        field(sol.d_a[n]);
        field(sol.d_c[n]);
        if (lattice.has_jumps()) field(sol.jump[n]);
        out << '\n';
    }
}

}  // namespace rbsde
