#ifndef RBSDE_LAB_TESTS_SUPPORT_HPP
#define RBSDE_LAB_TESTS_SUPPORT_HPP

// Test-side helpers: seeded instance generators and oracles written
// independently of the library's backward-induction code paths.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "detail/random.hpp"
#include "rbsde_lab/lattice.hpp"
#include "rbsde_lab/expectation.hpp"
#include "rbsde_lab/stopping_rule.hpp"

namespace testing_support {

using rbsde::Driver;
using rbsde::LadlagProcess;
using rbsde::Lattice;
using rbsde::NodeId;
using rbsde::NodeValues;

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return rbsde::detail::uniform(rng, lo, hi); }

inline Lattice tree(double horizon, int steps) { return Lattice::build(rbsde::TimeGrid(horizon, steps)); }

inline Lattice jump_tree(double horizon, int steps, double lambda, double mark) {
    Lattice::Options o;
    o.mode = rbsde::LatticeMode::diffusion_plus_jump;
    o.jump_intensity = lambda;
    o.jump_mark = mark;
    return Lattice::build(rbsde::TimeGrid(horizon, steps), o);
}

/// Bitwise equality of two node vectors; NaN entries compare equal.
inline bool same_bits(const NodeValues& a, const NodeValues& b) {
    return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

/// Random obstacle with point values in [lo, hi]; each non-terminal node
/// gets xi_plus < xi with probability `right_jump_probability`.
inline LadlagProcess random_obstacle(const Lattice& lattice, std::mt19937_64& rng, double lo, double hi,
                                     double right_jump_probability) {
    LadlagProcess xi{lattice.make_values(), lattice.make_values()};
    for (NodeId n = 0; n < lattice.size(); ++n) {
        xi.point[n] = uniform(rng, lo, hi);
        if (lattice.is_terminal(n)) continue;
        xi.right_limit[n] = xi.point[n];
        if (rbsde::detail::uniform01(rng) < right_jump_probability) xi.right_limit[n] -= uniform(rng, 0.05, 1.0);
    }
    return xi;
}

/// Solves y = mean + g(y) * dt by bisection on a bracket that grows until
/// the sign changes; independent of the library's fixed-point iteration.
inline double bisect_step(const std::function<double(double)>& g, double mean, double dt) {
    auto h = [&](double y) { return y - mean - g(y) * dt; };
    double lo = mean - 1.0;
    double hi = mean + 1.0;
    while (h(lo) > 0.0) lo -= 2.0 * (hi - lo);
    while (h(hi) < 0.0) hi += 2.0 * (hi - lo);
    for (int i = 0; i < 200 && hi - lo > 0.0; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (mid == lo || mid == hi) break;
        (h(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

struct StepResult {
    double mean = 0.0;
    double z = 0.0;
    double jump = 0.0;
};

/// One-step martingale representation from the child values, written from
/// the branch definitions: up/down carry +-sqrt(dt), jump carries 0.
inline StepResult represent(const Lattice& lattice, NodeId node, const NodeValues& values) {
    const auto kids = lattice.children(node);
    const double dt = lattice.dt();
    StepResult r;
    const double up = values[kids[0]];
    const double down = values[kids[1]];
    if (!lattice.has_jumps()) {
        r.mean = 0.5 * (up + down);
        r.z = (up - down) / (2.0 * std::sqrt(dt));
        return r;
    }
    const double p = lattice.jump_intensity() * dt;
    const double jump_value = values[kids[2]];
    r.mean = 0.5 * (1.0 - p) * (up + down) + p * jump_value;
    r.z = (up - down) / (2.0 * std::sqrt(dt));
    r.jump = jump_value - 0.5 * (up + down);
    return r;
}

/// Value of the f-BSDE from stopped nodes backward, evaluated by plain
/// recursion over the tree.
inline double bsde_recursive(const Lattice& lattice, const Driver& d, const std::vector<std::uint8_t>& stop,
                             const NodeValues& terminal, NodeId node) {
    if (stop[node] || lattice.is_terminal(node)) return terminal[node];
    NodeValues child_values = lattice.make_values();
    for (NodeId c : lattice.children(node)) child_values[c] = bsde_recursive(lattice, d, stop, terminal, c);
    const StepResult r = represent(lattice, node, child_values);
    const double t = lattice.time_of(node);
    return bisect_step([&](double y) { return d(t, y, r.z, r.jump); }, r.mean, lattice.dt());
}

/// Snell envelope with point values: V_N = xi_N, V_k = max(xi_k, one
/// implicit f-step of V_{k+1}). Right limits play no role in the value.
inline NodeValues snell_oracle(const Lattice& lattice, const Driver& d, const LadlagProcess& xi) {
    NodeValues v = lattice.make_values();
    for (int k = lattice.steps(); k >= 0; --k) {
        for (NodeId n = lattice.level_begin(k); n < lattice.level_end(k); ++n) {
            if (lattice.is_terminal(n)) {
                v[n] = xi.point[n];
                continue;
            }
            const StepResult r = represent(lattice, n, v);
            const double t = lattice.time_of(n);
            const double cont = bisect_step([&](double y) { return d(t, y, r.z, r.jump); }, r.mean, lattice.dt());
            v[n] = std::max(xi.point[n], cont);
        }
    }
    return v;
}

/// All stopping rules on the subtree below `node` as stop-flag vectors, by
/// recursive product construction (distinct from the library's mixed radix).
inline void subtree_rules(const Lattice& lattice, NodeId node, std::vector<std::vector<std::uint8_t>>& out) {
    std::vector<std::uint8_t> stop_here(lattice.size(), 0);
    stop_here[node] = 1;
    out.push_back(stop_here);
    if (lattice.is_terminal(node)) return;
    std::vector<std::vector<std::uint8_t>> partial{std::vector<std::uint8_t>(lattice.size(), 0)};
    for (NodeId c : lattice.children(node)) {
        std::vector<std::vector<std::uint8_t>> child_rules;
        subtree_rules(lattice, c, child_rules);
        std::vector<std::vector<std::uint8_t>> next;
        for (const auto& base : partial) {
            for (const auto& cr : child_rules) {
                std::vector<std::uint8_t> merged = base;
                for (std::size_t i = 0; i < merged.size(); ++i) merged[i] |= cr[i];
                next.push_back(std::move(merged));
            }
        }
        partial = std::move(next);
    }
    for (auto& p : partial) out.push_back(std::move(p));
}

}  // namespace testing_support

#endif  // RBSDE_LAB_TESTS_SUPPORT_HPP
