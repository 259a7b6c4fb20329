#include "rbsde_lab/stopping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rbsde {

namespace {

constexpr double kHit = 1e-12;
constexpr double kCriterion = 1e-10;

// Flags for a rule that stops at the first node at/after S satisfying `hit`.
template <class Hit>
StoppingRule first_hitting(const Lattice& lattice, const StoppingRule& start, Hit&& hit) {
    std::vector<std::uint8_t> flags(lattice.size(), 0);
    for (NodeId n = 0; n < lattice.size(); ++n) {
        if (start.phase(n) != StoppingRule::Phase::before && hit(n)) flags[n] = 1;
    }
    return StoppingRule(lattice, std::move(flags));
}

}  // namespace

double default_epsilon_constant(double lipschitz, double horizon) { return std::exp(lipschitz * horizon); }

StoppingReport value_and_risk(const Lattice& lattice, const Driver& d, const LadlagProcess& xi,
                              const StoppingRule& start, const PicardOptions& options) {
    RBSDEResult solved = solve_rbsde(lattice, d, xi, options);
    StoppingReport report{lattice.make_values(), lattice.make_values(),
                          optimal_time(lattice, solved.solution, xi, start), StoppingCertificate{},
                          std::move(solved.diagnostics), std::move(solved.solution)};
    for (NodeId n = 0; n < lattice.size(); ++n) {
        if (!start.stops_at(n)) continue;
        report.value[n] = report.solution.y[n];
        report.risk[n] = -report.solution.y[n];
    }
    return report;
}

StoppingRule epsilon_optimal_time(const Lattice& lattice, const RBSDESolution& sol, const LadlagProcess& xi,
                                  const StoppingRule& start, double epsilon) {
    if (!(epsilon > 0.0)) throw Error(ErrorCode::HypothesisViolated, "epsilon must be positive");
    return first_hitting(lattice, start, [&](NodeId n) { return sol.y[n] <= xi.point[n] + epsilon; });
}

StoppingRule optimal_time(const Lattice& lattice, const RBSDESolution& sol, const LadlagProcess& xi,
                          const StoppingRule& start) {
    return first_hitting(lattice, start, [&](NodeId n) { return std::abs(sol.y[n] - xi.point[n]) <= kHit; });
}

std::string to_string(OptimalityReport::Reason reason) {
    switch (reason) {
        case OptimalityReport::Reason::none: return "none";
        case OptimalityReport::Reason::not_at_obstacle: return "value differs from obstacle at stopping node";
        case OptimalityReport::Reason::not_martingale: return "value is not an f-martingale up to tau";
    }
    return "unknown";
}

OptimalityReport check_optimality(const Lattice& lattice, const Driver& d, const LadlagProcess& xi,
                                  const RBSDESolution& sol, const StoppingRule& tau, const StoppingRule& start) {
    if (!start.precedes(tau)) {
        throw Error(ErrorCode::StoppingOrderViolation, "tau must not precede S on any path");
    }
    OptimalityReport report;
    for (NodeId n = 0; n < lattice.size(); ++n) {
        if (!tau.stops_at(n)) continue;
        const double gap = std::abs(sol.y[n] - xi.point[n]);
        if (gap > kCriterion) {
            report.pass = false;
            report.reason = OptimalityReport::Reason::not_at_obstacle;
            report.witness = n;
            report.deviation = gap;
            return report;
        }
    }
    const NodeValues along = f_expectation(lattice, d, start, tau, sol.y);
    for (NodeId n = 0; n < lattice.size(); ++n) {
        if (!start.stops_at(n)) continue;
        const double gap = std::abs(along[n] - sol.y[n]);
        report.deviation = std::max(report.deviation, gap);
        if (gap > kCriterion && report.pass) {
            report.pass = false;
            report.reason = OptimalityReport::Reason::not_martingale;
            report.witness = n;
        }
    }
    return report;
}

std::uint64_t stopping_rule_count(int remaining_depth, int branching) {
    std::uint64_t r = 1;
    for (int m = 1; m <= remaining_depth; ++m) {
        std::uint64_t power = 1;
        for (int b = 0; b < branching; ++b) {
            if (power > std::numeric_limits<std::uint64_t>::max() / r) {
                throw Error(ErrorCode::CountOverflow, "stopping-rule count overflows 64 bits");
            }
            power *= r;
        }
        r = power + 1;
    }
    return r;
}

int max_enumeration_depth(int branching) { return branching == 2 ? 4 : 2; }

StoppingTimeEnumerator::StoppingTimeEnumerator(const Lattice& lattice, const StoppingRule& start)
    : lattice_(&lattice) {
    if (!lattice.is_tree()) {
        throw Error(ErrorCode::InvalidGrid, "stopping-time enumeration requires the path tree");
    }
    const int b = lattice.branching();
    constexpr std::uint64_t kMaxTotal = 10'000'000;
    for (NodeId n = 0; n < lattice.size(); ++n) {
        if (!start.stops_at(n)) continue;
        const int depth = lattice.steps() - lattice.level(n);
        if (depth > max_enumeration_depth(b)) {
            throw Error(ErrorCode::CountOverflow,
                        "remaining depth " + std::to_string(depth) + " exceeds the enumeration limit of " +
                            std::to_string(max_enumeration_depth(b)),
                        lattice.path_word(n));
        }
        const std::uint64_t r = stopping_rule_count(depth, b);
        if (total_ > kMaxTotal / r) throw Error(ErrorCode::CountOverflow, "too many stopping rules to enumerate");
        total_ *= r;
        roots_.push_back(n);
        radix_.push_back(r);
    }
    digits_.assign(roots_.size(), 0);
}

void StoppingTimeEnumerator::decode(NodeId node, std::uint64_t index, std::vector<std::uint8_t>& flags) const {
    if (index == 0 || lattice_->is_terminal(node)) {
        flags[node] = 1;
        return;
    }
    const int depth = lattice_->steps() - lattice_->level(node);
    const std::uint64_t child_radix = stopping_rule_count(depth - 1, lattice_->branching());
    std::uint64_t rest = index - 1;
    for (NodeId child : lattice_->children(node)) {
        decode(child, rest % child_radix, flags);
        rest /= child_radix;
    }
}

bool StoppingTimeEnumerator::next(std::optional<StoppingRule>& out) {
    if (produced_ == total_) return false;
    std::vector<std::uint8_t> flags(lattice_->size(), 0);
    for (std::size_t i = 0; i < roots_.size(); ++i) decode(roots_[i], digits_[i], flags);
    out.emplace(*lattice_, std::move(flags));
    ++produced_;
    for (std::size_t i = 0; i < digits_.size(); ++i) {
        if (++digits_[i] < radix_[i]) break;
        digits_[i] = 0;
    }
    return true;
}

std::vector<StoppingRule> enumerate_stopping_times(const Lattice& lattice, const StoppingRule& start) {
    StoppingTimeEnumerator e(lattice, start);
    std::vector<StoppingRule> out;
    out.reserve(e.count());
    std::optional<StoppingRule> rule;
    while (e.next(rule)) out.push_back(std::move(*rule));
    return out;
}

BruteForceResult brute_force_value(const Lattice& lattice, const Driver& d, const LadlagProcess& xi,
                                   const StoppingRule& start) {
    StoppingTimeEnumerator e(lattice, start);
    const std::vector<NodeId> roots = start.stopping_nodes();
    NodeValues best = lattice.make_values(-std::numeric_limits<double>::infinity());
    std::vector<std::vector<std::uint8_t>> best_flags(roots.size());

    std::optional<StoppingRule> tau;
    std::uint64_t rules = 0;
    while (e.next(tau)) {
        ++rules;
        const NodeValues v = f_expectation(lattice, d, start, *tau, xi.point);
        for (std::size_t i = 0; i < roots.size(); ++i) {
            if (v[roots[i]] > best[roots[i]]) {
                best[roots[i]] = v[roots[i]];
                best_flags[i] = tau->flags();
            }
        }
    }

    // Subtrees below distinct S-nodes are disjoint; splice each one's argmax.
    std::vector<std::uint8_t> flags(lattice.size(), 0);
    for (std::size_t i = 0; i < roots.size(); ++i) {
        std::vector<NodeId> frontier{roots[i]};
        while (!frontier.empty()) {
            const NodeId n = frontier.back();
            frontier.pop_back();
            flags[n] = best_flags[i][n];
            for (NodeId child : lattice.children(n)) frontier.push_back(child);
        }
    }
    BruteForceResult result{lattice.make_values(), StoppingRule(lattice, std::move(flags)), rules};
    for (NodeId n : roots) result.value[n] = best[n];
    return result;
}

SupermartingaleReport check_strong_supermartingale(const Lattice& lattice, const Driver& d, const LadlagProcess& x) {
    SupermartingaleReport report;
    const LadlagReport rusc = validate_ladlag(lattice, x);
    if (!rusc.ok) {
        report.pass = false;
        report.witness = rusc.non_finite.empty() ? rusc.violations.front() : rusc.non_finite.front();
        report.reason = "process is not right upper-semicontinuous (X+ > X)";
        return report;
    }
    MertensAttempt attempt = try_mertens_decompose(lattice, d, x);
    if (!attempt.decomposition) {
        report.pass = false;
        report.witness = attempt.witness;
        report.reason = attempt.reason;
        return report;
    }
    report.decomposition = std::move(attempt.decomposition);
    return report;
}

MinimalityReport snell_minimality_check(const Lattice& lattice, const Driver& d, const LadlagProcess& xi,
                                        const LadlagProcess& candidate, const PicardOptions& options) {
    const SupermartingaleReport super = check_strong_supermartingale(lattice, d, candidate);
    if (!super.pass) {
        throw Error(ErrorCode::HypothesisViolated, "candidate is not a strong f-supermartingale: " + super.reason,
                    lattice.path_word(*super.witness));
    }
    for (NodeId n = 0; n < lattice.size(); ++n) {
        const bool below = candidate.point[n] < xi.point[n] - kHit ||
                           (!lattice.is_terminal(n) && candidate.right_limit[n] < xi.right_limit[n] - kHit);
        if (below) {
            throw Error(ErrorCode::HypothesisViolated, "candidate does not dominate the obstacle",
                        lattice.path_word(n));
        }
    }
    const RBSDEResult solved = solve_rbsde(lattice, d, xi, options);
    MinimalityReport report;
    report.min_margin = std::numeric_limits<double>::infinity();
    for (NodeId n = 0; n < lattice.size(); ++n) {
        double margin = candidate.point[n] - solved.solution.y[n];
        if (!lattice.is_terminal(n)) margin = std::min(margin, candidate.right_limit[n] - solved.solution.y_plus[n]);
        report.min_margin = std::min(report.min_margin, margin);
        if (margin < -kHit && !report.witness) report.witness = n;
    }
    report.pass = !report.witness.has_value();
    return report;
}

}  // namespace rbsde
