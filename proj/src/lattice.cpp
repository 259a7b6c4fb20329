#include "rbsde_lab/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace rbsde {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidGrid: return "InvalidGrid";
        case ErrorCode::JumpProbabilityOverflow: return "JumpProbabilityOverflow";
        case ErrorCode::LatticeTooLarge: return "LatticeTooLarge";
        case ErrorCode::MissingChildValue: return "MissingChildValue";
        case ErrorCode::InconsistentDecomposition: return "InconsistentDecomposition";
        case ErrorCode::NonFiniteDriverValue: return "NonFiniteDriverValue";
        case ErrorCode::StepContractionFailure: return "StepContractionFailure";
        case ErrorCode::MissingTerminalValue: return "MissingTerminalValue";
        case ErrorCode::StoppingOrderViolation: return "StoppingOrderViolation";
        case ErrorCode::ObstacleInvalid: return "ObstacleInvalid";
        case ErrorCode::PicardDivergence: return "PicardDivergence";
        case ErrorCode::NotSupermartingale: return "NotSupermartingale";
        case ErrorCode::MismatchedInstances: return "MismatchedInstances";
        case ErrorCode::HypothesisViolated: return "HypothesisViolated";
        case ErrorCode::CountOverflow: return "CountOverflow";
        case ErrorCode::ConfigParseError: return "ConfigParseError";
    }
    return "Unknown";
}

TimeGrid::TimeGrid(double horizon, int steps) : horizon_(horizon), steps_(steps), dt_(0.0) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) {
        throw Error(ErrorCode::InvalidGrid, "horizon T must be a positive finite number");
    }
    if (steps < 1) {
        throw Error(ErrorCode::InvalidGrid, "number of steps N must be at least 1");
    }
    if (steps > 65535) {
        throw Error(ErrorCode::InvalidGrid, "number of steps N exceeds 65535");
    }
    dt_ = horizon / steps;
}

char branch_letter(Branch b) noexcept {
    switch (b) {
        case Branch::up: return 'u';
        case Branch::down: return 'd';
        case Branch::jump: return 'j';
    }
    return '?';
}

namespace {

// Index of the recombining node with `jumps` jumps and `downs` downs at level k.
std::size_t recombining_index(int k, int jumps, int downs, bool with_jumps) {
    if (!with_jumps) return static_cast<std::size_t>(downs);
    // Blocks of decreasing size (k+1), k, ..., one per jump count.
    std::size_t offset = 0;
    for (int m = 0; m < jumps; ++m) offset += static_cast<std::size_t>(k - m + 1);
    return offset + static_cast<std::size_t>(downs);
}

}  // namespace

Lattice Lattice::build(const TimeGrid& grid, const Options& options) {
    Lattice lattice(grid);
    lattice.mode_ = options.mode;
    lattice.topology_ = options.topology;
    const int n_steps = grid.steps();
    const double dt = grid.dt();
    const double sqrt_dt = std::sqrt(dt);

    if (options.mode == LatticeMode::diffusion_plus_jump) {
        if (!(options.jump_intensity >= 0.0) || !std::isfinite(options.jump_mark)) {
            throw Error(ErrorCode::InvalidGrid, "jump intensity must be nonnegative and the mark finite");
        }
        const double p_jump = options.jump_intensity * dt;
        if (p_jump >= 1.0) {
            throw Error(ErrorCode::JumpProbabilityOverflow,
                        "lambda*dt = " + std::to_string(p_jump) + " must be < 1");
        }
        lattice.jump_intensity_ = options.jump_intensity;
        lattice.jump_mark_ = options.jump_mark;
        lattice.probabilities_ = {(1.0 - p_jump) / 2.0, (1.0 - p_jump) / 2.0, p_jump};
        lattice.increments_ = {sqrt_dt, -sqrt_dt, 0.0};
    } else {
        lattice.probabilities_ = {0.5, 0.5};
        lattice.increments_ = {sqrt_dt, -sqrt_dt};
    }

    const int b = lattice.branching();
    const bool jumps = lattice.has_jumps();

    // Level sizes, checked against the node budget before allocating.
    std::vector<std::size_t> sizes(static_cast<std::size_t>(n_steps) + 1);
    std::size_t total = 0;
    for (int k = 0; k <= n_steps; ++k) {
        std::size_t s = 0;
        if (options.topology == Topology::path_tree) {
            double approx = std::pow(static_cast<double>(b), k);
            if (approx > static_cast<double>(options.max_nodes)) {
                throw Error(ErrorCode::LatticeTooLarge, "path tree with " + std::to_string(n_steps) +
                                                            " steps exceeds the node budget");
            }
            s = static_cast<std::size_t>(approx);
        } else {
            s = jumps ? static_cast<std::size_t>(k + 1) * (k + 2) / 2 : static_cast<std::size_t>(k + 1);
        }
        sizes[k] = s;
        total += s;
        if (total > options.max_nodes) {
            throw Error(ErrorCode::LatticeTooLarge, "lattice exceeds the node budget of " +
                                                        std::to_string(options.max_nodes) + " nodes");
        }
    }

    lattice.offsets_.assign(static_cast<std::size_t>(n_steps) + 2, 0);
    for (int k = 0; k <= n_steps; ++k) {
        lattice.offsets_[k + 1] = lattice.offsets_[k] + static_cast<NodeId>(sizes[k]);
    }
    lattice.level_.assign(total, 0);
    lattice.counts_.assign(3 * total, 0);
    lattice.reach_probability_.assign(total, 0.0);
    lattice.children_.assign(static_cast<std::size_t>(lattice.offsets_[n_steps]) * b, 0);
    if (options.topology == Topology::path_tree) lattice.parent_.assign(total, 0);

    lattice.reach_probability_[0] = 1.0;
    for (int k = 0; k <= n_steps; ++k) {
        for (NodeId n = lattice.offsets_[k]; n < lattice.offsets_[k + 1]; ++n) {
            lattice.level_[n] = static_cast<std::uint16_t>(k);
        }
    }

    for (int k = 0; k < n_steps; ++k) {
        const NodeId begin = lattice.offsets_[k];
        const NodeId next_begin = lattice.offsets_[k + 1];
        for (NodeId n = begin; n < next_begin; ++n) {
            const int ups = lattice.up_count(n);
            const int downs = lattice.down_count(n);
            const int js = lattice.jump_count(n);
            for (int c = 0; c < b; ++c) {
                NodeId child = 0;
                if (options.topology == Topology::path_tree) {
                    child = next_begin + static_cast<NodeId>(b * (n - begin) + c);
                    lattice.parent_[child] = n;
                } else {
                    const int child_downs = downs + (c == 1 ? 1 : 0);
                    const int child_jumps = js + (c == 2 ? 1 : 0);
                    child = next_begin +
                            static_cast<NodeId>(recombining_index(k + 1, child_jumps, child_downs, jumps));
                }
                lattice.children_[static_cast<std::size_t>(n) * b + c] = child;
                lattice.counts_[3 * child] = static_cast<std::uint16_t>(ups + (c == 0 ? 1 : 0));
                lattice.counts_[3 * child + 1] = static_cast<std::uint16_t>(downs + (c == 1 ? 1 : 0));
                lattice.counts_[3 * child + 2] = static_cast<std::uint16_t>(js + (c == 2 ? 1 : 0));
                lattice.reach_probability_[child] += lattice.reach_probability_[n] * lattice.probabilities_[c];
            }
        }
    }
    return lattice;
}

std::span<const NodeId> Lattice::children(NodeId n) const noexcept {
    if (is_terminal(n)) return {};
    const auto b = static_cast<std::size_t>(branching());
    return {children_.data() + static_cast<std::size_t>(n) * b, b};
}

double Lattice::brownian_value(NodeId n) const noexcept {
    return (up_count(n) - down_count(n)) * increments_[0];
}

double Lattice::state(NodeId n) const noexcept {
    return brownian_value(n) + jump_mark_ * jump_count(n);
}

std::string Lattice::path_word(NodeId n) const {
    const int k = level(n);
    std::string word(static_cast<std::size_t>(k), ' ');
    if (is_tree()) {
        std::size_t index = n - offsets_[k];
        const auto b = static_cast<std::size_t>(branching());
        for (int pos = k - 1; pos >= 0; --pos) {
            word[static_cast<std::size_t>(pos)] = branch_letter(static_cast<Branch>(index % b));
            index /= b;
        }
    } else {
        std::size_t pos = 0;
        for (int i = 0; i < up_count(n); ++i) word[pos++] = 'u';
        for (int i = 0; i < down_count(n); ++i) word[pos++] = 'd';
        for (int i = 0; i < jump_count(n); ++i) word[pos++] = 'j';
    }
    return word;
}

std::optional<NodeId> Lattice::find(std::string_view word) const {
    if (word.size() > static_cast<std::size_t>(steps())) return std::nullopt;
    NodeId n = root();
    for (char letter : word) {
        int c = -1;
        if (letter == 'u') c = 0;
        else if (letter == 'd') c = 1;
        else if (letter == 'j' && has_jumps()) c = 2;
        if (c < 0) return std::nullopt;
        n = children(n)[static_cast<std::size_t>(c)];
    }
    return n;
}

std::vector<NodeId> Lattice::path_to(NodeId n) const {
    std::vector<NodeId> path;
    if (is_tree()) {
        path.push_back(n);
        while (n != root()) {
            n = parent_[n];
            path.push_back(n);
        }
        std::reverse(path.begin(), path.end());
    } else {
        const std::string word = path_word(n);
        NodeId cur = root();
        path.push_back(cur);
        for (char letter : word) {
            const int c = letter == 'u' ? 0 : (letter == 'd' ? 1 : 2);
            cur = children(cur)[static_cast<std::size_t>(c)];
            path.push_back(cur);
        }
    }
    return path;
}

std::vector<NodeId> level_nodes(const Lattice& lattice, int level, const SweepOrder& order) {
    std::vector<NodeId> nodes(lattice.level_size(level));
    std::iota(nodes.begin(), nodes.end(), lattice.level_begin(level));
    if (order.kind == SweepOrder::Kind::reversed) {
        std::reverse(nodes.begin(), nodes.end());
    } else if (order.kind == SweepOrder::Kind::shuffled) {
        std::mt19937_64 rng(order.seed + static_cast<std::uint64_t>(level));
        std::shuffle(nodes.begin(), nodes.end(), rng);
    }
    return nodes;
}

double conditional_expectation(const Lattice& lattice, std::span<const double> values, NodeId node) {
    const auto kids = lattice.children(node);
    const auto probs = lattice.branch_probabilities();
    double mean = 0.0;
    for (std::size_t c = 0; c < kids.size(); ++c) {
        const double v = values[kids[c]];
        if (std::isnan(v)) {
            throw Error(ErrorCode::MissingChildValue, "child value missing below node",
                        lattice.path_word(node));
        }
        mean += probs[c] * v;
    }
    return mean;
}

MartingaleComponent martingale_component(const Lattice& lattice, std::span<const double> values,
                                         NodeId node) {
    MartingaleComponent out;
    out.mean = conditional_expectation(lattice, values, node);
    const auto kids = lattice.children(node);
    const double up = values[kids[0]];
    const double down = values[kids[1]];
    out.z = (up - down) / (2.0 * lattice.brownian_increments()[0]);
    if (lattice.has_jumps()) {
        out.jump = values[kids[2]] - 0.5 * (up + down);
    }
    return out;
}

LadlagProcess LadlagProcess::constant(const Lattice& lattice, double value) {
    LadlagProcess xi;
    xi.point = lattice.make_values(value);
    xi.right_limit = lattice.make_values(value);
    const int n = lattice.steps();
    for (NodeId id = lattice.level_begin(n); id < lattice.level_end(n); ++id) xi.right_limit[id] = kNoValue;
    return xi;
}

LadlagProcess LadlagProcess::right_continuous(const Lattice& lattice, NodeValues point) {
    LadlagProcess xi;
    xi.right_limit = point;
    xi.point = std::move(point);
    const int n = lattice.steps();
    for (NodeId id = lattice.level_begin(n); id < lattice.level_end(n); ++id) xi.right_limit[id] = kNoValue;
    return xi;
}

LadlagReport validate_ladlag(const Lattice& lattice, const LadlagProcess& xi) {
    LadlagReport report;
    if (xi.point.size() != lattice.size() || xi.right_limit.size() != lattice.size()) {
        throw Error(ErrorCode::ObstacleInvalid, "obstacle size does not match the lattice");
    }
    const NodeId terminal_begin = lattice.level_begin(lattice.steps());
    for (NodeId n = 0; n < lattice.size(); ++n) {
        if (!std::isfinite(xi.point[n]) || (n < terminal_begin && !std::isfinite(xi.right_limit[n]))) {
            report.non_finite.push_back(n);
            continue;
        }
        if (n < terminal_begin && xi.right_limit[n] > xi.point[n]) report.violations.push_back(n);
    }
    report.ok = report.violations.empty() && report.non_finite.empty();
    return report;
}

double galchouk_lenglart_check(const Lattice& lattice, const DiscreteSemimartingale& s, double beta) {
    const std::size_t size = lattice.size();
    if (s.value.size() != size || s.value_plus.size() != size || s.z.size() != size ||
        s.drift.size() != size || s.right_jump.size() != size ||
        (lattice.has_jumps() && s.jump.size() != size)) {
        throw Error(ErrorCode::InconsistentDecomposition, "semimartingale arrays do not match the lattice");
    }
    const auto dw = lattice.brownian_increments();

    // Running sums of the expansion over all paths into a node; on the
    // recombining lattice several paths merge, so keep the extremes.
    std::vector<double> lo(size, std::numeric_limits<double>::infinity());
    std::vector<double> hi(size, -std::numeric_limits<double>::infinity());
    const double y0 = s.value[lattice.root()];
    lo[lattice.root()] = hi[lattice.root()] = y0 * y0;

    double worst = 0.0;
    for (int k = 0; k < lattice.steps(); ++k) {
        const double w_now = std::exp(beta * lattice.time(k));
        const double w_next = std::exp(beta * lattice.time(k + 1));
        for (NodeId n = lattice.level_begin(k); n < lattice.level_end(k); ++n) {
            const double y = s.value[n];
            const double c = s.right_jump[n];
            const double y_plus = s.value_plus[n];
            const double scale = std::max({1.0, std::abs(y), std::abs(y_plus)});
            if (std::abs(y_plus - (y - c)) > 1e-11 * scale) {
                throw Error(ErrorCode::InconsistentDecomposition, "right jump does not reproduce value_plus",
                            lattice.path_word(n));
            }
            // Right jump at t_k: 2 e^{bt} Y dB_{+} + e^{bt} (dB_{+})^2 with dB_{+} = -c.
            const double right_terms = w_now * (-2.0 * y * c + c * c);
            const double plus_lo = lo[n] + right_terms;
            const double plus_hi = hi[n] + right_terms;
            const double target_plus = w_now * y_plus * y_plus;
            worst = std::max({worst, std::abs(target_plus - plus_lo), std::abs(target_plus - plus_hi)});

            // Exact integral of beta e^{bs} Y_s^2 over (t_k, t_{k+1}] for Y_s = value_plus.
            const double integral = y_plus * y_plus * (w_next - w_now);
            const auto kids = lattice.children(n);
            for (std::size_t b = 0; b < kids.size(); ++b) {
                const NodeId child = kids[b];
                double d = s.drift[n] + s.z[n] * dw[b];
                if (lattice.has_jumps()) d += s.jump[n] * lattice.compensated_jump(static_cast<int>(b));
                const double y_child = s.value[child];
                if (std::abs(y_child - (y_plus + d)) > 1e-11 * std::max(scale, std::abs(y_child))) {
                    throw Error(ErrorCode::InconsistentDecomposition,
                                "increments do not reproduce the child value", lattice.path_word(child));
                }
                const double step_terms = integral + 2.0 * w_next * y_plus * d + w_next * d * d;
                lo[child] = std::min(lo[child], plus_lo + step_terms);
                hi[child] = std::max(hi[child], plus_hi + step_terms);
            }
        }
        const double w = std::exp(beta * lattice.time(k + 1));
        for (NodeId n = lattice.level_begin(k + 1); n < lattice.level_end(k + 1); ++n) {
            const double target = w * s.value[n] * s.value[n];
            worst = std::max({worst, std::abs(target - lo[n]), std::abs(target - hi[n])});
        }
    }
    return worst;
}

}  // namespace rbsde
