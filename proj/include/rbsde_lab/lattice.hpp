#ifndef RBSDE_LAB_LATTICE_HPP
#define RBSDE_LAB_LATTICE_HPP

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rbsde_lab/errors.hpp"

namespace rbsde {

using NodeId = std::uint32_t;

/// Node-indexed real values. Entries that are undefined hold NaN.
using NodeValues = std::vector<double>;

inline constexpr double kNoValue = std::numeric_limits<double>::quiet_NaN();

/// Uniform grid t_k = k * dt on [0, T].
class TimeGrid {
public:
    /// Throws InvalidGrid unless T > 0 and N >= 1.
    TimeGrid(double horizon, int steps);

    double horizon() const noexcept { return horizon_; }
    int steps() const noexcept { return steps_; }
    double dt() const noexcept { return dt_; }

    /// t_k; the last level returns T itself so that t_N == T bit-exactly.
    double time(int level) const noexcept {
        return level == steps_ ? horizon_ : level * dt_;
    }

private:
    double horizon_;
    int steps_;
    double dt_;
};

enum class LatticeMode { diffusion, diffusion_plus_jump };

/// Non-recombining path tree (general, path-dependent inputs) or a
/// recombining lattice keyed by branch counts (Markov inputs only).
enum class Topology { path_tree, recombining };

enum class Branch : std::uint8_t { up = 0, down = 1, jump = 2 };

char branch_letter(Branch b) noexcept;

/**
 * Discrete filtration carrying a two-point Brownian walk and, in jump mode,
 * a third branch on which a Poisson mark of size `jump_mark` arrives.
 *
 * Branch probabilities are identical at every node: 1/2 each for up/down in
 * diffusion mode; (1 - lambda*dt)/2, (1 - lambda*dt)/2, lambda*dt in jump
 * mode. The Brownian increment is +sqrt(dt) on up, -sqrt(dt) on down and 0
 * on the jump branch.
 *
 * Nodes are numbered level by level. On the path tree, node (k, i) has
 * children (k+1, b*i + c) for branch c, and its path word spells i in base b
 * with the first step as the most significant digit. The lattice is
 * immutable after construction.
 */
class Lattice {
public:
    struct Options {
        LatticeMode mode = LatticeMode::diffusion;
        double jump_intensity = 0.0;
        double jump_mark = 0.0;
        Topology topology = Topology::path_tree;
        std::size_t max_nodes = std::size_t{1} << 22;
    };

    /// Throws JumpProbabilityOverflow when lambda*dt >= 1 in jump mode and
    /// LatticeTooLarge when the node count exceeds `max_nodes`.
    static Lattice build(const TimeGrid& grid, const Options& options);
    static Lattice build(const TimeGrid& grid) { return build(grid, Options{}); }

    const TimeGrid& grid() const noexcept { return grid_; }
    int steps() const noexcept { return grid_.steps(); }
    double dt() const noexcept { return grid_.dt(); }
    double time(int level) const noexcept { return grid_.time(level); }

    LatticeMode mode() const noexcept { return mode_; }
    Topology topology() const noexcept { return topology_; }
    bool has_jumps() const noexcept { return mode_ == LatticeMode::diffusion_plus_jump; }
    bool is_tree() const noexcept { return topology_ == Topology::path_tree; }
    double jump_intensity() const noexcept { return jump_intensity_; }
    double jump_mark() const noexcept { return jump_mark_; }

    int branching() const noexcept { return has_jumps() ? 3 : 2; }
    std::span<const double> branch_probabilities() const noexcept {
        return {probabilities_.data(), static_cast<std::size_t>(branching())};
    }
    std::span<const double> brownian_increments() const noexcept {
        return {increments_.data(), static_cast<std::size_t>(branching())};
    }
    /// Compensated Poisson increment 1_{jump} - lambda*dt on branch b.
    double compensated_jump(int branch) const noexcept {
        return (branch == 2 ? 1.0 : 0.0) - jump_intensity_ * grid_.dt();
    }

    std::size_t size() const noexcept { return level_.size(); }
    NodeId root() const noexcept { return 0; }
    NodeId level_begin(int k) const noexcept { return offsets_[k]; }
    NodeId level_end(int k) const noexcept { return offsets_[k + 1]; }
    std::size_t level_size(int k) const noexcept { return offsets_[k + 1] - offsets_[k]; }

    int level(NodeId n) const noexcept { return level_[n]; }
    bool is_terminal(NodeId n) const noexcept { return level_[n] == steps(); }
    double time_of(NodeId n) const noexcept { return time(level_[n]); }

    /// Children ordered by branch (up, down[, jump]); empty at the terminal level.
    std::span<const NodeId> children(NodeId n) const noexcept;

    /// Probability of reaching the node from the root (sum over all paths
    /// on the recombining lattice).
    double probability(NodeId n) const noexcept { return reach_probability_[n]; }

    int up_count(NodeId n) const noexcept { return counts_[3 * n]; }
    int down_count(NodeId n) const noexcept { return counts_[3 * n + 1]; }
    int jump_count(NodeId n) const noexcept { return counts_[3 * n + 2]; }

    /// W at the node: (ups - downs) * sqrt(dt).
    double brownian_value(NodeId n) const noexcept;
    /// Markov state W + jump_mark * (number of jumps).
    double state(NodeId n) const noexcept;

    /// Path word over {u, d, j}. On the recombining lattice this is the
    /// canonical representative (all ups, then downs, then jumps).
    std::string path_word(NodeId n) const;
    std::optional<NodeId> find(std::string_view word) const;

    /// Along a tree path, the sequence of node ids from the root to `n`.
    std::vector<NodeId> path_to(NodeId n) const;

    NodeValues make_values(double fill = kNoValue) const { return NodeValues(size(), fill); }

private:
    Lattice(const TimeGrid& grid) : grid_(grid) {}

    TimeGrid grid_;
    LatticeMode mode_ = LatticeMode::diffusion;
    Topology topology_ = Topology::path_tree;
    double jump_intensity_ = 0.0;
    double jump_mark_ = 0.0;
    std::vector<double> probabilities_;
    std::vector<double> increments_;
    std::vector<NodeId> offsets_;
    std::vector<std::uint16_t> level_;
    std::vector<std::uint16_t> counts_;
    std::vector<NodeId> children_;
    std::vector<NodeId> parent_;
    std::vector<double> reach_probability_;
};

/**
 * Order in which nodes of one level are visited by backward sweeps. Every
 * node update reads only its children, so all orders give bit-identical
 * results; the option exists to let tests demonstrate that.
 */
struct SweepOrder {
    enum class Kind { natural, reversed, shuffled };
    Kind kind = Kind::natural;
    std::uint64_t seed = 0;
};

std::vector<NodeId> level_nodes(const Lattice& lattice, int level, const SweepOrder& order);

/// Probability-weighted average of the child values of `node`.
/// Throws MissingChildValue if any child value is NaN.
double conditional_expectation(const Lattice& lattice, std::span<const double> values, NodeId node);

/**
 * One-step martingale representation of the child values of `node`:
 * child = mean + z * dW_child + jump * (1_{jump} - lambda*dt), exactly.
 */
struct MartingaleComponent {
    double mean = 0.0;
    double z = 0.0;
    double jump = 0.0;
};

MartingaleComponent martingale_component(const Lattice& lattice, std::span<const double> values,
                                         NodeId node);

/**
 * Obstacle that need not be right-continuous: a point value per node and,
 * on levels 0..N-1, the value effective on the open interval (t_k, t_{k+1}).
 */
struct LadlagProcess {
    NodeValues point;
    NodeValues right_limit;

    static LadlagProcess constant(const Lattice& lattice, double value);
    /// Right limits equal to the point values.
    static LadlagProcess right_continuous(const Lattice& lattice, NodeValues point);
};

struct LadlagReport {
    bool ok = true;
    std::vector<NodeId> violations;
    std::vector<NodeId> non_finite;
};

/// ok iff right_limit <= point at every non-terminal node and every value is finite.
LadlagReport validate_ladlag(const Lattice& lattice, const LadlagProcess& xi);

/**
 * Optional semimartingale on the lattice, stored as path values together
 * with the increments that are meant to generate them:
 *
 *   value_plus_k = value_k - right_jump_k
 *   value_{k+1}  = value_plus_k + drift_k + z_k dW + jump_k (1_{jump} - lambda dt)
 *
 * `drift_k` is the finite-variation increment over (t_k, t_{k+1}].
 */
struct DiscreteSemimartingale {
    NodeValues value;
    NodeValues value_plus;
    NodeValues z;
    NodeValues jump;
    NodeValues drift;
    NodeValues right_jump;
};

/**
 * Evaluates e^{beta t} Y_t^2 minus the Gal'chouk-Lenglart expansion along
 * every path and at every time, returning the largest absolute residual.
 *
 * Every integral is taken exactly for the piecewise-constant path, so the
 * identity is an exact telescoping sum. Throws InconsistentDecomposition
 * when the increments do not reproduce the stored path values.
 */
double galchouk_lenglart_check(const Lattice& lattice, const DiscreteSemimartingale& s, double beta);

}  // namespace rbsde

#endif  // RBSDE_LAB_LATTICE_HPP
