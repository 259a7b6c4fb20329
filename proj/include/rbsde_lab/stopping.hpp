#ifndef RBSDE_LAB_STOPPING_HPP
#define RBSDE_LAB_STOPPING_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rbsde_lab/expectation.hpp"
#include "rbsde_lab/rbsde.hpp"
#include "rbsde_lab/stopping_rule.hpp"

namespace rbsde {

struct StoppingCertificate {
    enum class Kind { exact, epsilon };
    Kind kind = Kind::exact;
    double epsilon = 0.0;
    double constant = 1.0;  // L
};

/// Optimal-stopping value at the nodes where S stops, and the associated
/// minimal risk -Y_S (NaN away from S).
struct StoppingReport {
    NodeValues value;
    NodeValues risk;
    StoppingRule rule;
    StoppingCertificate certificate;
    PicardDiagnostics diagnostics;
    RBSDESolution solution;
};

/// Default constant for the epsilon-optimality bound: e^{K T}.
double default_epsilon_constant(double lipschitz, double horizon);

/// Y_S from the reflected BSDE and risk = -Y_S; the reported rule is the
/// first hitting time of the obstacle after S.
StoppingReport value_and_risk(const Lattice& lattice, const Driver& d, const LadlagProcess& xi,
                              const StoppingRule& start, const PicardOptions& options = {});

/// First node at or after S with Y_k <= xi_k + epsilon.
StoppingRule epsilon_optimal_time(const Lattice& lattice, const RBSDESolution& sol, const LadlagProcess& xi,
                                  const StoppingRule& start, double epsilon);

/// First node at or after S with Y_k = xi_k (to 1e-12).
StoppingRule optimal_time(const Lattice& lattice, const RBSDESolution& sol, const LadlagProcess& xi,
                          const StoppingRule& start);

struct OptimalityReport {
    enum class Reason { none, not_at_obstacle, not_martingale };
    bool pass = true;
    Reason reason = Reason::none;
    std::optional<NodeId> witness;
    double deviation = 0.0;
};

std::string to_string(OptimalityReport::Reason reason);

/**
 * Optimality criterion: (a) Y = xi at the nodes where tau stops, and
 * (b) E^f_{S,tau}(Y_tau) = Y_S, both to 1e-10. Throws
 * StoppingOrderViolation unless S <= tau.
 */
OptimalityReport check_optimality(const Lattice& lattice, const Driver& d, const LadlagProcess& xi,
                                  const RBSDESolution& sol, const StoppingRule& tau, const StoppingRule& start);

/// Number of adapted stopping rules on a subtree of the given remaining
/// depth: R(0) = 1, R(m) = 1 + R(m-1)^branching.
std::uint64_t stopping_rule_count(int remaining_depth, int branching);

/// Deepest remaining depth the enumeration accepts: 4 on binary trees, 2 on
/// trees with a jump branch.
int max_enumeration_depth(int branching);

/**
 * Streams every adapted stopping rule tau with S <= tau <= T exactly once.
 * Rules are indexed in mixed radix over the nodes where S stops; within a
 * subtree, index 0 stops at its root and the remaining indices continue and
 * combine the children's sub-rules.
 */
class StoppingTimeEnumerator {
public:
    /// Throws CountOverflow when the remaining depth below some S-node
    /// exceeds `max_enumeration_depth` or the total exceeds 10^7, and
    /// InvalidGrid on a recombining lattice.
    StoppingTimeEnumerator(const Lattice& lattice, const StoppingRule& start);

    std::uint64_t count() const noexcept { return total_; }
    /// Writes the next rule into `out`; false once every rule was produced.
    bool next(std::optional<StoppingRule>& out);

private:
    void decode(NodeId node, std::uint64_t index, std::vector<std::uint8_t>& flags) const;

    const Lattice* lattice_;
    std::vector<NodeId> roots_;
    std::vector<std::uint64_t> radix_;
    std::vector<std::uint64_t> digits_;
    std::uint64_t total_ = 1;
    std::uint64_t produced_ = 0;
};

/// Convenience: all rules in stream order.
std::vector<StoppingRule> enumerate_stopping_times(const Lattice& lattice, const StoppingRule& start);

struct BruteForceResult {
    NodeValues value;           // max over tau of E^f_{S,tau}(xi_tau) at S-nodes
    StoppingRule best;          // nodewise argmax, assembled subtree by subtree
    std::uint64_t rules = 0;
};

/// Oracle for the optimal-stopping value by exhaustive enumeration; uses
/// point values xi_k at the stopping nodes.
BruteForceResult brute_force_value(const Lattice& lattice, const Driver& d, const LadlagProcess& xi,
                                   const StoppingRule& start);

struct SupermartingaleReport {
    bool pass = true;
    std::optional<NodeId> witness;
    std::string reason;
    std::optional<MertensDecomposition> decomposition;
};

/// Passes iff X^+ <= X nodewise and the E^f-Mertens decomposition exists.
SupermartingaleReport check_strong_supermartingale(const Lattice& lattice, const Driver& d, const LadlagProcess& x);

struct MinimalityReport {
    bool pass = true;
    std::optional<NodeId> witness;
    double min_margin = 0.0;  // min over nodes of X - Y
};

/**
 * For a strong E^f-supermartingale candidate X >= xi (point values and
 * right limits), checks X >= Y - 1e-12 where Y is the reflected-BSDE value.
 * Throws HypothesisViolated when the candidate is not admissible.
 */
MinimalityReport snell_minimality_check(const Lattice& lattice, const Driver& d, const LadlagProcess& xi,
                                        const LadlagProcess& candidate, const PicardOptions& options = {});

}  // namespace rbsde

#endif  // RBSDE_LAB_STOPPING_HPP
