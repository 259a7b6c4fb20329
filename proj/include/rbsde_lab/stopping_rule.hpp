#ifndef RBSDE_LAB_STOPPING_RULE_HPP
#define RBSDE_LAB_STOPPING_RULE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "rbsde_lab/lattice.hpp"

namespace rbsde {

/**
 * Adapted stop/continue labelling of lattice nodes. The stopping time it
 * represents is the first flagged node along each path; the terminal level
 * is always flagged.
 *
 * Each node is classified relative to the rule: `before` (the path has not
 * stopped yet and does not stop here), `at` (the path stops here) or
 * `after` (every path reaching the node has already stopped).
 */
class StoppingRule {
public:
    enum class Phase : std::uint8_t { before = 0, at = 1, after = 2 };

    /// Rule built from per-node flags; terminal flags are forced on.
    StoppingRule(const Lattice& lattice, std::vector<std::uint8_t> flags);

    static StoppingRule terminal(const Lattice& lattice);
    static StoppingRule at_level(const Lattice& lattice, int level);
    /// Stop at exactly the listed path words (plus the terminal level).
    static StoppingRule from_words(const Lattice& lattice, const std::vector<std::string>& words);

    bool flagged(NodeId n) const noexcept { return flags_[n] != 0; }
    Phase phase(NodeId n) const noexcept { return phase_[n]; }
    bool stops_at(NodeId n) const noexcept { return phase_[n] == Phase::at; }
    const std::vector<std::uint8_t>& flags() const noexcept { return flags_; }
    std::size_t size() const noexcept { return flags_.size(); }

    /// Nodes where the rule stops, in node order.
    std::vector<NodeId> stopping_nodes() const;
    /// Path words of the stopping nodes; the serialized form of the rule.
    std::vector<std::string> stopped_words(const Lattice& lattice) const;

    /// True iff this rule never stops strictly after `later` along any path.
    bool precedes(const StoppingRule& later) const noexcept;

    friend bool operator==(const StoppingRule& a, const StoppingRule& b) { return a.phase_ == b.phase_; }

private:
    std::vector<std::uint8_t> flags_;
    std::vector<Phase> phase_;
};

}  // namespace rbsde

#endif  // RBSDE_LAB_STOPPING_RULE_HPP
