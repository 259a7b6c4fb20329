#include "rbsde_lab/stopping_rule.hpp"

namespace rbsde {

StoppingRule::StoppingRule(const Lattice& lattice, std::vector<std::uint8_t> flags) : flags_(std::move(flags)) {
    if (flags_.size() != lattice.size()) {
        throw Error(ErrorCode::MismatchedInstances, "stopping rule size does not match the lattice");
    }
    const int n_steps = lattice.steps();
    for (NodeId n = lattice.level_begin(n_steps); n < lattice.level_end(n_steps); ++n) flags_[n] = 1;

    // live[n]: some path reaches n without having stopped strictly before it.
    std::vector<std::uint8_t> live(lattice.size(), 0);
    live[lattice.root()] = 1;
    phase_.assign(lattice.size(), Phase::after);
    for (int k = 0; k <= n_steps; ++k) {
        for (NodeId n = lattice.level_begin(k); n < lattice.level_end(k); ++n) {
            if (!live[n]) continue;
            if (flags_[n]) {
                phase_[n] = Phase::at;
                continue;
            }
            phase_[n] = Phase::before;
            for (NodeId child : lattice.children(n)) live[child] = 1;
        }
    }
}

StoppingRule StoppingRule::terminal(const Lattice& lattice) {
    return StoppingRule(lattice, std::vector<std::uint8_t>(lattice.size(), 0));
}

StoppingRule StoppingRule::at_level(const Lattice& lattice, int level) {
    std::vector<std::uint8_t> flags(lattice.size(), 0);
    if (level < 0 || level > lattice.steps()) {
        throw Error(ErrorCode::InvalidGrid, "stopping level outside 0..N");
    }
    for (NodeId n = lattice.level_begin(level); n < lattice.level_end(level); ++n) flags[n] = 1;
    return StoppingRule(lattice, std::move(flags));
}

StoppingRule StoppingRule::from_words(const Lattice& lattice, const std::vector<std::string>& words) {
    std::vector<std::uint8_t> flags(lattice.size(), 0);
    for (const auto& w : words) {
        auto node = lattice.find(w);
        if (!node) throw Error(ErrorCode::ConfigParseError, "unknown path word '" + w + "'");
        flags[*node] = 1;
    }
    return StoppingRule(lattice, std::move(flags));
}

std::vector<NodeId> StoppingRule::stopping_nodes() const {
    std::vector<NodeId> out;
    for (NodeId n = 0; n < phase_.size(); ++n) {
        if (phase_[n] == Phase::at) out.push_back(n);
    }
    return out;
}

std::vector<std::string> StoppingRule::stopped_words(const Lattice& lattice) const {
    std::vector<std::string> out;
    for (NodeId n : stopping_nodes()) out.push_back(lattice.path_word(n));
    return out;
}

bool StoppingRule::precedes(const StoppingRule& later) const noexcept {
    // Violated when `later` stops at a node this rule has not reached yet.
    for (std::size_t n = 0; n < phase_.size(); ++n) {
        if (later.phase_[n] == Phase::at && phase_[n] == Phase::before) return false;
    }
    return true;
}

}  // namespace rbsde
