#ifndef RBSDE_LAB_RBSDE_HPP
#define RBSDE_LAB_RBSDE_HPP

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rbsde_lab/expectation.hpp"
#include "rbsde_lab/lattice.hpp"

namespace rbsde {

/**
 * Discrete solution (Y, Z, A, C) of the reflected BSDE.
 *
 * At a non-terminal node of level k:
 *   - `y` is the point value Y_k, `y_plus` the value on (t_k, t_{k+1});
 *   - `d_a` is the push of A over (t_k, t_{k+1}] (it is F_{t_k}-measurable
 *     and stored on the parent), `d_c` = Y_k - Y_plus_k is the right jump
 *     of C at t_k;
 *   - `driver_values` holds the f_k used by the step, so that
 *       Y_k = Y_{k+1} + f_k dt + dA_k + dC_k - Z_k dW - jump_k (1_{jump} - lambda dt)
 *     holds along every edge.
 * `a` (A_{t_k}, with A_0 = 0) and `c` (C_{t_k}, with C_{0-} = 0) are the
 * cumulative processes; they are path functionals and are only filled on the
 * path tree.
 */
struct RBSDESolution {
    NodeValues y;
    NodeValues y_plus;
    NodeValues z;
    NodeValues jump;
    NodeValues d_a;
    NodeValues d_c;
    NodeValues a;
    NodeValues c;
    NodeValues driver_values;
    LadlagProcess obstacle;
};

struct PicardOptions {
    std::optional<double> beta;  // nullopt selects the automatic beta
    double tolerance = 1e-10;
    int max_iterations = 50;
    SweepOrder order;
};

struct PicardDiagnostics {
    int iterations = 0;
    double beta = 0.0;
    bool beta_automatic = true;
    int beta_restarts = 0;
    /// sqrt(S2-norm(dY_plus) + H2-norm(dZ) [+ lambda H2-norm(dk)]) per iteration.
    std::vector<double> differences;
    /// differences[n] / differences[n-1]; length iterations - 1.
    std::vector<double> ratios;
    /// Distance between the last Picard iterate and the returned fixed point.
    double final_residual = 0.0;
    bool converged = false;
};

struct RBSDEResult {
    RBSDESolution solution;
    PicardDiagnostics diagnostics;
};

/// max(1, 8 K (K + 2) (T + 1)).
double automatic_beta(double lipschitz, double horizon);

/**
 * Reflected backward induction for a driver frozen to the node process
 * `driver_values` (levels 0..N-1). Per step: continuation
 * c = E[Y_{k+1}|F_k] + f_k dt, interval reflection Y_plus = max(c, xi_plus)
 * pushing dA = Y_plus - c, then point reflection Y = max(Y_plus, xi) pushing
 * dC = Y - Y_plus. Throws ObstacleInvalid when xi is not r.u.s.c.
 */
RBSDESolution solve_rbsde_frozen(const Lattice& lattice, const NodeValues& driver_values, const LadlagProcess& xi,
                                 const SweepOrder& order = {});

/**
 * Reflected BSDE with a Lipschitz driver. Runs the Picard iteration
 * (y, z) -> frozen solve with f_k = f(t_k, y_k, z_k) from (0, 0), recording
 * contraction diagnostics in a beta-norm, and returns its fixed point, which
 * is computed exactly by the per-node implicit reflected step
 * Y_plus = max(E[Y_{k+1}|F_k] + f(t_k, Y_plus, Z_k) dt, xi_plus).
 *
 * With the automatic beta, an observed ratio >= 0.9 doubles beta and
 * restarts (at most 5 times). Throws PicardDivergence when max_iterations
 * is reached with a last ratio >= 1, StepContractionFailure when K dt >= 1/2.
 */
RBSDEResult solve_rbsde(const Lattice& lattice, const Driver& d, const LadlagProcess& xi,
                        const PicardOptions& options = {});

/// Direct implicit reflected backward induction (the Picard fixed point).
RBSDESolution solve_rbsde_implicit(const Lattice& lattice, const Driver& d, const LadlagProcess& xi,
                                   const SweepOrder& order = {});

struct SkorokhodReport {
    bool ok = true;
    std::vector<NodeId> interval_violations;  // dA > 0 away from xi_plus
    std::vector<NodeId> point_violations;     // dC > 0 away from xi
    std::vector<NodeId> barrier_violations;   // Y < xi or Y_plus < xi_plus
    std::vector<NodeId> sign_violations;      // dA < 0 or dC < 0
    double max_budget_residual = 0.0;
    std::size_t interval_pushes = 0;
    std::size_t point_pushes = 0;
};

/// Minimality and barrier conditions, each at tolerance 1e-12, plus the
/// per-edge budget identity residual.
SkorokhodReport check_skorokhod(const Lattice& lattice, const RBSDESolution& sol, const LadlagProcess& xi);

/// Max over edges of |Y_k - (Y_{k+1} + f_k dt + dA_k + dC_k - Z_k dW - jump_k dN~)|.
double budget_residual(const Lattice& lattice, const RBSDESolution& sol);

struct MertensDecomposition {
    NodeValues z;
    NodeValues jump;
    NodeValues d_a;
    NodeValues d_c;
};

/**
 * (E^f-)Mertens decomposition of a process given by point values and right
 * limits: Z from the martingale component of X_{k+1}, dC_k = X_k - X_k^+,
 * dA_k = X_k^+ - E[X_{k+1}|F_k] - f(t_k, X_k^+, Z_k) dt. Throws
 * NotSupermartingale (with the witness node) when either push is below
 * -1e-12.
 */
MertensDecomposition mertens_decompose(const Lattice& lattice, const Driver& d, const LadlagProcess& x);

/// Non-throwing form used by report-style checkers.
struct MertensAttempt {
    std::optional<MertensDecomposition> decomposition;
    std::optional<NodeId> witness;
    std::string reason;
};
MertensAttempt try_mertens_decompose(const Lattice& lattice, const Driver& d, const LadlagProcess& x);

/// Semimartingale view of a solution for the change-of-variables check.
DiscreteSemimartingale to_semimartingale(const Lattice& lattice, const RBSDESolution& sol);

struct AprioriReport {
    double lhs = 0.0;  // ||Z1 - Z2||^2_beta
    double rhs = 0.0;  // eps^2 ||f1 - f2||^2_beta
    bool pass = true;
};

/**
 * ||Z1 - Z2||^2_beta <= eps^2 ||f1 - f2||^2_beta for two frozen-driver
 * solutions sharing lattice and obstacle, accepted with 5% slack. Throws
 * MismatchedInstances or HypothesisViolated (beta < 1/eps^2).
 */
AprioriReport apriori_z_check(const Lattice& lattice, const RBSDESolution& first, const RBSDESolution& second,
                              double epsilon, double beta);

struct ComparisonReport {
    bool pass = true;
    std::optional<NodeId> witness;
    double max_excess = 0.0;  // max of Y2 - Y1
};

/**
 * Checks Y2 <= Y1 + 1e-12 nodewise for solutions of (f1, xi1) and (f2, xi2).
 * Throws HypothesisViolated when xi2 <= xi1 (point and right limit) fails,
 * or when f2 <= f1 fails on `driver_samples` random (t, y, z, k) points.
 */
ComparisonReport compare_solutions(const Lattice& lattice, const Driver& first_driver, const RBSDESolution& first,
                                   const Driver& second_driver, const RBSDESolution& second,
                                   std::size_t driver_samples = 256, std::uint64_t seed = 7);

/// One CSV row per node: level,path_word,t,xi,xi_plus,Y,Y_plus,Z,dA,dC
/// (and k_jump in jump mode); 17 significant digits, empty for undefined.
void write_solution_csv(std::ostream& out, const Lattice& lattice, const RBSDESolution& sol);

}  // namespace rbsde

#endif  // RBSDE_LAB_RBSDE_HPP
