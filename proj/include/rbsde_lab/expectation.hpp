#ifndef RBSDE_LAB_EXPECTATION_HPP
#define RBSDE_LAB_EXPECTATION_HPP

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rbsde_lab/lattice.hpp"
#include "rbsde_lab/stopping_rule.hpp"

namespace rbsde {

/**
 * Jump-monotonicity certificate for a driver with a scalar jump argument:
 * f(t,y,z,k1) - f(t,y,z,k2) >= lambda * theta * (k1 - k2), with theta in
 * [-1, bound]. The factor lambda is the pairing against the single-atom
 * mark measure.
 */
struct JumpMonotonicitySpec {
    std::function<double(double t, double y, double z, double k1, double k2)> theta;
    double bound = 0.0;
};

enum class DriverKind { zero, linear, custom };

struct DriverDependence {
    bool y = false;
    bool z = false;
    bool jump = false;
};

/**
 * Generator f(t, y, z, k) of a BSDE together with its declared Lipschitz
 * constant. For the linear kind, f = a*y + b*z + c exactly.
 */
struct Driver {
    using Function = std::function<double(double t, double y, double z, double k)>;

    std::string name;
    DriverKind kind = DriverKind::custom;
    std::array<double, 3> coefficients{};  // a, b, c for the linear kind
    double lipschitz = 0.0;
    DriverDependence depends_on;
    Function function;
    std::optional<JumpMonotonicitySpec> jump_monotonicity;

    double operator()(double t, double y, double z, double k = 0.0) const { return function(t, y, z, k); }
    bool depends_on_solution() const noexcept { return depends_on.y || depends_on.z || depends_on.jump; }

    static Driver zero();
    static Driver linear(double a, double b, double c);
    /// f = scale * |z|, Lipschitz constant `scale`.
    static Driver abs_z(double scale = 1.0);
    static Driver custom(std::string name, Function function, double lipschitz, DriverDependence depends_on);
};

using DriverParams = std::map<std::string, double>;

/**
 * Looks up a driver by its configuration name: "zero", "linear", "abs_z" or
 * "custom:<id>" for one of the compiled-in ids (see `custom_driver_ids`).
 * `declared_k`, when given, overrides the default Lipschitz constant.
 * Throws ConfigParseError for unknown names or missing parameters.
 */
Driver make_driver(const std::string& kind, const DriverParams& params, std::optional<double> declared_k,
                   double jump_intensity = 0.0);

std::vector<std::string> custom_driver_ids();

/// Ranges from which validators draw their samples.
struct SamplingBox {
    double t_max = 1.0;
    double y_abs = 10.0;
    double z_abs = 10.0;
    double k_abs = 10.0;
    /// Weight of |k1 - k2| in the Lipschitz bound (sqrt(lambda) for the
    /// single-atom mark measure).
    double jump_weight = 1.0;
};

struct DriverSample {
    double t, y1, z1, k1, y2, z2, k2;
    double ratio;
};

struct DriverReport {
    bool ok = true;
    double empirical_k = 0.0;
    std::size_t samples = 0;
    std::vector<DriverSample> violations;  // at most 16 are kept
    std::size_t violation_count = 0;
};

/// Samples (t, y1, z1, y2, z2) tuples (and k when the driver uses it) and
/// checks |f1 - f2| <= K (|dy| + |dz| + w|dk|). Throws NonFiniteDriverValue.
DriverReport validate_driver(const Driver& d, std::size_t sample_count, std::uint64_t seed,
                             const SamplingBox& box = {});

struct JumpMonotonicityReport {
    bool ok = true;
    std::size_t samples = 0;
    std::size_t theta_out_of_range = 0;
    std::size_t inequality_violations = 0;
    std::string first_violation;
};

/// Checks theta in [-1, bound] and f(k1) - f(k2) >= lambda theta (k1 - k2)
/// on random samples. A driver without a declared spec is checked with
/// theta = 0.
JumpMonotonicityReport check_jump_monotonicity(const Driver& d, double jump_intensity, std::size_t sample_count,
                                               std::uint64_t seed, const SamplingBox& box = {});

struct StepOptions {
    double tolerance = 1e-13;
    int max_iterations = 200;
};

/**
 * Solves y = max(mean + f(t, y, z, k) dt, lower) by fixed-point iteration
 * and returns the driver value f(t, y*, z, k) at the fixed point. Pass
 * lower = -inf for the unreflected step. Throws StepContractionFailure when
 * the iteration does not settle.
 */
double implicit_driver_value(const Driver& d, double t, double dt, double mean, double z, double k, double lower,
                             const StepOptions& options = {});

/// Solution of a BSDE on [0, tau]; nodes strictly after tau hold NaN, and Z
/// and the jump coefficient are NaN at the nodes where tau stops.
struct BSDESolution {
    NodeValues y;
    NodeValues z;
    NodeValues jump;
};

/**
 * Backward induction with the implicit step y = E[Y_{k+1}|F_k] + f(t_k, y,
 * Z_k, k_k) dt, starting from `terminal` at the nodes where `tau` stops.
 * Throws StepContractionFailure (K dt >= 1/2) or MissingTerminalValue.
 */
BSDESolution solve_bsde(const Lattice& lattice, const Driver& d, const StoppingRule& tau,
                        const NodeValues& terminal, const SweepOrder& order = {});

/// E^f_{sigma,tau}(terminal): the BSDE value read at the nodes where sigma
/// stops (NaN elsewhere). Throws StoppingOrderViolation unless sigma <= tau.
NodeValues f_expectation(const Lattice& lattice, const Driver& d, const StoppingRule& sigma,
                         const StoppingRule& tau, const NodeValues& terminal);

enum class NormFlavor { h2, s2 };

/**
 * Exponentially weighted norms (squared). H2: E[sum_{k<N} e^{beta t_k} x_k^2
 * dt]. S2: E[max over stopping rules of e^{beta tau} x_tau^2], evaluated by
 * backward dynamic programming. NaN entries count as zero.
 */
double beta_norm(const Lattice& lattice, const NodeValues& x, double beta, NormFlavor flavor);

}  // namespace rbsde

#endif  // RBSDE_LAB_EXPECTATION_HPP
