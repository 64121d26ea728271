#pragma once

// Minimal 1-DOF mass-interaction engine: point masses joined by interaction
// links, advanced by a fixed-timestep semi-implicit Euler integrator.
//
//   masses   : free (finite mass) or anchored (kinematic, infinite mass)
//   links    : spring-damper between two masses
//              tether (spring-damper from one mass to a fixed point)
//              force law f(gap) between two masses, gap = x_b - x_a
//
// Positions are scalar heights along the vertical axis.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace nanotouch::model {

using MassId = std::size_t;

struct MassPoint {
    double mass = 1.0;      // kg, ignored when anchored
    bool anchored = false;
    double position = 0.0;  // m
    double velocity = 0.0;  // m/s
};

struct SpringDamperLink {
    MassId a = 0;
    MassId b = 0;
    double stiffness = 0.0;    // N/m
    double damping = 0.0;      // N.s/m
    double rest_length = 0.0;  // m, rest value of x_b - x_a
};

// Spring-damper from a mass to a fixed point in the world. The reaction goes
// to the ground, so it is not subject to the two-body third-law check.
struct TetherLink {
    MassId mass = 0;
    double anchor_position = 0.0;
    double stiffness = 0.0;
    double damping = 0.0;
};

// One-dimensional interaction law f(gap). Positive force pushes the masses
// apart. Implementations return NaN outside their domain; the network turns
// that into a fault.
class ForceLaw {
public:
    virtual ~ForceLaw() = default;

    virtual double force(double gap) const noexcept = 0;
    virtual double gradient(double gap) const noexcept = 0;
    // Potential with U = 0 at and beyond cutoff(), so that f = -dU/dgap.
    virtual double potential(double gap) const noexcept = 0;
    virtual double cutoff() const noexcept = 0;
    // Gap where the force vanishes between repulsion and attraction.
    virtual double equilibrium_gap() const noexcept = 0;
    // Gap of steepest positive gradient; separates the contact-side and
    // free-side stable branches of a cantilever resting on this law.
    virtual double max_gradient_gap() const noexcept = 0;
    // Gaps where the force is not smooth. Samplers put grid points there.
    virtual std::vector<double> kinks() const { return {}; }
};

struct ForceLawLink {
    MassId a = 0;  // lower body (surface)
    MassId b = 0;  // upper body (tip)
    std::shared_ptr<const ForceLaw> law;
};

using Link = std::variant<SpringDamperLink, TetherLink, ForceLawLink>;

struct Fault {
    std::uint64_t tick = 0;
    MassId mass = 0;
    std::string what;
};

class Network {
public:
    explicit Network(double timestep);

    MassId add_mass(double mass, double position, double velocity = 0.0);
    MassId add_anchor(double position);
    std::size_t add_link(Link link);

    // Exogenous force for the coming tick only; cleared by step().
    void apply_force(MassId id, double force);
    // Damper from a free mass to a moving reference velocity, for the coming
    // tick only. Integrated implicitly (uses the end-of-step velocity), so it
    // never destabilizes the step however large the coefficient.
    void apply_damping(MassId id, double coefficient, double target_velocity);
    // Kinematic drive of an anchored mass. The velocity is used by dampers
    // attached to it.
    void place_anchor(MassId id, double position, double velocity);

    // One semi-implicit Euler update. Returns false (and latches a fault) on
    // a non-finite force or position; a faulted network no longer advances.
    bool step();

    double timestep() const noexcept { return timestep_; }
    std::uint64_t tick() const noexcept { return tick_; }
    const std::optional<Fault>& fault() const noexcept { return fault_; }

    std::span<const MassPoint> masses() const noexcept { return masses_; }
    const MassPoint& mass(MassId id) const { return masses_.at(id); }
    std::span<const Link> links() const noexcept { return links_; }
    // Total force on each mass during the last step, external inputs included.
    std::span<const double> last_forces() const noexcept { return last_forces_; }

private:
    void check_mass(MassId id) const;
    void accumulate_link_forces();

    double timestep_;
    std::uint64_t tick_ = 0;
    std::vector<MassPoint> masses_;
    std::vector<Link> links_;
    std::vector<double> external_;
    std::vector<double> damp_coeff_;
    std::vector<double> damp_target_;
    std::vector<double> last_forces_;
    std::optional<Fault> fault_;
};

// Kinetic energy of free masses plus the potential stored in every link.
double mechanical_energy(const Network& net);

}  // namespace nanotouch::model
