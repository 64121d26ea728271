#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nanotouch/model_core.hpp"
#include "nanotouch/nano_scene.hpp"

namespace nanotouch::curve {

// Triangular approach-retract profile of a kinematically driven piezo.
// The trace keeps one sample every `ticks_per_sample` ticks, so the piezo
// spacing between samples is speed * h * ticks_per_sample.
struct SweepConfig {
    double z_start = 0.0;  // m
    double z_turn = 0.0;   // m, below z_start
    double speed = 0.0;    // m/s
    int ticks_per_sample = 1;

    void validate() const;
    double sample_spacing(double timestep) const { return speed * timestep * ticks_per_sample; }
};

enum class Phase { approach, retract };

struct TraceSample {
    std::uint64_t tick = 0;
    Phase phase = Phase::approach;
    double piezo_z = 0.0;
    double tip_z = 0.0;
    double deflection = 0.0;
    double tip_force = 0.0;
};

struct ForceCurveTrace {
    std::vector<TraceSample> samples;
    double sample_spacing = 0.0;  // m of piezo travel between samples
};

class SweepFault : public std::runtime_error {
public:
    SweepFault(const model::Fault& f)
        : std::runtime_error("simulation fault at tick " + std::to_string(f.tick) + " (mass " +
                             std::to_string(f.mass) + "): " + f.what),
          fault(f) {}
    model::Fault fault;
};

// Called for the starting state and after every tick. `sample` points at the
// trace entry taken at this tick, null between samples.
using TickObserver = std::function<void(const scene::Scene&, Phase, const TraceSample* sample)>;

// Drives the piezo (which must be anchored) along the triangle, no servo on
// the deflection. Throws SweepFault when the network faults.
ForceCurveTrace run_sweep(scene::Scene& sc, const SweepConfig& cfg, const TickObserver& observer = {});

struct SnapEvent {
    double piezo_z = 0.0;
    std::uint64_t tick = 0;
    std::size_t sample = 0;  // last trace sample before the jump
    double jump = 0.0;       // deflection change across the jump
};

struct CurveEvents {
    std::optional<SnapEvent> snap_in;
    std::optional<SnapEvent> snap_off;
    std::optional<double> contact_slope_fit;  // N/m, positive
    double hysteresis_energy = 0.0;           // J
    double jump_threshold = 0.0;
};

CurveEvents detect_events(const ForceCurveTrace& trace);

// The five stages of an approach-retract cycle, read off the deflection
// trace in time order: a flat free plateau, the jump to contact, deflection
// rising while pressed, deflection falling through zero into adhesion on the
// way back, and the jump off the surface.
struct Morphology {
    bool free_plateau = false;
    bool snap_in_jump = false;
    bool loading = false;
    bool unloading_through_zero = false;
    bool snap_off_jump = false;
    bool all() const { return free_plateau && snap_in_jump && loading && unloading_through_zero && snap_off_jump; }
};
Morphology morphology(const ForceCurveTrace& trace, const CurveEvents& ev);

// Series stiffness of the contact and the cantilever.
double chi(double contact_slope, double cantilever_stiffness);

struct Equilibrium {
    double tip_z = 0.0;
    bool stable = false;
};

// All tip positions where the cantilever spring balances the law, for a rigid
// surface at surface_z. Sorted by tip_z ascending.
std::vector<Equilibrium> quasi_static_equilibria(const model::ForceLaw& law, double kappa, double piezo_z,
                                                 double surface_z = 0.0);

// Piezo heights where the contact-side (snap_off) and free-side (snap_in)
// stable branches end. Empty when the law's gradient never exceeds kappa.
struct FoldPoints {
    double snap_in_piezo = 0.0;
    double snap_off_piezo = 0.0;
    double snap_in_gap = 0.0;
    double snap_off_gap = 0.0;
};
std::optional<FoldPoints> fold_points(const model::ForceLaw& law, double kappa, double surface_z = 0.0);

// Maximum of the law's gradient, by dense scan refined with golden section.
double max_gradient(const model::ForceLaw& law);

void write_trace_csv(std::ostream& out, const ForceCurveTrace& trace);
std::string events_json(const CurveEvents& ev);

}  // namespace nanotouch::curve
