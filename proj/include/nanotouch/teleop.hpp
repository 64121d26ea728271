#pragma once

// Bilateral link between the operator's key (human scale) and the piezo
// (nano scale). The key axis is depth: 0 at the top of travel, positive
// when pressed. Forces along the key axis are positive downward.

#include <cstdint>
#include <vector>

namespace nanotouch::teleop {

struct ScalingParams {
    double force_gain = 1e8;     // human N per nano N
    double position_gain = 1e6;  // human m per nano m (1 mm of key = 1 nm of piezo)
    double piezo_origin = 10e-9; // piezo height (m) when the key is at 0
    void validate() const;
};

struct DeviceLimits {
    double travel = 0.020;              // m
    double encoder_resolution = 2e-6;   // m
    double max_speed = 2.0;             // m/s
    double force_continuous = 50.0;     // N, RMS over transient_window
    double force_transient = 200.0;     // N, peak
    double force_loop_cutoff = 1e4;     // Hz
    double transient_window = 1.0;      // s
    void validate() const;
};

struct CouplingParams {
    double spring_k = 0.0;        // N/m, human side
    double spring_damping = 0.0;  // N.s/m, human side
    void validate() const;
};

// Largest spring_k for which a sampled spring on `mass`, with its damper
// integrated implicitly, stays stable: (2/h) c + m (2/h)^2.
double coupling_stability_bound(double h, double damping, double mass);

// Inertia of the piezo as felt through the gains.
double effective_mass(double piezo_mass, const ScalingParams& scale);

// Half the stability bound, with damping well above the sampled-spring
// passivity threshold k h / 2.
CouplingParams default_coupling(double h, double piezo_mass, const ScalingParams& scale);

struct CouplingState {
    double key_pos = 0.0;        // m, on the encoder grid
    std::int64_t key_steps = 0;  // key_pos in encoder steps
    double key_velocity = 0.0;   // m/s, last tick's move / h
    double key_force_out = 0.0;  // N, after band limit and clamping
    double piezo_command = 0.0;  // m, piezo height the key asks for
    double energy_ledger = 0.0;  // J
    bool dropout = false;        // last input was unusable
};

// Travel clamp, encoder quantization and speed limit relative to prev. A
// non-finite sample keeps the previous position and sets dropout.
CouplingState ingest_key(double raw_pos, const DeviceLimits& limits, const CouplingState& prev, double h);

// Piezo height <-> key depth under the position gain.
double key_equivalent(double piezo_z, const ScalingParams& scale);
double piezo_for_key(double key_pos, const ScalingParams& scale);

struct CouplingForces {
    double stretch = 0.0;              // m, human side
    double force_to_key = 0.0;         // N on the key, key axis
    double force_to_piezo_nano = 0.0;  // N on the piezo, key axis
};

// F = k stretch + c d(stretch)/dt with stretch = key - key_equivalent(piezo).
// force_to_key is derived from force_to_piezo_nano so that
// force_to_key == -force_gain * force_to_piezo_nano holds bit for bit.
CouplingForces couple(double key_pos, double key_velocity, double piezo_z, double piezo_velocity,
                      const ScalingParams& scale, const CouplingParams& cp);

// Splits a human-side link force into the two transferred forces.
CouplingForces transfer(double link_force, double stretch, const ScalingParams& scale);

// First-order low-pass standing in for the device force-loop bandwidth.
class OnePoleLowPass {
public:
    OnePoleLowPass(double cutoff_hz, double h);
    double apply(double x);
    void reset(double value = 0.0) { y_ = value; }

private:
    double alpha_;
    double y_ = 0.0;
};

// Peak and RMS force envelope of the device. The RMS limit is enforced over
// a trailing window: each output is the largest magnitude (up to the request)
// that keeps the window's mean square within force_continuous^2. Once the
// window is half spent, output is also capped at force_continuous so a
// sustained overload settles to a steady level rather than bursts.
class ForceLimiter {
public:
    ForceLimiter(const DeviceLimits& limits, double h);
    double apply(double force);
    double window_rms() const;
    std::size_t window_length() const { return squares_.size(); }

private:
    double peak_;
    double cont_;
    std::vector<double> squares_;
    std::size_t head_ = 0;
    double sum_ = 0.0;
    std::size_t since_resum_ = 0;
};

// Energy bookkeeping of everything downstream of the hand. The ledger is the
// stored energy gained minus the work the hand put in; a passive chain keeps
// it at or below zero. ACTIVE latches once it stays above epsilon for
// `consecutive` ticks.
struct PassivityConfig {
    double epsilon = 1e-3;  // J
    int consecutive = 10;
};

class PassivityMonitor {
public:
    explicit PassivityMonitor(PassivityConfig cfg = {});
    void start(double stored_energy);
    // hand_work: work done by the hand on the key this tick.
    double update(double stored_energy, double hand_work);
    double ledger() const { return ledger_; }
    bool active() const { return active_; }

private:
    PassivityConfig cfg_;
    double stored0_ = 0.0;
    double hand_total_ = 0.0;
    double ledger_ = 0.0;
    int above_ = 0;
    bool active_ = false;
};

}  // namespace nanotouch::teleop
