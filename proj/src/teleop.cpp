#include "nanotouch/teleop.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace nanotouch::teleop {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

bool positive(double v) { return v > 0.0 && std::isfinite(v); }

}  // namespace

void ScalingParams::validate() const {
    require(positive(force_gain), "ScalingParams.force_gain must be > 0");
    require(positive(position_gain), "ScalingParams.position_gain must be > 0");
    require(std::isfinite(piezo_origin), "ScalingParams.piezo_origin must be finite");
}

void DeviceLimits::validate() const {
    require(positive(travel), "DeviceLimits.travel must be > 0");
    require(positive(encoder_resolution), "DeviceLimits.encoder_resolution must be > 0");
    require(positive(max_speed), "DeviceLimits.max_speed must be > 0");
    require(positive(force_continuous), "DeviceLimits.force_continuous must be > 0");
    require(positive(force_transient), "DeviceLimits.force_transient must be > 0");
    require(force_transient >= force_continuous, "DeviceLimits: force_transient must be >= force_continuous");
    require(positive(force_loop_cutoff), "DeviceLimits.force_loop_cutoff must be > 0");
    require(positive(transient_window), "DeviceLimits.transient_window must be > 0");
}

void CouplingParams::validate() const {
    require(positive(spring_k), "CouplingParams.spring_k must be > 0");
    require(spring_damping >= 0.0 && std::isfinite(spring_damping), "CouplingParams.spring_damping must be >= 0");
}

double coupling_stability_bound(double h, double damping, double mass) {
    require(positive(h) && positive(mass) && damping >= 0.0, "coupling_stability_bound: inputs must be positive");
    const double w = 2.0 / h;
    return w * damping + mass * w * w;
}

double effective_mass(double piezo_mass, const ScalingParams& scale) {
    return piezo_mass * scale.force_gain / scale.position_gain;
}

CouplingParams default_coupling(double h, double piezo_mass, const ScalingParams& scale) {
    const double m = effective_mass(piezo_mass, scale);
    CouplingParams cp;
    // With k at half the bound, the sampled-spring condition c >= k h / 2
    // reduces to c >= 2 m / h. Take twice that.
    cp.spring_damping = 4.0 * m / h;
    cp.spring_k = 0.5 * coupling_stability_bound(h, cp.spring_damping, m);
    return cp;
}

CouplingState ingest_key(double raw_pos, const DeviceLimits& limits, const CouplingState& prev, double h) {
    CouplingState next = prev;
    next.key_velocity = 0.0;
    if (!std::isfinite(raw_pos)) {
        next.dropout = true;
        return next;
    }
    next.dropout = false;

    const double res = limits.encoder_resolution;
    const auto max_steps = static_cast<std::int64_t>(std::floor(limits.travel / res + 1e-9));
    const double clamped = std::clamp(raw_pos, 0.0, limits.travel);
    std::int64_t steps = std::clamp<std::int64_t>(std::llround(clamped / res), 0, max_steps);

    const auto per_tick = static_cast<std::int64_t>(std::floor(limits.max_speed * h / res + 1e-9));
    steps = std::clamp(steps, prev.key_steps - per_tick, prev.key_steps + per_tick);
    next.key_steps = steps;
    next.key_pos = static_cast<double>(steps) * res;
    next.key_velocity = (next.key_pos - prev.key_pos) / h;
    return next;
}

double key_equivalent(double piezo_z, const ScalingParams& scale) {
    return (scale.piezo_origin - piezo_z) * scale.position_gain;
}

double piezo_for_key(double key_pos, const ScalingParams& scale) {
    return scale.piezo_origin - key_pos / scale.position_gain;
}

CouplingForces transfer(double link_force, double stretch, const ScalingParams& scale) {
    CouplingForces out;
    out.stretch = stretch;
    out.force_to_piezo_nano = link_force / scale.force_gain;
    out.force_to_key = -(out.force_to_piezo_nano * scale.force_gain);
    return out;
}

CouplingForces couple(double key_pos, double key_velocity, double piezo_z, double piezo_velocity,
                      const ScalingParams& scale, const CouplingParams& cp) {
    const double stretch = key_pos - key_equivalent(piezo_z, scale);
    // The piezo equivalent moves down the key axis when the piezo descends.
    const double rate = key_velocity + piezo_velocity * scale.position_gain;
    return transfer(cp.spring_k * stretch + cp.spring_damping * rate, stretch, scale);
}

OnePoleLowPass::OnePoleLowPass(double cutoff_hz, double h) {
    require(positive(cutoff_hz) && positive(h), "low-pass cutoff and step must be > 0");
    alpha_ = 1.0 - std::exp(-2.0 * std::numbers::pi * cutoff_hz * h);
}

double OnePoleLowPass::apply(double x) {
    y_ += alpha_ * (x - y_);
    return y_;
}

ForceLimiter::ForceLimiter(const DeviceLimits& limits, double h)
    : peak_(limits.force_transient), cont_(limits.force_continuous) {
    limits.validate();
    const auto n = static_cast<std::size_t>(std::max<long long>(1, std::llround(limits.transient_window / h)));
    squares_.assign(n, 0.0);
}

double ForceLimiter::apply(double force) {
    double out = std::isfinite(force) ? std::clamp(force, -peak_, peak_) : 0.0;
    const double n = static_cast<double>(squares_.size());
    const double budget = cont_ * cont_ * n;
    const double rest = std::max(0.0, sum_ - squares_[head_]);

    if (sum_ >= 0.5 * budget) out = std::clamp(out, -cont_, cont_);
    // Small margin so rounding in the running sum cannot cross the limit.
    const double room = budget * (1.0 - 1e-9) - rest;
    const double cap = room > 0.0 ? std::sqrt(room) : 0.0;
    if (std::abs(out) > cap) out = std::copysign(cap, out);

    const double sq = out * out;
    sum_ = rest + sq;
    squares_[head_] = sq;
    head_ = (head_ + 1) % squares_.size();
    if (++since_resum_ >= squares_.size()) {
        sum_ = 0.0;
        for (double s : squares_) sum_ += s;
        since_resum_ = 0;
    }
    return out;
}

double ForceLimiter::window_rms() const {
    return std::sqrt(std::max(0.0, sum_) / static_cast<double>(squares_.size()));
}

PassivityMonitor::PassivityMonitor(PassivityConfig cfg) : cfg_(cfg) {
    require(cfg.epsilon >= 0.0 && cfg.consecutive >= 1, "PassivityConfig: epsilon >= 0, consecutive >= 1");
}

void PassivityMonitor::start(double stored_energy) {
    stored0_ = stored_energy;
    hand_total_ = 0.0;
    ledger_ = 0.0;
    above_ = 0;
    active_ = false;
}

double PassivityMonitor::update(double stored_energy, double hand_work) {
    hand_total_ += hand_work;
    ledger_ = (stored_energy - stored0_) - hand_total_;
    if (ledger_ > cfg_.epsilon || !std::isfinite(ledger_)) {
        if (++above_ >= cfg_.consecutive) active_ = true;
    } else {
        above_ = 0;
    }
    return ledger_;
}

}  // namespace nanotouch::teleop
