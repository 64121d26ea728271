#pragma once

// Fixed-rate session loop: key input -> coupling -> scene -> feeds -> frames.
// Virtual time is authoritative. Wall-clock pacing only decides when a tick
// runs, never what it computes.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "nanotouch/feeds.hpp"
#include "nanotouch/force_curve.hpp"
#include "nanotouch/nano_scene.hpp"
#include "nanotouch/teleop.hpp"

namespace nanotouch::session {

enum class Mode { interactive, scripted, sweep };

struct SessionConfig {
    double tick_rate = 3000.0;
    scene::LJParams lj = scene::default_lj();
    scene::CantileverParams cantilever = scene::default_cantilever();
    scene::SurfaceParams surface = scene::default_surface();
    bool use_linearized = false;
    double piezo_mass = 5e-7;  // kg, nano side (5e-5 kg felt through the gains)
    teleop::CouplingParams coupling;
    teleop::ScalingParams scaling;
    teleop::DeviceLimits device_limits;
    teleop::PassivityConfig passivity;
    feeds::AudioConfig audio;
    std::size_t landscape_grid = 512;
    double barrier_fraction = 0.1;
    std::size_t queue_depth = 8;
    double ui_rate = 60.0;  // Hz of the decimated channel
    Mode mode = Mode::interactive;
    std::optional<std::string> record_path;
    std::optional<std::string> listen_address;  // host:port
    std::optional<std::string> profile_path;    // scripted mode
    std::optional<curve::SweepConfig> sweep;    // sweep mode

    double timestep() const { return 1.0 / tick_rate; }
    void validate() const;
};

// Desk defaults with the coupling sized from the piezo mass and tick rate.
SessionConfig default_config();

// Missing keys keep their defaults. Unknown keys are rejected.
SessionConfig config_from_json(const nlohmann::json& j);
nlohmann::ordered_json config_to_json(const SessionConfig& c);
SessionConfig load_config(const std::string& path);

enum Flag : int {
    flag_fault = 1,
    flag_active = 2,
    flag_dropout = 4,
    flag_overrun = 8,
    flag_barrier = 16,
};

struct Frame {
    std::uint64_t tick = 0;
    double t = 0.0;
    double key_pos = 0.0;
    double key_force = 0.0;
    double piezo_z = 0.0;
    double tip_z = 0.0;
    double deflection = 0.0;
    double tip_force_nano = 0.0;
    std::vector<double> surface_displacements;
    std::optional<int> well_index;
    int flags = 0;

    bool operator==(const Frame&) const = default;
};

nlohmann::ordered_json frame_to_json(const Frame& f);
Frame frame_from_json(const nlohmann::json& j);
// One JSON object, no trailing newline.
std::string frame_line(const Frame& f);

// Latest-value mailbox for key input. Any thread may post; the loop reads.
class KeyMailbox {
public:
    void post(double key_pos) { value_.store(key_pos, std::memory_order_release); }
    double latest() const { return value_.load(std::memory_order_acquire); }

private:
    std::atomic<double> value_{0.0};
};

// Bounded drop-oldest queue of shared frames. Every n-th published frame is
// offered to it.
class Subscriber {
public:
    Subscriber(std::size_t depth, std::uint64_t every);
    std::shared_ptr<const Frame> pop();
    std::vector<std::shared_ptr<const Frame>> drain();
    std::uint64_t dropped() const { return dropped_.load(std::memory_order_relaxed); }
    std::uint64_t every() const { return every_; }

private:
    friend class Publisher;
    void offer(const std::shared_ptr<const Frame>& f);

    std::mutex mu_;
    std::vector<std::shared_ptr<const Frame>> ring_;
    std::size_t head_ = 0;
    std::size_t count_ = 0;
    std::uint64_t every_;
    std::atomic<std::uint64_t> dropped_{0};
};

class Publisher {
public:
    std::shared_ptr<Subscriber> subscribe(std::size_t depth, std::uint64_t every = 1);
    void unsubscribe(const std::shared_ptr<Subscriber>& s);
    void publish(const std::shared_ptr<const Frame>& f);
    std::size_t subscribers() const;

private:
    mutable std::mutex mu_;
    std::vector<std::shared_ptr<Subscriber>> subs_;
};

// Scripted key input: piecewise-linear key position over time.
class KeyProfile {
public:
    KeyProfile(std::vector<double> t, std::vector<double> key_pos);
    double at(double t) const;
    double duration() const { return t_.back(); }

private:
    std::vector<double> t_;
    std::vector<double> k_;
};

// CSV with header `t,key_pos`. Throws with the offending line number.
KeyProfile load_profile(const std::string& path);
KeyProfile parse_profile(std::istream& in);

class Session {
public:
    explicit Session(const SessionConfig& cfg);

    // One tick. raw_key NaN means no usable reading this tick.
    const Frame& tick(double raw_key, bool overrun = false);

    bool faulted() const { return scene_.net.fault().has_value(); }
    const SessionConfig& config() const { return cfg_; }
    const scene::Scene& scene() const { return scene_; }
    const teleop::CouplingState& coupling_state() const { return state_; }
    const teleop::CouplingForces& last_forces() const { return forces_; }
    const teleop::PassivityMonitor& passivity() const { return monitor_; }
    const Frame& last_frame() const { return frame_; }
    std::span<const float> last_audio() const { return audio_last_; }
    feeds::AudioRenderer& audio() { return audio_; }
    Publisher& publisher() { return publisher_; }
    // Compute time of the last tick, publish excluded.
    std::chrono::nanoseconds last_compute() const { return compute_; }
    // Stored energy downstream of the hand, human-side joules.
    double stored_energy() const;

private:
    SessionConfig cfg_;
    scene::Scene scene_;
    teleop::CouplingState state_;
    teleop::CouplingForces forces_;
    teleop::OnePoleLowPass lowpass_;
    teleop::ForceLimiter limiter_;
    teleop::PassivityMonitor monitor_;
    feeds::AudioRenderer audio_;
    Publisher publisher_;
    Frame frame_;
    std::span<const float> audio_last_;
    std::chrono::nanoseconds compute_{0};
};

// Writes frames as newline-delimited JSON.
class Recorder {
public:
    explicit Recorder(std::ostream& out) : out_(out) {}
    void write(const Frame& f);

private:
    std::ostream& out_;
};

// Runs a scripted profile to its end as fast as possible. Returns the frames
// (and writes them to `record` when given).
// `audio`, when given, collects every rendered sample.
std::vector<Frame> run_scripted(const SessionConfig& cfg, const KeyProfile& profile, std::ostream* record = nullptr,
                                std::vector<float>* audio = nullptr);

// Sweep mode: the piezo follows the configured triangle kinematically. Every
// sampled tick is also written as a frame to `record` when given.
struct SweepOutcome {
    curve::ForceCurveTrace trace;
    curve::CurveEvents events;
};
SweepOutcome run_sweep_session(const SessionConfig& cfg, std::ostream* record = nullptr);

struct ReplayResult {
    std::vector<Frame> recorded;
    std::vector<Frame> replayed;
    std::size_t mismatches = 0;
    std::optional<std::size_t> first_mismatch;  // index into the frames
};

// Re-feeds recorded key positions (dropout ticks as missing input, overrun
// flags carried over). A malformed line aborts with its line number; a
// truncated final line is ignored.
ReplayResult replay(const SessionConfig& cfg, std::istream& recording, std::ostream* out = nullptr);

// Paced loop for interactive use: sleeps until each tick's deadline, reads
// the mailbox, marks overruns. Stops when `stop` becomes true or on fault.
struct PacingStats {
    std::uint64_t ticks = 0;
    std::uint64_t overruns = 0;
};
PacingStats run_paced(Session& s, const KeyMailbox& mailbox, const std::atomic<bool>& stop);

// Records published frames from a writer thread, off the loop thread. Frames
// dropped by a full queue are counted, not waited for.
class BackgroundRecorder {
public:
    BackgroundRecorder(Publisher& pub, std::ostream& out, std::size_t depth = 30000);
    ~BackgroundRecorder();
    BackgroundRecorder(const BackgroundRecorder&) = delete;
    BackgroundRecorder& operator=(const BackgroundRecorder&) = delete;
    // Writes whatever is queued and stops the thread.
    void finish();
    std::uint64_t dropped() const { return sub_->dropped(); }

private:
    Publisher& pub_;
    std::shared_ptr<Subscriber> sub_;
    Recorder rec_;
    std::atomic<bool> stop_{false};
    std::thread thread_;
};

}  // namespace nanotouch::session
