#pragma once

// Sound and potential-display feeds derived from the scene each tick.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nanotouch/model_core.hpp"
#include "nanotouch/nano_scene.hpp"

namespace nanotouch::feeds {

struct AudioConfig {
    double sample_rate = 48000.0;  // Hz
    double gain = 2e8;             // full scale per m/s of layer velocity
    // Surface element indices (into Scene::surface) whose velocities are
    // summed. Empty: the element under the tip.
    std::vector<int> source;
    double highpass_corner = 20.0;       // Hz
    std::size_t buffer_capacity = 48000; // samples
    void validate() const;
};

// Single-producer single-consumer sample queue. A full queue drops its oldest
// samples and counts them; the producer never waits on the consumer beyond a
// short copy under the lock.
class AudioRing {
public:
    explicit AudioRing(std::size_t capacity);
    void push(std::span<const float> samples);
    // Moves up to out.size() samples into out; returns how many. first_index
    // receives the stream position of out[0] (samples since the start).
    std::size_t pop(std::span<float> out, std::uint64_t* first_index = nullptr);
    std::size_t size() const;
    std::size_t capacity() const { return buf_.size(); }
    std::uint64_t overruns() const { return overruns_.load(std::memory_order_relaxed); }

private:
    mutable std::mutex mu_;
    std::vector<float> buf_;
    std::size_t head_ = 0;  // next read
    std::size_t count_ = 0;
    std::uint64_t pushed_ = 0;
    std::atomic<std::uint64_t> overruns_{0};
};

// Layer velocity -> gain -> DC block -> linear resampling to the audio rate.
class AudioRenderer {
public:
    AudioRenderer(const AudioConfig& cfg, double tick_rate);

    // Renders the samples that fall inside the tick just stepped and queues
    // them. Returns this tick's samples (valid until the next call).
    std::span<const float> tick(const scene::Scene& sc);

    AudioRing& ring() { return ring_; }
    const AudioConfig& config() const { return cfg_; }

private:
    double source_velocity(const scene::Scene& sc) const;

    AudioConfig cfg_;
    double tick_rate_;
    double hp_coeff_;
    double x_prev_ = 0.0;
    double y_prev_ = 0.0;
    std::uint64_t ticks_ = 0;
    std::uint64_t emitted_ = 0;
    std::vector<float> scratch_;
    AudioRing ring_;
};

// Audio samples in [-1, 1] to little-endian signed 16-bit.
std::vector<std::int16_t> to_pcm16(std::span<const float> samples);
// Mono 16-bit PCM wave file.
void write_wav(const std::string& path, std::span<const std::int16_t> pcm, int sample_rate);

// Tip potential along the gap axis: cantilever parabola plus tip-surface law,
// evaluated at fixed piezo and surface heights.
struct PotentialSample {
    std::vector<double> z_grid;  // gap, m
    std::vector<double> u_total;
    std::vector<double> u_cantilever;
    std::vector<double> u_lj;
    double ball_z = 0.0;      // current gap
    double well_split = 0.0;  // gaps below belong to the surface well
};

// Grid from min(0.5 z_eq, 0.9 ball) to beyond both cutoff and the piezo.
// Half the points are log-spaced up to the cutoff, the rest linear beyond;
// kinks of the law get a grid point each.
PotentialSample potential_landscape(double piezo_z, double tip_z, double surface_z, const model::ForceLaw& law,
                                    double kappa, std::size_t grid = 512);
PotentialSample potential_landscape(double piezo_z, double tip_z, double surface_z, const scene::LJParams& lj,
                                    double kappa, std::size_t grid = 512);
PotentialSample potential_landscape(const scene::Scene& sc, std::size_t grid = 512);

struct BallState {
    // 0: free well (cantilever side), 1: surface well. With two wells the
    // ball's basin decides; with one, the side of well_split the ball is on.
    // Empty when the sample has no interior minimum.
    std::optional<int> well_index;
    bool in_barrier_region = false;
    std::size_t minima = 0;
};

// Barrier proximity: the ball sits within `fraction` of the barrier height,
// measured from the deepest minimum up to the barrier top next to the ball.
BallState ball_state(const PotentialSample& s, double fraction = 0.1);

// Indices of interior local minima and maxima of u_total.
std::vector<std::size_t> local_minima(const PotentialSample& s);
std::vector<std::size_t> local_maxima(const PotentialSample& s);

}  // namespace nanotouch::feeds
