#include "nanotouch/feeds.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace nanotouch::feeds {

void AudioConfig::validate() const {
    if (!(sample_rate > 0.0) || !std::isfinite(sample_rate)) throw std::invalid_argument("AudioConfig.sample_rate must be > 0");
    if (!(gain >= 0.0) || !std::isfinite(gain)) throw std::invalid_argument("AudioConfig.gain must be >= 0");
    if (!(highpass_corner > 0.0) || !(highpass_corner < 0.5 * sample_rate)) {
        throw std::invalid_argument("AudioConfig.highpass_corner must lie in (0, sample_rate / 2)");
    }
    if (buffer_capacity == 0) throw std::invalid_argument("AudioConfig.buffer_capacity must be > 0");
}

AudioRing::AudioRing(std::size_t capacity) : buf_(capacity) {
    if (capacity == 0) throw std::invalid_argument("audio ring capacity must be > 0");
}

void AudioRing::push(std::span<const float> samples) {
    std::lock_guard lock(mu_);
    const std::size_t cap = buf_.size();
    pushed_ += samples.size();
    if (samples.size() > cap) {
        overruns_.fetch_add(samples.size() - cap, std::memory_order_relaxed);
        samples = samples.last(cap);
    }
    const std::size_t excess = count_ + samples.size() > cap ? count_ + samples.size() - cap : 0;
    if (excess > 0) {
        head_ = (head_ + excess) % cap;
        count_ -= excess;
        overruns_.fetch_add(excess, std::memory_order_relaxed);
    }
    std::size_t tail = (head_ + count_) % cap;
    for (float s : samples) {
        buf_[tail] = s;
        tail = tail + 1 == cap ? 0 : tail + 1;
    }
    count_ += samples.size();
}

std::size_t AudioRing::pop(std::span<float> out, std::uint64_t* first_index) {
    std::lock_guard lock(mu_);
    if (first_index) *first_index = pushed_ - count_;
    const std::size_t n = std::min(out.size(), count_);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = buf_[head_];
        head_ = head_ + 1 == buf_.size() ? 0 : head_ + 1;
    }
    count_ -= n;
    return n;
}

std::size_t AudioRing::size() const {
    std::lock_guard lock(mu_);
    return count_;
}

AudioRenderer::AudioRenderer(const AudioConfig& cfg, double tick_rate)
    : cfg_(cfg), tick_rate_(tick_rate), ring_(cfg.buffer_capacity) {
    cfg.validate();
    if (!(tick_rate > 0.0)) throw std::invalid_argument("tick rate must be > 0");
    hp_coeff_ = std::exp(-2.0 * std::numbers::pi * cfg.highpass_corner / tick_rate);
    scratch_.reserve(static_cast<std::size_t>(std::ceil(cfg.sample_rate / tick_rate)) + 1);
}

double AudioRenderer::source_velocity(const scene::Scene& sc) const {
    if (cfg_.source.empty()) return sc.net.mass(sc.contact).velocity;
    double v = 0.0;
    for (int i : cfg_.source) v += sc.net.mass(sc.surface.at(static_cast<std::size_t>(i))).velocity;
    return v;
}

std::span<const float> AudioRenderer::tick(const scene::Scene& sc) {
    const double x = cfg_.gain * source_velocity(sc);
    const double y = hp_coeff_ * (y_prev_ + x - x_prev_);
    ++ticks_;

    // Output samples whose time falls in (previous tick, this tick].
    const auto target = static_cast<std::uint64_t>(
        std::floor(static_cast<double>(ticks_) * cfg_.sample_rate / tick_rate_ + 1e-9));
    scratch_.clear();
    const double t0 = static_cast<double>(ticks_ - 1) / tick_rate_;
    for (; emitted_ < target; ++emitted_) {
        const double t = static_cast<double>(emitted_ + 1) / cfg_.sample_rate;
        const double frac = std::clamp((t - t0) * tick_rate_, 0.0, 1.0);
        scratch_.push_back(static_cast<float>(y_prev_ + frac * (y - y_prev_)));
    }
    x_prev_ = x;
    y_prev_ = y;
    ring_.push(scratch_);
    return scratch_;
}

std::vector<std::int16_t> to_pcm16(std::span<const float> samples) {
    std::vector<std::int16_t> out(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const float s = std::isfinite(samples[i]) ? std::clamp(samples[i], -1.0f, 1.0f) : 0.0f;
        out[i] = static_cast<std::int16_t>(std::lround(s * 32767.0f));
    }
    return out;
}

namespace {

void put_le(std::ofstream& out, std::uint32_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

}  // namespace

void write_wav(const std::string& path, std::span<const std::int16_t> pcm, int sample_rate) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    const auto data_bytes = static_cast<std::uint32_t>(pcm.size() * 2);
    out.write("RIFF", 4);
    put_le(out, 36 + data_bytes, 4);
    out.write("WAVEfmt ", 8);
    put_le(out, 16, 4);
    put_le(out, 1, 2);  // PCM
    put_le(out, 1, 2);  // mono
    put_le(out, static_cast<std::uint32_t>(sample_rate), 4);
    put_le(out, static_cast<std::uint32_t>(sample_rate) * 2, 4);
    put_le(out, 2, 2);
    put_le(out, 16, 2);
    out.write("data", 4);
    put_le(out, data_bytes, 4);
    for (std::int16_t s : pcm) put_le(out, static_cast<std::uint16_t>(s), 2);
    if (!out) throw std::runtime_error("write failed: " + path);
}

PotentialSample potential_landscape(double piezo_z, double tip_z, double surface_z, const model::ForceLaw& law,
                                    double kappa, std::size_t grid) {
    if (grid < 2) throw std::invalid_argument("potential grid needs at least 2 points");
    if (!(kappa > 0.0)) throw std::invalid_argument("cantilever stiffness must be > 0");
    const double z_eq = law.equilibrium_gap();
    const double ball = tip_z - surface_z;
    const double rest = piezo_z - surface_z;  // gap where the cantilever is relaxed

    double lo = 0.5 * z_eq;
    if (ball > 0.0) lo = std::min(lo, 0.9 * ball);
    const double hi = std::max({law.cutoff(), rest, ball}) + 0.5 * z_eq;
    const double split = std::min(law.cutoff(), 0.5 * (lo + hi));

    PotentialSample s;
    s.ball_z = ball;
    s.well_split = law.max_gradient_gap();
    s.z_grid.resize(grid);
    const std::size_t n_log = grid / 2;
    const double log_ratio = std::log(split / lo);
    for (std::size_t i = 0; i < n_log; ++i) {
        s.z_grid[i] = lo * std::exp(log_ratio * static_cast<double>(i) / static_cast<double>(n_log));
    }
    const std::size_t n_lin = grid - n_log;
    for (std::size_t i = 0; i < n_lin; ++i) {
        const double t = n_lin == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(n_lin - 1);
        s.z_grid[n_log + i] = i + 1 == n_lin ? hi : split + t * (hi - split);
    }

    // Minima sitting on a kink of the law only show up if a grid point lands
    // on it; move the nearest interior point there.
    for (double k : law.kinks()) {
        if (grid < 3 || !(k > s.z_grid.front() && k < s.z_grid.back())) continue;
        const auto it = std::lower_bound(s.z_grid.begin(), s.z_grid.end(), k);
        auto i = static_cast<std::size_t>(it - s.z_grid.begin());
        if (i > 1 && k - s.z_grid[i - 1] < s.z_grid[i] - k) --i;
        i = std::clamp<std::size_t>(i, 1, grid - 2);
        if (s.z_grid[i - 1] < k && k < s.z_grid[i + 1]) s.z_grid[i] = k;
    }

    s.u_cantilever.resize(grid);
    s.u_lj.resize(grid);
    s.u_total.resize(grid);
    for (std::size_t i = 0; i < grid; ++i) {
        const double z = s.z_grid[i];
        const double d = z - rest;
        s.u_cantilever[i] = 0.5 * kappa * d * d;
        s.u_lj[i] = law.potential(z);
        s.u_total[i] = s.u_cantilever[i] + s.u_lj[i];
    }
    return s;
}

PotentialSample potential_landscape(double piezo_z, double tip_z, double surface_z, const scene::LJParams& lj,
                                    double kappa, std::size_t grid) {
    return potential_landscape(piezo_z, tip_z, surface_z, scene::LennardJonesLaw(lj), kappa, grid);
}

PotentialSample potential_landscape(const scene::Scene& sc, std::size_t grid) {
    const auto& net = sc.net;
    return potential_landscape(net.mass(sc.piezo).position, net.mass(sc.tip).position,
                               net.mass(sc.contact).position, *sc.law, sc.cantilever.stiffness, grid);
}

std::vector<std::size_t> local_minima(const PotentialSample& s) {
    std::vector<std::size_t> out;
    const auto& u = s.u_total;
    for (std::size_t i = 1; i + 1 < u.size(); ++i) {
        if (u[i - 1] > u[i] && u[i] <= u[i + 1]) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> local_maxima(const PotentialSample& s) {
    std::vector<std::size_t> out;
    const auto& u = s.u_total;
    for (std::size_t i = 1; i + 1 < u.size(); ++i) {
        if (u[i - 1] < u[i] && u[i] >= u[i + 1]) out.push_back(i);
    }
    return out;
}

namespace {

double interpolate(const PotentialSample& s, double z) {
    const auto& g = s.z_grid;
    if (z <= g.front()) return s.u_total.front();
    if (z >= g.back()) return s.u_total.back();
    const auto it = std::upper_bound(g.begin(), g.end(), z);
    const auto i = static_cast<std::size_t>(it - g.begin());
    const double t = (z - g[i - 1]) / (g[i] - g[i - 1]);
    return s.u_total[i - 1] + t * (s.u_total[i] - s.u_total[i - 1]);
}

}  // namespace

BallState ball_state(const PotentialSample& s, double fraction) {
    BallState st;
    const auto mins = local_minima(s);
    st.minima = mins.size();
    if (mins.empty()) return st;
    const auto maxs = local_maxima(s);
    const auto& z = s.z_grid;
    const auto& u = s.u_total;

    // Basin: the stretch between consecutive maxima holding the ball.
    double left = -INFINITY;
    double right = INFINITY;
    std::optional<std::size_t> left_max;
    std::optional<std::size_t> right_max;
    for (std::size_t m : maxs) {
        if (z[m] <= s.ball_z) {
            left = z[m];
            left_max = m;
        } else {
            right = z[m];
            right_max = m;
            break;
        }
    }
    std::optional<std::size_t> own;
    for (std::size_t m : mins) {
        if (z[m] >= left && z[m] <= right) {
            own = m;
            break;
        }
    }
    if (!own) {
        // Ball beyond the last interior extremum: take the nearest minimum.
        own = *std::min_element(mins.begin(), mins.end(), [&](std::size_t a, std::size_t b) {
            return std::abs(z[a] - s.ball_z) < std::abs(z[b] - s.ball_z);
        });
    }
    // With one well left the ball may still be on its way down to it, so the
    // ball's own side of the split decides.
    const double where = mins.size() == 1 ? s.ball_z : z[*own];
    st.well_index = where < s.well_split ? 1 : 0;

    if (mins.size() >= 2 && (left_max || right_max)) {
        double top = INFINITY;
        if (left_max) top = std::min(top, u[*left_max]);
        if (right_max) top = std::min(top, u[*right_max]);
        double deepest = INFINITY;
        for (std::size_t m : mins) deepest = std::min(deepest, u[m]);
        const double height = top - deepest;
        st.in_barrier_region = height > 0.0 && top - interpolate(s, s.ball_z) <= fraction * height;
    }
    return st;
}

}  // namespace nanotouch::feeds
