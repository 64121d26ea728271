#include "nanotouch/session.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace nanotouch::session {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

// Rejects keys outside `allowed` so that typos do not silently fall back to
// defaults.
void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items()) {
        if (!ok.contains(k)) throw std::invalid_argument("unknown config key '" + where + "." + k + "'");
    }
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

const char* mode_name(Mode m) {
    switch (m) {
        case Mode::interactive: return "interactive";
        case Mode::scripted: return "scripted";
        case Mode::sweep: return "sweep";
    }
    return "interactive";
}

Mode parse_mode(const std::string& s) {
    if (s == "interactive") return Mode::interactive;
    if (s == "scripted") return Mode::scripted;
    if (s == "sweep") return Mode::sweep;
    throw std::invalid_argument("unknown mode '" + s + "'");
}

}  // namespace

void SessionConfig::validate() const {
    require(tick_rate > 0.0 && std::isfinite(tick_rate), "tick_rate must be > 0");
    lj.validate();
    cantilever.validate();
    surface.validate();
    require(piezo_mass > 0.0 && std::isfinite(piezo_mass), "piezo_mass must be > 0");
    coupling.validate();
    scaling.validate();
    device_limits.validate();
    audio.validate();
    require(landscape_grid >= 2, "landscape_grid must be >= 2");
    require(barrier_fraction >= 0.0 && barrier_fraction <= 1.0, "barrier_fraction must lie in [0, 1]");
    require(queue_depth >= 1, "queue_depth must be >= 1");
    require(ui_rate > 0.0 && ui_rate <= tick_rate, "ui_rate must lie in (0, tick_rate]");
    if (mode == Mode::scripted) require(profile_path.has_value(), "scripted mode needs profile_path");
    if (mode == Mode::sweep) {
        require(sweep.has_value(), "sweep mode needs a sweep section");
        sweep->validate();
    }
}

SessionConfig default_config() {
    SessionConfig c;
    c.coupling = teleop::default_coupling(c.timestep(), c.piezo_mass, c.scaling);
    return c;
}

SessionConfig config_from_json(const json& j) {
    check_keys(j, "config",
               {"tick_rate", "lj", "cantilever", "surface", "use_linearized", "piezo_mass", "coupling", "scaling",
                "device_limits", "passivity", "audio", "landscape_grid", "barrier_fraction", "queue_depth", "ui_rate",
                "mode", "record_path", "listen_address", "profile_path", "sweep"});
    SessionConfig c;
    read(j, "tick_rate", c.tick_rate);
    read(j, "use_linearized", c.use_linearized);
    read(j, "piezo_mass", c.piezo_mass);
    read(j, "landscape_grid", c.landscape_grid);
    read(j, "barrier_fraction", c.barrier_fraction);
    read(j, "queue_depth", c.queue_depth);
    read(j, "ui_rate", c.ui_rate);

    if (j.contains("lj")) {
        const auto& s = j.at("lj");
        check_keys(s, "lj", {"attr_coeff", "rep_coeff", "cutoff"});
        read(s, "attr_coeff", c.lj.attr_coeff);
        read(s, "rep_coeff", c.lj.rep_coeff);
        read(s, "cutoff", c.lj.cutoff);
    }
    if (j.contains("cantilever")) {
        const auto& s = j.at("cantilever");
        check_keys(s, "cantilever", {"stiffness", "tip_mass", "damping"});
        read(s, "stiffness", c.cantilever.stiffness);
        read(s, "tip_mass", c.cantilever.tip_mass);
        read(s, "damping", c.cantilever.damping);
    }
    bool slope_given = false;
    if (j.contains("surface")) {
        const auto& s = j.at("surface");
        check_keys(s, "surface",
                   {"n_elements", "element_mass", "neighbor_stiffness", "anchor_stiffness", "element_damping",
                    "contact_slope"});
        read(s, "n_elements", c.surface.n_elements);
        read(s, "element_mass", c.surface.element_mass);
        read(s, "neighbor_stiffness", c.surface.neighbor_stiffness);
        read(s, "anchor_stiffness", c.surface.anchor_stiffness);
        read(s, "element_damping", c.surface.element_damping);
        slope_given = s.contains("contact_slope");
        read(s, "contact_slope", c.surface.contact_slope);
    }
    if (!slope_given) {
        c.lj.validate();
        c.surface.contact_slope = scene::default_contact_slope(c.lj);
    }
    if (j.contains("scaling")) {
        const auto& s = j.at("scaling");
        check_keys(s, "scaling", {"force_gain", "position_gain", "piezo_origin"});
        read(s, "force_gain", c.scaling.force_gain);
        read(s, "position_gain", c.scaling.position_gain);
        read(s, "piezo_origin", c.scaling.piezo_origin);
    }
    c.scaling.validate();
    require(c.tick_rate > 0.0 && c.piezo_mass > 0.0, "tick_rate and piezo_mass must be > 0");
    c.coupling = teleop::default_coupling(c.timestep(), c.piezo_mass, c.scaling);
    if (j.contains("coupling")) {
        const auto& s = j.at("coupling");
        check_keys(s, "coupling", {"spring_k", "spring_damping"});
        read(s, "spring_k", c.coupling.spring_k);
        read(s, "spring_damping", c.coupling.spring_damping);
    }
    if (j.contains("device_limits")) {
        const auto& s = j.at("device_limits");
        check_keys(s, "device_limits",
                   {"travel", "encoder_resolution", "max_speed", "force_continuous", "force_transient",
                    "force_loop_cutoff", "transient_window"});
        auto& d = c.device_limits;
        read(s, "travel", d.travel);
        read(s, "encoder_resolution", d.encoder_resolution);
        read(s, "max_speed", d.max_speed);
        read(s, "force_continuous", d.force_continuous);
        read(s, "force_transient", d.force_transient);
        read(s, "force_loop_cutoff", d.force_loop_cutoff);
        read(s, "transient_window", d.transient_window);
    }
    if (j.contains("passivity")) {
        const auto& s = j.at("passivity");
        check_keys(s, "passivity", {"epsilon", "consecutive"});
        read(s, "epsilon", c.passivity.epsilon);
        read(s, "consecutive", c.passivity.consecutive);
    }
    if (j.contains("audio")) {
        const auto& s = j.at("audio");
        check_keys(s, "audio", {"sample_rate", "gain", "source", "highpass_corner", "buffer_capacity"});
        read(s, "sample_rate", c.audio.sample_rate);
        read(s, "gain", c.audio.gain);
        read(s, "source", c.audio.source);
        read(s, "highpass_corner", c.audio.highpass_corner);
        read(s, "buffer_capacity", c.audio.buffer_capacity);
    }
    if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
    auto read_opt = [&](const char* key, std::optional<std::string>& out) {
        if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<std::string>();
    };
    read_opt("record_path", c.record_path);
    read_opt("listen_address", c.listen_address);
    read_opt("profile_path", c.profile_path);
    if (j.contains("sweep") && !j.at("sweep").is_null()) {
        const auto& s = j.at("sweep");
        check_keys(s, "sweep", {"z_start", "z_turn", "speed", "ticks_per_sample"});
        curve::SweepConfig sw;
        read(s, "z_start", sw.z_start);
        read(s, "z_turn", sw.z_turn);
        read(s, "speed", sw.speed);
        read(s, "ticks_per_sample", sw.ticks_per_sample);
        c.sweep = sw;
    }
    c.validate();
    return c;
}

ordered_json config_to_json(const SessionConfig& c) {
    ordered_json j;
    j["tick_rate"] = c.tick_rate;
    j["lj"] = {{"attr_coeff", c.lj.attr_coeff}, {"rep_coeff", c.lj.rep_coeff}, {"cutoff", c.lj.cutoff}};
    j["cantilever"] = {{"stiffness", c.cantilever.stiffness},
                       {"tip_mass", c.cantilever.tip_mass},
                       {"damping", c.cantilever.damping}};
    j["surface"] = {{"n_elements", c.surface.n_elements},
                    {"element_mass", c.surface.element_mass},
                    {"neighbor_stiffness", c.surface.neighbor_stiffness},
                    {"anchor_stiffness", c.surface.anchor_stiffness},
                    {"element_damping", c.surface.element_damping},
                    {"contact_slope", c.surface.contact_slope}};
    j["use_linearized"] = c.use_linearized;
    j["piezo_mass"] = c.piezo_mass;
    j["coupling"] = {{"spring_k", c.coupling.spring_k}, {"spring_damping", c.coupling.spring_damping}};
    j["scaling"] = {{"force_gain", c.scaling.force_gain},
                    {"position_gain", c.scaling.position_gain},
                    {"piezo_origin", c.scaling.piezo_origin}};
    const auto& d = c.device_limits;
    j["device_limits"] = {{"travel", d.travel},
                          {"encoder_resolution", d.encoder_resolution},
                          {"max_speed", d.max_speed},
                          {"force_continuous", d.force_continuous},
                          {"force_transient", d.force_transient},
                          {"force_loop_cutoff", d.force_loop_cutoff},
                          {"transient_window", d.transient_window}};
    j["passivity"] = {{"epsilon", c.passivity.epsilon}, {"consecutive", c.passivity.consecutive}};
    j["audio"] = {{"sample_rate", c.audio.sample_rate},
                  {"gain", c.audio.gain},
                  {"source", c.audio.source},
                  {"highpass_corner", c.audio.highpass_corner},
                  {"buffer_capacity", c.audio.buffer_capacity}};
    j["landscape_grid"] = c.landscape_grid;
    j["barrier_fraction"] = c.barrier_fraction;
    j["queue_depth"] = c.queue_depth;
    j["ui_rate"] = c.ui_rate;
    j["mode"] = mode_name(c.mode);
    j["record_path"] = c.record_path ? ordered_json(*c.record_path) : ordered_json(nullptr);
    j["listen_address"] = c.listen_address ? ordered_json(*c.listen_address) : ordered_json(nullptr);
    j["profile_path"] = c.profile_path ? ordered_json(*c.profile_path) : ordered_json(nullptr);
    if (c.sweep) {
        j["sweep"] = {{"z_start", c.sweep->z_start},
                      {"z_turn", c.sweep->z_turn},
                      {"speed", c.sweep->speed},
                      {"ticks_per_sample", c.sweep->ticks_per_sample}};
    } else {
        j["sweep"] = nullptr;
    }
    return j;
}

SessionConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("config " + path + ": " + e.what());
    }
    SessionConfig c = config_from_json(j);
    // Relative paths in the file are relative to the file.
    const auto base = std::filesystem::path(path).parent_path();
    auto rebase = [&](std::optional<std::string>& p) {
        if (p && std::filesystem::path(*p).is_relative()) p = (base / *p).lexically_normal().string();
    };
    rebase(c.profile_path);
    rebase(c.record_path);
    return c;
}

ordered_json frame_to_json(const Frame& f) {
    ordered_json j;
    j["tick"] = f.tick;
    j["t"] = f.t;
    j["key_pos"] = f.key_pos;
    j["key_force"] = f.key_force;
    j["piezo_z"] = f.piezo_z;
    j["tip_z"] = f.tip_z;
    j["deflection"] = f.deflection;
    j["tip_force_nano"] = f.tip_force_nano;
    j["surface_displacements"] = f.surface_displacements;
    j["well_index"] = f.well_index ? ordered_json(*f.well_index) : ordered_json(nullptr);
    j["flags"] = f.flags;
    return j;
}

namespace {

double number_or_nan(const json& j, const char* key) {
    const auto& v = j.at(key);
    if (v.is_null()) return kNaN;  // non-finite values serialize as null
    return v.get<double>();
}

}  // namespace

Frame frame_from_json(const json& j) {
    Frame f;
    f.tick = j.at("tick").get<std::uint64_t>();
    f.t = number_or_nan(j, "t");
    f.key_pos = number_or_nan(j, "key_pos");
    f.key_force = number_or_nan(j, "key_force");
    f.piezo_z = number_or_nan(j, "piezo_z");
    f.tip_z = number_or_nan(j, "tip_z");
    f.deflection = number_or_nan(j, "deflection");
    f.tip_force_nano = number_or_nan(j, "tip_force_nano");
    for (const auto& v : j.at("surface_displacements")) f.surface_displacements.push_back(v.is_null() ? kNaN : v.get<double>());
    if (!j.at("well_index").is_null()) f.well_index = j.at("well_index").get<int>();
    f.flags = j.at("flags").get<int>();
    return f;
}

std::string frame_line(const Frame& f) { return frame_to_json(f).dump(); }

Subscriber::Subscriber(std::size_t depth, std::uint64_t every) : ring_(std::max<std::size_t>(1, depth)), every_(every) {
    if (every == 0) throw std::invalid_argument("subscriber decimation must be >= 1");
}

void Subscriber::offer(const std::shared_ptr<const Frame>& f) {
    if (f->tick % every_ != 0) return;
    std::lock_guard lock(mu_);
    if (count_ == ring_.size()) {
        ring_[head_].reset();
        head_ = (head_ + 1) % ring_.size();
        --count_;
        dropped_.fetch_add(1, std::memory_order_relaxed);
    }
    ring_[(head_ + count_) % ring_.size()] = f;
    ++count_;
}

std::shared_ptr<const Frame> Subscriber::pop() {
    std::lock_guard lock(mu_);
    if (count_ == 0) return nullptr;
    auto f = std::move(ring_[head_]);
    head_ = (head_ + 1) % ring_.size();
    --count_;
    return f;
}

std::vector<std::shared_ptr<const Frame>> Subscriber::drain() {
    std::vector<std::shared_ptr<const Frame>> out;
    while (auto f = pop()) out.push_back(std::move(f));
    return out;
}

std::shared_ptr<Subscriber> Publisher::subscribe(std::size_t depth, std::uint64_t every) {
    auto s = std::make_shared<Subscriber>(depth, every);
    std::lock_guard lock(mu_);
    subs_.push_back(s);
    return s;
}

void Publisher::unsubscribe(const std::shared_ptr<Subscriber>& s) {
    std::lock_guard lock(mu_);
    std::erase(subs_, s);
}

void Publisher::publish(const std::shared_ptr<const Frame>& f) {
    std::lock_guard lock(mu_);
    for (const auto& s : subs_) s->offer(f);
}

std::size_t Publisher::subscribers() const {
    std::lock_guard lock(mu_);
    return subs_.size();
}

KeyProfile::KeyProfile(std::vector<double> t, std::vector<double> key_pos) : t_(std::move(t)), k_(std::move(key_pos)) {
    require(!t_.empty() && t_.size() == k_.size(), "key profile needs matching, non-empty t and key_pos");
    for (std::size_t i = 0; i < t_.size(); ++i) {
        require(std::isfinite(t_[i]) && std::isfinite(k_[i]), "key profile values must be finite");
        if (i > 0) require(t_[i] > t_[i - 1], "key profile times must increase strictly");
    }
}

double KeyProfile::at(double t) const {
    if (t <= t_.front()) return k_.front();
    if (t >= t_.back()) return k_.back();
    const auto it = std::upper_bound(t_.begin(), t_.end(), t);
    const auto i = static_cast<std::size_t>(it - t_.begin());
    const double a = (t - t_[i - 1]) / (t_[i] - t_[i - 1]);
    return k_[i - 1] + a * (k_[i] - k_[i - 1]);
}

KeyProfile parse_profile(std::istream& in) {
    std::vector<double> t;
    std::vector<double> k;
    std::string line;
    std::size_t n = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!header) {
            if (line != "t,key_pos") throw std::runtime_error("profile line " + std::to_string(n) + ": expected header t,key_pos");
            header = true;
            continue;
        }
        const auto comma = line.find(',');
        try {
            if (comma == std::string::npos) throw std::invalid_argument("missing comma");
            std::size_t used = 0;
            const std::string a = line.substr(0, comma);
            const std::string b = line.substr(comma + 1);
            const double tv = std::stod(a, &used);
            if (used != a.size()) throw std::invalid_argument("trailing characters");
            const double kv = std::stod(b, &used);
            if (used != b.size()) throw std::invalid_argument("trailing characters");
            t.push_back(tv);
            k.push_back(kv);
        } catch (const std::exception& e) {
            throw std::runtime_error("profile line " + std::to_string(n) + ": " + e.what());
        }
    }
    if (!header) throw std::runtime_error("profile is empty");
    return KeyProfile(std::move(t), std::move(k));
}

KeyProfile load_profile(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open profile " + path);
    return parse_profile(in);
}

Session::Session(const SessionConfig& cfg)
    : cfg_(cfg),
      scene_(scene::build_scene(cfg.lj, cfg.cantilever, cfg.surface, cfg.use_linearized,
                                scene::PiezoParams{cfg.piezo_mass, cfg.scaling.piezo_origin}, cfg.timestep())),
      lowpass_(cfg.device_limits.force_loop_cutoff, cfg.timestep()),
      limiter_(cfg.device_limits, cfg.timestep()),
      monitor_(cfg.passivity),
      audio_(cfg.audio, cfg.tick_rate) {
    cfg.validate();
    state_.piezo_command = cfg.scaling.piezo_origin;
    monitor_.start(stored_energy());
    frame_.surface_displacements.resize(scene_.surface.size());
}

double Session::stored_energy() const {
    const auto& s = cfg_.scaling;
    const double stretch = state_.key_pos - teleop::key_equivalent(scene_.net.mass(scene_.piezo).position, s);
    return 0.5 * cfg_.coupling.spring_k * stretch * stretch +
           s.force_gain * s.position_gain * model::mechanical_energy(scene_.net);
}

const Frame& Session::tick(double raw_key, bool overrun) {
    if (faulted()) return frame_;
    const auto t0 = std::chrono::steady_clock::now();
    const double h = cfg_.timestep();
    const auto& sc = cfg_.scaling;
    const auto& cp = cfg_.coupling;
    auto& net = scene_.net;

    const double key_prev = state_.key_pos;
    const double force_prev = forces_.force_to_key;
    state_ = teleop::ingest_key(raw_key, cfg_.device_limits, state_, h);
    state_.piezo_command = teleop::piezo_for_key(state_.key_pos, sc);

    // Spring on the piezo now; the damper rides inside the step (implicit).
    const double z0 = net.mass(scene_.piezo).position;
    const double stretch = state_.key_pos - teleop::key_equivalent(z0, sc);
    net.apply_force(scene_.piezo, -(cp.spring_k * stretch) / sc.force_gain);
    if (cp.spring_damping > 0.0) {
        net.apply_damping(scene_.piezo, cp.spring_damping * sc.position_gain / sc.force_gain,
                          -state_.key_velocity / sc.position_gain);
    }
    const bool ok = net.step();

    int flags = 0;
    if (state_.dropout) flags |= flag_dropout;
    if (overrun) flags |= flag_overrun;
    if (ok) {
        forces_ = teleop::couple(state_.key_pos, state_.key_velocity, z0, net.mass(scene_.piezo).velocity, sc, cp);
        state_.key_force_out = limiter_.apply(lowpass_.apply(forces_.force_to_key));
        // Trapezoidal work of the hand against the key this tick.
        const double hand_work = -0.5 * (force_prev + forces_.force_to_key) * (state_.key_pos - key_prev);
        state_.energy_ledger = monitor_.update(stored_energy(), hand_work);
        audio_last_ = audio_.tick(scene_);
        const auto ball = feeds::ball_state(feeds::potential_landscape(scene_, cfg_.landscape_grid), cfg_.barrier_fraction);
        frame_.well_index = ball.well_index;
        if (ball.in_barrier_region) flags |= flag_barrier;
    } else {
        flags |= flag_fault;
        audio_last_ = {};
    }
    if (monitor_.active()) flags |= flag_active;

    frame_.tick = ok ? net.tick() : net.tick() + 1;
    frame_.t = static_cast<double>(frame_.tick) / cfg_.tick_rate;
    frame_.key_pos = state_.key_pos;
    frame_.key_force = state_.key_force_out;
    frame_.piezo_z = net.mass(scene_.piezo).position;
    frame_.tip_z = net.mass(scene_.tip).position;
    frame_.deflection = scene_.deflection();
    frame_.tip_force_nano = scene_.tip_force();
    for (std::size_t i = 0; i < scene_.surface.size(); ++i) {
        frame_.surface_displacements[i] = net.mass(scene_.surface[i]).position;
    }
    frame_.flags = flags;
    compute_ = std::chrono::steady_clock::now() - t0;

    if (publisher_.subscribers() > 0) publisher_.publish(std::make_shared<const Frame>(frame_));
    return frame_;
}

void Recorder::write(const Frame& f) { out_ << frame_line(f) << '\n'; }

std::vector<Frame> run_scripted(const SessionConfig& cfg, const KeyProfile& profile, std::ostream* record,
                                std::vector<float>* audio) {
    Session s(cfg);
    std::optional<Recorder> rec;
    if (record) rec.emplace(*record);
    std::vector<Frame> frames;
    const auto n = static_cast<std::uint64_t>(std::floor(profile.duration() * cfg.tick_rate)) + 1;
    frames.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        const Frame& f = s.tick(profile.at(static_cast<double>(i) / cfg.tick_rate));
        frames.push_back(f);
        if (rec) rec->write(f);
        if (audio) audio->insert(audio->end(), s.last_audio().begin(), s.last_audio().end());
        if (f.flags & flag_fault) break;
    }
    return frames;
}

SweepOutcome run_sweep_session(const SessionConfig& cfg, std::ostream* record) {
    cfg.validate();
    require(cfg.sweep.has_value(), "sweep needs a sweep section");
    const auto& sw = *cfg.sweep;
    auto sc = scene::build_scene(cfg.lj, cfg.cantilever, cfg.surface, cfg.use_linearized,
                                 scene::PiezoParams{std::nullopt, sw.z_start}, cfg.timestep());
    std::optional<Recorder> rec;
    if (record) rec.emplace(*record);
    Frame f;
    f.surface_displacements.resize(sc.surface.size());
    curve::TickObserver obs;
    if (rec) {
        obs = [&](const scene::Scene& s, curve::Phase, const curve::TraceSample* sample) {
            const auto& net = s.net;
            if (!sample) return;
            f.tick = net.tick();
            f.t = static_cast<double>(f.tick) / cfg.tick_rate;
            f.piezo_z = net.mass(s.piezo).position;
            f.key_pos = teleop::key_equivalent(f.piezo_z, cfg.scaling);
            f.tip_z = net.mass(s.tip).position;
            f.deflection = s.deflection();
            f.tip_force_nano = s.tip_force();
            for (std::size_t i = 0; i < s.surface.size(); ++i) f.surface_displacements[i] = net.mass(s.surface[i]).position;
            const auto ball = feeds::ball_state(feeds::potential_landscape(s, cfg.landscape_grid), cfg.barrier_fraction);
            f.well_index = ball.well_index;
            f.flags = ball.in_barrier_region ? flag_barrier : 0;
            rec->write(f);
        };
    }
    SweepOutcome out;
    out.trace = curve::run_sweep(sc, sw, obs);
    out.events = curve::detect_events(out.trace);
    return out;
}

ReplayResult replay(const SessionConfig& cfg, std::istream& recording, std::ostream* out) {
    ReplayResult r;
    std::string line;
    std::size_t n = 0;
    while (std::getline(recording, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            r.recorded.push_back(frame_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            // A final line cut short (no newline) is a truncated write.
            if (recording.eof()) break;
            throw std::runtime_error("recording line " + std::to_string(n) + ": " + e.what());
        }
    }

    Session s(cfg);
    std::optional<Recorder> rec;
    if (out) rec.emplace(*out);
    for (std::size_t i = 0; i < r.recorded.size(); ++i) {
        const Frame& in = r.recorded[i];
        const double key = (in.flags & flag_dropout) ? kNaN : in.key_pos;
        const Frame& f = s.tick(key, (in.flags & flag_overrun) != 0);
        r.replayed.push_back(f);
        if (rec) rec->write(f);
        if (frame_line(f) != frame_line(in)) {
            ++r.mismatches;
            if (!r.first_mismatch) r.first_mismatch = i;
        }
        if (f.flags & flag_fault) break;
    }
    return r;
}

PacingStats run_paced(Session& s, const KeyMailbox& mailbox, const std::atomic<bool>& stop) {
    using clock = std::chrono::steady_clock;
    const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / s.config().tick_rate));
    PacingStats st;
    auto deadline = clock::now() + period;
    while (!stop.load(std::memory_order_relaxed) && !s.faulted()) {
        std::this_thread::sleep_until(deadline);
        const auto now = clock::now();
        // Late by more than a whole period: a slot was missed. Virtual time
        // still advances by exactly one tick.
        const bool overrun = now - deadline > period;
        if (overrun) {
            ++st.overruns;
            deadline = now;
        }
        s.tick(mailbox.latest(), overrun);
        ++st.ticks;
        deadline += period;
    }
    return st;
}

BackgroundRecorder::BackgroundRecorder(Publisher& pub, std::ostream& out, std::size_t depth)
    : pub_(pub), sub_(pub.subscribe(depth)), rec_(out) {
    thread_ = std::thread([this] {
        while (!stop_.load(std::memory_order_acquire)) {
            for (const auto& f : sub_->drain()) rec_.write(*f);
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
        }
        for (const auto& f : sub_->drain()) rec_.write(*f);
    });
}

void BackgroundRecorder::finish() {
    if (!thread_.joinable()) return;
    stop_.store(true, std::memory_order_release);
    thread_.join();
    pub_.unsubscribe(sub_);
}

BackgroundRecorder::~BackgroundRecorder() { finish(); }

}  // namespace nanotouch::session
