// Acceptance checks for the simulation core. One line per criterion:
//   PASS|FAIL <name>: <measured values>
// Exit status is the number of failed criteria (0 when all pass).
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "nanotouch/feeds.hpp"
#include "nanotouch/force_curve.hpp"
#include "nanotouch/nano_scene.hpp"
#include "nanotouch/session.hpp"
#include "nanotouch/teleop.hpp"

using namespace nanotouch;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... a) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, a...);
    return buf;
}

scene::SurfaceParams rigid_surface() {
    auto s = scene::default_surface();
    s.n_elements = 1;
    s.anchor_stiffness = 1e4;
    s.element_mass = 0.05;
    s.element_damping = 10.0;
    return s;
}

curve::ForceCurveTrace sweep(const scene::CantileverParams& cant, const scene::SurfaceParams& surf, double z_start,
                             double z_turn, double spacing, int tps, bool linearized, double h) {
    auto sc = scene::build_scene(scene::default_lj(), cant, surf, linearized, scene::PiezoParams{std::nullopt, z_start}, h);
    return curve::run_sweep(sc, curve::SweepConfig{z_start, z_turn, spacing / (h * tps), tps});
}

double peak_attraction() {
    const auto p = scene::default_lj();
    return -scene::lj_force(p.max_attraction_gap(), p);
}

double rms(std::span<const float> x) {
    double s = 0.0;
    for (float v : x) s += static_cast<double>(v) * v;
    return std::sqrt(s / static_cast<double>(x.size()));
}

double spectral_centroid(std::span<const double> x, double rate) {
    const std::size_t n = x.size();
    double num = 0.0;
    double den = 0.0;
    for (std::size_t k = 1; k < n / 2; ++k) {
        double re = 0.0;
        double im = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
            const double ph = 2.0 * std::numbers::pi * static_cast<double>((k * i) % n) / static_cast<double>(n);
            re += w * x[i] * std::cos(ph);
            im -= w * x[i] * std::sin(ph);
        }
        const double p = re * re + im * im;
        num += p * static_cast<double>(k) * rate / static_cast<double>(n);
        den += p;
    }
    return num / den;
}

struct Drive {
    std::vector<float> audio;
    std::vector<double> tick_signal;
    std::vector<session::Frame> frames;
};

Drive drive(const session::SessionConfig& cfg, const session::KeyProfile& prof) {
    Drive r;
    session::Session s(cfg);
    const auto n = static_cast<std::uint64_t>(std::llround(prof.duration() * cfg.tick_rate));
    for (std::uint64_t i = 0; i < n; ++i) {
        r.frames.push_back(s.tick(prof.at(static_cast<double>(i) / cfg.tick_rate)));
        const auto a = s.last_audio();
        r.audio.insert(r.audio.end(), a.begin(), a.end());
        r.tick_signal.push_back(a.empty() ? 0.0 : a.back());
    }
    return r;
}

// ---------------------------------------------------------------------------

Verdict contact_slope() {
    const auto cant = scene::default_cantilever();
    const double h = 1.0 / 3000.0;
    Verdict v{true, ""};
    for (const double ratio : {1e4, 1.0}) {
        auto surf = rigid_surface();
        surf.contact_slope = ratio * cant.stiffness;
        const auto ev = curve::detect_events(sweep(cant, surf, 5e-9, -2e-9, 5e-12, 8000, true, h));
        const double expect = curve::chi(surf.contact_slope, cant.stiffness);
        const double fit = ev.contact_slope_fit.value_or(std::numeric_limits<double>::quiet_NaN());
        const double err = std::abs(fit - expect) / expect;
        v.pass = v.pass && err < 0.02;
        v.detail += fmt("alpha/kappa=%g fit=%.5g expect=%.5g err=%.2f%% ", ratio, fit, expect, 100 * err);
    }
    return v;
}

Verdict hysteresis_criterion() {
    // A snap is a bistable jump pair. The truncated law also steps by
    // |F(cutoff)| (< 0.3% of the peak attraction) at the cutoff; jumps whose
    // force step is below 1% of the peak attraction are not counted.
    const double h = 1.0 / 3000.0;
    const scene::LennardJonesLaw law(scene::default_lj());
    const double gmax = curve::max_gradient(law);
    const double floor = 0.01 * peak_attraction();
    auto snaps = [&](double kappa) {
        auto cant = scene::default_cantilever();
        cant.stiffness = kappa;
        const auto ev = curve::detect_events(sweep(cant, rigid_surface(), 1.0e-9, 0.25e-9, 0.1e-12, 300, false, h));
        auto real = [&](const std::optional<curve::SnapEvent>& e) { return e && std::abs(e->jump) * kappa > floor; };
        return real(ev.snap_in) && real(ev.snap_off);
    };
    const std::vector<double> grid{0.3, 0.5, 0.7, 0.9, 0.94, 0.96, 0.97, 0.98, 0.99, 1.01,
                                   1.02, 1.03, 1.04, 1.06, 1.1, 1.5, 2.0, 4.0};
    std::vector<bool> has;
    std::string row;
    for (double f : grid) {
        has.push_back(snaps(f * gmax));
        row += fmt("%g:%c ", f, has.back() ? 'Y' : 'n');
    }
    // Exactness away from the tolerance band, a single clean edge inside it.
    bool exact = true;
    std::optional<double> last_yes;
    std::optional<double> first_no;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (std::abs(grid[i] - 1.0) > 0.05 && has[i] != (grid[i] < 1.0)) exact = false;
        if (has[i]) last_yes = grid[i];
        if (!has[i] && !first_no) first_no = grid[i];
    }
    const bool edge = last_yes && first_no && *last_yes < *first_no;
    const double boundary = edge ? 0.5 * (*last_yes + *first_no) : std::numeric_limits<double>::quiet_NaN();
    // Oracle side: fold points exist only below the tangency stiffness.
    const bool oracle = curve::fold_points(law, 0.99 * gmax).has_value() && !curve::fold_points(law, 1.01 * gmax).has_value();
    const bool pass = exact && edge && std::abs(boundary - 1.0) <= 0.05 && oracle;
    return {pass, fmt("gmax=%.5g N/m boundary=%.3f gmax oracle_folds_ok=%d | %s", gmax, boundary, oracle, row.c_str())};
}

struct DeskSweep {
    curve::ForceCurveTrace trace;
    curve::CurveEvents events;
};

DeskSweep desk_sweep(int tps, double spacing) {
    auto cfg = session::default_config();
    cfg.mode = session::Mode::sweep;
    cfg.sweep = curve::SweepConfig{5e-9, -0.2e-9, spacing / (cfg.timestep() * tps), tps};
    auto out = session::run_sweep_session(cfg);
    return {std::move(out.trace), std::move(out.events)};
}

Verdict oracle_equivalence(const DeskSweep& a, const DeskSweep& b, double spacing) {
    const scene::LennardJonesLaw law(scene::default_lj());
    const auto fp = curve::fold_points(law, scene::default_cantilever().stiffness);
    if (!fp || !a.events.snap_in || !a.events.snap_off || !b.events.snap_in || !b.events.snap_off) {
        return {false, "missing fold points or snap events"};
    }
    const double d_in = std::abs(a.events.snap_in->piezo_z - b.events.snap_in->piezo_z) / spacing;
    const double d_off = std::abs(a.events.snap_off->piezo_z - b.events.snap_off->piezo_z) / spacing;
    const double e_in = std::abs(b.events.snap_in->piezo_z - fp->snap_in_piezo) / spacing;
    const double e_off = std::abs(b.events.snap_off->piezo_z - fp->snap_off_piezo) / spacing;
    const bool pass = d_in < 0.5 && d_off < 0.5 && e_in <= 2.0 && e_off <= 2.0;
    return {pass, fmt("spacing=%g m; halving speed moves snap_in %.2f, snap_off %.2f spacings; vs folds "
                      "(%.5g, %.5g nm): snap_in %.2f, snap_off %.2f spacings",
                      spacing, d_in, d_off, fp->snap_in_piezo * 1e9, fp->snap_off_piezo * 1e9, e_in, e_off)};
}

Verdict morphology(const DeskSweep& s) {
    const auto m = curve::morphology(s.trace, s.events);
    const bool pass = m.all() && s.events.hysteresis_energy > 0.0;
    return {pass, fmt("A=%d B=%d C=%d D=%d E=%d hysteresis_energy=%.4g J", m.free_plateau, m.snap_in_jump, m.loading,
                      m.unloading_through_zero, m.snap_off_jump, s.events.hysteresis_energy)};
}

Verdict scaling() {
    const auto cfg = session::default_config();
    session::Session s(cfg);
    std::uint64_t broken = 0;
    std::uint64_t flagged = 0;
    const std::uint64_t n = 1000000;
    for (std::uint64_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / cfg.tick_rate;
        const auto& f = s.tick(0.006 * (1.0 - std::cos(2.0 * std::numbers::pi * t / 20.0)));
        const auto& lf = s.last_forces();
        if (lf.force_to_key != -cfg.scaling.force_gain * lf.force_to_piezo_nano) ++broken;
        if (f.flags & (session::flag_fault | session::flag_active)) ++flagged;
    }
    const bool pass = broken == 0 && flagged == 0 && teleop::ScalingParams{}.force_gain == 1e8;
    return {pass, fmt("ticks=%llu identity_violations=%llu fault_or_active=%llu default_force_gain=%g",
                      static_cast<unsigned long long>(n), static_cast<unsigned long long>(broken),
                      static_cast<unsigned long long>(flagged), teleop::ScalingParams{}.force_gain)};
}

Verdict device_envelope() {
    // Two configurations: the default, and a heavy piezo whose coupling forces
    // reach the device limits so the limiter has to act.
    auto heavy = session::default_config();
    heavy.piezo_mass = 5e-4;
    heavy.coupling = teleop::default_coupling(heavy.timestep(), heavy.piezo_mass, heavy.scaling);
    const teleop::DeviceLimits dl;
    std::mt19937 g(20240611u);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    bool pass = true;
    std::string detail;
    for (const auto* name : {"default", "heavy"}) {
        const auto cfg = std::string(name) == "heavy" ? heavy : session::default_config();
        session::Session s(cfg);
        const double h = cfg.timestep();
        const auto window = static_cast<std::size_t>(std::llround(dl.transient_window / h));
        std::deque<double> sq;
        double sq_sum = 0.0;
        double worst_rms = 0.0;
        double worst_force = 0.0;
        double worst_speed = 0.0;
        double worst_grid = 0.0;
        double lo = 1.0;
        double hi = -1.0;
        double prev = 0.0;
        std::uint64_t faults = 0;
        for (int i = 0; i < 60000; ++i) {
            double raw = 0.0;
            switch ((i / 3000) % 6) {
                case 0: raw = u(g) * 0.03 - 0.005; break;                          // random, beyond travel both ways
                case 1: raw = (i % 2) ? 0.020 : 0.0; break;                        // full-travel oscillation each tick
                case 2: raw = u(g) < 0.3 ? std::numeric_limits<double>::quiet_NaN() : 0.012; break;
                case 3: raw = 0.011 + 0.002 * std::sin(2.0 * std::numbers::pi * 200.0 * i * h); break;
                case 4: raw = (i / 150) % 2 ? 1.0 : -1.0; break;                   // out of range, slow square
                default: raw = u(g) < 0.5 ? std::numeric_limits<double>::infinity() : 0.0105 + 1e-3 * u(g); break;
            }
            const auto& f = s.tick(raw);
            if (f.flags & session::flag_fault) {
                ++faults;
                break;
            }
            lo = std::min(lo, f.key_pos);
            hi = std::max(hi, f.key_pos);
            const double steps = f.key_pos / dl.encoder_resolution;
            worst_grid = std::max(worst_grid, std::abs(steps - std::round(steps)));
            worst_speed = std::max(worst_speed, std::abs(f.key_pos - prev) / h);
            prev = f.key_pos;
            worst_force = std::max(worst_force, std::abs(f.key_force));
            sq.push_back(f.key_force * f.key_force);
            sq_sum += sq.back();
            if (sq.size() > window) {
                sq_sum -= sq.front();
                sq.pop_front();
            }
            double exact = 0.0;
            if (i % 64 == 0 || sq_sum > 0.9 * 50.5 * 50.5 * static_cast<double>(window)) {
                for (double v : sq) exact += v;
                worst_rms = std::max(worst_rms, std::sqrt(exact / static_cast<double>(window)));
            }
        }
        const bool ok = faults == 0 && lo >= 0.0 && hi <= dl.travel && worst_grid < 1e-6 &&
                        worst_speed <= dl.max_speed * (1.0 + 1e-9) && worst_force <= dl.force_transient &&
                        worst_rms <= 50.5;
        pass = pass && ok;
        detail += fmt("[%s key in [%.6g, %.6g] m, off-grid %.2g steps, speed %.4g m/s, |F| %.4g N, 1s RMS %.4g N%s] ",
                      name, lo, hi, worst_grid, worst_speed, worst_force, worst_rms, faults ? ", FAULT" : "");
    }
    return {pass, detail};
}

Verdict realtime_budget() {
    auto cfg = session::default_config();
    cfg.surface.n_elements = 16;
    session::Session s(cfg);
    const session::KeyProfile prof({0, 0.5, 3.5, 5.0, 8.0, 10.0}, {0, 0, 0.012, 0.012, 0.0, 0.0});
    const auto n = static_cast<std::size_t>(prof.duration() * cfg.tick_rate);
    std::vector<double> us;
    us.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        s.tick(prof.at(static_cast<double>(i) / cfg.tick_rate));
        us.push_back(std::chrono::duration<double, std::micro>(s.last_compute()).count());
    }
    double mean = 0.0;
    for (double v : us) mean += v;
    mean /= static_cast<double>(us.size());
    std::sort(us.begin(), us.end());
    const double p99 = us[static_cast<std::size_t>(0.99 * static_cast<double>(us.size() - 1))];
    return {mean < 100.0 && p99 < 300.0,
            fmt("n_elements=16 ticks=%zu mean=%.2f us p99=%.2f us max=%.2f us", us.size(), mean, p99, us.back())};
}

Verdict determinism() {
    const auto cfg = session::default_config();
    const session::KeyProfile prof({0, 0.2, 2.2, 2.5, 4.5}, {0, 0, 0.011, 0.011, 0.003});
    std::ostringstream a;
    std::ostringstream b;
    session::run_scripted(cfg, prof, &a);
    session::run_scripted(cfg, prof, &b);
    // Live run with dropouts and overrun marks, recorded, then replayed.
    session::Session s(cfg);
    std::ostringstream rec;
    session::Recorder r(rec);
    for (int i = 0; i < 13500; ++i) {
        double key = prof.at(i / cfg.tick_rate);
        if (i % 997 == 0) key = std::numeric_limits<double>::quiet_NaN();
        r.write(s.tick(key, i % 1301 == 0));
    }
    std::istringstream in(rec.str());
    std::ostringstream out;
    const auto res = session::replay(cfg, in, &out);
    const bool pass = a.str() == b.str() && !a.str().empty() && res.mismatches == 0 && out.str() == rec.str();
    return {pass, fmt("scripted bytes=%zu identical=%d; replay frames=%zu mismatches=%zu bytes identical=%d",
                      a.str().size(), a.str() == b.str(), res.replayed.size(), res.mismatches, out.str() == rec.str())};
}

Verdict potential_display() {
    const auto lj = scene::default_lj();
    const scene::LennardJonesLaw law(lj);
    const double kappa = scene::default_cantilever().stiffness;

    // Additivity on grids taken from a live run through contact.
    std::size_t checked = 0;
    std::size_t broken = 0;
    {
        const auto cfg = session::default_config();
        session::Session s(cfg);
        const session::KeyProfile prof({0, 0.2, 2.2, 2.5, 4.5}, {0, 0, 0.011, 0.011, 0.003});
        for (int i = 0; i < 13500; ++i) {
            s.tick(prof.at(i / cfg.tick_rate));
            if (i % 250 != 0) continue;
            const auto p = feeds::potential_landscape(s.scene(), cfg.landscape_grid);
            for (std::size_t k = 0; k < p.z_grid.size(); ++k) {
                ++checked;
                if (p.u_total[k] != p.u_cantilever[k] + p.u_lj[k]) ++broken;
            }
        }
    }

    // Double well iff between the folds, up to the grid resolution band.
    const auto fp = curve::fold_points(law, kappa);
    int wrong = 0;
    const double band = 5e-12;
    if (fp) {
        for (double p = -1e-9; p < fp->snap_off_piezo + 1e-9; p += 1e-12) {
            const auto n = feeds::local_minima(feeds::potential_landscape(p, p, 0.0, law, kappa)).size();
            const bool inside = p > fp->snap_in_piezo && p < fp->snap_off_piezo;
            const bool deep = p > fp->snap_in_piezo + band && p < fp->snap_off_piezo - band;
            if ((!inside && n != 1) || (deep && n < 2)) ++wrong;
        }
    }

    // Ball well changes against detected snaps in the same sweep.
    auto cfg = session::default_config();
    cfg.mode = session::Mode::sweep;
    cfg.sweep = curve::SweepConfig{5e-9, -0.2e-9, 3e-11, 2000};
    std::stringstream rec;
    const auto out = session::run_sweep_session(cfg, &rec);
    std::vector<session::Frame> frames;
    for (std::string line; std::getline(rec, line);) frames.push_back(session::frame_from_json(nlohmann::json::parse(line)));
    std::vector<std::size_t> changes;
    for (std::size_t i = 1; i < frames.size(); ++i) {
        if (frames[i].well_index != frames[i - 1].well_index) changes.push_back(i);
    }
    long d_in = -1;
    long d_off = -1;
    if (changes.size() == 2 && out.events.snap_in && out.events.snap_off) {
        d_in = std::labs(static_cast<long>(changes[0]) - static_cast<long>(out.events.snap_in->sample));
        d_off = std::labs(static_cast<long>(changes[1]) - static_cast<long>(out.events.snap_off->sample));
    }
    const bool ball = d_in >= 0 && d_in <= 2 && d_off >= 0 && d_off <= 2;
    const bool pass = broken == 0 && checked > 0 && fp && wrong == 0 && ball;
    return {pass, fmt("additivity %zu/%zu exact; double-well mismatches=%d (band %g m); well changes=%zu, offset from "
                      "snap_in %ld, snap_off %ld samples",
                      checked - broken, checked, wrong, band, changes.size(), d_in, d_off)};
}

Verdict audio() {
    const auto cfg = session::default_config();

    // Silence with the gap beyond the cutoff.
    bool silent = true;
    {
        session::Session s(cfg);
        const session::KeyProfile prof({0, 0.5, 2.5, 3.0}, {0, 0, 0.005, 0.005});
        for (int i = 0; i < 9000; ++i) {
            s.tick(prof.at(i / cfg.tick_rate));
            const auto& net = s.scene().net;
            if (net.mass(s.scene().tip).position - net.mass(s.scene().contact).position < cfg.lj.cutoff) silent = false;
            for (float v : s.last_audio()) silent = silent && v == 0.0f;
        }
    }

    // Press deeper from light contact: same timing, three depths.
    const double light = 0.0105;
    std::vector<double> levels;
    for (double depth : {1e-3, 2e-3, 4e-3}) {
        const session::KeyProfile prof({0, 0.5, 3.5, 4.5, 5.5, 6.0, 7.0, 7.5},
                                       {0, 0, light, light, light + depth, light + depth, light, light});
        const auto r = drive(cfg, prof);
        const auto from = static_cast<std::size_t>(4.5 * cfg.audio.sample_rate);
        const auto to = static_cast<std::size_t>(7.5 * cfg.audio.sample_rate);
        levels.push_back(rms(std::span<const float>(r.audio).subspan(from, to - from)));
    }
    const bool monotone = levels[0] < levels[1] && levels[1] < levels[2];

    // Centroid before snap-off against stable contact, on a slow retract.
    const double top = 0.0125;
    const session::KeyProfile prof({0, 0.5, 3.5, 4.5, 4.5 + top / 2e-3}, {0, 0, top, top, 0});
    const auto r = drive(cfg, prof);
    std::optional<std::size_t> off;
    for (std::size_t i = 1; i < r.frames.size(); ++i) {
        if (r.frames[i].well_index != r.frames[i - 1].well_index) off = i;
    }
    const std::size_t n = 512;
    const auto stable_at = static_cast<std::size_t>(5.0 * cfg.tick_rate);
    double stable = std::numeric_limits<double>::quiet_NaN();
    double pre = std::numeric_limits<double>::quiet_NaN();
    bool centroid = false;
    if (off && r.frames[*off].well_index == 0 && stable_at + n < *off - 10 - n) {
        const std::span<const double> sig(r.tick_signal);
        stable = spectral_centroid(sig.subspan(stable_at, n), cfg.tick_rate);
        pre = spectral_centroid(sig.subspan(*off - 10 - n, n), cfg.tick_rate);
        centroid = pre < stable;
    }
    return {silent && monotone && centroid,
            fmt("silent beyond cutoff=%d; RMS at 1/2/4 mm = %.3g/%.3g/%.3g FS; centroid stable %.4g Hz, pre-snap-off %.4g Hz",
                silent, levels[0], levels[1], levels[2], stable, pre)};
}

}  // namespace

int main() {
    int failed = 0;
    auto report = [&](const char* name, const std::function<Verdict()>& run) {
        Verdict v;
        try {
            v = run();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        if (!v.pass) ++failed;
        std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", name, v.detail.c_str());
        std::fflush(stdout);
    };

    const double spacing = 5e-12;
    report("contact_slope", contact_slope);
    report("hysteresis_criterion", hysteresis_criterion);
    DeskSweep fast;
    DeskSweep slow;
    report("oracle_equivalence", [&] {
        fast = desk_sweep(2000, spacing);
        slow = desk_sweep(4000, spacing);
        return oracle_equivalence(fast, slow, spacing);
    });
    report("curve_morphology", [&] { return morphology(slow); });
    report("scaling", scaling);
    report("device_envelope", device_envelope);
    report("realtime_budget", realtime_budget);
    report("determinism", determinism);
    report("potential_display", potential_display);
    report("audio", audio);
    std::printf("%d of 10 criteria failed\n", failed);
    return failed;
}
