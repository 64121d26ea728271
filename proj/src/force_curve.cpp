#include "nanotouch/force_curve.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "json.hpp"

#include "nanotouch/numfmt.hpp"

namespace nanotouch::curve {

namespace {

constexpr int kScanPoints = 20000;

// Bisection to the last representable split of [a, b], given sign(fn(a)) != sign(fn(b)).
template <class Fn>
double bisect(Fn&& fn, double a, double b) {
    double fa = fn(a);
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (a + b);
        if (mid <= a || mid >= b) break;
        const double fm = fn(mid);
        if ((fm > 0.0) == (fa > 0.0)) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    return 0.5 * (a + b);
}

// Lowest gap worth searching: the balance g must be positive there.
template <class Fn>
double lower_gap(const model::ForceLaw& law, Fn&& balance_at_gap) {
    const double z_eq = law.equilibrium_gap();
    double lo = 0.5 * z_eq;
    for (int i = 0; i < 200 && !(balance_at_gap(lo) > 0.0); ++i) {
        if (std::isnan(law.force(-z_eq))) {
            lo *= 0.5;  // singular law: stay in (0, lo]
        } else {
            lo -= z_eq * std::ldexp(1.0, i);
        }
    }
    return lo;
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1) return *mid;
    const double upper = *mid;
    const double lower = *std::max_element(v.begin(), mid);
    return 0.5 * (lower + upper);
}

struct Branch {
    std::vector<double> z;
    std::vector<double> f;

    double at(double p) const {
        const auto it = std::lower_bound(z.begin(), z.end(), p);
        if (it == z.begin()) return f.front();
        if (it == z.end()) return f.back();
        const auto i = static_cast<std::size_t>(it - z.begin());
        const double t = (p - z[i - 1]) / (z[i] - z[i - 1]);
        return f[i - 1] + t * (f[i] - f[i - 1]);
    }
};

Branch make_branch(const std::vector<const TraceSample*>& samples) {
    std::vector<const TraceSample*> sorted = samples;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const TraceSample* a, const TraceSample* b) { return a->piezo_z < b->piezo_z; });
    Branch br;
    for (const auto* s : sorted) {
        if (!br.z.empty() && s->piezo_z == br.z.back()) continue;
        br.z.push_back(s->piezo_z);
        br.f.push_back(s->tip_force);
    }
    return br;
}

struct Jump {
    std::size_t onset = 0;  // last sample before the jump, index into the phase's list
    double size = 0.0;
};

// Largest deflection step of the requested sign. A step that straddles a
// sample boundary is merged with its neighbour of the same sign, and the
// merged jump must stand clear of the steps around it (a discontinuity, not
// a steep but smooth stretch of curve).
std::optional<Jump> find_jump(const std::vector<const TraceSample*>& s, double sign, double threshold) {
    if (s.size() < 2) return std::nullopt;
    std::vector<double> d(s.size(), 0.0);
    for (std::size_t i = 1; i < s.size(); ++i) d[i] = sign * (s[i]->deflection - s[i - 1]->deflection);

    std::size_t best = 1;
    for (std::size_t i = 2; i < s.size(); ++i) {
        if (d[i] > d[best]) best = i;
    }
    if (!(d[best] > 0.0)) return std::nullopt;

    std::size_t first = best;
    std::size_t last = best;
    const double after = best + 1 < s.size() ? d[best + 1] : 0.0;
    const double before = best > 1 ? d[best - 1] : 0.0;
    if (std::max(after, before) > threshold) {
        if (after >= before) {
            last = best + 1;
        } else {
            first = best - 1;
        }
    }
    double size = 0.0;
    for (std::size_t i = first; i <= last; ++i) size += d[i];
    if (!(size > threshold)) return std::nullopt;

    // Only same-direction neighbours count: the rebound after a real snap
    // rings the other way.
    double flank = 0.0;
    if (first > 1) flank = std::max(flank, d[first - 1]);
    if (last + 1 < s.size()) flank = std::max(flank, d[last + 1]);
    if (!(size > 5.0 * flank)) return std::nullopt;
    return Jump{first - 1, size};
}

}  // namespace

void SweepConfig::validate() const {
    if (!(z_start > z_turn)) throw std::invalid_argument("SweepConfig: z_start must exceed z_turn");
    if (!(speed > 0.0)) throw std::invalid_argument("SweepConfig: speed must be > 0");
    if (ticks_per_sample < 1) throw std::invalid_argument("SweepConfig: ticks_per_sample must be >= 1");
}

ForceCurveTrace run_sweep(scene::Scene& sc, const SweepConfig& cfg, const TickObserver& observer) {
    cfg.validate();
    auto& net = sc.net;
    if (!net.mass(sc.piezo).anchored) throw std::invalid_argument("run_sweep needs a kinematic piezo");

    const double h = net.timestep();
    const double travel = cfg.z_start - cfg.z_turn;
    const auto leg = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(travel / (cfg.speed * h))));
    const std::uint64_t total = 2 * leg;
    const double leg_d = static_cast<double>(leg);
    const double step_v = travel / (leg_d * h);

    auto piezo_at = [&](std::uint64_t k) {
        if (k <= leg) return cfg.z_start - travel * (static_cast<double>(k) / leg_d);
        return cfg.z_turn + travel * (static_cast<double>(k - leg) / leg_d);
    };

    ForceCurveTrace trace;
    trace.sample_spacing = travel / leg_d * cfg.ticks_per_sample;
    trace.samples.reserve(total / static_cast<std::uint64_t>(cfg.ticks_per_sample) + 2);

    const auto n = static_cast<std::uint64_t>(cfg.ticks_per_sample);
    net.place_anchor(sc.piezo, cfg.z_start, -step_v);
    for (std::uint64_t k = 0; k <= total; ++k) {
        if (k > 0) {
            net.place_anchor(sc.piezo, piezo_at(k), k <= leg ? -step_v : step_v);
            if (!net.step()) throw SweepFault(*net.fault());
        }
        const Phase phase = k <= leg ? Phase::approach : Phase::retract;
        const bool sampled = k % n == 0 || k == total;
        if (sampled) {
            TraceSample s;
            s.tick = k;
            s.phase = phase;
            s.piezo_z = net.mass(sc.piezo).position;
            s.tip_z = net.mass(sc.tip).position;
            s.deflection = sc.deflection();
            s.tip_force = sc.tip_force();
            trace.samples.push_back(s);
        }
        if (observer) observer(sc, phase, sampled ? &trace.samples.back() : nullptr);
    }
    return trace;
}

CurveEvents detect_events(const ForceCurveTrace& trace) {
    CurveEvents ev;
    std::vector<const TraceSample*> approach;
    std::vector<const TraceSample*> retract;
    for (const auto& s : trace.samples) (s.phase == Phase::approach ? approach : retract).push_back(&s);

    std::vector<double> steps;
    auto collect = [&](const std::vector<const TraceSample*>& br) {
        for (std::size_t i = 1; i < br.size(); ++i) {
            if (br[i]->tip_force != 0.0 || br[i - 1]->tip_force != 0.0) {
                steps.push_back(std::abs(br[i]->deflection - br[i - 1]->deflection));
            }
        }
    };
    collect(approach);
    collect(retract);
    if (steps.empty()) return ev;  // never interacted

    ev.jump_threshold = 5.0 * median(steps);
    if (auto j = find_jump(approach, -1.0, ev.jump_threshold)) {
        const auto* s = approach[j->onset];
        ev.snap_in = SnapEvent{s->piezo_z, s->tick, static_cast<std::size_t>(s - trace.samples.data()), -j->size};
    }
    if (auto j = find_jump(retract, 1.0, ev.jump_threshold)) {
        const auto* s = retract[j->onset];
        ev.snap_off = SnapEvent{s->piezo_z, s->tick, static_cast<std::size_t>(s - trace.samples.data()), j->size};
    }

    // Repulsive contact on approach: least-squares slope of force vs piezo height.
    double sp = 0, sf = 0, spp = 0, spf = 0;
    std::size_t n = 0;
    for (const auto* s : approach) {
        if (s->tip_force > 0.0) {
            sp += s->piezo_z;
            sf += s->tip_force;
            ++n;
        }
    }
    if (n >= 3) {
        const double mp = sp / static_cast<double>(n);
        const double mf = sf / static_cast<double>(n);
        for (const auto* s : approach) {
            if (s->tip_force > 0.0) {
                spp += (s->piezo_z - mp) * (s->piezo_z - mp);
                spf += (s->piezo_z - mp) * (s->tip_force - mf);
            }
        }
        if (spp > 0.0) ev.contact_slope_fit = -spf / spp;
    }

    if (!approach.empty() && !retract.empty()) {
        const Branch a = make_branch(approach);
        const Branch r = make_branch(retract);
        const double lo = std::max(a.z.front(), r.z.front());
        const double hi = std::min(a.z.back(), r.z.back());
        const std::size_t m = std::max(a.z.size(), r.z.size());
        if (hi > lo && m >= 2) {
            const double dz = (hi - lo) / static_cast<double>(m - 1);
            double area = 0.0;
            double prev = a.at(lo) - r.at(lo);
            for (std::size_t i = 1; i < m; ++i) {
                const double p = i + 1 == m ? hi : lo + dz * static_cast<double>(i);
                const double cur = a.at(p) - r.at(p);
                area += 0.5 * (prev + cur) * dz;
                prev = cur;
            }
            ev.hysteresis_energy = area;
        }
    }
    return ev;
}

namespace {

// Fraction of consecutive steps in [first, last] with the given sign.
double monotone_share(const std::vector<TraceSample>& s, std::size_t first, std::size_t last, double sign) {
    if (last <= first) return 0.0;
    std::size_t good = 0;
    for (std::size_t i = first + 1; i <= last; ++i) {
        if (sign * (s[i].deflection - s[i - 1].deflection) > 0.0) ++good;
    }
    return static_cast<double>(good) / static_cast<double>(last - first);
}

}  // namespace

Morphology morphology(const ForceCurveTrace& trace, const CurveEvents& ev) {
    Morphology m;
    const auto& s = trace.samples;
    if (!ev.snap_in || !ev.snap_off || s.empty()) return m;
    const std::size_t in = ev.snap_in->sample;
    const std::size_t off = ev.snap_off->sample;
    std::size_t turn = 0;
    while (turn + 1 < s.size() && s[turn + 1].phase == Phase::approach) ++turn;
    if (!(in < turn && turn < off)) return m;

    m.snap_in_jump = ev.snap_in->jump < 0.0;
    m.snap_off_jump = ev.snap_off->jump > 0.0;

    // Plateau: the approach stretch with no interaction at all.
    std::size_t flat = 0;
    double drift = 0.0;
    for (std::size_t i = 0; i <= in && s[i].tip_force == 0.0; ++i) {
        ++flat;
        drift = std::max(drift, std::abs(s[i].deflection));
    }
    m.free_plateau = flat >= 10 && drift <= 0.01 * std::abs(ev.snap_in->jump);

    // Loading runs from just after the jump (two samples to settle) to the turn.
    const std::size_t load_from = std::min(in + 3, turn);
    m.loading = s[turn].deflection > s[load_from].deflection && monotone_share(s, load_from, turn, 1.0) >= 0.9;

    m.unloading_through_zero = s[turn].deflection > 0.0 && s[off].deflection < 0.0 &&
                               monotone_share(s, turn + 1, off, -1.0) >= 0.9;
    return m;
}

double chi(double contact_slope, double cantilever_stiffness) {
    if (!(contact_slope > 0.0) || !(cantilever_stiffness > 0.0)) {
        throw std::domain_error("chi: stiffnesses must be positive");
    }
    return contact_slope * cantilever_stiffness / (contact_slope + cantilever_stiffness);
}

std::vector<Equilibrium> quasi_static_equilibria(const model::ForceLaw& law, double kappa, double piezo_z,
                                                 double surface_z) {
    if (!(kappa > 0.0)) throw std::domain_error("quasi_static_equilibria: kappa must be positive");
    const double cutoff = law.cutoff();
    auto balance = [&](double gap) { return kappa * (piezo_z - surface_z - gap) + law.force(gap); };

    std::vector<Equilibrium> out;
    const double lo = lower_gap(law, balance);
    double prev_gap = lo;
    double prev = balance(lo);
    for (int i = 1; i <= kScanPoints; ++i) {
        const double gap = i == kScanPoints ? cutoff : lo + (cutoff - lo) * (static_cast<double>(i) / kScanPoints);
        const double cur = balance(gap);
        if (cur == 0.0 && gap < cutoff) {
            out.push_back({surface_z + gap, law.gradient(gap) < kappa});
        } else if ((cur > 0.0) != (prev > 0.0) && prev != 0.0) {
            const double root = bisect(balance, prev_gap, gap);
            // A sign change across a force discontinuity is not a root.
            if (std::abs(balance(root)) <= 1e-6 * std::max(std::abs(prev), std::abs(cur))) {
                out.push_back({surface_z + root, law.gradient(root) < kappa});
            }
        }
        prev_gap = gap;
        prev = cur;
    }
    // Beyond cutoff the law is silent and the tip hangs at the piezo.
    if (piezo_z - surface_z >= cutoff) out.push_back({piezo_z, true});
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.tip_z < b.tip_z; });
    return out;
}

std::optional<FoldPoints> fold_points(const model::ForceLaw& law, double kappa, double surface_z) {
    if (!(kappa > 0.0)) throw std::domain_error("fold_points: kappa must be positive");
    const double cutoff = law.cutoff();
    const double lo = 0.5 * law.equilibrium_gap();
    auto excess = [&](double gap) { return law.gradient(gap) - kappa; };

    std::optional<double> rise;
    std::optional<double> fall;
    double prev_gap = lo;
    double prev = excess(lo);
    for (int i = 1; i <= kScanPoints; ++i) {
        const double gap = lo + (cutoff - lo) * (static_cast<double>(i) / kScanPoints);
        const double cur = i == kScanPoints ? -kappa : excess(gap);
        if (!rise && prev <= 0.0 && cur > 0.0) rise = bisect(excess, prev_gap, gap);
        if (rise && !fall && prev > 0.0 && cur <= 0.0) {
            fall = i == kScanPoints && excess(std::nextafter(cutoff, 0.0)) > 0.0 ? cutoff
                                                                                  : bisect(excess, prev_gap, gap);
        }
        prev_gap = gap;
        prev = cur;
    }
    if (!rise || !fall) return std::nullopt;

    FoldPoints fp;
    fp.snap_off_gap = *rise;
    fp.snap_in_gap = *fall;
    fp.snap_off_piezo = surface_z + *rise - law.force(*rise) / kappa;
    fp.snap_in_piezo = surface_z + *fall - law.force(*fall) / kappa;
    return fp;
}

double max_gradient(const model::ForceLaw& law) {
    const double lo = law.equilibrium_gap();
    const double hi = law.cutoff();
    int best = 0;
    double best_g = -INFINITY;
    for (int i = 0; i < kScanPoints; ++i) {
        const double g = law.gradient(lo + (hi - lo) * (static_cast<double>(i) / kScanPoints));
        if (g > best_g) {
            best_g = g;
            best = i;
        }
    }
    double a = lo + (hi - lo) * (std::max(best - 1, 0) / double(kScanPoints));
    double b = lo + (hi - lo) * (std::min(best + 1, kScanPoints - 1) / double(kScanPoints));
    const double ratio = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int i = 0; i < 200 && b - a > 0.0; ++i) {
        const double c = b - ratio * (b - a);
        const double d = a + ratio * (b - a);
        if (c <= a || d >= b) break;
        if (law.gradient(c) > law.gradient(d)) {
            b = d;
        } else {
            a = c;
        }
    }
    return std::max(best_g, law.gradient(0.5 * (a + b)));
}

void write_trace_csv(std::ostream& out, const ForceCurveTrace& trace) {
    out << "tick,phase,piezo_z,tip_z,deflection,tip_force\n";
    for (const auto& s : trace.samples) {
        out << s.tick << ',' << (s.phase == Phase::approach ? "approach" : "retract") << ','
            << format_double(s.piezo_z) << ',' << format_double(s.tip_z) << ',' << format_double(s.deflection)
            << ',' << format_double(s.tip_force) << '\n';
    }
}

std::string events_json(const CurveEvents& ev) {
    auto event = [](const std::optional<SnapEvent>& e) -> nlohmann::ordered_json {
        if (!e) return nullptr;
        return {{"piezo_z", e->piezo_z}, {"tick", e->tick}};
    };
    nlohmann::ordered_json j;
    j["snap_in"] = event(ev.snap_in);
    j["snap_off"] = event(ev.snap_off);
    j["contact_slope_fit"] = ev.contact_slope_fit ? nlohmann::ordered_json(*ev.contact_slope_fit) : nullptr;
    j["hysteresis_energy"] = ev.hysteresis_energy;
    return j.dump(2);
}

}  // namespace nanotouch::curve
