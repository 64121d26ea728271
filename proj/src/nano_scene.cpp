#include "nanotouch/nano_scene.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace nanotouch::scene {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

// Unchecked evaluations shared by the throwing API and the law object.
double raw_force(double z, double a, double b) {
    const double inv = 1.0 / z;
    const double inv6 = inv * inv * inv * inv * inv * inv;
    return inv * inv6 * (12.0 * b * inv6 - 6.0 * a);
}

double raw_gradient(double z, double a, double b) {
    const double inv = 1.0 / z;
    const double inv2 = inv * inv;
    const double inv6 = inv2 * inv2 * inv2;
    return inv2 * inv6 * (42.0 * a - 156.0 * b * inv6);
}

double raw_potential(double z, double a, double b) {
    const double inv = 1.0 / z;
    const double inv6 = inv * inv * inv * inv * inv * inv;
    return inv6 * (b * inv6 - a);
}

void check_gap(double z) {
    if (!(z > 0.0)) throw std::domain_error("tip-surface gap must be positive");
}

}  // namespace

LJParams LJParams::from_equilibrium(double equilibrium_gap, double stiffness_scale, double cutoff_factor) {
    require(equilibrium_gap > 0.0 && stiffness_scale > 0.0 && cutoff_factor > 1.0,
            "from_equilibrium: gap, scale must be > 0 and cutoff factor > 1");
    LJParams p;
    p.attr_coeff = stiffness_scale * std::pow(equilibrium_gap, 8);
    p.rep_coeff = 0.5 * p.attr_coeff * std::pow(equilibrium_gap, 6);
    p.cutoff = cutoff_factor * equilibrium_gap;
    return p;
}

double LJParams::equilibrium_gap() const { return std::pow(2.0 * rep_coeff / attr_coeff, 1.0 / 6.0); }
double LJParams::max_attraction_gap() const { return std::pow(26.0 * rep_coeff / (7.0 * attr_coeff), 1.0 / 6.0); }
double LJParams::max_gradient_gap() const { return std::pow(6.5 * rep_coeff / attr_coeff, 1.0 / 6.0); }

void LJParams::validate() const {
    require(attr_coeff > 0.0 && std::isfinite(attr_coeff), "LJParams.attr_coeff must be > 0");
    require(rep_coeff > 0.0 && std::isfinite(rep_coeff), "LJParams.rep_coeff must be > 0");
    require(cutoff > 0.0 && std::isfinite(cutoff), "LJParams.cutoff must be > 0");
    require(equilibrium_gap() < cutoff, "LJParams: equilibrium gap (2B/A)^(1/6) must lie below cutoff");
}

void CantileverParams::validate() const {
    require(stiffness > 0.0, "CantileverParams.stiffness must be > 0");
    require(tip_mass > 0.0, "CantileverParams.tip_mass must be > 0");
    require(damping >= 0.0, "CantileverParams.damping must be >= 0");
}

void SurfaceParams::validate() const {
    require(n_elements >= 1, "SurfaceParams.n_elements must be >= 1");
    require(element_mass > 0.0, "SurfaceParams.element_mass must be > 0");
    require(neighbor_stiffness > 0.0, "SurfaceParams.neighbor_stiffness must be > 0");
    require(anchor_stiffness > 0.0, "SurfaceParams.anchor_stiffness must be > 0");
    require(element_damping > 0.0, "SurfaceParams.element_damping must be > 0");
    require(contact_slope > 0.0, "SurfaceParams.contact_slope must be > 0");
}

LJParams default_lj() { return LJParams::from_equilibrium(0.3e-9, 1.0); }

CantileverParams default_cantilever() { return {0.1, 5e-4, 0.01}; }

SurfaceParams default_surface() {
    SurfaceParams s;
    s.n_elements = 9;
    s.element_mass = 2e-3;
    s.neighbor_stiffness = 50.0;
    s.anchor_stiffness = 100.0;
    s.element_damping = 0.2;
    s.contact_slope = default_contact_slope(default_lj());
    return s;
}

double lj_force(double z, const LJParams& p) {
    check_gap(z);
    if (z >= p.cutoff) return 0.0;
    return raw_force(z, p.attr_coeff, p.rep_coeff);
}

double lj_force_gradient(double z, const LJParams& p) {
    check_gap(z);
    if (z >= p.cutoff) return 0.0;
    return raw_gradient(z, p.attr_coeff, p.rep_coeff);
}

double lj_potential(double z, const LJParams& p) {
    check_gap(z);
    if (z >= p.cutoff) return 0.0;
    return raw_potential(z, p.attr_coeff, p.rep_coeff) - raw_potential(p.cutoff, p.attr_coeff, p.rep_coeff);
}

double max_lj_gradient(const LJParams& p) {
    const double z = p.max_gradient_gap();
    return z < p.cutoff ? raw_gradient(z, p.attr_coeff, p.rep_coeff) : lj_force_gradient(p.cutoff * (1 - 1e-12), p);
}

LennardJonesLaw::LennardJonesLaw(const LJParams& p)
    : p_(p), z_eq_(p.equilibrium_gap()), z_grad_(p.max_gradient_gap()),
      u_cut_(raw_potential(p.cutoff, p.attr_coeff, p.rep_coeff)) {
    p.validate();
}

double LennardJonesLaw::force(double gap) const noexcept {
    if (!(gap > 0.0)) return kNaN;
    if (gap >= p_.cutoff) return 0.0;
    return raw_force(gap, p_.attr_coeff, p_.rep_coeff);
}

double LennardJonesLaw::gradient(double gap) const noexcept {
    if (!(gap > 0.0)) return kNaN;
    if (gap >= p_.cutoff) return 0.0;
    return raw_gradient(gap, p_.attr_coeff, p_.rep_coeff);
}

double LennardJonesLaw::potential(double gap) const noexcept {
    if (!(gap > 0.0)) return kNaN;
    if (gap >= p_.cutoff) return 0.0;
    return raw_potential(gap, p_.attr_coeff, p_.rep_coeff) - u_cut_;
}

PiecewiseLinearLaw::PiecewiseLinearLaw(double z1, double z2, double z3, double contact_slope,
                                       double max_attraction)
    : z1_(z1), z2_(z2), z3_(z3), slope_(contact_slope), fmax_(max_attraction) {
    require(z1 < z2 && z2 < z3, "PiecewiseLinearLaw breakpoints must satisfy z1 < z2 < z3");
    require(contact_slope > 0.0, "PiecewiseLinearLaw contact slope must be > 0");
    require(max_attraction > 0.0, "PiecewiseLinearLaw max attraction must be > 0");
}

double PiecewiseLinearLaw::force(double z) const noexcept {
    if (!std::isfinite(z)) return kNaN;
    if (z >= z3_) return 0.0;
    if (z >= z2_) return -fmax_ * (z3_ - z) / (z3_ - z2_);
    if (z >= z1_) return -fmax_ * (z - z1_) / (z2_ - z1_);
    return slope_ * (z1_ - z);
}

double PiecewiseLinearLaw::gradient(double z) const noexcept {
    if (!std::isfinite(z)) return kNaN;
    if (z >= z3_) return 0.0;
    if (z >= z2_) return fmax_ / (z3_ - z2_);
    if (z >= z1_) return -fmax_ / (z2_ - z1_);
    return -slope_;
}

double PiecewiseLinearLaw::potential(double z) const noexcept {
    if (!std::isfinite(z)) return kNaN;
    if (z >= z3_) return 0.0;
    const double w2 = z2_ - z1_;
    const double w3 = z3_ - z2_;
    if (z >= z2_) return -0.5 * fmax_ * (z3_ - z) * (z3_ - z) / w3;
    const double u2 = -0.5 * fmax_ * w3;
    if (z >= z1_) return u2 - 0.5 * fmax_ * (w2 * w2 - (z - z1_) * (z - z1_)) / w2;
    const double u1 = -0.5 * fmax_ * (z3_ - z1_);
    return u1 + 0.5 * slope_ * (z1_ - z) * (z1_ - z);
}

double default_contact_slope(const LJParams& p) {
    return std::abs(lj_force_gradient(0.9 * p.equilibrium_gap(), p));
}

PiecewiseLinearLaw linearize_lj(const LJParams& p, double contact_slope) {
    p.validate();
    const double z_eq = p.equilibrium_gap();
    const double z_star = p.max_attraction_gap();
    require(z_star < p.cutoff, "linearize_lj: maximum attraction lies beyond cutoff");
    const double fmax = -lj_force(z_star, p);
    // The relaxing segment takes the law's steepest gradient, so a cantilever
    // snaps on the linearization exactly when it snaps on the full law.
    const double z2 = p.cutoff - fmax / max_lj_gradient(p);
    require(z2 > z_eq, "linearize_lj: attraction well too narrow for a three-part fit");
    return PiecewiseLinearLaw(z_eq, z2, p.cutoff, contact_slope, fmax);
}

PiecewiseLinearLaw linearize_lj(const LJParams& p) { return linearize_lj(p, default_contact_slope(p)); }

double Scene::gap() const { return net.mass(tip).position - net.mass(contact).position; }

double Scene::deflection() const { return net.mass(tip).position - net.mass(piezo).position; }

double Scene::tip_force() const { return law->force(gap()); }

Scene build_scene(const LJParams& lj, const CantileverParams& cant, const SurfaceParams& surf,
                  bool use_linearized, const PiezoParams& piezo, double timestep) {
    lj.validate();
    cant.validate();
    surf.validate();
    if (piezo.mass) require(*piezo.mass > 0.0, "piezo mass must be > 0");

    std::shared_ptr<const model::ForceLaw> law;
    if (use_linearized) {
        law = std::make_shared<PiecewiseLinearLaw>(linearize_lj(lj, surf.contact_slope));
    } else {
        law = std::make_shared<LennardJonesLaw>(lj);
    }

    Scene s{model::Network(timestep), 0, 0, 0, {}, {}, {}, {}, {}};
    s.lj = lj;
    s.cantilever = cant;
    s.surface_params = surf;
    s.law = law;

    s.piezo = piezo.mass ? s.net.add_mass(*piezo.mass, piezo.initial_z) : s.net.add_anchor(piezo.initial_z);
    s.tip = s.net.add_mass(cant.tip_mass, piezo.initial_z);
    s.net.add_link(model::SpringDamperLink{s.piezo, s.tip, cant.stiffness, 0.0, 0.0});
    // Air drag on the beam: damps the tip against the frame, not the piezo.
    if (cant.damping > 0.0) s.net.add_link(model::TetherLink{s.tip, 0.0, 0.0, cant.damping});

    for (int i = 0; i < surf.n_elements; ++i) {
        const auto id = s.net.add_mass(surf.element_mass, 0.0);
        s.surface.push_back(id);
        s.net.add_link(model::TetherLink{id, 0.0, surf.anchor_stiffness, surf.element_damping});
        if (i > 0) {
            s.net.add_link(model::SpringDamperLink{s.surface[i - 1], id, surf.neighbor_stiffness, 0.0, 0.0});
        }
    }
    s.contact = s.surface[surf.n_elements / 2];
    s.net.add_link(model::ForceLawLink{s.contact, s.tip, law});
    return s;
}

}  // namespace nanotouch::scene
