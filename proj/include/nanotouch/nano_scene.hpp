#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "nanotouch/model_core.hpp"

namespace nanotouch::scene {

// Tip-surface interaction U(z) = B/z^12 - A/z^6, truncated at cutoff.
struct LJParams {
    double attr_coeff = 0.0;  // A, J.m^6
    double rep_coeff = 0.0;   // B, J.m^12
    double cutoff = 0.0;      // m

    // Builds A and B from the zero-force gap and the scale A / z_eq^8 (N/m),
    // which sets every stiffness of the law.
    static LJParams from_equilibrium(double equilibrium_gap, double stiffness_scale,
                                     double cutoff_factor = 3.0);

    double equilibrium_gap() const;     // (2B/A)^(1/6)
    double max_attraction_gap() const;  // (26B/7A)^(1/6)
    double max_gradient_gap() const;    // (13B/2A)^(1/6)
    void validate() const;
};

struct CantileverParams {
    double stiffness = 0.0;  // kappa, N/m
    double tip_mass = 0.0;   // kg
    double damping = 0.0;    // N.s/m, viscous drag on the tip
    void validate() const;
};

struct SurfaceParams {
    int n_elements = 1;
    double element_mass = 0.0;
    double neighbor_stiffness = 0.0;
    double anchor_stiffness = 0.0;
    double element_damping = 0.0;
    double contact_slope = 0.0;  // repulsive slope of the linearized law, N/m
    void validate() const;
};

// How the piezo is driven: kinematically (anchored, scripted position) or by
// force through a finite mass.
struct PiezoParams {
    std::optional<double> mass;  // empty: kinematic
    double initial_z = 0.0;      // m above the undeformed surface
};

// Desk-scale parameter set: slow enough to integrate at 3 kHz, with a
// snap instability (max LJ gradient ~ 37 kappa).
LJParams default_lj();
CantileverParams default_cantilever();
SurfaceParams default_surface();

// Pure law evaluations. Throw std::domain_error for z <= 0.
double lj_force(double z, const LJParams& p);
double lj_force_gradient(double z, const LJParams& p);
double lj_potential(double z, const LJParams& p);  // zero at cutoff
double max_lj_gradient(const LJParams& p);

class LennardJonesLaw final : public model::ForceLaw {
public:
    explicit LennardJonesLaw(const LJParams& p);
    double force(double gap) const noexcept override;
    double gradient(double gap) const noexcept override;
    double potential(double gap) const noexcept override;
    double cutoff() const noexcept override { return p_.cutoff; }
    double equilibrium_gap() const noexcept override { return z_eq_; }
    double max_gradient_gap() const noexcept override { return z_grad_; }
    std::vector<double> kinks() const override { return {p_.cutoff}; }
    const LJParams& params() const noexcept { return p_; }

private:
    LJParams p_;
    double z_eq_;
    double z_grad_;
    double u_cut_;
};

// Three-part continuous linearization:
//   z < z1       repulsive, slope -contact_slope, f(z1) = 0
//   z1..z2       attraction deepening to f(z2) = -max_attraction
//   z2..z3       attraction relaxing back to f(z3) = 0
// linearize_lj puts z1 at the zero-force gap, z3 at the cutoff, the depth at
// the law's peak attraction and the z2..z3 slope at its steepest gradient.
//   z >= z3      zero
class PiecewiseLinearLaw final : public model::ForceLaw {
public:
    PiecewiseLinearLaw(double z1, double z2, double z3, double contact_slope, double max_attraction);

    double force(double gap) const noexcept override;
    double gradient(double gap) const noexcept override;
    double potential(double gap) const noexcept override;
    double cutoff() const noexcept override { return z3_; }
    double equilibrium_gap() const noexcept override { return z1_; }
    double max_gradient_gap() const noexcept override { return 0.5 * (z2_ + z3_); }
    std::vector<double> kinks() const override { return {z1_, z2_, z3_}; }

    double z1() const noexcept { return z1_; }
    double z2() const noexcept { return z2_; }
    double z3() const noexcept { return z3_; }
    double contact_slope() const noexcept { return slope_; }
    double max_attraction() const noexcept { return fmax_; }

private:
    double z1_, z2_, z3_, slope_, fmax_;
};

// Repulsive slope used when none is given: |gradient| at 0.9 z_eq.
double default_contact_slope(const LJParams& p);
PiecewiseLinearLaw linearize_lj(const LJParams& p, double contact_slope);
PiecewiseLinearLaw linearize_lj(const LJParams& p);

struct Scene {
    model::Network net;
    model::MassId piezo = 0;
    model::MassId tip = 0;
    model::MassId contact = 0;  // surface element under the tip
    std::vector<model::MassId> surface;
    std::shared_ptr<const model::ForceLaw> law;
    LJParams lj;
    CantileverParams cantilever;
    SurfaceParams surface_params;

    double gap() const;
    double deflection() const;
    double tip_force() const;  // interaction force on the tip, + = repulsive
};

Scene build_scene(const LJParams& lj, const CantileverParams& cant, const SurfaceParams& surf,
                  bool use_linearized, const PiezoParams& piezo, double timestep);

}  // namespace nanotouch::scene
