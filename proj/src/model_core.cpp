#include "nanotouch/model_core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace nanotouch::model {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

Network::Network(double timestep) : timestep_(timestep) {
    if (!(timestep > 0.0) || !std::isfinite(timestep)) {
        throw std::invalid_argument("network timestep must be positive and finite");
    }
}

MassId Network::add_mass(double mass, double position, double velocity) {
    if (!(mass > 0.0) || !std::isfinite(mass)) {
        throw std::invalid_argument("free mass must be positive and finite");
    }
    masses_.push_back({mass, false, position, velocity});
    external_.push_back(0.0);
    damp_coeff_.push_back(0.0);
    damp_target_.push_back(0.0);
    last_forces_.push_back(0.0);
    return masses_.size() - 1;
}

MassId Network::add_anchor(double position) {
    masses_.push_back({0.0, true, position, 0.0});
    external_.push_back(0.0);
    damp_coeff_.push_back(0.0);
    damp_target_.push_back(0.0);
    last_forces_.push_back(0.0);
    return masses_.size() - 1;
}

void Network::check_mass(MassId id) const {
    if (id >= masses_.size()) {
        throw std::out_of_range("link endpoint " + std::to_string(id) + " is not a mass");
    }
}

std::size_t Network::add_link(Link link) {
    std::visit(overloaded{
                   [&](const SpringDamperLink& l) {
                       check_mass(l.a);
                       check_mass(l.b);
                       if (l.stiffness < 0.0 || l.damping < 0.0) {
                           throw std::invalid_argument("spring stiffness and damping must be >= 0");
                       }
                   },
                   [&](const TetherLink& l) {
                       check_mass(l.mass);
                       if (l.stiffness < 0.0 || l.damping < 0.0) {
                           throw std::invalid_argument("tether stiffness and damping must be >= 0");
                       }
                   },
                   [&](const ForceLawLink& l) {
                       check_mass(l.a);
                       check_mass(l.b);
                       if (!l.law) throw std::invalid_argument("force-law link without a law");
                   },
               },
               link);
    links_.push_back(std::move(link));
    return links_.size() - 1;
}

void Network::apply_force(MassId id, double force) {
    check_mass(id);
    external_[id] += force;
}

void Network::apply_damping(MassId id, double coefficient, double target_velocity) {
    check_mass(id);
    if (masses_[id].anchored) throw std::logic_error("apply_damping on an anchored mass");
    if (!(coefficient >= 0.0)) throw std::invalid_argument("damping coefficient must be >= 0");
    damp_coeff_[id] += coefficient;
    damp_target_[id] = target_velocity;
}

void Network::place_anchor(MassId id, double position, double velocity) {
    check_mass(id);
    auto& m = masses_[id];
    if (!m.anchored) throw std::logic_error("place_anchor on a free mass");
    m.position = position;
    m.velocity = velocity;
}

void Network::accumulate_link_forces() {
    auto& f = last_forces_;
    for (const auto& link : links_) {
        std::visit(overloaded{
                       [&](const SpringDamperLink& l) {
                           const auto& ma = masses_[l.a];
                           const auto& mb = masses_[l.b];
                           const double stretch = (mb.position - ma.position) - l.rest_length;
                           const double rate = mb.velocity - ma.velocity;
                           const double pull = l.stiffness * stretch + l.damping * rate;
                           f[l.a] += pull;
                           f[l.b] -= pull;
                       },
                       [&](const TetherLink& l) {
                           const auto& m = masses_[l.mass];
                           f[l.mass] -= l.stiffness * (m.position - l.anchor_position) + l.damping * m.velocity;
                       },
                       [&](const ForceLawLink& l) {
                           const double push = l.law->force(masses_[l.b].position - masses_[l.a].position);
                           f[l.a] -= push;
                           f[l.b] += push;
                       },
                   },
                   link);
    }
}

bool Network::step() {
    if (fault_) return false;

    for (std::size_t i = 0; i < masses_.size(); ++i) last_forces_[i] = external_[i];
    accumulate_link_forces();

    const double h = timestep_;
    for (std::size_t i = 0; i < masses_.size(); ++i) {
        if (!std::isfinite(last_forces_[i])) {
            fault_ = Fault{tick_, i, "non-finite force"};
            return false;
        }
    }
    for (std::size_t i = 0; i < masses_.size(); ++i) {
        auto& m = masses_[i];
        if (m.anchored) continue;
        const double c = damp_coeff_[i];
        if (c > 0.0) {
            const double v = (m.velocity + h * (last_forces_[i] + c * damp_target_[i]) / m.mass) / (1.0 + h * c / m.mass);
            last_forces_[i] += c * (damp_target_[i] - v);
            m.velocity = v;
        } else {
            m.velocity += last_forces_[i] / m.mass * h;
        }
        m.position += m.velocity * h;
    }
    for (std::size_t i = 0; i < masses_.size(); ++i) {
        if (!std::isfinite(masses_[i].position) || !std::isfinite(masses_[i].velocity)) {
            fault_ = Fault{tick_, i, "non-finite position"};
            return false;
        }
    }
    std::fill(external_.begin(), external_.end(), 0.0);
    std::fill(damp_coeff_.begin(), damp_coeff_.end(), 0.0);
    ++tick_;
    return true;
}

double mechanical_energy(const Network& net) {
    const auto masses = net.masses();
    double energy = 0.0;
    for (const auto& m : masses) {
        if (!m.anchored) energy += 0.5 * m.mass * m.velocity * m.velocity;
    }
    for (const auto& link : net.links()) {
        energy += std::visit(overloaded{
                                 [&](const SpringDamperLink& l) {
                                     const double s = masses[l.b].position - masses[l.a].position - l.rest_length;
                                     return 0.5 * l.stiffness * s * s;
                                 },
                                 [&](const TetherLink& l) {
                                     const double s = masses[l.mass].position - l.anchor_position;
                                     return 0.5 * l.stiffness * s * s;
                                 },
                                 [&](const ForceLawLink& l) {
                                     return l.law->potential(masses[l.b].position - masses[l.a].position);
                                 },
                             },
                             link);
    }
    return energy;
}

}  // namespace nanotouch::model
