#include "qtb/potential.hpp"

#include <cmath>

#include "qtb/errors.hpp"

namespace qtb {

double PairwisePotential::evaluate(const InternalCoords& x) const {
    const Vec3 sq = map_.squared(x);
    double u = 0.0;
    for (int k = 0; k < 3; ++k) {
        if (!(sq[k] >= 0.0)) throw DomainError("internal coordinates outside the triangle region");
        u += pair_term(k, sq[k]).value;
    }
    return u;
}

Vec3 PairwisePotential::gradient(const InternalCoords& x) const {
    const Vec3 sq = map_.squared(x);
    const Vec3 xv = x.vec();
    Vec3 grad = Vec3::Zero();
    for (int k = 0; k < 3; ++k) {
        if (!(sq[k] >= 0.0)) throw DomainError("internal coordinates outside the triangle region");
        const double dv = pair_term(k, sq[k]).d_value_d_sq;
        for (int i = 0; i < 3; ++i) {
            grad[i] += dv * 2.0 * map_.coeffs()(k, i) * xv[i];
        }
    }
    return grad;
}

double PairwisePotential::pair_mass_product(int pair) const {
    switch (pair) {
        case 0: return masses_.m1 * masses_.m2;
        case 1: return masses_.m1 * masses_.m3;
        default: return masses_.m2 * masses_.m3;
    }
}

GravityPotential::GravityPotential(const Masses& m, double G, double softening)
    : PairwisePotential(m), G_(G), softening_(softening) {
    if (!(G > 0.0)) throw DomainError("gravity: G must be positive");
    if (!(softening >= 0.0)) throw DomainError("gravity: softening must be nonnegative");
}

PairwisePotential::PairTerm GravityPotential::pair_term(int pair, double dist_sq) const {
    const double gmm = G_ * pair_mass_product(pair);
    const double q = dist_sq + softening_ * softening_;
    const double inv = 1.0 / std::sqrt(q);
    return {-gmm * inv, 0.5 * gmm * inv / q};
}

MorsePotential::MorsePotential(const Masses& m, double depth, double alpha, double d0)
    : PairwisePotential(m), depth_(depth), alpha_(alpha), d0_(d0) {
    if (!(depth > 0.0)) throw DomainError("morse: depth D must be positive");
    if (!(alpha > 0.0)) throw DomainError("morse: alpha must be positive");
    if (!(d0 > 0.0)) throw DomainError("morse: d0 must be positive");
}

PairwisePotential::PairTerm MorsePotential::pair_term(int, double dist_sq) const {
    const double d = std::sqrt(dist_sq);
    const double e = std::exp(-alpha_ * (d - d0_));
    const double one_minus = 1.0 - e;
    const double value = depth_ * (one_minus * one_minus - 1.0);
    const double dv_dd = 2.0 * depth_ * alpha_ * one_minus * e;
    return {value, dv_dd / (2.0 * d)};
}

double potential_depth_at(const PotentialModel& u, const InternalCoords& x_ref) {
    return std::abs(u.evaluate(x_ref));
}

}  // namespace qtb
