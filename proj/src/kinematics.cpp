#include "qtb/kinematics.hpp"

#include <algorithm>
#include <Eigen/Geometry>
#include <cmath>
#include <numbers>

#include "qtb/errors.hpp"

namespace qtb {

namespace {

// Below this norm a scaled Jacobi vector is treated as zero.
constexpr double kDegenerateLength = 1e-300;

}  // namespace

void Masses::validate() const {
    for (double m : {m1, m2, m3}) {
        if (!(m > 0.0) || !std::isfinite(m)) {
            throw DomainError("masses must be strictly positive and finite");
        }
    }
}

bool InternalCoords::is_triangle(double rel_tol) const {
    if (x1 < 0.0 || x2 < 0.0 || x3 < 0.0) return false;
    const double slack = rel_tol * std::max({x1, x2, x3, 1.0});
    return x3 <= x1 + x2 + slack && std::abs(x1 - x2) <= x3 + slack;
}

double reduced_mass(const Masses& m) {
    m.validate();
    return std::sqrt(m.m1 * m.m2 * m.m3 / m.total());
}

JacobiVectors scaled_jacobi_vectors(const Vec3& r1, const Vec3& r2, const Vec3& r3,
                                    const Masses& m) {
    const double mu0 = reduced_mass(m);
    const double m23 = m.m2 + m.m3;
    const double mu23 = m.m2 * m.m3 / m23;
    const double mu1_23 = m.m1 * m23 / m.total();
    const Vec3 pair_center = (m.m2 * r2 + m.m3 * r3) / m23;
    return {std::sqrt(mu23 / mu0) * (r2 - r3), std::sqrt(mu1_23 / mu0) * (r1 - pair_center)};
}

JacobiCoords mass_scaled_jacobi(const Vec3& r1, const Vec3& r2, const Vec3& r3,
                                const Masses& m) {
    if (!r1.allFinite() || !r2.allFinite() || !r3.allFinite()) {
        throw DomainError("mass_scaled_jacobi: non-finite position");
    }
    const JacobiVectors v = scaled_jacobi_vectors(r1, r2, r3, m);
    const double r = v.r.norm();
    const double R = v.R.norm();
    if (r <= kDegenerateLength) {
        throw DegenerateConfigurationError("bodies 2 and 3 coincide; scattering angle undefined");
    }
    if (R <= kDegenerateLength) {
        throw DegenerateConfigurationError("body 1 sits at the 2-3 center of mass; angle undefined");
    }
    // atan2 of |cross| and dot keeps accuracy near 0 and pi.
    const double theta = std::atan2(v.r.cross(v.R).norm(), v.r.dot(v.R));
    return {r, R, theta};
}

InternalCoords internal_from_jacobi(const JacobiCoords& j) {
    const double c = std::cos(j.theta);
    const double sq = j.r * j.r - 2.0 * j.r * j.R * c + j.R * j.R;
    return {j.r, j.R, std::sqrt(std::max(sq, 0.0))};
}

JacobiCoords jacobi_from_internal(const InternalCoords& x) {
    if (!(x.x1 > 0.0) || !(x.x2 > 0.0)) {
        throw DegenerateConfigurationError("jacobi_from_internal: x1 and x2 must be positive");
    }
    if (!x.is_triangle()) {
        throw DomainError("jacobi_from_internal: triangle inequality violated");
    }
    const double c = (x.x1 * x.x1 + x.x2 * x.x2 - x.x3 * x.x3) / (2.0 * x.x1 * x.x2);
    return {x.x1, x.x2, std::acos(std::clamp(c, -1.0, 1.0))};
}

double jacobi_kinetic_energy(const Vec3& r_dot, const Vec3& R_dot, double mu0) {
    return 0.5 * mu0 * (r_dot.squaredNorm() + R_dot.squaredNorm());
}

PairDistanceMap::PairDistanceMap(const Masses& m) {
    const double mu0 = reduced_mass(m);
    const double m23 = m.m2 + m.m3;
    const double s_r = std::sqrt(m.m2 * m.m3 / m23 / mu0);
    const double s_R = std::sqrt(m.m1 * m23 / m.total() / mu0);
    const double alpha = m.m3 / m23;  // body 2 offset from the pair center, in units of r
    const double beta = m.m2 / m23;   // body 3 offset
    const double cross = 1.0 / (s_r * s_R);

    // r.R = (x1^2 + x2^2 - x3^2) / (2 s_r s_R) in unscaled units.
    coeffs_ << alpha * alpha / (s_r * s_r) - alpha * cross, 1.0 / (s_R * s_R) - alpha * cross, alpha * cross,
        beta * beta / (s_r * s_r) + beta * cross, 1.0 / (s_R * s_R) + beta * cross, -beta * cross,
        1.0 / (s_r * s_r), 0.0, 0.0;
}

Vec3 PairDistanceMap::squared(const InternalCoords& x) const {
    const Vec3 sq(x.x1 * x.x1, x.x2 * x.x2, x.x3 * x.x3);
    return coeffs_ * sq;
}

Vec3 PairDistanceMap::distances(const InternalCoords& x) const {
    const Vec3 sq = squared(x);
    for (int k = 0; k < 3; ++k) {
        if (!(sq[k] >= 0.0)) {
            throw DomainError("internal coordinates outside the triangle region");
        }
    }
    return sq.cwiseSqrt();
}

}  // namespace qtb
