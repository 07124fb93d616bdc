#pragma once

// Mass-scaled Jacobi coordinates and the internal (triangle) coordinates
// x = (x1, x2, x3) used by the geodesic formulation.

#include "qtb/types.hpp"

namespace qtb {

struct Masses {
    double m1 = 1.0;
    double m2 = 1.0;
    double m3 = 1.0;

    double total() const { return m1 + m2 + m3; }
    /// Throws DomainError unless all three masses are strictly positive and finite.
    void validate() const;
};

/// r: scaled 2-3 separation, R: scaled distance from body 1 to the 2-3 center,
/// theta: angle enclosed by the two vectors.
struct JacobiCoords {
    double r = 0.0;
    double R = 0.0;
    double theta = 0.0;
};

struct InternalCoords {
    double x1 = 0.0;
    double x2 = 0.0;
    double x3 = 0.0;

    Vec3 vec() const { return {x1, x2, x3}; }
    static InternalCoords from(const Vec3& v) { return {v[0], v[1], v[2]}; }

    /// |x1 - x2| <= x3 <= x1 + x2 up to a relative slack.
    bool is_triangle(double rel_tol = 1e-12) const;
};

/// Scaled Jacobi vectors before reduction to norms and angle.
struct JacobiVectors {
    Vec3 r;
    Vec3 R;
};

/// mu0 = sqrt(m1 m2 m3 / (m1 + m2 + m3)).
double reduced_mass(const Masses& m);

/// Linear map from Cartesian positions (or velocities) to the scaled Jacobi
/// vectors. Works equally for velocities since the map is linear.
JacobiVectors scaled_jacobi_vectors(const Vec3& r1, const Vec3& r2, const Vec3& r3,
                                    const Masses& m);

/// Norms and enclosed angle of the scaled Jacobi vectors. Throws
/// DegenerateConfigurationError when either vector vanishes.
JacobiCoords mass_scaled_jacobi(const Vec3& r1, const Vec3& r2, const Vec3& r3,
                                const Masses& m);

InternalCoords internal_from_jacobi(const JacobiCoords& j);

/// Inverse of internal_from_jacobi. Throws DegenerateConfigurationError for
/// x1 == 0 or x2 == 0 and DomainError when the triangle inequality fails.
JacobiCoords jacobi_from_internal(const InternalCoords& x);

/// (mu0/2)(|rdot|^2 + |Rdot|^2) from scaled Jacobi velocities.
double jacobi_kinetic_energy(const Vec3& r_dot, const Vec3& R_dot, double mu0);

/// Maps internal coordinates to the physical pair distances (d12, d13, d23).
///
/// Each squared distance is a fixed linear combination of x1^2, x2^2, x3^2
/// determined only by the masses, so the map and its gradient are exact.
class PairDistanceMap {
public:
    explicit PairDistanceMap(const Masses& m);

    /// Squared distances (d12^2, d13^2, d23^2).
    Vec3 squared(const InternalCoords& x) const;
    /// Distances; throws DomainError when a squared distance is negative,
    /// which happens only outside the triangle region.
    Vec3 distances(const InternalCoords& x) const;
    /// coeffs()(k, i) = d(d_k^2)/d(x_i^2).
    const Mat3& coeffs() const { return coeffs_; }

private:
    Mat3 coeffs_;
};

}  // namespace qtb
