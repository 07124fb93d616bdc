#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "qtb/kinematics.hpp"
#include "qtb/metric.hpp"
#include "qtb/types.hpp"

namespace qtb {

/// Exact integrals of the external (Euler-angle) motion.
struct AngularMomentum {
    double J1 = 0.0;
    double J2 = 0.0;
    double J3 = 0.0;

    Vec3 vec() const { return {J1, J2, J3}; }
    double total() const { return vec().norm(); }
};

/// Internal point x and xi = dx/ds at parameter s.
struct GeodesicState {
    InternalCoords x;
    Vec3 xi = Vec3::Zero();
    double s = 0.0;
};

struct GeodesicRhs {
    Vec3 dx;
    Vec3 dxi;
};

/// Momentum part of the reduced system for given a and Lambda^2:
///   dxi^i/ds = a_i (xi_i^2 - sum_{j != i} xi_j^2 - Lambda^2) + 2 xi_i sum_{j != i} a_j xi_j
Vec3 riccati_rhs(const Vec3& xi, const Vec3& a, double lambda_sq);

/// dx/ds = xi, dxi/ds = riccati_rhs(xi, a(x), (J/g(x))^2).
GeodesicRhs geodesic_rhs(const GeodesicState& state, const EnergySurface& surf, double J);

/// Second-order form of the same dynamics, written through the conformal
/// Christoffel contraction: xddot = 2 (a.xdot) xdot - a (|xdot|^2 + Lambda^2).
Vec3 geodesic_acceleration(const InternalCoords& x, const Vec3& x_dot, const EnergySurface& surf,
                           double J);

/// (xdot^4, xdot^5, xdot^6) = J / g.
Vec3 external_rates(double g, const AngularMomentum& J);

enum class Termination { reached_end, boundary, max_steps };

std::string to_string(Termination t);

struct TrajectorySample {
    double s = 0.0;
    InternalCoords x;
    Vec3 xi = Vec3::Zero();
    MetricSample metric;
};

struct TrajectoryRecord {
    std::vector<TrajectorySample> samples;
    AngularMomentum J;
    Termination termination = Termination::reached_end;
    std::size_t accepted_steps = 0;
    std::size_t rejected_steps = 0;
};

struct IntegrateOptions {
    double s_end = 10.0;
    double tol = 1e-9;
    /// Spacing of dense-output samples; <= 0 records every accepted step.
    double sample_ds = 0.0;
    std::size_t max_steps = 1'000'000;
};

/// Adaptive Dormand-Prince 5(4) integration of the reduced system.
/// Contact with the forbidden region (or any point where the potential is
/// undefined, such as a negative squared pair distance) ends
/// the run with Termination::boundary instead of throwing.
TrajectoryRecord integrate(const GeodesicState& state0, const EnergySurface& surf,
                           const AngularMomentum& J, const IntegrateOptions& opt);

/// Trapezoidal quadrature of J/g over the samples; one row per sample.
std::vector<Vec3> external_coordinates(const TrajectoryRecord& traj, const Vec3& x_ext0);

struct ConservationReport {
    double h_initial = 0.0;
    double max_rel_h_drift = 0.0;
    double max_rel_speed_drift = 0.0;
    std::size_t samples = 0;
};

/// Max relative drift of the reduced Hamiltonian and of the conformal speed
/// g (|xi|^2 + Lambda^2) relative to the first sample.
ConservationReport conservation_report(const TrajectoryRecord& traj, double mu0);

/// Reduced Hamiltonian at a stored sample.
double sample_hamiltonian(const TrajectorySample& smp, double mu0);

/// CSV with header s,x1,x2,x3,xi1,xi2,xi3,g,H.
void write_trajectory_csv(std::ostream& os, const TrajectoryRecord& traj, double mu0);

/// Reads back the CSV columns; metric samples are recomputed from surf.
TrajectoryRecord read_trajectory_csv(std::istream& is, const EnergySurface& surf,
                                     const AngularMomentum& J);

}  // namespace qtb
