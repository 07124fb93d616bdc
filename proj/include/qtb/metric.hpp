#pragma once

#include "qtb/kinematics.hpp"
#include "qtb/potential.hpp"
#include "qtb/types.hpp"

namespace qtb {

constexpr double kDefaultGMin = 1e-12;

/// The energy hypersurface: conformal metric g(x) delta_ij with
/// g = (E - U(x)) / U0.
struct EnergySurface {
    double E = 0.0;
    double U0 = 1.0;
    PotentialPtr potential;
    double g_min = kDefaultGMin;

    void validate() const;
};

struct MetricSample {
    double g = 1.0;
    Vec3 a = Vec3::Zero();
    double lambda_sq = 0.0;
};

/// g = (E - U(x)) / U0. Throws ForbiddenRegionError when g <= g_min.
double conformal_factor(const InternalCoords& x, const EnergySurface& surf);

/// a_i = -(1/2) d_i ln g = (1/2) d_iU / (E - U).
Vec3 log_gradient(const InternalCoords& x, const EnergySurface& surf);

/// Centrifugal term (J/g)^2.
double lambda_sq(double g, double J);

/// g, a and (J/g)^2 from a single potential evaluation.
MetricSample metric_sample(const InternalCoords& x, const EnergySurface& surf, double J);

/// (mu0/2) g [sum (xdot^i)^2 + (J/g)^2].
double reduced_hamiltonian(const InternalCoords& x, const Vec3& x_dot, double J,
                           const EnergySurface& surf, double mu0);

/// rho1 = r, rho2 = R, rho3 = theta, rho4..6 = Euler angles (Theta, Phi, Psi).
struct RhoCoords {
    double r = 0.0;
    double R = 0.0;
    double theta = 0.0;
    double Theta = 0.0;
    double Phi = 0.0;
    double Psi = 0.0;

    Eigen::Matrix<double, 6, 1> vec() const;
    static RhoCoords from(const Eigen::Matrix<double, 6, 1>& v);
};

/// The 6x6 tensor gamma^{ab}: identity 2x2 block, gamma^{33} = R^2 and a
/// dense symmetric external 3x3 block.
struct GammaTensor {
    Mat6 m = Mat6::Zero();

    double operator()(int a, int b) const { return m(a, b); }
    double gamma33() const { return m(2, 2); }
    Mat3 external_block() const { return m.block<3, 3>(3, 3); }
};

/// Components exactly as printed, including the r^2 sin(Theta) term of
/// gamma^{55} (not sin^2).
GammaTensor gamma_rho(const RhoCoords& rho);

}  // namespace qtb
