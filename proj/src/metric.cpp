#include "qtb/metric.hpp"

#include <cmath>
#include <string>

#include "qtb/errors.hpp"

namespace qtb {

void EnergySurface::validate() const {
    if (!potential) throw DomainError("energy surface: no potential");
    if (!(U0 > 0.0) || !std::isfinite(U0)) throw DomainError("energy surface: U0 must be positive");
    if (!std::isfinite(E)) throw DomainError("energy surface: E must be finite");
    if (!(g_min > 0.0)) throw DomainError("energy surface: g_min must be positive");
}

namespace {

double checked_g(double u, const EnergySurface& surf) {
    const double g = (surf.E - u) / surf.U0;
    if (!(g > surf.g_min)) {
        throw ForbiddenRegionError("forbidden region: g = " + std::to_string(g));
    }
    return g;
}

}  // namespace

double conformal_factor(const InternalCoords& x, const EnergySurface& surf) {
    return checked_g(surf.potential->evaluate(x), surf);
}

Vec3 log_gradient(const InternalCoords& x, const EnergySurface& surf) {
    const double u = surf.potential->evaluate(x);
    checked_g(u, surf);
    return 0.5 * surf.potential->gradient(x) / (surf.E - u);
}

double lambda_sq(double g, double J) {
    const double l = J / g;
    return l * l;
}

MetricSample metric_sample(const InternalCoords& x, const EnergySurface& surf, double J) {
    const double u = surf.potential->evaluate(x);
    MetricSample out;
    out.g = checked_g(u, surf);
    out.a = 0.5 * surf.potential->gradient(x) / (surf.E - u);
    out.lambda_sq = lambda_sq(out.g, J);
    return out;
}

double reduced_hamiltonian(const InternalCoords& x, const Vec3& x_dot, double J,
                           const EnergySurface& surf, double mu0) {
    const double g = conformal_factor(x, surf);
    return 0.5 * mu0 * g * (x_dot.squaredNorm() + lambda_sq(g, J));
}

Eigen::Matrix<double, 6, 1> RhoCoords::vec() const {
    Eigen::Matrix<double, 6, 1> v;
    v << r, R, theta, Theta, Phi, Psi;
    return v;
}

RhoCoords RhoCoords::from(const Eigen::Matrix<double, 6, 1>& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5]};
}

GammaTensor gamma_rho(const RhoCoords& rho) {
    const double r2 = rho.r * rho.r;
    const double R2 = rho.R * rho.R;
    const double s_th = std::sin(rho.theta), c_th = std::cos(rho.theta);
    const double s2th = std::sin(2.0 * rho.theta);
    const double sT = std::sin(rho.Theta), cT = std::cos(rho.Theta);
    const double s2T = std::sin(2.0 * rho.Theta);
    const double sP = std::sin(rho.Psi), cP = std::cos(rho.Psi);
    const double s2P = std::sin(2.0 * rho.Psi);

    GammaTensor out;
    Mat6& m = out.m;
    m(0, 0) = 1.0;
    m(1, 1) = 1.0;
    m(2, 2) = R2;
    m(3, 3) = r2 + R2 * cP * cP * c_th * c_th;
    m(4, 4) = r2 * sT + R2 * (sT * sT * sP * sP * c_th * c_th + cT * cT * s_th * s_th -
                              0.5 * s2T * s2th * sP);
    m(5, 5) = R2 * s_th * s_th;
    m(3, 4) = m(4, 3) = R2 * (sT * s2P * c_th * c_th - 2.0 * cT * cP * s2th);
    m(3, 5) = m(5, 3) = R2 * s2th * cP;
    m(4, 5) = m(5, 4) = R2 * (sT * sP * s2th - 2.0 * cT * s_th * s_th);
    return out;
}

}  // namespace qtb
