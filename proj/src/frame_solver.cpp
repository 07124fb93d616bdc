#include "qtb/frame_solver.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <ostream>

#include "qtb/errors.hpp"
#include "qtb/numfmt.hpp"

namespace qtb {

FrameGauge::FrameGauge(const Mat3& o) : o_(o) {
    if (!o.allFinite() || ((o.transpose() * o) - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-12) {
        throw DomainError("frame gauge must be orthogonal (O^T O = I within 1e-12)");
    }
}

InternalFrame internal_frame(double g, double gamma33, const FrameGauge& gauge) {
    if (!(g > 0.0)) throw DomainError("internal_frame: g must be positive");
    if (!(gamma33 > 0.0)) throw DegenerateMetricError("internal_frame: gamma33 must be positive");
    const Mat3 v = std::sqrt(g) * gauge.matrix();
    InternalFrame f;
    f.x = v.row(0).transpose();
    f.y = v.row(1).transpose();
    f.z = v.row(2).transpose() / std::sqrt(gamma33);
    return f;
}

ExternalFrame external_frame(double g, const Mat3& Gamma, const FrameGauge& gauge) {
    if (!(g > 0.0)) throw DomainError("external_frame: g must be positive");
    if (!Gamma.allFinite() || (Gamma - Gamma.transpose()).cwiseAbs().maxCoeff() >
                                  1e-12 * std::max(1.0, Gamma.cwiseAbs().maxCoeff())) {
        throw DegenerateMetricError("external_frame: Gamma must be finite and symmetric");
    }
    const Eigen::LLT<Mat3> llt(Gamma);
    if (llt.info() != Eigen::Success) {
        throw DegenerateMetricError("external_frame: Gamma is not positive definite");
    }
    // W = sqrt(g) L^{-T} O, solved as L^T W = sqrt(g) O.
    const Mat3 w = llt.matrixU().solve(std::sqrt(g) * gauge.matrix());
    ExternalFrame f;
    f.u = w.row(0).transpose();
    f.v = w.row(1).transpose();
    f.w = w.row(2).transpose();
    return f;
}

std::array<double, 6> internal_frame_conditions(const InternalFrame& f, double gamma33, double g) {
    const Vec3& x = f.x;
    const Vec3& y = f.y;
    const Vec3& z = f.z;
    return {x[0] * x[0] + y[0] * y[0] + gamma33 * z[0] * z[0] - g,
            x[1] * x[1] + y[1] * y[1] + gamma33 * z[1] * z[1] - g,
            x[2] * x[2] + y[2] * y[2] + gamma33 * z[2] * z[2] - g,
            x[0] * x[1] + y[0] * y[1] + gamma33 * z[0] * z[1],
            x[0] * x[2] + y[0] * y[2] + gamma33 * z[0] * z[2],
            x[1] * x[2] + y[1] * y[2] + gamma33 * z[1] * z[2]};
}

std::array<double, 6> external_frame_conditions(const ExternalFrame& f, const Mat3& G, double g) {
    // Index 0, 1, 2 stands for 4, 5, 6.
    const double g44 = G(0, 0), g55 = G(1, 1), g66 = G(2, 2);
    const double g45 = G(0, 1), g46 = G(0, 2), g56 = G(1, 2);
    const double u4 = f.u[0], u5 = f.u[1], u6 = f.u[2];
    const double v4 = f.v[0], v5 = f.v[1], v6 = f.v[2];
    const double w4 = f.w[0], w5 = f.w[1], w6 = f.w[2];

    const double q4 = g44 * u4 * u4 + g55 * v4 * v4 + g66 * w4 * w4 +
                      2.0 * (g45 * u4 * v4 + g46 * u4 * w4 + g56 * v4 * w4);
    const double q5 = g44 * u5 * u5 + g55 * v5 * v5 + g66 * w5 * w5 +
                      2.0 * (g45 * u5 * v5 + g46 * u5 * w5 + g56 * v5 * w5);
    const double q6 = g44 * u6 * u6 + g55 * v6 * v6 + g66 * w6 * w6 +
                      2.0 * (g45 * u6 * v6 + g46 * u6 * w6 + g56 * v6 * w6);

    double a[3], b[3], c[3];
    for (int i = 0; i < 3; ++i) {
        a[i] = G(i, 0) * u5 + G(i, 1) * v5 + G(i, 2) * w5;
        b[i] = G(i, 0) * u6 + G(i, 1) * v6 + G(i, 2) * w6;
        c[i] = G(i, 0) * u4 + G(i, 1) * v4 + G(i, 2) * w4;
    }
    return {q4 - g,
            q5 - g,
            q6 - g,
            a[0] * u4 + a[1] * v4 + a[2] * w4,
            b[0] * u5 + b[1] * v5 + b[2] * w5,
            c[0] * u6 + c[1] * v6 + c[2] * w6};
}

double frame_residual(const Frame& frame, const GammaTensor& gamma, double g) {
    // jac(a, mu) = d rho_a / d x^mu
    Mat6 jac = Mat6::Zero();
    jac.block<1, 3>(0, 0) = frame.internal.x.transpose();
    jac.block<1, 3>(1, 0) = frame.internal.y.transpose();
    jac.block<1, 3>(2, 0) = frame.internal.z.transpose();
    jac.block<1, 3>(3, 3) = frame.external.u.transpose();
    jac.block<1, 3>(4, 3) = frame.external.v.transpose();
    jac.block<1, 3>(5, 3) = frame.external.w.transpose();
    const Mat6 r = jac.transpose() * gamma.m * jac - g * Mat6::Identity();
    return r.cwiseAbs().maxCoeff();
}

GaugePolicy constant_gauge(const FrameGauge& internal, const FrameGauge& external) {
    return [internal, external](std::size_t, double) { return std::make_pair(internal, external); };
}

namespace {

Mat3 internal_matrix(double g, const RhoCoords& rho, const FrameGauge& gauge) {
    const InternalFrame f = internal_frame(g, rho.R * rho.R, gauge);
    Mat3 m;
    m.row(0) = f.x.transpose();
    m.row(1) = f.y.transpose();
    m.row(2) = f.z.transpose();
    return m;
}

Mat3 external_matrix(double g, const RhoCoords& rho, const FrameGauge& gauge) {
    const ExternalFrame f = external_frame(g, gamma_rho(rho).external_block(), gauge);
    Mat3 m;
    m.row(0) = f.u.transpose();
    m.row(1) = f.v.transpose();
    m.row(2) = f.w.transpose();
    return m;
}

}  // namespace

RhoSeries reconstruct_rho(const TrajectoryRecord& traj, const EnergySurface& surf,
                          const RhoCoords& rho0, const ReconstructOptions& opt) {
    RhoSeries out;
    out.has_external = opt.external;
    if (traj.samples.empty()) return out;
    for (std::size_t k = 1; k < traj.samples.size(); ++k) {
        const double dx = (traj.samples[k].x.vec() - traj.samples[k - 1].x.vec()).norm();
        if (dx > opt.max_dx) {
            throw DomainError("reconstruct_rho: trajectory too coarse (|dx| = " + fmt_double(dx) +
                              " exceeds cap " + fmt_double(opt.max_dx) + ")");
        }
    }

    RhoCoords rho = rho0;
    out.s.push_back(traj.samples.front().s);
    out.rho.push_back(rho);
    const Vec3 j_vec = traj.J.vec();

    for (std::size_t k = 1; k < traj.samples.size(); ++k) {
        const auto& p = traj.samples[k - 1];
        const auto& q = traj.samples[k];
        const Vec3 dx = q.x.vec() - p.x.vec();
        const double ds = q.s - p.s;
        try {
            const auto [gi, ge] = opt.gauge(k - 1, p.s);
            const double g0 = p.metric.g;
            const double g_mid = conformal_factor(InternalCoords::from(0.5 * (p.x.vec() + q.x.vec())), surf);

            RhoCoords half = rho;
            Vec3 d_int = internal_matrix(g0, rho, gi) * dx;
            half.r += 0.5 * d_int[0];
            half.R += 0.5 * d_int[1];
            half.theta += 0.5 * d_int[2];
            if (opt.external) {
                const Vec3 d_ext = external_matrix(g0, rho, ge) * (j_vec / g0 * ds);
                half.Theta += 0.5 * d_ext[0];
                half.Phi += 0.5 * d_ext[1];
                half.Psi += 0.5 * d_ext[2];
            }

            RhoCoords next = rho;
            d_int = internal_matrix(g_mid, half, gi) * dx;
            next.r += d_int[0];
            next.R += d_int[1];
            next.theta += d_int[2];
            if (opt.external) {
                const Vec3 d_ext = external_matrix(g_mid, half, ge) * (j_vec / g_mid * ds);
                next.Theta += d_ext[0];
                next.Phi += d_ext[1];
                next.Psi += d_ext[2];
            }
            rho = next;
        } catch (const DomainError& e) {
            out.complete = false;
            out.stop_reason = e.what();
            break;
        }
        out.s.push_back(q.s);
        out.rho.push_back(rho);
    }
    return out;
}

void write_rho_csv(std::ostream& os, const RhoSeries& series) {
    os << (series.has_external ? "s,rho1,rho2,rho3,rho4,rho5,rho6\n" : "s,rho1,rho2,rho3\n");
    for (std::size_t k = 0; k < series.s.size(); ++k) {
        const auto v = series.rho[k].vec();
        os << fmt_double(series.s[k]);
        const int n = series.has_external ? 6 : 3;
        for (int i = 0; i < n; ++i) os << ',' << fmt_double(v[i]);
        os << '\n';
    }
}

}  // namespace qtb
