#include "qtb/geodesic.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "qtb/dopri5.hpp"
#include "qtb/errors.hpp"
#include "qtb/numfmt.hpp"

namespace qtb {

Vec3 riccati_rhs(const Vec3& xi, const Vec3& a, double lambda_sq) {
    const double q1 = xi[0] * xi[0], q2 = xi[1] * xi[1], q3 = xi[2] * xi[2];
    return {a[0] * (q1 - q2 - q3 - lambda_sq) + 2.0 * xi[0] * (a[1] * xi[1] + a[2] * xi[2]),
            a[1] * (q2 - q3 - q1 - lambda_sq) + 2.0 * xi[1] * (a[2] * xi[2] + a[0] * xi[0]),
            a[2] * (q3 - q1 - q2 - lambda_sq) + 2.0 * xi[2] * (a[0] * xi[0] + a[1] * xi[1])};
}

GeodesicRhs geodesic_rhs(const GeodesicState& state, const EnergySurface& surf, double J) {
    const MetricSample m = metric_sample(state.x, surf, J);
    return {state.xi, riccati_rhs(state.xi, m.a, m.lambda_sq)};
}

Vec3 geodesic_acceleration(const InternalCoords& x, const Vec3& x_dot, const EnergySurface& surf,
                           double J) {
    const MetricSample m = metric_sample(x, surf, J);
    return 2.0 * m.a.dot(x_dot) * x_dot - m.a * (x_dot.squaredNorm() + m.lambda_sq);
}

Vec3 external_rates(double g, const AngularMomentum& J) {
    if (!(g > 0.0)) throw DomainError("external_rates: g must be positive");
    return J.vec() / g;
}

std::string to_string(Termination t) {
    switch (t) {
        case Termination::reached_end: return "reached_end";
        case Termination::boundary: return "boundary";
        case Termination::max_steps: return "max_steps";
    }
    return "unknown";
}

namespace {

using State6 = Eigen::Matrix<double, 6, 1>;

State6 pack(const InternalCoords& x, const Vec3& xi) {
    State6 y;
    y << x.x1, x.x2, x.x3, xi[0], xi[1], xi[2];
    return y;
}

TrajectorySample make_sample(double s, const State6& y, const EnergySurface& surf, double J) {
    TrajectorySample smp;
    smp.s = s;
    smp.x = {y[0], y[1], y[2]};
    smp.xi = y.tail<3>();
    smp.metric = metric_sample(smp.x, surf, J);
    return smp;
}

}  // namespace

TrajectoryRecord integrate(const GeodesicState& state0, const EnergySurface& surf,
                           const AngularMomentum& J, const IntegrateOptions& opt) {
    surf.validate();
    if (!(opt.tol > 0.0) || !std::isfinite(opt.tol)) throw DomainError("integrate: tol must be positive");
    if (!(opt.s_end > state0.s)) throw DomainError("integrate: s_end must exceed the start parameter");

    const double j_total = J.total();
    TrajectoryRecord rec;
    rec.J = J;
    const State6 y0 = pack(state0.x, state0.xi);
    rec.samples.push_back(make_sample(state0.s, y0, surf, j_total));  // throws if y0 is forbidden

    auto rhs = [&](double, const State6& y) -> State6 {
        const GeodesicRhs d = geodesic_rhs({{y[0], y[1], y[2]}, y.tail<3>(), 0.0}, surf, j_total);
        State6 out;
        out << d.dx, d.dxi;
        return out;
    };

    std::size_t next_index = 1;
    auto observer = [&](const Dopri5<6>::DenseStep& step, const State6& y_new) {
        if (opt.sample_ds > 0.0) {
            while (true) {
                const double s_k = state0.s + static_cast<double>(next_index) * opt.sample_ds;
                if (s_k > step.s_end()) break;
                if (s_k > rec.samples.back().s) {
                    const State6 y = s_k == step.s_end() ? y_new : step.at(s_k);
                    rec.samples.push_back(make_sample(s_k, y, surf, j_total));
                }
                ++next_index;
            }
        } else {
            rec.samples.push_back(make_sample(step.s_end(), y_new, surf, j_total));
        }
    };

    Dopri5Options dopt;
    dopt.rtol = opt.tol;
    dopt.atol = opt.tol;
    dopt.max_steps = opt.max_steps;
    const Dopri5<6> solver(dopt);
    const auto res = solver.integrate(rhs, state0.s, y0, opt.s_end, observer);

    if (res.s > rec.samples.back().s) {
        rec.samples.push_back(make_sample(res.s, res.y, surf, j_total));
    }
    rec.accepted_steps = res.accepted;
    rec.rejected_steps = res.rejected;
    switch (res.outcome) {
        case Dopri5Outcome::reached_end: rec.termination = Termination::reached_end; break;
        case Dopri5Outcome::step_underflow: rec.termination = Termination::boundary; break;
        case Dopri5Outcome::max_steps: rec.termination = Termination::max_steps; break;
    }
    return rec;
}

std::vector<Vec3> external_coordinates(const TrajectoryRecord& traj, const Vec3& x_ext0) {
    std::vector<Vec3> out;
    out.reserve(traj.samples.size());
    if (traj.samples.empty()) return out;
    Vec3 acc = x_ext0;
    out.push_back(acc);
    for (std::size_t k = 1; k < traj.samples.size(); ++k) {
        const auto& p = traj.samples[k - 1];
        const auto& q = traj.samples[k];
        acc += 0.5 * (q.s - p.s) * (external_rates(p.metric.g, traj.J) + external_rates(q.metric.g, traj.J));
        out.push_back(acc);
    }
    return out;
}

double sample_hamiltonian(const TrajectorySample& smp, double mu0) {
    return 0.5 * mu0 * smp.metric.g * (smp.xi.squaredNorm() + smp.metric.lambda_sq);
}

ConservationReport conservation_report(const TrajectoryRecord& traj, double mu0) {
    ConservationReport rep;
    rep.samples = traj.samples.size();
    if (traj.samples.empty()) return rep;

    auto speed = [](const TrajectorySample& s) {
        return s.metric.g * (s.xi.squaredNorm() + s.metric.lambda_sq);
    };
    const double h0 = sample_hamiltonian(traj.samples.front(), mu0);
    const double v0 = speed(traj.samples.front());
    rep.h_initial = h0;
    // Relative to the initial value; absolute when the initial value is zero.
    const double h_scale = h0 != 0.0 ? std::abs(h0) : 1.0;
    const double v_scale = v0 != 0.0 ? std::abs(v0) : 1.0;
    for (const auto& smp : traj.samples) {
        rep.max_rel_h_drift = std::max(rep.max_rel_h_drift, std::abs(sample_hamiltonian(smp, mu0) - h0) / h_scale);
        rep.max_rel_speed_drift = std::max(rep.max_rel_speed_drift, std::abs(speed(smp) - v0) / v_scale);
    }
    return rep;
}

void write_trajectory_csv(std::ostream& os, const TrajectoryRecord& traj, double mu0) {
    os << "s,x1,x2,x3,xi1,xi2,xi3,g,H\n";
    for (const auto& smp : traj.samples) {
        os << fmt_double(smp.s) << ',' << fmt_double(smp.x.x1) << ',' << fmt_double(smp.x.x2) << ','
           << fmt_double(smp.x.x3) << ',' << fmt_double(smp.xi[0]) << ',' << fmt_double(smp.xi[1]) << ','
           << fmt_double(smp.xi[2]) << ',' << fmt_double(smp.metric.g) << ','
           << fmt_double(sample_hamiltonian(smp, mu0)) << '\n';
    }
}

TrajectoryRecord read_trajectory_csv(std::istream& is, const EnergySurface& surf,
                                     const AngularMomentum& J) {
    std::string line;
    if (!std::getline(is, line) || line.rfind("s,x1,x2,x3,xi1,xi2,xi3", 0) != 0) {
        throw IoError("trajectory csv: missing or unexpected header");
    }
    TrajectoryRecord rec;
    rec.J = J;
    const double j_total = J.total();
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        double v[7];
        for (double& val : v) {
            if (!std::getline(row, cell, ',')) throw IoError("trajectory csv: short row");
            val = parse_double(cell);
        }
        State6 y;
        y << v[1], v[2], v[3], v[4], v[5], v[6];
        rec.samples.push_back(make_sample(v[0], y, surf, j_total));
    }
    if (rec.samples.empty()) throw IoError("trajectory csv: no samples");
    return rec;
}

}  // namespace qtb
