#include "qtb/langevin.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <thread>

#include "qtb/errors.hpp"
#include "qtb/numfmt.hpp"
#include "qtb/philox.hpp"

namespace qtb {

NoiseModel::NoiseModel(const Mat3& epsilon, std::uint64_t seed) : eps_(epsilon), seed_(seed) {
    const double scale = std::max(1.0, epsilon.cwiseAbs().maxCoeff());
    if (!epsilon.allFinite() || (epsilon - epsilon.transpose()).cwiseAbs().maxCoeff() > 1e-14 * scale) {
        throw DomainError("noise: epsilon must be finite and symmetric");
    }
    const Eigen::SelfAdjointEigenSolver<Mat3> es(epsilon);
    const Vec3 lam = es.eigenvalues();
    if (lam.minCoeff() < -1e-12 * scale) {
        throw DomainError("noise: epsilon must be positive semidefinite");
    }
    if (epsilon.isZero(0.0)) {
        sqrt_eps_.setZero();
    } else {
        sqrt_eps_ = es.eigenvectors() * lam.cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                    es.eigenvectors().transpose();
    }
}

Vec3 white_noise_increments(double ds, const NoiseModel& noise, std::uint64_t path, std::uint64_t step) {
    if (!(ds > 0.0)) throw DomainError("white_noise_increments: ds must be positive");
    if (noise.epsilon().isZero(0.0)) return Vec3::Zero();
    const auto z = philox_normals(noise.seed(), path, step);
    return std::sqrt(2.0 * ds) * (noise.sqrt_epsilon() * Vec3(z[0], z[1], z[2]));
}

CoefficientSchedule CoefficientSchedule::from_trajectory(const TrajectoryRecord& traj) {
    if (traj.samples.empty()) throw DomainError("schedule: empty trajectory");
    CoefficientSchedule out;
    for (const auto& smp : traj.samples) {
        if (!smp.metric.a.allFinite()) throw DomainError("schedule: non-finite a_i");
        out.s_.push_back(smp.s);
        out.c_.push_back({smp.metric.a, smp.metric.lambda_sq});
    }
    return out;
}

CoefficientSchedule CoefficientSchedule::frozen(const DriftCoeffs& c, double s_begin, double s_end) {
    if (!(s_end >= s_begin)) throw DomainError("schedule: inverted span");
    CoefficientSchedule out;
    out.s_ = {s_begin, s_end};
    out.c_ = {c, c};
    return out;
}

DriftCoeffs CoefficientSchedule::at(double s) const {
    const double slack = 1e-9 * std::max(1.0, std::abs(s_.back()));
    if (s < s_.front() - slack || s > s_.back() + slack) {
        throw DomainError("schedule: s = " + fmt_double(s) + " outside covered span");
    }
    if (s <= s_.front()) return c_.front();
    if (s >= s_.back()) return c_.back();
    const auto it = std::upper_bound(s_.begin(), s_.end(), s);
    const std::size_t k = static_cast<std::size_t>(it - s_.begin());
    const double w = (s - s_[k - 1]) / (s_[k] - s_[k - 1]);
    return {(1.0 - w) * c_[k - 1].a + w * c_[k].a, (1.0 - w) * c_[k - 1].lambda_sq + w * c_[k].lambda_sq};
}

Vec3 drift(const Vec3& xi, const DriftCoeffs& c) {
    const double x1 = xi[0], x2 = xi[1], x3 = xi[2];
    const double a1 = c.a[0], a2 = c.a[1], a3 = c.a[2];
    const double L = c.lambda_sq;
    return {a1 * (x1 * x1 - x2 * x2 - x3 * x3 - L) + 2.0 * x1 * (a2 * x2 + a3 * x3),
            a2 * (x2 * x2 - x1 * x1 - x3 * x3 - L) + 2.0 * x2 * (a3 * x3 + a1 * x1),
            a3 * (x3 * x3 - x2 * x2 - x1 * x1 - L) + 2.0 * x3 * (a1 * x1 + a2 * x2)};
}

Mat3 diffusion(const Vec3& xi, double lambda_sq) {
    const double x1 = xi[0], x2 = xi[1], x3 = xi[2];
    Mat3 b;
    b << x1 * x1 - x2 * x2 - x3 * x3 - lambda_sq, 2.0 * x1 * x2, 2.0 * x1 * x3,
        2.0 * x2 * x1, x2 * x2 - x1 * x1 - x3 * x3 - lambda_sq, 2.0 * x2 * x3,
        2.0 * x3 * x1, 2.0 * x3 * x2, x3 * x3 - x2 * x2 - x1 * x1 - lambda_sq;
    return b;
}

SdeState sde_step(const SdeState& state, double ds, SdeMode mode, const CoefficientSchedule& coeffs,
                  const Vec3& dW) {
    if (!(ds > 0.0)) throw DomainError("sde_step: ds must be positive");
    const DriftCoeffs c0 = coeffs.at(state.s);
    SdeState next{state.xi, state.s + ds};
    if (mode == SdeMode::additive) {
        next.xi = state.xi + drift(state.xi, c0) * ds + dW;
    } else {
        const DriftCoeffs c1 = coeffs.at(next.s);
        const Vec3 a0 = drift(state.xi, c0);
        const Mat3 b0 = diffusion(state.xi, c0.lambda_sq);
        const Vec3 pred = state.xi + a0 * ds + b0 * dW;
        next.xi = state.xi + 0.5 * (a0 + drift(pred, c1)) * ds +
                  0.5 * (b0 + diffusion(pred, c1.lambda_sq)) * dW;
    }
    if (!next.xi.allFinite()) {
        throw BlowUpError("sde_step: non-finite state at s = " + fmt_double(next.s), next.s);
    }
    return next;
}

namespace {

// Initial-spread draws live on a step index no path ever reaches.
constexpr std::uint64_t kInitialDrawStep = std::numeric_limits<std::uint64_t>::max();

}  // namespace

EnsembleResult run_ensemble(const CoefficientSchedule& schedule, const Vec3& xi0, const NoiseModel& noise,
                            const EnsembleOptions& opt) {
    if (opt.n_paths == 0) throw DomainError("run_ensemble: n_paths must be at least 1");
    if (!(opt.ds > 0.0)) throw DomainError("run_ensemble: ds must be positive");
    if (!(opt.s_end > opt.s_begin)) throw DomainError("run_ensemble: empty span");
    if (!(opt.initial_sigma >= 0.0)) throw DomainError("run_ensemble: initial_sigma must be nonnegative");

    const double span = opt.s_end - opt.s_begin;
    const auto n_steps = static_cast<std::size_t>(std::ceil(span / opt.ds - 1e-9));
    auto s_at = [&](std::size_t k) {
        return k >= n_steps ? opt.s_end : opt.s_begin + static_cast<double>(k) * opt.ds;
    };

    EnsembleResult res;
    std::vector<std::size_t> snap_step;
    for (double snap : opt.snapshots) {
        if (snap < opt.s_begin - 1e-12 || snap > opt.s_end + 1e-12) {
            throw DomainError("run_ensemble: snapshot outside span");
        }
        const auto k = std::min<std::size_t>(n_steps, static_cast<std::size_t>(std::llround((snap - opt.s_begin) / opt.ds)));
        snap_step.push_back(k);
        res.snapshot_s.push_back(s_at(k));
    }
    const Vec3 nan3 = Vec3::Constant(std::numeric_limits<double>::quiet_NaN());
    res.snapshots.assign(snap_step.size(), std::vector<Vec3>(opt.n_paths, nan3));
    res.final_xi.assign(opt.n_paths, nan3);
    res.outcomes.assign(opt.n_paths, {});

    auto run_path = [&](std::size_t path) {
        SdeState st{xi0, opt.s_begin};
        if (opt.initial_sigma > 0.0) {
            const auto z = philox_normals(noise.seed(), path, kInitialDrawStep);
            st.xi += opt.initial_sigma * Vec3(z[0], z[1], z[2]);
        }
        auto record = [&](std::size_t k) {
            for (std::size_t i = 0; i < snap_step.size(); ++i) {
                if (snap_step[i] == k) res.snapshots[i][path] = st.xi;
            }
        };
        record(0);
        try {
            for (std::size_t k = 0; k < n_steps; ++k) {
                const double ds = s_at(k + 1) - s_at(k);
                const Vec3 dW = white_noise_increments(ds, noise, path, k);
                st = sde_step(st, ds, opt.mode, schedule, dW);
                st.s = s_at(k + 1);
                record(k + 1);
            }
            res.final_xi[path] = st.xi;
        } catch (const BlowUpError& e) {
            res.outcomes[path] = {true, e.s()};
        }
    };

    unsigned threads = opt.threads != 0 ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, opt.n_paths));
    if (threads <= 1) {
        for (std::size_t p = 0; p < opt.n_paths; ++p) run_path(p);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                for (std::size_t p = t; p < opt.n_paths; p += threads) run_path(p);
            });
        }
    }
    for (const auto& o : res.outcomes) res.blow_ups += o.blew_up ? 1 : 0;
    return res;
}

void write_ensemble_csv(std::ostream& os, const EnsembleResult& res) {
    os << "path_id,s,xi1,xi2,xi3\n";
    for (std::size_t k = 0; k < res.snapshot_s.size(); ++k) {
        for (std::size_t p = 0; p < res.snapshots[k].size(); ++p) {
            const Vec3& xi = res.snapshots[k][p];
            os << p << ',' << fmt_double(res.snapshot_s[k]) << ',' << fmt_double(xi[0]) << ','
               << fmt_double(xi[1]) << ',' << fmt_double(xi[2]) << '\n';
        }
    }
}

}  // namespace qtb
