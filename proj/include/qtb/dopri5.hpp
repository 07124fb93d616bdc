#pragma once

// Embedded Runge-Kutta 5(4) pair of Dormand & Prince with PI step-size
// control (Hairer, Norsett & Wanner, Solving ODEs I, II.4/II.6) and the
// standard fourth-order continuous extension.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

#include "qtb/errors.hpp"

namespace qtb {

struct Dopri5Options {
    double rtol = 1e-9;
    double atol = 1e-9;
    double h_initial = 0.0;  // 0 selects a starting step automatically
    double h_max = 0.0;      // 0 means unbounded
    std::size_t max_steps = 1'000'000;
};

enum class Dopri5Outcome { reached_end, step_underflow, max_steps };

template <int N>
class Dopri5 {
public:
    using State = Eigen::Matrix<double, N, 1>;

    /// Interpolant over the last accepted step.
    class DenseStep {
    public:
        double s_begin() const { return s_old_; }
        double s_end() const { return s_old_ + h_; }
        State at(double s) const {
            const double th = (s - s_old_) / h_;
            const double th1 = 1.0 - th;
            return r1_ + th * (r2_ + th1 * (r3_ + th * (r4_ + th1 * r5_)));
        }

    private:
        friend class Dopri5;
        double s_old_ = 0.0;
        double h_ = 0.0;
        State r1_, r2_, r3_, r4_, r5_;
    };

    struct Result {
        Dopri5Outcome outcome;
        double s;
        State y;
        std::size_t accepted = 0;
        std::size_t rejected = 0;
    };

    explicit Dopri5(Dopri5Options opt) : opt_(opt) {
        if (!(opt_.rtol > 0.0) || !(opt_.atol > 0.0)) {
            throw DomainError("dopri5: tolerances must be positive");
        }
    }

    /// Integrates y' = rhs(s, y) from s0 to s_end (s_end > s0). rhs may throw
    /// DomainError to signal that a trial point lies outside the domain; the
    /// step is then rejected and shrunk. observer(const DenseStep&, const
    /// State& y_new) is called after every accepted step.
    template <class Rhs, class Observer>
    Result integrate(Rhs&& rhs, double s0, const State& y0, double s_end, Observer&& observer) const {
        if (!(s_end > s0)) throw DomainError("dopri5: s_end must exceed s0");

        constexpr double safe = 0.9, facl = 0.2, facr = 10.0, beta = 0.04;
        constexpr double expo1 = 0.2 - beta * 0.75;
        constexpr double eps = std::numeric_limits<double>::epsilon();

        Result res{Dopri5Outcome::reached_end, s0, y0};
        double s = s0;
        State y = y0;
        State k1 = rhs(s, y);  // must be valid at the start
        double h = opt_.h_initial > 0.0 ? opt_.h_initial : initial_step(rhs, s, y, k1, s_end - s0);
        const double h_max = opt_.h_max > 0.0 ? opt_.h_max : (s_end - s0);
        h = std::min(h, h_max);
        double facold = 1e-4;
        bool reject = false;

        State k2, k3, k4, k5, k6, k7, y_new, y_stage;
        while (true) {
            if (res.accepted + res.rejected >= opt_.max_steps) {
                res.outcome = Dopri5Outcome::max_steps;
                break;
            }
            const double h_floor = 16.0 * eps * std::max(1.0, std::abs(s));
            if (h < h_floor) {
                res.outcome = Dopri5Outcome::step_underflow;
                break;
            }
            const bool last = s + 1.01 * h >= s_end;
            if (last) h = s_end - s;

            bool in_domain = true;
            try {
                y_stage = y + h * (a21 * k1);
                k2 = rhs(s + c2 * h, y_stage);
                y_stage = y + h * (a31 * k1 + a32 * k2);
                k3 = rhs(s + c3 * h, y_stage);
                y_stage = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
                k4 = rhs(s + c4 * h, y_stage);
                y_stage = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
                k5 = rhs(s + c5 * h, y_stage);
                y_stage = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
                k6 = rhs(s + h, y_stage);
                y_new = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
                k7 = rhs(s + h, y_new);
            } catch (const DomainError&) {
                in_domain = false;
            }
            if (!in_domain) {
                ++res.rejected;
                h *= 0.25;
                reject = true;
                continue;
            }

            const State ee = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
            double err = 0.0;
            for (int d = 0; d < N; ++d) {
                const double sc = opt_.atol + opt_.rtol * std::max(std::abs(y[d]), std::abs(y_new[d]));
                const double t = ee[d] / sc;
                err += t * t;
            }
            err = std::sqrt(err / N);
            if (!std::isfinite(err)) {
                ++res.rejected;
                h *= 0.25;
                reject = true;
                continue;
            }

            const double fac11 = std::pow(err, expo1);
            double fac = fac11 / std::pow(facold, beta);
            fac = std::max(1.0 / facr, std::min(1.0 / facl, fac / safe));
            double h_new = h / fac;

            if (err > 1.0) {
                h /= std::min(1.0 / facl, fac11 / safe);
                reject = true;
                ++res.rejected;
                continue;
            }

            facold = std::max(err, 1e-4);
            ++res.accepted;

            DenseStep dense;
            dense.s_old_ = s;
            dense.h_ = h;
            dense.r1_ = y;
            dense.r2_ = y_new - y;
            dense.r3_ = h * k1 - dense.r2_;
            dense.r4_ = dense.r2_ - h * k7 - dense.r3_;
            dense.r5_ = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);

            s = last ? s_end : s + h;
            y = y_new;
            k1 = k7;
            observer(static_cast<const DenseStep&>(dense), static_cast<const State&>(y));

            if (last) break;
            if (reject) h_new = std::min(h_new, h);
            reject = false;
            h = std::min(h_new, h_max);
        }
        res.s = s;
        res.y = y;
        return res;
    }

private:
    template <class Rhs>
    double initial_step(Rhs& rhs, double s, const State& y, const State& f0, double span) const {
        State sc;
        for (int d = 0; d < N; ++d) sc[d] = opt_.atol + opt_.rtol * std::abs(y[d]);
        const double dnf = (f0.array() / sc.array()).matrix().squaredNorm() / N;
        const double dny = (y.array() / sc.array()).matrix().squaredNorm() / N;
        double h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : std::sqrt(dny / dnf) * 0.01;
        h = std::min(h, span);
        try {
            const State f1 = rhs(s + h, State(y + h * f0));
            const double der2 = ((f1 - f0).array() / sc.array()).matrix().norm() / std::sqrt(double(N)) / h;
            const double der12 = std::max(der2, std::sqrt(dnf));
            const double h1 = der12 <= 1e-15 ? std::max(1e-6, h * 1e-3) : std::pow(0.01 / der12, 0.2);
            h = std::min(100.0 * h, h1);
        } catch (const DomainError&) {
            h *= 0.1;
        }
        return std::min(h, span);
    }

    static constexpr double c2 = 0.2, c3 = 0.3, c4 = 0.8, c5 = 8.0 / 9.0;
    static constexpr double a21 = 0.2, a31 = 3.0 / 40.0, a32 = 9.0 / 40.0, a41 = 44.0 / 45.0,
                            a42 = -56.0 / 15.0, a43 = 32.0 / 9.0, a51 = 19372.0 / 6561.0,
                            a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0,
                            a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                            a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0, a71 = 35.0 / 384.0,
                            a73 = 500.0 / 1113.0, a74 = 125.0 / 192.0, a75 = -2187.0 / 6784.0,
                            a76 = 11.0 / 84.0;
    static constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                            e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
    static constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                            d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                            d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

    Dopri5Options opt_;
};

}  // namespace qtb
