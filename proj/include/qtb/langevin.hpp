#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "qtb/geodesic.hpp"
#include "qtb/types.hpp"

namespace qtb {

/// White noise with <eta_i(s) eta_j(s')> = 2 eps_ij delta(s - s'). Increments
/// are drawn from a counter-based stream keyed by (seed, path, step).
/// Multiplicative noise is read in the Stratonovich sense.
class NoiseModel {
public:
    NoiseModel() = default;
    /// Throws DomainError if eps is not symmetric positive semidefinite.
    NoiseModel(const Mat3& epsilon, std::uint64_t seed);
    static NoiseModel scalar(double eps, std::uint64_t seed) { return {eps * Mat3::Identity(), seed}; }

    const Mat3& epsilon() const { return eps_; }
    std::uint64_t seed() const { return seed_; }
    /// Symmetric square root S with S S^T = eps.
    const Mat3& sqrt_epsilon() const { return sqrt_eps_; }

private:
    Mat3 eps_ = Mat3::Zero();
    Mat3 sqrt_eps_ = Mat3::Zero();
    std::uint64_t seed_ = 0;
};

/// Gaussian increment with covariance 2 eps ds for draw (path, step).
Vec3 white_noise_increments(double ds, const NoiseModel& noise, std::uint64_t path, std::uint64_t step);

struct DriftCoeffs {
    Vec3 a = Vec3::Zero();
    double lambda_sq = 0.0;
};

/// Piecewise-linear (a(s), Lambda^2(s)) taken from a classical trajectory.
class CoefficientSchedule {
public:
    static CoefficientSchedule from_trajectory(const TrajectoryRecord& traj);
    /// Constant coefficients over [s_begin, s_end].
    static CoefficientSchedule frozen(const DriftCoeffs& c, double s_begin, double s_end);

    /// Throws DomainError outside the covered span.
    DriftCoeffs at(double s) const;
    double s_begin() const { return s_.front(); }
    double s_end() const { return s_.back(); }

private:
    std::vector<double> s_;
    std::vector<DriftCoeffs> c_;
};

/// A^i as printed for the Langevin system (same polynomial as the Riccati rhs).
Vec3 drift(const Vec3& xi, const DriftCoeffs& c);

/// B^{ij}: diagonal xi_i^2 - sum_{j != i} xi_j^2 - Lambda^2, off-diagonal 2 xi_i xi_j.
Mat3 diffusion(const Vec3& xi, double lambda_sq);

enum class SdeMode { additive, multiplicative };

struct SdeState {
    Vec3 xi = Vec3::Zero();
    double s = 0.0;
};

/// One step with a given increment dW (covariance 2 eps ds).
/// additive: Euler-Maruyama, xi += A ds + dW.
/// multiplicative: Stratonovich Heun with B(xi) dW.
/// Throws BlowUpError when the new state is not finite.
SdeState sde_step(const SdeState& state, double ds, SdeMode mode, const CoefficientSchedule& coeffs,
                  const Vec3& dW);

struct EnsembleOptions {
    std::size_t n_paths = 1;
    double ds = 1e-3;
    double s_begin = 0.0;
    double s_end = 1.0;
    SdeMode mode = SdeMode::additive;
    /// Parameters at which every path is recorded (rounded to the step grid).
    std::vector<double> snapshots;
    /// Optional isotropic Gaussian spread of the initial point.
    double initial_sigma = 0.0;
    /// Worker threads; 0 uses the hardware concurrency.
    unsigned threads = 0;
};

struct PathOutcome {
    bool blew_up = false;
    double blow_up_s = 0.0;
};

struct EnsembleResult {
    std::vector<double> snapshot_s;
    /// snapshots[k][path]; NaN for paths that blew up earlier.
    std::vector<std::vector<Vec3>> snapshots;
    std::vector<Vec3> final_xi;
    std::vector<PathOutcome> outcomes;
    std::size_t blow_ups = 0;
};

/// Independent paths with streams derived from (seed, path index).
EnsembleResult run_ensemble(const CoefficientSchedule& schedule, const Vec3& xi0, const NoiseModel& noise,
                            const EnsembleOptions& opt);

/// CSV: path_id,s,xi1,xi2,xi3 for every snapshot of every path.
void write_ensemble_csv(std::ostream& os, const EnsembleResult& res);

}  // namespace qtb
