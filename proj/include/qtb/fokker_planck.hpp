#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "qtb/langevin.hpp"
#include "qtb/types.hpp"

namespace qtb {

/// Cell-centred axis over [min, max] with n cells.
struct Axis {
    double min = -1.0;
    double max = 1.0;
    int n = 8;

    double h() const { return (max - min) / n; }
    double center(int i) const { return min + (i + 0.5) * h(); }
    bool operator==(const Axis&) const = default;
};

using GridSpec = std::array<Axis, 3>;

/// Density P over the (xi1, xi2, xi3) box; values stored row-major with the
/// xi3 index fastest.
class MomentumGrid {
public:
    /// Throws DomainError unless every axis has n >= 8 and max > min.
    explicit MomentumGrid(const GridSpec& spec);

    const GridSpec& spec() const { return spec_; }
    const Axis& axis(int d) const { return spec_[static_cast<std::size_t>(d)]; }
    double cell_volume() const { return spec_[0].h() * spec_[1].h() * spec_[2].h(); }
    std::size_t size() const { return values_.size(); }
    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * spec_[1].n + j) * spec_[2].n + k;
    }
    Vec3 center(int i, int j, int k) const {
        return {spec_[0].center(i), spec_[1].center(j), spec_[2].center(k)};
    }
    double& at(int i, int j, int k) { return values_[index(i, j, k)]; }
    double at(int i, int j, int k) const { return values_[index(i, j, k)]; }

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

private:
    GridSpec spec_;
    std::vector<double> values_;
};

/// sum P * cell volume.
double total_mass(const MomentumGrid& grid);

/// 1/2 sum |Pa - Pb| * cell volume; grids must share a spec.
double total_variation(const MomentumGrid& a, const MomentumGrid& b);

/// Block-average onto a grid coarser by `factor` per axis (mass preserving).
MomentumGrid coarsen(const MomentumGrid& grid, int factor);

/// Normalised isotropic Gaussian sampled at cell centres.
MomentumGrid gaussian_density(const GridSpec& spec, const Vec3& mean, double sigma);

/// eps = hbar * sqrt(<omega^2>) / 2.
double quantum_epsilon(double hbar_scale, double omega_sq_mean);

/// Sign in front of the drift divergence. `verbatim` keeps the printed +d(AP);
/// `conventional` uses the continuity form -d(AP) that matches the SDE.
enum class DriftSign { conventional, verbatim };

/// additive: B == identity (quantum-fluctuation case). multiplicative: B from
/// the Langevin diffusion matrix evaluated per cell.
enum class DiffusionForm { additive, multiplicative };

struct FpeConfig {
    Mat3 epsilon = Mat3::Zero();
    DriftSign sign = DriftSign::conventional;
    DiffusionForm form = DiffusionForm::additive;
    double safety = 0.5;
    /// Smallest admissible step before a ResolutionError.
    double ds_min = 1e-9;
    /// Allowed mass loss per unit s before the diagnostics flag it.
    double mass_tolerance = 1e-6;

    void validate() const;
};

/// dP/ds on every cell with zero density outside the box.
///
/// The diffusion term sum eps_ij d_l[B^{il} d_k(B^{kj} P)] is expanded into
/// d_l(M^{lk} d_k P) + d_l(N^l P) with M = B^T eps B^T and N = B^T eps div(B),
/// then discretised in conservative second-order central form.
std::vector<double> fpe_rhs(const MomentumGrid& grid, const DriftCoeffs& c, const FpeConfig& cfg);

/// Largest stable step for the current coefficients (before the safety factor).
double fpe_stable_step(const MomentumGrid& grid, const DriftCoeffs& c, const FpeConfig& cfg);

struct FpeSnapshot {
    double s = 0.0;
    MomentumGrid grid;
    double mass = 0.0;
};

struct FpeDiagnostics {
    std::size_t steps = 0;
    double min_ds = 0.0;
    double max_ds = 0.0;
    double initial_mass = 0.0;
    /// Largest (initial - current) / elapsed s seen at a snapshot.
    double max_mass_loss_rate = 0.0;
    bool mass_loss_flagged = false;
    /// Steps in which some cell fell below -1e-12 * max(P).
    std::size_t negativity_steps = 0;
    /// Most negative min(P) / max(P) observed.
    double worst_negative_ratio = 0.0;
};

struct FpeResult {
    std::vector<FpeSnapshot> snapshots;
    FpeDiagnostics diagnostics;
};

/// Explicit RK2 (Heun) evolution from s_begin with coefficients taken from
/// the schedule. Snapshots are produced exactly at the requested parameters.
/// The initial density must be normalised to 1 within 1e-9.
FpeResult fpe_evolve(const MomentumGrid& grid0, const CoefficientSchedule& schedule, double s_begin,
                     const std::vector<double>& snapshots, const FpeConfig& cfg);

struct EnsembleDensity {
    MomentumGrid grid;
    std::size_t used = 0;
    std::size_t out_of_range = 0;
};

/// Normalised histogram; non-finite and out-of-box samples are counted and
/// skipped. Throws DomainError when nothing lands inside the box.
EnsembleDensity density_from_ensemble(std::span<const Vec3> samples, const GridSpec& spec);

struct DensityHeader {
    GridSpec spec;
    double s = 0.0;
    std::string sign_mode;
    Mat3 epsilon = Mat3::Zero();
};

/// Text header (axes, s, sign mode, epsilon) followed by one value per line
/// in row-major order.
void write_density(std::ostream& os, const MomentumGrid& grid, double s, DriftSign sign, const Mat3& epsilon);
MomentumGrid read_density(std::istream& is, DensityHeader* header = nullptr);

std::string to_string(DriftSign sign);

}  // namespace qtb
