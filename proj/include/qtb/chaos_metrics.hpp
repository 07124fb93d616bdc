#pragma once

// Divergence between two momentum-space densities, exponential growth fits,
// and asymptotic-channel labels for finished trajectories.

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "qtb/fokker_planck.hpp"
#include "qtb/geodesic.hpp"
#include "qtb/kinematics.hpp"

namespace qtb {

struct KlResult {
    double value = 0.0;
    /// Cells with Pa > 0 where Pb had to be replaced by the floor.
    std::size_t support_mismatch = 0;
};

/// D(a||b) = sum Pa ln(Pa / Pb) * cell volume over cells with Pa > 0.
/// Throws DomainError when the grid specs differ.
KlResult kl_divergence(const MomentumGrid& pa, const MomentumGrid& pb, double floor = 1e-300);

struct GrowthFit {
    double k = 0.0;
    double intercept = 0.0;
    /// RMS of the residuals of ln D about the fitted line.
    double residual = 0.0;
    std::size_t samples = 0;
    double s_lo = 0.0;
    double s_hi = 0.0;
};

/// Least-squares slope of ln D against s over samples with s in
/// [s_lo, s_hi] and D > 0. Throws FitError with fewer than 3 such samples.
GrowthFit growth_rate(const std::vector<double>& s, const std::vector<double>& d, double s_lo, double s_hi);
GrowthFit growth_rate(const std::vector<double>& s, const std::vector<double>& d);

enum class Verdict { chaotic, regular, inconclusive };
std::string to_string(Verdict v);

struct VerdictThresholds {
    double max_residual = 0.2;
    /// Required growth of D across the fit window, in decades.
    double min_decades = 1.0;
    /// D at or below this counts as zero.
    double zero_level = 1e-12;
};

struct ChaosOptions {
    double floor = 1e-300;
    /// Fit window as fractions of the series span; [0, 1] uses everything.
    double window_begin = 0.0;
    double window_end = 1.0;
    VerdictThresholds thresholds;
};

struct ChaosReport {
    std::vector<double> s;
    std::vector<double> d;
    std::vector<std::size_t> support_mismatch;
    /// Direction of the divergence, always "a||b".
    std::string direction = "a||b";
    bool fitted = false;
    GrowthFit fit;
    Verdict verdict = Verdict::inconclusive;
    std::string reason;
    ChaosOptions options;
};

/// Verdict rules: chaotic needs k > 0, residual below the gate and at least
/// min_decades of growth over the window; an all-zero series is regular; a
/// non-growing clean fit is regular; everything else is inconclusive.
Verdict classify_growth(const std::vector<double>& d, const GrowthFit* fit, const VerdictThresholds& t,
                        std::string* reason = nullptr);

/// Pairs the two density series snapshot by snapshot (parameters must match).
ChaosReport chaos_report(const std::vector<FpeSnapshot>& a, const std::vector<FpeSnapshot>& b,
                         const ChaosOptions& opt = {});
/// Same, from already-computed divergence samples.
ChaosReport chaos_report(const std::vector<double>& s, const std::vector<double>& d, const ChaosOptions& opt = {});

nlohmann::json to_json(const ChaosReport& report);

enum class ChannelLabel { bound_23_free_1, bound_12_free_3, bound_13_free_2, full_breakup, transient };
std::string to_string(ChannelLabel label);

struct ChannelThresholds {
    double r_bound = 3.0;
    double r_free = 10.0;
    /// Trailing fraction of the s-span that is inspected.
    double window_fraction = 0.2;
    std::size_t min_window_samples = 5;

    /// R_bound = 3 d0, R_free = 10 d0.
    static ChannelThresholds from_scale(double d0);
    void validate() const;
};

/// Pair distances (d12, d13, d23) along a finished run.
struct PairDistanceTrack {
    std::vector<double> s;
    std::vector<Vec3> d;
};

PairDistanceTrack pair_distance_track(const TrajectoryRecord& traj, const Masses& m);
/// From raw internal coordinates (x1, x2, x3) per sample.
PairDistanceTrack pair_distance_track(const std::vector<double>& s, const std::vector<InternalCoords>& x,
                                      const Masses& m);

/// A pair (i, j) is bound when its separation stays below r_bound over the
/// window while the distance of the third body from the pair's centre of mass
/// never decreases and ends beyond r_free. All three separations
/// non-decreasing and beyond r_free is a full breakup. Anything else is
/// transient. Throws InconclusiveError when the window holds fewer than
/// min_window_samples points.
ChannelLabel classify_channel(const PairDistanceTrack& track, const Masses& m, const ChannelThresholds& t);

/// Requires Termination::reached_end; otherwise throws InconclusiveError.
ChannelLabel classify_channel(const TrajectoryRecord& traj, const Masses& m, const ChannelThresholds& t);

}  // namespace qtb
