#pragma once

// Local frames rho_{a;mu} = d rho_a / d x^mu that carry the curvilinear
// metric gamma^{ab} into the conformal form g delta_{mu nu}.
//
// With the block sparsity (internal rho depends only on internal x, external
// on external), the 21 conditions split into two 6-equation systems. Their
// solution sets are orbits of O(3): any orthogonal gauge O yields a frame.

#include <array>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "qtb/geodesic.hpp"
#include "qtb/metric.hpp"
#include "qtb/types.hpp"

namespace qtb {

/// An orthogonal 3x3 matrix selecting one member of the solution family.
class FrameGauge {
public:
    FrameGauge() : o_(Mat3::Identity()) {}
    /// Throws DomainError unless O^T O = I within 1e-12.
    explicit FrameGauge(const Mat3& o);

    static FrameGauge identity() { return {}; }
    const Mat3& matrix() const { return o_; }

private:
    Mat3 o_;
};

/// x[m] = d rho1/d x^{m+1}, y[m] = d rho2/d x^{m+1}, z[m] = d rho3/d x^{m+1}.
struct InternalFrame {
    Vec3 x = Vec3::Zero();
    Vec3 y = Vec3::Zero();
    Vec3 z = Vec3::Zero();
};

/// u[m] = d rho4/d x^{m+4}, likewise v (rho5) and w (rho6).
struct ExternalFrame {
    Vec3 u = Vec3::Zero();
    Vec3 v = Vec3::Zero();
    Vec3 w = Vec3::Zero();
};

struct Frame {
    InternalFrame internal;
    ExternalFrame external;
};

/// Columns (x_mu, y_mu, sqrt(gamma33) z_mu) = sqrt(g) O e_mu.
InternalFrame internal_frame(double g, double gamma33, const FrameGauge& gauge);

/// Columns (u_mu, v_mu, w_mu) = sqrt(g) L^{-T} O e_mu with Gamma = L L^T.
/// Throws DegenerateMetricError when Gamma is not positive definite.
ExternalFrame external_frame(double g, const Mat3& Gamma, const FrameGauge& gauge);

/// The six internal conditions written out term by term: three norms minus g
/// followed by the (1,2), (1,3), (2,3) cross terms.
std::array<double, 6> internal_frame_conditions(const InternalFrame& f, double gamma33, double g);

/// The six external conditions in expanded form: three quadratic forms minus g,
/// then a_i u_i, b_j v_j, c_k w_k contractions with
///   a_i = gamma^{i4} u5 + gamma^{i5} v5 + gamma^{i6} w5
///   b_j = gamma^{j4} u6 + gamma^{j5} v6 + gamma^{j6} w6
///   c_k = gamma^{k4} u4 + gamma^{k5} v4 + gamma^{k6} w4
/// contracted against (u4, v4, w4), (u5, v5, w5), (u6, v6, w6) respectively.
std::array<double, 6> external_frame_conditions(const ExternalFrame& f, const Mat3& Gamma, double g);

/// max |gamma^{ab} rho_{a;mu} rho_{b;nu} - g delta_{mu nu}| over the full 6x6
/// Jacobian assembled with the block sparsity.
double frame_residual(const Frame& frame, const GammaTensor& gamma, double g);

/// Chooses the (internal, external) gauges for reconstruction step `step`
/// starting at parameter s.
using GaugePolicy = std::function<std::pair<FrameGauge, FrameGauge>(std::size_t step, double s)>;

GaugePolicy constant_gauge(const FrameGauge& internal = {}, const FrameGauge& external = {});

struct ReconstructOptions {
    GaugePolicy gauge = constant_gauge();
    /// Largest accepted |x_{k+1} - x_k| between consecutive samples.
    double max_dx = 0.1;
    bool external = false;
};

struct RhoSeries {
    std::vector<double> s;
    std::vector<RhoCoords> rho;
    bool has_external = false;
    bool complete = true;
    std::string stop_reason;
};

/// Path-ordered integration of d rho_i = sum_mu F_{i mu} dx^mu along the
/// trajectory, refreshing the frame at each step (explicit midpoint rule).
/// The external part integrates d rho_{4..6} = W dx^{4..6} with dx^{mu} = J/g ds.
/// A degenerate metric en route ends the series early with complete = false.
RhoSeries reconstruct_rho(const TrajectoryRecord& traj, const EnergySurface& surf,
                          const RhoCoords& rho0, const ReconstructOptions& opt = {});

/// CSV: s,rho1..rho3 (and rho4..rho6 when external reconstruction ran).
void write_rho_csv(std::ostream& os, const RhoSeries& series);

}  // namespace qtb
