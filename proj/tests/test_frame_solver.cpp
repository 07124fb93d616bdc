#include <doctest.h>

#include <Eigen/QR>
#include <cmath>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>

#include "qtb/errors.hpp"
#include "qtb/frame_solver.hpp"

using namespace qtb;
using std::numbers::pi;

namespace {

Mat3 random_orthogonal(std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    Mat3 a;
    for (int i = 0; i < 9; ++i) a(i) = n(rng);
    Mat3 q = Eigen::HouseholderQR<Mat3>(a).householderQ();
    if (n(rng) > 0) q.col(0) *= -1.0;  // reach both components of O(3)
    return q;
}

Mat3 random_spd(std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    Mat3 a;
    for (int i = 0; i < 9; ++i) a(i) = n(rng);
    return a * a.transpose() + 0.05 * Mat3::Identity();
}

Mat3 as_matrix(const ExternalFrame& f) {
    Mat3 w;
    w.row(0) = f.u.transpose();
    w.row(1) = f.v.transpose();
    w.row(2) = f.w.transpose();
    return w;
}

double max_abs(const std::array<double, 6>& r) {
    double m = 0;
    for (double v : r) m = std::max(m, std::abs(v));
    return m;
}

EnergySurface free_surface() {
    EnergySurface s;
    s.E = 1.0;
    s.potential = std::make_shared<FreePotential>();
    return s;
}

TrajectoryRecord record_from_points(const std::vector<Vec3>& pts, double ds) {
    TrajectoryRecord rec;
    for (std::size_t k = 0; k < pts.size(); ++k) {
        rec.samples.push_back({ds * static_cast<double>(k), InternalCoords::from(pts[k]), Vec3::Zero(),
                               {1.0, Vec3::Zero(), 0.0}});
    }
    return rec;
}

// Counter-clockwise square of side L in the (x2, x3) plane starting at c.
std::vector<Vec3> square_loop(const Vec3& c, double L, int per_side) {
    std::vector<Vec3> pts;
    const Vec3 e2(0, 1, 0), e3(0, 0, 1);
    const Vec3 corners[] = {c, c + L * e2, c + L * e2 + L * e3, c + L * e3, c};
    for (int side = 0; side < 4; ++side) {
        for (int k = 0; k < per_side; ++k) {
            const double t = static_cast<double>(k) / per_side;
            pts.push_back((1 - t) * corners[side] + t * corners[side + 1]);
        }
    }
    pts.push_back(c);
    return pts;
}

}  // namespace

TEST_CASE("internal frame for the identity gauge") {
    auto f = internal_frame(4.0, 1.0, FrameGauge::identity());
    CHECK(f.x == Vec3(2, 0, 0));
    CHECK(f.y == Vec3(0, 2, 0));
    CHECK(f.z == Vec3(0, 0, 2));
    f = internal_frame(4.0, 4.0, FrameGauge::identity());
    CHECK(f.x == Vec3(2, 0, 0));
    CHECK(f.y == Vec3(0, 2, 0));
    CHECK(f.z == Vec3(0, 0, 1));
    CHECK_THROWS_AS(internal_frame(1.0, 0.0, FrameGauge::identity()), DegenerateMetricError);
}

TEST_CASE("external frame for simple metrics") {
    auto w = as_matrix(external_frame(1.0, Mat3::Identity(), FrameGauge::identity()));
    CHECK(w == Mat3::Identity());
    const Mat3 diag = Vec3(4, 1, 1).asDiagonal();
    const ExternalFrame f = external_frame(1.0, diag, FrameGauge::identity());
    CHECK(f.u == Vec3(0.5, 0, 0));
    CHECK(f.v == Vec3(0, 1, 0));
    CHECK(f.w == Vec3(0, 0, 1));
    const Mat3 indefinite = Vec3(1, -1, 1).asDiagonal();
    CHECK_THROWS_AS(external_frame(1.0, indefinite, FrameGauge::identity()), DegenerateMetricError);
    Mat3 asym = Mat3::Identity();
    asym(0, 1) = 0.3;
    CHECK_THROWS_AS(external_frame(1.0, asym, FrameGauge::identity()), DegenerateMetricError);
}

TEST_CASE("gauge must be orthogonal") {
    Mat3 o = Mat3::Identity();
    o(0, 0) = 1.0 + 1e-9;
    CHECK_THROWS_AS(FrameGauge{o}, DomainError);
    std::mt19937_64 rng(1);
    CHECK_NOTHROW(FrameGauge{random_orthogonal(rng)});
}

TEST_CASE("frame equations hold for random draws") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> gg(0.01, 10.0), g33(0.01, 25.0);
    for (int n = 0; n < 1000; ++n) {
        const double g = gg(rng), gamma33 = g33(rng);
        const FrameGauge oi(random_orthogonal(rng)), oe(random_orthogonal(rng));
        const Mat3 Gamma = random_spd(rng);
        const InternalFrame fi = internal_frame(g, gamma33, oi);
        const ExternalFrame fe = external_frame(g, Gamma, oe);
        CHECK(max_abs(internal_frame_conditions(fi, gamma33, g)) < 1e-12 * std::max(1.0, g));
        CHECK(max_abs(external_frame_conditions(fe, Gamma, g)) < 1e-10 * std::max(1.0, g));

        // the a/b/c contractions equal the off-diagonal entries of W^T Gamma W
        const Mat3 W = as_matrix(fe);
        const Mat3 q = W.transpose() * Gamma * W;
        const auto c = external_frame_conditions(fe, Gamma, g);
        CHECK(std::abs(c[3] - q(0, 1)) <= 1e-12 * std::max(1.0, q.cwiseAbs().maxCoeff()));
        CHECK(std::abs(c[4] - q(1, 2)) <= 1e-12 * std::max(1.0, q.cwiseAbs().maxCoeff()));
        CHECK(std::abs(c[5] - q(2, 0)) <= 1e-12 * std::max(1.0, q.cwiseAbs().maxCoeff()));

        GammaTensor gamma;
        gamma.m.setZero();
        gamma.m(0, 0) = gamma.m(1, 1) = 1.0;
        gamma.m(2, 2) = gamma33;
        gamma.m.block<3, 3>(3, 3) = Gamma;
        CHECK(frame_residual({fi, fe}, gamma, g) < 1e-10 * std::max(1.0, g));
    }
}

TEST_CASE("frames built on the printed gamma tensor") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> len(0.5, 3.0), th(0.2, pi - 0.2), ang(-pi, pi), psi(0, pi);
    int used = 0;
    for (int n = 0; n < 2000 && used < 200; ++n) {
        const RhoCoords rho{len(rng), len(rng), th(rng), ang(rng), ang(rng), psi(rng)};
        const GammaTensor gamma = gamma_rho(rho);
        ExternalFrame fe;
        try {
            fe = external_frame(1.3, gamma.external_block(), FrameGauge(random_orthogonal(rng)));
        } catch (const DegenerateMetricError&) {
            continue;  // the printed block is not positive definite everywhere
        }
        ++used;
        const InternalFrame fi = internal_frame(1.3, gamma.gamma33(), FrameGauge(random_orthogonal(rng)));
        CHECK(frame_residual({fi, fe}, gamma, 1.3) < 1e-10 * std::max(1.0, gamma.m.cwiseAbs().maxCoeff()));
    }
    CHECK(used > 20);
}

TEST_CASE("different gauges are related by an orthogonal map") {
    std::mt19937_64 rng(17);
    for (int n = 0; n < 100; ++n) {
        const Mat3 o1 = random_orthogonal(rng), o2 = random_orthogonal(rng);
        const Mat3 Gamma = random_spd(rng);
        const Mat3 w1 = as_matrix(external_frame(2.0, Gamma, FrameGauge(o1)));
        const Mat3 w2 = as_matrix(external_frame(2.0, Gamma, FrameGauge(o2)));
        CHECK((w2 - w1 * o1.transpose() * o2).cwiseAbs().maxCoeff() < 1e-10 * std::max(1.0, w1.norm()));

        const auto f1 = internal_frame(2.0, 3.0, FrameGauge(o1));
        const auto f2 = internal_frame(2.0, 3.0, FrameGauge(o2));
        Mat3 v1, v2;
        v1 << f1.x.transpose(), f1.y.transpose(), std::sqrt(3.0) * f1.z.transpose();
        v2 << f2.x.transpose(), f2.y.transpose(), std::sqrt(3.0) * f2.z.transpose();
        CHECK((v2 - o2 * o1.transpose() * v1).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("frame residual of the zero frame and under perturbation") {
    GammaTensor gamma = gamma_rho({1.0, 1.5, 1.0, 0.3, 0.2, 0.4});
    CHECK(frame_residual(Frame{}, gamma, 2.5) == 2.5);
    Frame f{internal_frame(2.5, gamma.gamma33(), {}), {}};
    double prev = frame_residual(f, gamma, 2.5);
    for (double d : {1e-8, 1e-6, 1e-4}) {
        Frame p = f;
        p.internal.x[1] += d;
        const double r = frame_residual(p, gamma, 2.5);
        CHECK(std::isfinite(r));
        CHECK(r >= prev * 0.999);
        prev = r;
    }
}

TEST_CASE("reconstruction in a flat region copies the displacement") {
    // g = 1 and R = 1 held fixed: x2 does not move so gamma33 stays 1
    std::vector<Vec3> pts;
    for (int k = 0; k <= 100; ++k) pts.push_back(Vec3(1.0 + 0.01 * k, 2.0, 1.5 + 0.005 * k));
    const auto rec = record_from_points(pts, 0.1);
    const RhoCoords rho0{0.4, 1.0, 0.8, 0, 0, 0};
    const RhoSeries out = reconstruct_rho(rec, free_surface(), rho0);
    REQUIRE(out.complete);
    REQUIRE(out.rho.size() == pts.size());
    const RhoCoords& last = out.rho.back();
    CHECK(std::abs((last.r - rho0.r) - (pts.back()[0] - pts.front()[0])) < 1e-12);
    CHECK(std::abs(last.R - rho0.R) < 1e-12);
    CHECK(std::abs((last.theta - rho0.theta) - (pts.back()[2] - pts.front()[2])) < 1e-12);
}

TEST_CASE("reconstruction edge cases") {
    const RhoCoords rho0{0.4, 1.0, 0.8, 0.1, 0.2, 0.3};
    const auto single = record_from_points({Vec3(1, 1, 1)}, 0.1);
    const RhoSeries s = reconstruct_rho(single, free_surface(), rho0);
    REQUIRE(s.rho.size() == 1);
    CHECK(s.rho[0].vec() == rho0.vec());

    const auto coarse = record_from_points({Vec3(1, 1, 1), Vec3(2, 1, 1)}, 0.1);
    CHECK_THROWS_AS(reconstruct_rho(coarse, free_surface(), rho0), DomainError);

    // R driven to zero makes gamma33 degenerate: the series stops early
    std::vector<Vec3> pts;
    for (int k = 0; k <= 50; ++k) pts.push_back(Vec3(1.0, 1.0 - 0.05 * k, 1.0));
    const RhoSeries partial = reconstruct_rho(record_from_points(pts, 0.1), free_surface(), {0.4, 0.5, 0.8, 0, 0, 0});
    CHECK_FALSE(partial.complete);
    CHECK_FALSE(partial.stop_reason.empty());
    CHECK(partial.rho.size() < pts.size());
}

TEST_CASE("holonomy of a closed loop scales with its area") {
    const RhoCoords rho0{1.0, 2.0, 0.5, 0, 0, 0};
    auto gap = [&](double L) {
        const auto rec = record_from_points(square_loop(Vec3(1, 1, 1), L, 400), 0.01);
        const RhoSeries out = reconstruct_rho(rec, free_surface(), rho0);
        REQUIRE(out.complete);
        return (out.rho.back().vec() - rho0.vec()).norm();
    };
    const double g1 = gap(0.05), g2 = gap(0.1);
    // d theta = dx3 / R with R = rho2 following x2: gap ~ area / R^2
    CHECK(g1 == doctest::Approx(0.05 * 0.05 / 4.0).epsilon(0.1));
    CHECK(g2 / g1 == doctest::Approx(4.0).epsilon(0.1));
}

TEST_CASE("external reconstruction and csv export") {
    TrajectoryRecord rec = record_from_points({Vec3(1, 1, 1), Vec3(1.01, 1, 1), Vec3(1.02, 1, 1)}, 0.1);
    rec.J = {0.1, 0.0, 0.0};
    ReconstructOptions opt;
    opt.external = true;
    // a point where the printed external block is positive definite
    const RhoCoords rho0{1.0, 0.5, 1.0, pi / 2, 0.2, pi / 2};
    const RhoSeries out = reconstruct_rho(rec, free_surface(), rho0, opt);
    REQUIRE(out.complete);
    CHECK(out.has_external);
    CHECK(out.rho.back().Theta != rho0.Theta);
    std::ostringstream os;
    write_rho_csv(os, out);
    CHECK(os.str().rfind("s,rho1,rho2,rho3,rho4,rho5,rho6\n", 0) == 0);
}
