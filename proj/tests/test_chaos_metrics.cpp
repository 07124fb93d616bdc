#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "qtb/chaos_metrics.hpp"
#include "qtb/errors.hpp"

using namespace qtb;

namespace {

GridSpec cube(double half, int n) { return {Axis{-half, half, n}, Axis{-half, half, n}, Axis{-half, half, n}}; }

MomentumGrid random_density(const GridSpec& spec, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    MomentumGrid g(spec);
    for (double& v : g.values()) v = u(rng);
    const double m = total_mass(g);
    for (double& v : g.values()) v /= m;
    return g;
}

double shifted_kl(int n, double sigma, const Vec3& shift) {
    const GridSpec spec = cube(4.0, n);
    const MomentumGrid a = gaussian_density(spec, Vec3::Zero(), sigma);
    const MomentumGrid b = gaussian_density(spec, shift, sigma);
    return kl_divergence(a, b).value;
}

PairDistanceTrack track_from(int n, double s_end, const std::function<Vec3(double)>& d) {
    PairDistanceTrack t;
    for (int i = 0; i <= n; ++i) {
        const double s = s_end * i / n;
        t.s.push_back(s);
        t.d.push_back(d(s));
    }
    return t;
}

}  // namespace

TEST_CASE("divergence of a density from itself vanishes") {
    const MomentumGrid p = gaussian_density(cube(3.0, 16), Vec3(0.2, -0.1, 0.0), 0.7);
    const KlResult r = kl_divergence(p, p);
    CHECK(r.value == 0.0);
    CHECK(r.support_mismatch == 0);
}

TEST_CASE("Gibbs inequality on random densities") {
    std::mt19937_64 rng(11);
    const GridSpec spec = cube(1.0, 8);
    for (int trial = 0; trial < 50; ++trial) {
        const MomentumGrid a = random_density(spec, rng);
        const MomentumGrid b = random_density(spec, rng);
        CHECK(kl_divergence(a, b).value >= 0.0);
    }
}

TEST_CASE("shifted Gaussians match the closed form") {
    const double sigma = 0.5;
    const Vec3 shift(0.3, -0.2, 0.1);
    const double exact = shift.squaredNorm() / (2 * sigma * sigma);
    const double d64 = shifted_kl(64, sigma, shift);
    CHECK(std::abs(d64 - exact) <= 0.02 * exact);
    // stable under refinement
    const double d32 = shifted_kl(32, sigma, shift);
    CHECK(std::abs(d32 - d64) <= 0.05 * d64);
}

TEST_CASE("divergence requires matching grids") {
    const MomentumGrid a = gaussian_density(cube(3.0, 16), Vec3::Zero(), 0.7);
    const MomentumGrid b = gaussian_density(cube(3.0, 8), Vec3::Zero(), 0.7);
    CHECK_THROWS_AS(kl_divergence(a, b), DomainError);
}

TEST_CASE("cells outside the support of the second density are counted") {
    const GridSpec spec = cube(1.0, 8);
    MomentumGrid a(spec), b(spec);
    for (double& v : a.values()) v = 1.0 / 8.0;
    for (double& v : b.values()) v = 1.0 / 8.0;
    b.at(0, 0, 0) = 0.0;
    b.at(1, 0, 0) = 0.0;
    const KlResult r = kl_divergence(a, b, 1e-30);
    CHECK(r.support_mismatch == 2);
    CHECK(std::isfinite(r.value));
    CHECK(r.value > 0.0);
    // a zero in the first density contributes nothing
    const KlResult back = kl_divergence(b, a);
    CHECK(back.support_mismatch == 0);
}

TEST_CASE("growth rate of a clean exponential") {
    std::vector<double> s, d;
    for (int i = 0; i < 10; ++i) {
        s.push_back(0.5 * i);
        d.push_back(1e-6 * std::exp(2.0 * s.back()));
    }
    const GrowthFit fit = growth_rate(s, d);
    CHECK(fit.k == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(fit.intercept == doctest::Approx(std::log(1e-6)).epsilon(1e-12));
    CHECK(fit.residual < 1e-10);
    CHECK(fit.samples == 10);

    const GrowthFit part = growth_rate(s, d, 1.0, 3.0);
    CHECK(part.samples == 5);
    CHECK(part.k == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("growth rate edge cases") {
    std::vector<double> s = {0, 1, 2, 3, 4};
    CHECK(std::abs(growth_rate(s, {3, 3, 3, 3, 3}).k) < 1e-14);
    CHECK_THROWS_AS(growth_rate(s, {0, 0, 0, 1, 1}), FitError);
    CHECK_THROWS_AS(growth_rate({1, 1, 1}, {1, 2, 3}), FitError);
    CHECK_THROWS_AS(growth_rate(s, {1, 2, 3, 4, 5}, 10.0, 20.0), FitError);
}

TEST_CASE("growth rate tolerates one percent noise") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> noise(0.0, 0.01);
    std::vector<double> s, d;
    for (int i = 0; i < 40; ++i) {
        s.push_back(0.1 * i);
        d.push_back(std::exp(1.5 * s.back()) * (1.0 + noise(rng)));
    }
    CHECK(std::abs(growth_rate(s, d).k - 1.5) <= 0.05 * 1.5);
}

TEST_CASE("verdict rules") {
    const VerdictThresholds t;
    std::string why;
    const std::vector<double> zeros(6, 0.0);
    CHECK(classify_growth(zeros, nullptr, t, &why) == Verdict::regular);

    const std::vector<double> some = {1e-3, 1e-2};
    CHECK(classify_growth(some, nullptr, t, &why) == Verdict::inconclusive);

    GrowthFit fit;
    fit.s_lo = 0.0;
    fit.s_hi = 5.0;
    fit.k = 1.0;
    fit.residual = 0.5;
    CHECK(classify_growth(some, &fit, t, &why) == Verdict::inconclusive);
    CHECK(why.find("residual") != std::string::npos);

    fit.residual = 0.01;
    fit.k = -0.2;
    CHECK(classify_growth(some, &fit, t) == Verdict::regular);

    // 0.4 * 5 / ln 10 < 1 decade
    fit.k = 0.4;
    CHECK(classify_growth(some, &fit, t) == Verdict::inconclusive);

    fit.k = 1.0;
    CHECK(classify_growth(some, &fit, t) == Verdict::chaotic);
}

TEST_CASE("identical density series give a regular report") {
    const GridSpec spec = cube(3.0, 12);
    std::vector<FpeSnapshot> a;
    for (int i = 0; i < 5; ++i) {
        const MomentumGrid g = gaussian_density(spec, Vec3(0.1 * i, 0.0, 0.0), 0.6);
        a.push_back({0.25 * i, g, 1.0});
    }
    const ChaosReport rep = chaos_report(a, a);
    for (double d : rep.d) CHECK(d == 0.0);
    CHECK(rep.verdict == Verdict::regular);
    CHECK(rep.direction == "a||b");

    auto b = a;
    b[2].s += 0.01;
    CHECK_THROWS_AS(chaos_report(a, b), DomainError);
    b.pop_back();
    CHECK_THROWS_AS(chaos_report(a, b), DomainError);
}

TEST_CASE("exponentially separating series are chaotic and serialise") {
    std::vector<double> s, d;
    for (int i = 0; i < 20; ++i) {
        s.push_back(0.25 * i);
        d.push_back(1e-8 * std::exp(1.2 * s.back()));
    }
    ChaosOptions opt;
    opt.window_begin = 0.2;
    const ChaosReport rep = chaos_report(s, d, opt);
    CHECK(rep.fitted);
    CHECK(rep.fit.k == doctest::Approx(1.2).epsilon(1e-10));
    CHECK(rep.verdict == Verdict::chaotic);

    const nlohmann::json j = to_json(rep);
    CHECK(j.at("direction") == "a||b");
    CHECK(j.at("verdict") == "chaotic");
    CHECK(j.at("series").size() == 20);
    CHECK(j.at("fit").at("k").get<double>() == doctest::Approx(1.2).epsilon(1e-10));
    CHECK(j.at("thresholds").at("window_begin") == 0.2);

    opt.window_begin = 0.9;
    opt.window_end = 0.5;
    CHECK_THROWS_AS(chaos_report(s, d, opt), DomainError);
}

TEST_CASE("channel thresholds") {
    const ChannelThresholds t = ChannelThresholds::from_scale(2.0);
    CHECK(t.r_bound == 6.0);
    CHECK(t.r_free == 20.0);
    ChannelThresholds bad;
    bad.r_free = 1.0;
    CHECK_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("channel labels from synthetic tracks") {
    const Masses m;
    const ChannelThresholds t;
    // bodies 2 and 3 oscillate at unit separation while body 1 recedes
    auto receding = [](double pair, double far) {
        const double h = std::sqrt(far * far + 0.25 * pair * pair);
        return Vec3(h, h, pair);
    };
    const auto bound23 = track_from(100, 20.0, [&](double s) { return receding(1.0 + 0.2 * std::sin(3 * s), 1.0 + s); });
    CHECK(classify_channel(bound23, m, t) == ChannelLabel::bound_23_free_1);

    const auto bound12 = track_from(100, 20.0, [&](double s) {
        const Vec3 v = receding(1.0 + 0.2 * std::sin(3 * s), 1.0 + s);
        return Vec3(v[2], v[0], v[1]);
    });
    CHECK(classify_channel(bound12, m, t) == ChannelLabel::bound_12_free_3);

    const auto breakup = track_from(100, 20.0, [](double s) { return Vec3(1 + s, 1 + 1.5 * s, 1 + 2 * s); });
    CHECK(classify_channel(breakup, m, t) == ChannelLabel::full_breakup);

    const auto resonance =
        track_from(100, 20.0, [](double s) { return Vec3(2 + std::sin(s), 2 + std::cos(s), 2.5 + std::sin(2 * s)); });
    CHECK(classify_channel(resonance, m, t) == ChannelLabel::transient);

    // still bound but not yet beyond r_free
    const auto close = track_from(100, 5.0, [&](double s) { return receding(1.0, 1.0 + s); });
    CHECK(classify_channel(close, m, t) == ChannelLabel::transient);

    const auto shortrun = track_from(10, 20.0, [](double s) { return Vec3(1 + s, 1 + s, 1 + s); });
    CHECK_THROWS_AS(classify_channel(shortrun, m, t), InconclusiveError);
}

TEST_CASE("pair distance tracks from Cartesian motion") {
    const Masses m{1.0, 2.0, 3.0};
    std::vector<double> s;
    std::vector<InternalCoords> x;
    std::vector<Vec3> expected;
    for (int i = 0; i <= 200; ++i) {
        const double si = 0.1 * i;
        const double sep = 1.0 + 0.2 * std::sin(2 * si);
        const Vec3 r2(0.0, 0.5 * sep, 0.1), r3(0.0, -0.5 * sep, -0.1);
        const Vec3 r1(1.0 + si, 0.3, 0.0);
        s.push_back(si);
        x.push_back(internal_from_jacobi(mass_scaled_jacobi(r1, r2, r3, m)));
        expected.emplace_back((r1 - r2).norm(), (r1 - r3).norm(), (r2 - r3).norm());
    }
    const PairDistanceTrack track = pair_distance_track(s, x, m);
    REQUIRE(track.d.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) CHECK((track.d[i] - expected[i]).norm() < 1e-10);
    CHECK(classify_channel(track, m, ChannelThresholds{}) == ChannelLabel::bound_23_free_1);
}

TEST_CASE("unfinished trajectories are inconclusive") {
    TrajectoryRecord rec;
    rec.termination = Termination::boundary;
    CHECK_THROWS_AS(classify_channel(rec, Masses{}, ChannelThresholds{}), InconclusiveError);
}
