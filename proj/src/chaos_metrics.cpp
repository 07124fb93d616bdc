#include "qtb/chaos_metrics.hpp"

#include <algorithm>
#include <cmath>

#include "qtb/errors.hpp"

namespace qtb {

KlResult kl_divergence(const MomentumGrid& pa, const MomentumGrid& pb, double floor) {
    if (pa.spec() != pb.spec()) throw DomainError("kl_divergence: grid specs differ");
    if (!(floor > 0.0)) throw DomainError("kl_divergence: floor must be positive");
    KlResult out;
    double sum = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const double p = pa.values()[i];
        if (!(p > 0.0)) continue;
        double q = pb.values()[i];
        if (q <= floor) {
            q = floor;
            ++out.support_mismatch;
        }
        sum += p * std::log(p / q);
    }
    out.value = sum * pa.cell_volume();
    return out;
}

GrowthFit growth_rate(const std::vector<double>& s, const std::vector<double>& d, double s_lo, double s_hi) {
    if (s.size() != d.size()) throw DomainError("growth_rate: series lengths differ");
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] >= s_lo && s[i] <= s_hi && d[i] > 0.0 && std::isfinite(d[i])) {
            xs.push_back(s[i]);
            ys.push_back(std::log(d[i]));
        }
    }
    if (xs.size() < 3) throw FitError("growth_rate: fewer than 3 positive samples in the fit window");

    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if (!(sxx > 0.0)) throw FitError("growth_rate: all samples share one s value");

    GrowthFit fit;
    fit.k = sxy / sxx;
    fit.intercept = my - fit.k * mx;
    double ss = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double r = ys[i] - (fit.intercept + fit.k * xs[i]);
        ss += r * r;
    }
    fit.residual = std::sqrt(ss / n);
    fit.samples = xs.size();
    fit.s_lo = xs.front();
    fit.s_hi = xs.back();
    return fit;
}

GrowthFit growth_rate(const std::vector<double>& s, const std::vector<double>& d) {
    if (s.empty()) throw FitError("growth_rate: empty series");
    return growth_rate(s, d, *std::min_element(s.begin(), s.end()), *std::max_element(s.begin(), s.end()));
}

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::chaotic: return "chaotic";
        case Verdict::regular: return "regular";
        case Verdict::inconclusive: return "inconclusive";
    }
    return "inconclusive";
}

Verdict classify_growth(const std::vector<double>& d, const GrowthFit* fit, const VerdictThresholds& t,
                        std::string* reason) {
    auto say = [&](Verdict v, const char* why) {
        if (reason) *reason = why;
        return v;
    };
    const bool all_zero = std::all_of(d.begin(), d.end(), [&](double x) { return std::abs(x) <= t.zero_level; });
    if (all_zero) return say(Verdict::regular, "divergence stays at zero");
    if (!fit) return say(Verdict::inconclusive, "too few positive samples for a fit");
    if (!(fit->residual < t.max_residual)) return say(Verdict::inconclusive, "log-fit residual above gate");
    if (fit->k <= 0.0) return say(Verdict::regular, "no exponential growth");
    const double decades = fit->k * (fit->s_hi - fit->s_lo) / std::log(10.0);
    if (decades < t.min_decades) return say(Verdict::inconclusive, "growth spans less than the required decades");
    return say(Verdict::chaotic, "exponential growth with k > 0");
}

ChaosReport chaos_report(const std::vector<double>& s, const std::vector<double>& d, const ChaosOptions& opt) {
    if (s.size() != d.size()) throw DomainError("chaos_report: series lengths differ");
    if (!(opt.window_begin >= 0.0 && opt.window_end <= 1.0 && opt.window_begin < opt.window_end)) {
        throw DomainError("chaos_report: window fractions must satisfy 0 <= begin < end <= 1");
    }
    ChaosReport rep;
    rep.s = s;
    rep.d = d;
    rep.support_mismatch.assign(s.size(), 0);
    rep.options = opt;
    if (!s.empty()) {
        const double lo = s.front(), span = s.back() - s.front();
        try {
            rep.fit = growth_rate(s, d, lo + opt.window_begin * span, lo + opt.window_end * span);
            rep.fitted = true;
        } catch (const FitError&) {
            rep.fitted = false;
        }
    }
    rep.verdict = classify_growth(d, rep.fitted ? &rep.fit : nullptr, opt.thresholds, &rep.reason);
    return rep;
}

ChaosReport chaos_report(const std::vector<FpeSnapshot>& a, const std::vector<FpeSnapshot>& b,
                         const ChaosOptions& opt) {
    if (a.size() != b.size()) throw DomainError("chaos_report: density series differ in length");
    std::vector<double> s, d;
    std::vector<std::size_t> mismatch;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::abs(a[i].s - b[i].s) > 1e-12 * std::max(1.0, std::abs(a[i].s))) {
            throw DomainError("chaos_report: snapshot parameters differ between the two series");
        }
        const KlResult kl = kl_divergence(a[i].grid, b[i].grid, opt.floor);
        s.push_back(a[i].s);
        d.push_back(kl.value);
        mismatch.push_back(kl.support_mismatch);
    }
    ChaosReport rep = chaos_report(s, d, opt);
    rep.support_mismatch = std::move(mismatch);
    return rep;
}

nlohmann::json to_json(const ChaosReport& r) {
    nlohmann::json series = nlohmann::json::array();
    for (std::size_t i = 0; i < r.s.size(); ++i) {
        series.push_back({{"s", r.s[i]}, {"D", r.d[i]}, {"support_mismatch", r.support_mismatch[i]}});
    }
    nlohmann::json fit = nullptr;
    if (r.fitted) {
        fit = {{"k", r.fit.k},
               {"intercept", r.fit.intercept},
               {"residual", r.fit.residual},
               {"samples", r.fit.samples},
               {"s_lo", r.fit.s_lo},
               {"s_hi", r.fit.s_hi}};
    }
    return {{"direction", r.direction},
            {"series", series},
            {"fit", fit},
            {"verdict", to_string(r.verdict)},
            {"reason", r.reason},
            {"thresholds",
             {{"floor", r.options.floor},
              {"window_begin", r.options.window_begin},
              {"window_end", r.options.window_end},
              {"max_residual", r.options.thresholds.max_residual},
              {"min_decades", r.options.thresholds.min_decades},
              {"zero_level", r.options.thresholds.zero_level}}}};
}

std::string to_string(ChannelLabel label) {
    switch (label) {
        case ChannelLabel::bound_23_free_1: return "bound_23_free_1";
        case ChannelLabel::bound_12_free_3: return "bound_12_free_3";
        case ChannelLabel::bound_13_free_2: return "bound_13_free_2";
        case ChannelLabel::full_breakup: return "full_breakup";
        case ChannelLabel::transient: return "transient";
    }
    return "transient";
}

ChannelThresholds ChannelThresholds::from_scale(double d0) {
    if (!(d0 > 0.0) || !std::isfinite(d0)) throw DomainError("channel thresholds: scale must be positive");
    ChannelThresholds t;
    t.r_bound = 3.0 * d0;
    t.r_free = 10.0 * d0;
    return t;
}

void ChannelThresholds::validate() const {
    if (!(r_bound > 0.0 && r_free > r_bound)) throw DomainError("channel thresholds: need 0 < r_bound < r_free");
    if (!(window_fraction > 0.0 && window_fraction <= 1.0)) {
        throw DomainError("channel thresholds: window fraction must lie in (0, 1]");
    }
    if (min_window_samples < 2) throw DomainError("channel thresholds: window needs at least 2 samples");
}

PairDistanceTrack pair_distance_track(const std::vector<double>& s, const std::vector<InternalCoords>& x,
                                      const Masses& m) {
    if (s.size() != x.size()) throw DomainError("pair_distance_track: series lengths differ");
    const PairDistanceMap map(m);
    PairDistanceTrack t;
    t.s = s;
    t.d.reserve(x.size());
    for (const InternalCoords& xi : x) t.d.push_back(map.distances(xi));
    return t;
}

PairDistanceTrack pair_distance_track(const TrajectoryRecord& traj, const Masses& m) {
    std::vector<double> s;
    std::vector<InternalCoords> x;
    for (const TrajectorySample& smp : traj.samples) {
        s.push_back(smp.s);
        x.push_back(smp.x);
    }
    return pair_distance_track(s, x, m);
}

namespace {

bool non_decreasing(const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] < v[i - 1] - 1e-12 * std::max(1.0, std::abs(v[i - 1]))) return false;
    }
    return true;
}

// Component order of PairDistanceTrack::d.
constexpr int kD12 = 0, kD13 = 1, kD23 = 2;

}  // namespace

ChannelLabel classify_channel(const PairDistanceTrack& track, const Masses& m, const ChannelThresholds& t) {
    m.validate();
    t.validate();
    if (track.s.size() != track.d.size()) throw DomainError("classify_channel: series lengths differ");
    if (track.s.empty()) throw InconclusiveError("classify_channel: empty track");

    const double s_cut = track.s.back() - t.window_fraction * (track.s.back() - track.s.front());
    std::size_t first = 0;
    while (first < track.s.size() && track.s[first] < s_cut) ++first;
    const std::size_t count = track.s.size() - first;
    if (count < t.min_window_samples) {
        throw InconclusiveError("classify_channel: window holds " + std::to_string(count) + " samples, need " +
                                std::to_string(t.min_window_samples));
    }

    const double mass[3] = {m.m1, m.m2, m.m3};
    // d(i, j) in body indices 0..2.
    auto pair_index = [](int i, int j) {
        if (i > j) std::swap(i, j);
        return i == 0 ? (j == 1 ? kD12 : kD13) : kD23;
    };

    struct Candidate {
        int i, j;
        ChannelLabel label;
    };
    const Candidate candidates[] = {{1, 2, ChannelLabel::bound_23_free_1},
                                    {0, 1, ChannelLabel::bound_12_free_3},
                                    {0, 2, ChannelLabel::bound_13_free_2}};
    int bound_found = 0;
    ChannelLabel bound_label = ChannelLabel::transient;
    for (const Candidate& c : candidates) {
        const int k = 3 - c.i - c.j;
        const double mi = mass[c.i], mj = mass[c.j], mij = mi + mj;
        bool pair_bound = true;
        std::vector<double> third;
        for (std::size_t n = first; n < track.s.size(); ++n) {
            const Vec3& d = track.d[n];
            const double dij = d[pair_index(c.i, c.j)];
            const double dki = d[pair_index(k, c.i)];
            const double dkj = d[pair_index(k, c.j)];
            if (!(dij < t.r_bound)) pair_bound = false;
            // Stewart: distance from body k to the centre of mass of (i, j).
            const double sq = (mi * dki * dki + mj * dkj * dkj) / mij - mi * mj * dij * dij / (mij * mij);
            third.push_back(std::sqrt(std::max(sq, 0.0)));
        }
        if (pair_bound && non_decreasing(third) && third.back() > t.r_free) {
            ++bound_found;
            bound_label = c.label;
        }
    }
    if (bound_found == 1) return bound_label;

    bool breakup = true;
    for (int p = 0; p < 3 && breakup; ++p) {
        std::vector<double> v;
        for (std::size_t n = first; n < track.s.size(); ++n) v.push_back(track.d[n][p]);
        breakup = non_decreasing(v) && v.back() > t.r_free;
    }
    return breakup ? ChannelLabel::full_breakup : ChannelLabel::transient;
}

ChannelLabel classify_channel(const TrajectoryRecord& traj, const Masses& m, const ChannelThresholds& t) {
    if (traj.termination != Termination::reached_end) {
        throw InconclusiveError("classify_channel: trajectory ended by " + to_string(traj.termination));
    }
    return classify_channel(pair_distance_track(traj, m), m, t);
}

}  // namespace qtb
