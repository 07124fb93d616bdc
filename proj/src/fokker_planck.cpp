#include "qtb/fokker_planck.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

#include "qtb/errors.hpp"
#include "qtb/numfmt.hpp"

namespace qtb {

MomentumGrid::MomentumGrid(const GridSpec& spec) : spec_(spec) {
    for (const Axis& ax : spec_) {
        if (ax.n < 8) throw DomainError("momentum grid: at least 8 cells per axis required");
        if (!(ax.max > ax.min) || !std::isfinite(ax.min) || !std::isfinite(ax.max)) {
            throw DomainError("momentum grid: axis requires finite min < max");
        }
    }
    values_.assign(static_cast<std::size_t>(spec_[0].n) * spec_[1].n * spec_[2].n, 0.0);
}

double total_mass(const MomentumGrid& grid) {
    double sum = 0.0;
    for (double v : grid.values()) sum += v;
    return sum * grid.cell_volume();
}

double total_variation(const MomentumGrid& a, const MomentumGrid& b) {
    if (a.spec() != b.spec()) throw DomainError("total_variation: grid specs differ");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(a.values()[i] - b.values()[i]);
    return 0.5 * sum * a.cell_volume();
}

MomentumGrid coarsen(const MomentumGrid& grid, int factor) {
    if (factor < 1) throw DomainError("coarsen: factor must be positive");
    GridSpec spec = grid.spec();
    for (Axis& ax : spec) {
        if (ax.n % factor != 0) throw DomainError("coarsen: factor must divide every axis");
        ax.n /= factor;
    }
    MomentumGrid out(spec);
    const double w = 1.0 / (factor * factor * factor);
    for (int i = 0; i < grid.axis(0).n; ++i)
        for (int j = 0; j < grid.axis(1).n; ++j)
            for (int k = 0; k < grid.axis(2).n; ++k)
                out.at(i / factor, j / factor, k / factor) += w * grid.at(i, j, k);
    return out;
}

MomentumGrid gaussian_density(const GridSpec& spec, const Vec3& mean, double sigma) {
    if (!(sigma > 0.0)) throw DomainError("gaussian_density: sigma must be positive");
    MomentumGrid g(spec);
    for (int i = 0; i < spec[0].n; ++i)
        for (int j = 0; j < spec[1].n; ++j)
            for (int k = 0; k < spec[2].n; ++k)
                g.at(i, j, k) = std::exp(-(g.center(i, j, k) - mean).squaredNorm() / (2.0 * sigma * sigma));
    const double m = total_mass(g);
    if (!(m > 0.0)) throw DomainError("gaussian_density: no mass on the grid");
    for (double& v : g.values()) v /= m;
    return g;
}

double quantum_epsilon(double hbar_scale, double omega_sq_mean) {
    if (!(omega_sq_mean >= 0.0)) throw DomainError("quantum_epsilon: <omega^2> must be nonnegative");
    if (!(hbar_scale >= 0.0)) throw DomainError("quantum_epsilon: hbar scale must be nonnegative");
    return hbar_scale * std::sqrt(omega_sq_mean) / 2.0;
}

void FpeConfig::validate() const {
    const double scale = std::max(1.0, epsilon.cwiseAbs().maxCoeff());
    if (!epsilon.allFinite() || (epsilon - epsilon.transpose()).cwiseAbs().maxCoeff() > 1e-14 * scale) {
        throw DomainError("fpe: epsilon must be finite and symmetric");
    }
    if (Eigen::SelfAdjointEigenSolver<Mat3>(epsilon).eigenvalues().minCoeff() < -1e-12 * scale) {
        throw DomainError("fpe: epsilon must be positive semidefinite");
    }
    if (!(safety > 0.0 && safety <= 1.0)) throw DomainError("fpe: safety must lie in (0, 1]");
    if (!(ds_min > 0.0)) throw DomainError("fpe: ds_min must be positive");
}

namespace {

// sum_k d_k B^{kj} for the printed diffusion matrix: every entry is a
// quadratic form, and the column divergence collapses to 6 xi_j.
Vec3 divergence_of_diffusion(const Vec3& xi) { return 6.0 * xi; }

struct CellFields {
    std::array<std::vector<double>, 3> drift_flux;  // sign * A^d P
    std::array<std::vector<double>, 3> grad;        // d_k P (central)
    std::array<std::vector<double>, 3> n_flux;      // N^l P
    std::array<std::vector<double>, 9> m;           // M^{lk}, multiplicative only
};

}  // namespace

std::vector<double> fpe_rhs(const MomentumGrid& grid, const DriftCoeffs& c, const FpeConfig& cfg) {
    const int n[3] = {grid.axis(0).n, grid.axis(1).n, grid.axis(2).n};
    const double h[3] = {grid.axis(0).h(), grid.axis(1).h(), grid.axis(2).h()};
    const std::ptrdiff_t stride[3] = {static_cast<std::ptrdiff_t>(n[1]) * n[2], n[2], 1};
    const std::size_t total = grid.size();
    const auto& P = grid.values();
    const double sign = cfg.sign == DriftSign::verbatim ? 1.0 : -1.0;
    const bool mult = cfg.form == DiffusionForm::multiplicative;

    CellFields f;
    for (int d = 0; d < 3; ++d) {
        f.drift_flux[d].assign(total, 0.0);
        f.grad[d].assign(total, 0.0);
        if (mult) f.n_flux[d].assign(total, 0.0);
    }
    if (mult)
        for (auto& m : f.m) m.assign(total, 0.0);

    auto neighbor = [&](int idx3[3], std::size_t idx, int d, int dir) -> std::ptrdiff_t {
        const int q = idx3[d] + dir;
        if (q < 0 || q >= n[d]) return -1;
        return static_cast<std::ptrdiff_t>(idx) + dir * stride[d];
    };
    auto value_at = [&](const std::vector<double>& v, std::ptrdiff_t idx) { return idx < 0 ? 0.0 : v[idx]; };

    // Pass 1: per-cell fluxes and gradients.
    for (int i = 0; i < n[0]; ++i)
        for (int j = 0; j < n[1]; ++j)
            for (int k = 0; k < n[2]; ++k) {
                int id3[3] = {i, j, k};
                const std::size_t idx = grid.index(i, j, k);
                const Vec3 xi = grid.center(i, j, k);
                const double p = P[idx];
                const Vec3 a = drift(xi, c);
                for (int d = 0; d < 3; ++d) {
                    f.drift_flux[d][idx] = sign * a[d] * p;
                    f.grad[d][idx] = (value_at(P, neighbor(id3, idx, d, +1)) - value_at(P, neighbor(id3, idx, d, -1))) /
                                     (2.0 * h[d]);
                }
                if (mult) {
                    const Mat3 b = diffusion(xi, c.lambda_sq);
                    const Mat3 m = b.transpose() * cfg.epsilon * b.transpose();
                    const Vec3 nv = b.transpose() * cfg.epsilon * divergence_of_diffusion(xi);
                    for (int l = 0; l < 3; ++l) {
                        f.n_flux[l][idx] = nv[l] * p;
                        for (int q = 0; q < 3; ++q) f.m[3 * l + q][idx] = m(l, q);
                    }
                }
            }

    auto m_at = [&](int l, int q, std::size_t idx) { return mult ? f.m[3 * l + q][idx] : cfg.epsilon(l, q); };

    // Pass 2: assemble the conservative operator.
    std::vector<double> out(total, 0.0);
    for (int i = 0; i < n[0]; ++i)
        for (int j = 0; j < n[1]; ++j)
            for (int k = 0; k < n[2]; ++k) {
                int id3[3] = {i, j, k};
                const std::size_t idx = grid.index(i, j, k);
                const double p = P[idx];
                double acc = 0.0;
                for (int d = 0; d < 3; ++d) {
                    const std::ptrdiff_t up = neighbor(id3, idx, d, +1);
                    const std::ptrdiff_t dn = neighbor(id3, idx, d, -1);
                    acc += (value_at(f.drift_flux[d], up) - value_at(f.drift_flux[d], dn)) / (2.0 * h[d]);
                    if (mult) acc += (value_at(f.n_flux[d], up) - value_at(f.n_flux[d], dn)) / (2.0 * h[d]);

                    // d_d (M^{dd} d_d P) with face-averaged coefficients.
                    const double m0 = m_at(d, d, idx);
                    const double m_up = up < 0 ? m0 : 0.5 * (m0 + m_at(d, d, static_cast<std::size_t>(up)));
                    const double m_dn = dn < 0 ? m0 : 0.5 * (m0 + m_at(d, d, static_cast<std::size_t>(dn)));
                    acc += (m_up * (value_at(P, up) - p) - m_dn * (p - value_at(P, dn))) / (h[d] * h[d]);

                    // d_d (M^{dq} d_q P), q != d, central.
                    for (int q = 0; q < 3; ++q) {
                        if (q == d) continue;
                        auto flux = [&](std::ptrdiff_t at) {
                            return at < 0 ? 0.0 : m_at(d, q, static_cast<std::size_t>(at)) * f.grad[q][at];
                        };
                        acc += (flux(up) - flux(dn)) / (2.0 * h[d]);
                    }
                }
                out[idx] = acc;
            }
    return out;
}

double fpe_stable_step(const MomentumGrid& grid, const DriftCoeffs& c, const FpeConfig& cfg) {
    double max_adv = 0.0;
    double max_b_sq = cfg.form == DiffusionForm::additive ? 1.0 : 0.0;
    for (int i = 0; i < grid.axis(0).n; ++i)
        for (int j = 0; j < grid.axis(1).n; ++j)
            for (int k = 0; k < grid.axis(2).n; ++k) {
                const Vec3 xi = grid.center(i, j, k);
                double adv = drift(xi, c).cwiseAbs().maxCoeff();
                if (cfg.form == DiffusionForm::multiplicative) {
                    const Mat3 b = diffusion(xi, c.lambda_sq);
                    // infinity norm bounds the spectral norm of the symmetric B
                    const double bn = b.cwiseAbs().rowwise().sum().maxCoeff();
                    max_b_sq = std::max(max_b_sq, bn * bn);
                    const Vec3 nv = b.transpose() * cfg.epsilon * divergence_of_diffusion(xi);
                    adv += nv.cwiseAbs().maxCoeff();
                }
                max_adv = std::max(max_adv, adv);
            }
    const double h = std::min({grid.axis(0).h(), grid.axis(1).h(), grid.axis(2).h()});
    const double inf = std::numeric_limits<double>::infinity();
    const double ds_adv = max_adv > 0.0 ? h / max_adv : inf;
    const double diff = 2.0 * cfg.epsilon.trace() * max_b_sq;
    const double ds_diff = diff > 0.0 ? h * h / diff : inf;
    return std::min(ds_adv, ds_diff);
}

FpeResult fpe_evolve(const MomentumGrid& grid0, const CoefficientSchedule& schedule, double s_begin,
                     const std::vector<double>& snapshots, const FpeConfig& cfg) {
    cfg.validate();
    const double m0 = total_mass(grid0);
    if (std::abs(m0 - 1.0) > 1e-9) throw DomainError("fpe_evolve: initial density not normalised");
    for (std::size_t i = 0; i < snapshots.size(); ++i) {
        if (snapshots[i] < s_begin || (i > 0 && snapshots[i] < snapshots[i - 1])) {
            throw DomainError("fpe_evolve: snapshots must be sorted and not precede s_begin");
        }
    }

    FpeResult res;
    FpeDiagnostics& diag = res.diagnostics;
    diag.initial_mass = m0;
    diag.min_ds = std::numeric_limits<double>::infinity();

    MomentumGrid cur = grid0;
    MomentumGrid stage = grid0;
    double s = s_begin;
    auto emit = [&] {
        const double m = total_mass(cur);
        res.snapshots.push_back({s, cur, m});
        if (s > s_begin) {
            const double rate = (m0 - m) / (s - s_begin);
            diag.max_mass_loss_rate = std::max(diag.max_mass_loss_rate, rate);
            if (rate > cfg.mass_tolerance) diag.mass_loss_flagged = true;
        }
    };

    for (double target : snapshots) {
        while (s < target) {
            const double stable = cfg.safety * fpe_stable_step(cur, schedule.at(s), cfg);
            if (stable < cfg.ds_min) {
                throw ResolutionError("fpe_evolve: stable step " + fmt_double(stable) + " below floor at s = " +
                                      fmt_double(s));
            }
            double ds = std::min(stable, target - s);
            // avoid a sliver step just before the target
            if (target - s - ds < 1e-3 * ds) ds = target - s;

            const std::vector<double> k1 = fpe_rhs(cur, schedule.at(s), cfg);
            for (std::size_t i = 0; i < cur.size(); ++i) stage.values()[i] = cur.values()[i] + ds * k1[i];
            const double s_next = (ds == target - s) ? target : s + ds;
            const std::vector<double> k2 = fpe_rhs(stage, schedule.at(s_next), cfg);
            double pmax = 0.0, pmin = 0.0;
            for (std::size_t i = 0; i < cur.size(); ++i) {
                double& v = cur.values()[i];
                v += 0.5 * ds * (k1[i] + k2[i]);
                pmax = std::max(pmax, v);
                pmin = std::min(pmin, v);
            }
            if (pmin < -1e-12 * pmax) {
                ++diag.negativity_steps;
                if (pmax > 0.0) diag.worst_negative_ratio = std::min(diag.worst_negative_ratio, pmin / pmax);
            }
            if (!std::isfinite(pmax)) throw NumericalError("fpe_evolve: density became non-finite");
            s = s_next;
            ++diag.steps;
            diag.min_ds = std::min(diag.min_ds, ds);
            diag.max_ds = std::max(diag.max_ds, ds);
        }
        emit();
    }
    if (diag.steps == 0) diag.min_ds = 0.0;
    return res;
}

EnsembleDensity density_from_ensemble(std::span<const Vec3> samples, const GridSpec& spec) {
    if (samples.empty()) throw DomainError("density_from_ensemble: no samples");
    EnsembleDensity out{MomentumGrid(spec)};
    for (const Vec3& xi : samples) {
        int idx[3];
        bool inside = xi.allFinite();
        for (int d = 0; d < 3 && inside; ++d) {
            const Axis& ax = spec[static_cast<std::size_t>(d)];
            const double t = (xi[d] - ax.min) / ax.h();
            if (!(t >= 0.0) || !(t < ax.n)) {
                inside = false;
                break;
            }
            idx[d] = std::min(static_cast<int>(t), ax.n - 1);
        }
        if (!inside) {
            ++out.out_of_range;
            continue;
        }
        out.grid.at(idx[0], idx[1], idx[2]) += 1.0;
        ++out.used;
    }
    if (out.used == 0) throw DomainError("density_from_ensemble: every sample fell outside the grid");
    const double norm = 1.0 / (static_cast<double>(out.used) * out.grid.cell_volume());
    for (double& v : out.grid.values()) v *= norm;
    return out;
}

std::string to_string(DriftSign sign) { return sign == DriftSign::verbatim ? "verbatim" : "conventional"; }

void write_density(std::ostream& os, const MomentumGrid& grid, double s, DriftSign sign, const Mat3& epsilon) {
    os << "# qtb-density 1\n";
    for (int d = 0; d < 3; ++d) {
        const Axis& ax = grid.axis(d);
        os << "# axis" << d + 1 << ' ' << fmt_double(ax.min) << ' ' << fmt_double(ax.max) << ' ' << ax.n << '\n';
    }
    os << "# s " << fmt_double(s) << '\n';
    os << "# sign_mode " << to_string(sign) << '\n';
    os << "# epsilon";
    for (int r = 0; r < 3; ++r)
        for (int q = 0; q < 3; ++q) os << ' ' << fmt_double(epsilon(r, q));
    os << '\n';
    for (double v : grid.values()) os << fmt_double(v) << '\n';
}

MomentumGrid read_density(std::istream& is, DensityHeader* header) {
    DensityHeader h;
    std::string line;
    if (!std::getline(is, line) || line != "# qtb-density 1") throw IoError("density: bad magic line");
    for (int d = 0; d < 3; ++d) {
        std::string hash, tag, lo, hi;
        int n = 0;
        if (!std::getline(is, line)) throw IoError("density: truncated header");
        std::istringstream row(line);
        row >> hash >> tag >> lo >> hi >> n;
        if (hash != "#" || tag != "axis" + std::to_string(d + 1) || !row) throw IoError("density: bad axis line");
        h.spec[static_cast<std::size_t>(d)] = {parse_double(lo), parse_double(hi), n};
    }
    {
        std::string hash, tag, val;
        if (!std::getline(is, line)) throw IoError("density: truncated header");
        std::istringstream row(line);
        row >> hash >> tag >> val;
        if (tag != "s") throw IoError("density: missing s");
        h.s = parse_double(val);
    }
    {
        std::string hash, tag;
        if (!std::getline(is, line)) throw IoError("density: truncated header");
        std::istringstream row(line);
        row >> hash >> tag >> h.sign_mode;
        if (tag != "sign_mode") throw IoError("density: missing sign_mode");
    }
    {
        std::string hash, tag, val;
        if (!std::getline(is, line)) throw IoError("density: truncated header");
        std::istringstream row(line);
        row >> hash >> tag;
        if (tag != "epsilon") throw IoError("density: missing epsilon");
        for (int r = 0; r < 3; ++r)
            for (int q = 0; q < 3; ++q) {
                if (!(row >> val)) throw IoError("density: short epsilon line");
                h.epsilon(r, q) = parse_double(val);
            }
    }
    MomentumGrid grid(h.spec);
    for (double& v : grid.values()) {
        if (!std::getline(is, line)) throw IoError("density: truncated values");
        v = parse_double(line);
    }
    if (header) *header = h;
    return grid;
}

}  // namespace qtb
