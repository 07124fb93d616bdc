#include "qtb/pipeline.hpp"

#include <openssl/evp.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "qtb/errors.hpp"
#include "qtb/kinematics.hpp"
#include "qtb/metric.hpp"

namespace qtb {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Strict reader over one JSON object: every key must be consumed.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "<document>" : path_, "expected an object");
    }

    std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

    bool has(const std::string& k) {
        seen_.insert(k);
        return j_.contains(k);
    }

    const json& at(const std::string& k) {
        seen_.insert(k);
        if (!j_.contains(k)) throw ConfigError(key(k), "required key missing");
        return j_.at(k);
    }

    double num(const std::string& k) {
        const json& v = at(k);
        if (!v.is_number()) throw ConfigError(key(k), "expected a number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) throw ConfigError(key(k), "must be finite");
        return d;
    }
    double num(const std::string& k, double def) { return has(k) ? num(k) : def; }

    std::uint64_t count(const std::string& k, std::uint64_t def) {
        if (!has(k)) return def;
        const json& v = j_.at(k);
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
            throw ConfigError(key(k), "expected a non-negative integer");
        }
        return v.get<std::uint64_t>();
    }

    std::string str(const std::string& k, const std::string& def) {
        if (!has(k)) return def;
        const json& v = j_.at(k);
        if (!v.is_string()) throw ConfigError(key(k), "expected a string");
        return v.get<std::string>();
    }

    Vec3 vec3(const std::string& k) {
        const json& v = at(k);
        if (!v.is_array() || v.size() != 3) throw ConfigError(key(k), "expected an array of three numbers");
        Vec3 out;
        for (int i = 0; i < 3; ++i) {
            if (!v[i].is_number()) throw ConfigError(key(k), "expected an array of three numbers");
            out[i] = v[i].get<double>();
        }
        if (!out.allFinite()) throw ConfigError(key(k), "entries must be finite");
        return out;
    }
    Vec3 vec3(const std::string& k, const Vec3& def) { return has(k) ? vec3(k) : def; }

    Section child(const std::string& k) {
        static const json empty = json::object();
        return has(k) ? Section(j_.at(k), key(k)) : Section(empty, key(k));
    }

    void finish() const {
        for (const auto& item : j_.items()) {
            if (!seen_.count(item.key())) throw ConfigError(key(item.key()), "unknown key");
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <class F>
void check(const std::string& key, F&& f) {
    try {
        f();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(key, e.what());
    }
}

void require(bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigError(key, what);
}

json to_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

json to_json(const Mat3& m) {
    json out = json::array();
    for (int r = 0; r < 3; ++r) out.push_back(json::array({m(r, 0), m(r, 1), m(r, 2)}));
    return out;
}

std::string to_string(SdeMode m) { return m == SdeMode::additive ? "additive" : "multiplicative"; }

Mat3 parse_epsilon(const json& v, const std::string& key) {
    if (v.is_number()) {
        const double e = v.get<double>();
        require(std::isfinite(e), key, "must be finite");
        return e * Mat3::Identity();
    }
    require(v.is_array() && v.size() == 3, key, "expected a number or a 3x3 array");
    Mat3 m;
    for (int r = 0; r < 3; ++r) {
        require(v[r].is_array() && v[r].size() == 3, key, "expected a number or a 3x3 array");
        for (int c = 0; c < 3; ++c) {
            require(v[r][c].is_number(), key, "expected a number or a 3x3 array");
            m(r, c) = v[r][c].get<double>();
        }
    }
    require(m.allFinite(), key, "entries must be finite");
    return m;
}

}  // namespace

double RunConfig::mu0() const { return reduced_mass(masses); }

EnergySurface RunConfig::surface() const {
    EnergySurface s;
    s.E = E;
    s.U0 = U0;
    s.potential = make_potential(potential, masses);
    return s;
}

PotentialPtr make_potential(const PotentialConfig& p, const Masses& m) {
    if (p.name == "free") return std::make_shared<FreePotential>();
    if (p.name == "morse") return std::make_shared<MorsePotential>(m, p.depth, p.alpha, p.d0);
    if (p.name == "gravity") return std::make_shared<GravityPotential>(m, p.G, p.softening);
    throw DomainError("unknown potential '" + p.name + "' (free, morse, gravity)");
}

json RunConfig::echo() const {
    json pot = {{"name", potential.name}};
    if (potential.name == "morse") {
        pot["depth"] = potential.depth;
        pot["alpha"] = potential.alpha;
        pot["d0"] = potential.d0;
    } else if (potential.name == "gravity") {
        pot["G"] = potential.G;
        pot["softening"] = potential.softening;
    }
    // the derived epsilon is echoed only when it was given directly, so the
    // echo parses back to the same configuration
    json noise = {{"mode", to_string(this->noise.mode)}, {"drift_sign", to_string(this->noise.drift_sign)}};
    if (this->noise.hbar_scale) {
        noise["hbar_scale"] = *this->noise.hbar_scale;
        noise["omega_sq_mean"] = *this->noise.omega_sq_mean;
    } else {
        noise["epsilon"] = to_json(this->noise.epsilon);
    }
    return {{"masses", json::array({masses.m1, masses.m2, masses.m3})},
            {"potential", pot},
            {"E", E},
            {"U0", U0},
            {"J", to_json(J.vec())},
            {"x0", to_json(x0.vec())},
            {"xi0", to_json(xi0)},
            {"integrator",
             {{"s_end", integrator.s_end},
              {"tol", integrator.tol},
              {"sample_ds", integrator.sample_ds},
              {"max_steps", integrator.max_steps}}},
            {"noise", noise},
            {"window", {{"s_begin", window.s_begin}, {"s_end", window.s_end}, {"snapshots", window.snapshots}}},
            {"ensemble",
             {{"n_paths", ensemble.n_paths},
              {"ds", ensemble.ds},
              {"initial_sigma", ensemble.initial_sigma},
              {"threads", ensemble.threads}}},
            {"grid", {{"n", grid.n}, {"half_width", grid.half_width}}},
            {"fpe",
             {{"initial_sigma", fpe.initial_sigma},
              {"safety", fpe.safety},
              {"ds_min", fpe.ds_min},
              {"mass_tolerance", fpe.mass_tolerance}}},
            {"delta", to_json(delta)},
            {"chaos",
             {{"floor", chaos.floor},
              {"window_begin", chaos.window_begin},
              {"window_end", chaos.window_end},
              {"max_residual", chaos.thresholds.max_residual},
              {"min_decades", chaos.thresholds.min_decades},
              {"zero_level", chaos.thresholds.zero_level}}},
            {"channels",
             {{"r_bound", channels.r_bound},
              {"r_free", channels.r_free},
              {"window_fraction", channels.window_fraction},
              {"min_window_samples", channels.min_window_samples}}},
            {"seed", seed},
            {"output_dir", output_dir}};
}

RunConfig parse_config(const json& doc) {
    RunConfig cfg;
    Section root(doc, "");

    {
        const Vec3 m = root.vec3("masses");
        cfg.masses = {m[0], m[1], m[2]};
        check("masses", [&] { cfg.masses.validate(); });
    }

    {
        Section p(root.at("potential"), "potential");
        cfg.potential.name = p.str("name", "");
        require(!cfg.potential.name.empty(), "potential.name", "required key missing");
        if (cfg.potential.name == "morse") {
            cfg.potential.depth = p.num("depth");
            cfg.potential.alpha = p.num("alpha");
            cfg.potential.d0 = p.num("d0");
        } else if (cfg.potential.name == "gravity") {
            cfg.potential.G = p.num("G");
            cfg.potential.softening = p.num("softening", 0.0);
        } else if (cfg.potential.name != "free") {
            throw ConfigError("potential.name", "unknown potential '" + cfg.potential.name + "'");
        }
        p.finish();
        check("potential", [&] { make_potential(cfg.potential, cfg.masses); });
    }

    cfg.E = root.num("E");
    cfg.U0 = root.num("U0", 1.0);
    require(cfg.U0 > 0.0, "U0", "must be positive");
    const Vec3 j = root.vec3("J", Vec3::Zero());
    cfg.J = {j[0], j[1], j[2]};

    const EnergySurface surf = cfg.surface();
    const PairDistanceMap pairs(cfg.masses);
    auto check_point = [&](const std::string& key, const InternalCoords& x) {
        check(key, [&] {
            require(x.x1 > 0.0 && x.x2 > 0.0 && x.x3 > 0.0, key, "internal coordinates must be positive");
            pairs.distances(x);
            conformal_factor(x, surf);
        });
    };
    cfg.x0 = InternalCoords::from(root.vec3("x0"));
    check_point("x0", cfg.x0);
    cfg.xi0 = root.vec3("xi0");

    {
        Section s = root.child("integrator");
        cfg.integrator.s_end = s.num("s_end", cfg.integrator.s_end);
        cfg.integrator.tol = s.num("tol", cfg.integrator.tol);
        cfg.integrator.sample_ds = s.num("sample_ds", cfg.integrator.sample_ds);
        cfg.integrator.max_steps = s.count("max_steps", cfg.integrator.max_steps);
        s.finish();
        require(cfg.integrator.s_end > 0.0, "integrator.s_end", "must be positive");
        require(cfg.integrator.tol > 0.0 && cfg.integrator.tol < 1.0, "integrator.tol", "must lie in (0, 1)");
        require(cfg.integrator.sample_ds >= 0.0, "integrator.sample_ds", "must be non-negative");
        require(cfg.integrator.max_steps > 0, "integrator.max_steps", "must be positive");
    }

    {
        Section s = root.child("noise");
        const bool has_eps = s.has("epsilon");
        const bool has_hbar = s.has("hbar_scale");
        const bool has_omega = s.has("omega_sq_mean");
        if (has_eps && (has_hbar || has_omega)) {
            throw ConfigError("noise", "give either epsilon or (hbar_scale, omega_sq_mean), not both");
        }
        if (has_eps) {
            cfg.noise.epsilon = parse_epsilon(s.at("epsilon"), "noise.epsilon");
        } else if (has_hbar || has_omega) {
            cfg.noise.hbar_scale = s.num("hbar_scale");
            cfg.noise.omega_sq_mean = s.num("omega_sq_mean");
            check("noise.hbar_scale", [&] {
                cfg.noise.epsilon = quantum_epsilon(*cfg.noise.hbar_scale, *cfg.noise.omega_sq_mean) *
                                    Mat3::Identity();
            });
        }
        const std::string mode = s.str("mode", "additive");
        if (mode == "additive") {
            cfg.noise.mode = SdeMode::additive;
        } else if (mode == "multiplicative") {
            cfg.noise.mode = SdeMode::multiplicative;
        } else {
            throw ConfigError("noise.mode", "expected additive or multiplicative");
        }
        const std::string sign = s.str("drift_sign", "conventional");
        if (sign == "conventional") {
            cfg.noise.drift_sign = DriftSign::conventional;
        } else if (sign == "verbatim") {
            cfg.noise.drift_sign = DriftSign::verbatim;
        } else {
            throw ConfigError("noise.drift_sign", "expected conventional or verbatim");
        }
        s.finish();
        check("noise.epsilon", [&] { NoiseModel(cfg.noise.epsilon, 0); });
    }

    {
        Section s = root.child("window");
        cfg.window.s_begin = s.num("s_begin", 0.0);
        cfg.window.s_end = s.num("s_end", std::min(1.0, cfg.integrator.s_end));
        require(cfg.window.s_begin >= 0.0, "window.s_begin", "must be non-negative");
        require(cfg.window.s_end > cfg.window.s_begin, "window.s_end", "must exceed window.s_begin");
        require(cfg.window.s_end <= cfg.integrator.s_end, "window.s_end", "must not exceed integrator.s_end");
        if (s.has("snapshots")) {
            const json& v = s.at("snapshots");
            require(v.is_array() && !v.empty(), "window.snapshots", "expected a non-empty array of numbers");
            for (const json& x : v) {
                require(x.is_number(), "window.snapshots", "expected a non-empty array of numbers");
                cfg.window.snapshots.push_back(x.get<double>());
            }
        } else {
            for (int i = 0; i <= 4; ++i) {
                cfg.window.snapshots.push_back(cfg.window.s_begin + (cfg.window.s_end - cfg.window.s_begin) * i / 4.0);
            }
        }
        s.finish();
        const auto& snaps = cfg.window.snapshots;
        require(std::is_sorted(snaps.begin(), snaps.end()) &&
                    std::adjacent_find(snaps.begin(), snaps.end()) == snaps.end(),
                "window.snapshots", "must be strictly increasing");
        require(snaps.front() >= cfg.window.s_begin && snaps.back() <= cfg.window.s_end, "window.snapshots",
                "must lie inside [s_begin, s_end]");
    }

    {
        Section s = root.child("ensemble");
        cfg.ensemble.n_paths = s.count("n_paths", cfg.ensemble.n_paths);
        cfg.ensemble.ds = s.num("ds", cfg.ensemble.ds);
        cfg.ensemble.initial_sigma = s.num("initial_sigma", cfg.ensemble.initial_sigma);
        cfg.ensemble.threads = static_cast<unsigned>(s.count("threads", cfg.ensemble.threads));
        s.finish();
        require(cfg.ensemble.n_paths > 0, "ensemble.n_paths", "must be positive");
        require(cfg.ensemble.ds > 0.0 && cfg.ensemble.ds <= cfg.window.s_end - cfg.window.s_begin, "ensemble.ds",
                "must be positive and fit inside the window");
        require(cfg.ensemble.initial_sigma >= 0.0, "ensemble.initial_sigma", "must be non-negative");
    }

    {
        Section s = root.child("grid");
        cfg.grid.n = static_cast<int>(s.count("n", static_cast<std::uint64_t>(cfg.grid.n)));
        cfg.grid.half_width = s.num("half_width", cfg.grid.half_width);
        s.finish();
        require(cfg.grid.n >= 8 && cfg.grid.n <= 512, "grid.n", "must lie in [8, 512]");
        require(cfg.grid.half_width >= 0.0, "grid.half_width", "must be non-negative (0 sizes the box)");
    }

    {
        Section s = root.child("fpe");
        cfg.fpe.initial_sigma = s.num("initial_sigma", cfg.fpe.initial_sigma);
        cfg.fpe.safety = s.num("safety", cfg.fpe.safety);
        cfg.fpe.ds_min = s.num("ds_min", cfg.fpe.ds_min);
        cfg.fpe.mass_tolerance = s.num("mass_tolerance", cfg.fpe.mass_tolerance);
        s.finish();
        require(cfg.fpe.initial_sigma > 0.0, "fpe.initial_sigma", "must be positive");
        require(cfg.fpe.mass_tolerance > 0.0, "fpe.mass_tolerance", "must be positive");
        check("fpe", [&] {
            FpeConfig f;
            f.epsilon = cfg.noise.epsilon;
            f.safety = cfg.fpe.safety;
            f.ds_min = cfg.fpe.ds_min;
            f.validate();
        });
    }

    cfg.delta = root.vec3("delta", cfg.delta);
    check_point("delta", InternalCoords::from(cfg.x0.vec() + cfg.delta));

    {
        Section s = root.child("chaos");
        cfg.chaos.floor = s.num("floor", cfg.chaos.floor);
        cfg.chaos.window_begin = s.num("window_begin", cfg.chaos.window_begin);
        cfg.chaos.window_end = s.num("window_end", cfg.chaos.window_end);
        cfg.chaos.thresholds.max_residual = s.num("max_residual", cfg.chaos.thresholds.max_residual);
        cfg.chaos.thresholds.min_decades = s.num("min_decades", cfg.chaos.thresholds.min_decades);
        cfg.chaos.thresholds.zero_level = s.num("zero_level", cfg.chaos.thresholds.zero_level);
        s.finish();
        require(cfg.chaos.floor > 0.0, "chaos.floor", "must be positive");
        require(cfg.chaos.window_begin >= 0.0 && cfg.chaos.window_begin < cfg.chaos.window_end &&
                    cfg.chaos.window_end <= 1.0,
                "chaos.window_begin", "need 0 <= window_begin < window_end <= 1");
        require(cfg.chaos.thresholds.max_residual > 0.0, "chaos.max_residual", "must be positive");
        require(cfg.chaos.thresholds.min_decades >= 0.0, "chaos.min_decades", "must be non-negative");
        require(cfg.chaos.thresholds.zero_level >= 0.0, "chaos.zero_level", "must be non-negative");
    }

    {
        if (cfg.potential.name == "morse") cfg.channels = ChannelThresholds::from_scale(cfg.potential.d0);
        Section s = root.child("channels");
        cfg.channels.r_bound = s.num("r_bound", cfg.channels.r_bound);
        cfg.channels.r_free = s.num("r_free", cfg.channels.r_free);
        cfg.channels.window_fraction = s.num("window_fraction", cfg.channels.window_fraction);
        cfg.channels.min_window_samples = s.count("min_window_samples", cfg.channels.min_window_samples);
        s.finish();
        check("channels", [&] { cfg.channels.validate(); });
    }

    cfg.seed = root.count("seed", 0);
    cfg.output_dir = root.str("output_dir", cfg.output_dir);
    root.finish();
    return cfg;
}

RunConfig load_config(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read config " + path.string());
    json doc;
    try {
        doc = json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError("<document>", std::string("malformed JSON: ") + e.what());
    }
    return parse_config(doc);
}

std::string to_string(Stage s) {
    switch (s) {
        case Stage::simulate: return "simulate";
        case Stage::ensemble: return "ensemble";
        case Stage::fpe: return "fpe";
        case Stage::chaos: return "chaos";
        case Stage::channels: return "channels";
    }
    return "unknown";
}

Stage stage_from_string(const std::string& name) {
    for (Stage s : {Stage::simulate, Stage::ensemble, Stage::fpe, Stage::chaos, Stage::channels}) {
        if (to_string(s) == name) return s;
    }
    throw ConfigError("command", "unknown stage '" + name + "'");
}

int exit_code(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const DependencyError*>(&e)) return 3;
    if (dynamic_cast<const NumericalError*>(&e)) return 4;
    if (dynamic_cast<const IoError*>(&e)) return 5;
    // remaining precondition failures stem from the configuration
    if (dynamic_cast<const DomainError*>(&e)) return 2;
    return 1;
}

std::string sha256_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path.string() + " for checksum");
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw IoError("sha256: init failed");
    char buf[1 << 16];
    while (is) {
        is.read(buf, sizeof buf);
        if (is.gcount() > 0 && EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(is.gcount())) != 1) {
            throw IoError("sha256: update failed");
        }
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx.get(), md, &len) != 1) throw IoError("sha256: final failed");
    std::string hex;
    char byte[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(byte, sizeof byte, "%02x", md[i]);
        hex += byte;
    }
    return hex;
}

std::string density_file_name(char series, std::size_t index) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "density_%c_%03zu.txt", series, index);
    return buf;
}

namespace {

std::string manifest_name(Stage s) { return "manifest_" + to_string(s) + ".json"; }

void write_atomic(const fs::path& path, const std::function<void(std::ostream&)>& body) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write " + tmp.string());
        body(os);
        os.flush();
        if (!os) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const json& j) {
    write_atomic(path, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
}

json read_json(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw IoError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

// One stage invocation: output-directory checks, manifest lifecycle and the
// bookkeeping of produced files.
class StageRun {
public:
    StageRun(Stage stage, const RunConfig& cfg, const StageOptions& opt)
        : stage_(stage), cfg_(cfg), dir_(opt.out) {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec || !fs::is_directory(dir_)) throw IoError("cannot create output directory " + dir_.string());
        const fs::path probe = dir_ / ".qtb_write_probe";
        {
            std::ofstream os(probe);
            if (!os) throw IoError("output directory " + dir_.string() + " is not writable");
        }
        fs::remove(probe, ec);

        const fs::path manifest = dir_ / manifest_name(stage_);
        if (fs::exists(manifest)) {
            if (!opt.force) {
                throw IoError("output directory already holds a " + to_string(stage_) +
                              " run; pass --force to overwrite");
            }
            // drop the previous run so no stale file outlives its manifest
            try {
                const json old = read_json(manifest);
                for (const json& f : old.value("files", json::array())) fs::remove(dir_ / f.at("name").get<std::string>(), ec);
            } catch (const std::exception&) {
            }
            fs::remove(manifest, ec);
        }
    }

    const fs::path& dir() const { return dir_; }

    /// Upstream artifact produced by a finalized stage; records its checksum.
    fs::path input(Stage producer, const std::string& name) {
        const fs::path manifest = dir_ / manifest_name(producer);
        if (!fs::exists(manifest)) {
            throw DependencyError(to_string(stage_) + " needs the " + to_string(producer) + " stage first (" +
                                  manifest.filename().string() + " not found)");
        }
        const json m = read_json(manifest);
        if (m.value("status", "") != "finalized") {
            throw DependencyError(to_string(producer) + " stage did not finish (manifest not finalized)");
        }
        const fs::path file = dir_ / name;
        if (!fs::exists(file)) throw DependencyError("missing upstream artifact " + file.string());
        inputs_[name] = sha256_file(file);
        return file;
    }

    void begin(const std::vector<std::string>& planned) {
        json m = header("in_progress");
        m["planned_files"] = planned;
        write_json(dir_ / manifest_name(stage_), m);
    }

    void write(const std::string& name, const std::function<void(std::ostream&)>& body) {
        write_atomic(dir_ / name, body);
        files_.push_back(name);
    }
    void write(const std::string& name, const json& j) {
        write(name, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
    }

    void finalize() {
        json m = header("finalized");
        json files = json::array();
        for (const std::string& f : files_) files.push_back({{"name", f}, {"sha256", sha256_file(dir_ / f)}});
        m["files"] = files;
        write_json(dir_ / manifest_name(stage_), m);
    }

private:
    json header(const char* status) const {
        json in = json::object();
        for (const auto& [k, v] : inputs_) in[k] = v;
        return {{"stage", to_string(stage_)},
                {"status", status},
                {"version", kVersion},
                {"seed", cfg_.seed},
                {"config", cfg_.echo()},
                {"derived", {{"mu0", cfg_.mu0()}, {"epsilon", to_json(cfg_.noise.epsilon)}}},
                {"inputs", in}};
    }

    Stage stage_;
    const RunConfig& cfg_;
    fs::path dir_;
    std::map<std::string, std::string> inputs_;
    std::vector<std::string> files_;
};

TrajectoryRecord load_trajectory(const fs::path& path, const RunConfig& cfg) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read " + path.string());
    return read_trajectory_csv(is, cfg.surface(), cfg.J);
}

// Linear interpolation of xi along the stored samples.
Vec3 xi_at(const TrajectoryRecord& traj, double s) {
    const auto& smp = traj.samples;
    if (smp.empty() || s < smp.front().s || s > smp.back().s) {
        throw DependencyError("trajectory does not cover s = " + std::to_string(s));
    }
    auto it = std::lower_bound(smp.begin(), smp.end(), s, [](const TrajectorySample& a, double v) { return a.s < v; });
    if (it == smp.begin()) return it->xi;
    const auto prev = std::prev(it);
    const double w = (s - prev->s) / (it->s - prev->s);
    return (1.0 - w) * prev->xi + w * it->xi;
}

void require_coverage(const TrajectoryRecord& traj, const RunConfig& cfg, const std::string& name) {
    if (traj.samples.back().s < cfg.window.s_end) {
        throw DependencyError(name + " ends at s = " + std::to_string(traj.samples.back().s) +
                              " before window.s_end = " + std::to_string(cfg.window.s_end));
    }
}

json conservation_json(const TrajectoryRecord& traj, const RunConfig& cfg) {
    const ConservationReport rep = conservation_report(traj, cfg.mu0());
    double rate_err = 0.0;
    for (const TrajectorySample& smp : traj.samples) {
        const double lhs = external_rates(smp.metric.g, traj.J).squaredNorm();
        rate_err = std::max(rate_err, std::abs(lhs - smp.metric.lambda_sq));
    }
    return {{"termination", to_string(traj.termination)},
            {"samples", rep.samples},
            {"s_final", traj.samples.back().s},
            {"accepted_steps", traj.accepted_steps},
            {"rejected_steps", traj.rejected_steps},
            {"h_initial", rep.h_initial},
            {"max_rel_h_drift", rep.max_rel_h_drift},
            {"max_rel_speed_drift", rep.max_rel_speed_drift},
            {"max_external_rate_error", rate_err}};
}

void run_simulate(StageRun& run, const RunConfig& cfg) {
    run.begin({"trajectory.csv", "trajectory_b.csv", "conservation.json"});
    const EnergySurface surf = cfg.surface();
    IntegrateOptions opt;
    opt.s_end = cfg.integrator.s_end;
    opt.tol = cfg.integrator.tol;
    opt.sample_ds = cfg.integrator.sample_ds;
    opt.max_steps = cfg.integrator.max_steps;

    const TrajectoryRecord a = integrate({cfg.x0, cfg.xi0, 0.0}, surf, cfg.J, opt);
    const TrajectoryRecord b = integrate({InternalCoords::from(cfg.x0.vec() + cfg.delta), cfg.xi0, 0.0}, surf, cfg.J, opt);
    run.write("trajectory.csv", [&](std::ostream& os) { write_trajectory_csv(os, a, cfg.mu0()); });
    run.write("trajectory_b.csv", [&](std::ostream& os) { write_trajectory_csv(os, b, cfg.mu0()); });
    run.write("conservation.json", json{{"a", conservation_json(a, cfg)},
                                        {"b", conservation_json(b, cfg)},
                                        {"delta", to_json(cfg.delta)}});
}

void run_ensemble_stage(StageRun& run, const RunConfig& cfg) {
    const TrajectoryRecord traj = load_trajectory(run.input(Stage::simulate, "trajectory.csv"), cfg);
    require_coverage(traj, cfg, "trajectory.csv");
    run.begin({"ensemble.csv", "ensemble.json"});

    EnsembleOptions opt;
    opt.n_paths = cfg.ensemble.n_paths;
    opt.ds = cfg.ensemble.ds;
    opt.s_begin = cfg.window.s_begin;
    opt.s_end = cfg.window.s_end;
    opt.mode = cfg.noise.mode;
    opt.snapshots = cfg.window.snapshots;
    opt.initial_sigma = cfg.ensemble.initial_sigma;
    opt.threads = cfg.ensemble.threads;
    const Vec3 xi_begin = xi_at(traj, cfg.window.s_begin);
    const EnsembleResult res = run_ensemble(CoefficientSchedule::from_trajectory(traj), xi_begin,
                                            NoiseModel(cfg.noise.epsilon, cfg.seed), opt);
    run.write("ensemble.csv", [&](std::ostream& os) { write_ensemble_csv(os, res); });

    json blow = json::array();
    for (std::size_t p = 0; p < res.outcomes.size(); ++p) {
        if (res.outcomes[p].blew_up) blow.push_back({{"path", p}, {"s", res.outcomes[p].blow_up_s}});
    }
    run.write("ensemble.json", json{{"n_paths", opt.n_paths},
                                    {"mode", to_string(opt.mode)},
                                    {"ds", opt.ds},
                                    {"xi_begin", to_json(xi_begin)},
                                    {"snapshot_s", res.snapshot_s},
                                    {"blow_ups", res.blow_ups},
                                    {"blown_up_paths", blow}});
}

GridSpec fpe_grid(const RunConfig& cfg, const TrajectoryRecord& a, const TrajectoryRecord& b) {
    const double span = cfg.window.s_end - cfg.window.s_begin;
    const double eps_max = Eigen::SelfAdjointEigenSolver<Mat3>(cfg.noise.epsilon).eigenvalues().maxCoeff();
    const double sigma = std::sqrt(cfg.fpe.initial_sigma * cfg.fpe.initial_sigma + 2.0 * std::max(eps_max, 0.0) * span);
    Vec3 lo = xi_at(a, cfg.window.s_begin), hi = lo;
    for (const TrajectoryRecord* t : {&a, &b}) {
        for (const TrajectorySample& smp : t->samples) {
            if (smp.s < cfg.window.s_begin || smp.s > cfg.window.s_end) continue;
            lo = lo.cwiseMin(smp.xi);
            hi = hi.cwiseMax(smp.xi);
        }
        const Vec3 x0 = xi_at(*t, cfg.window.s_begin);
        lo = lo.cwiseMin(x0);
        hi = hi.cwiseMax(x0);
    }
    GridSpec spec;
    for (int d = 0; d < 3; ++d) {
        double mid = 0.5 * (lo[d] + hi[d]);
        double half = cfg.grid.half_width > 0.0 ? cfg.grid.half_width : 0.5 * (hi[d] - lo[d]) + 6.0 * sigma;
        if (cfg.grid.half_width > 0.0) {
            const Vec3 c = 0.5 * (xi_at(a, cfg.window.s_begin) + xi_at(b, cfg.window.s_begin));
            mid = c[d];
        }
        spec[static_cast<std::size_t>(d)] = Axis{mid - half, mid + half, cfg.grid.n};
    }
    return spec;
}

json diagnostics_json(const FpeResult& r) {
    const FpeDiagnostics& d = r.diagnostics;
    json masses = json::array();
    for (const FpeSnapshot& s : r.snapshots) masses.push_back({{"s", s.s}, {"mass", s.mass}});
    return {{"steps", d.steps},
            {"min_ds", d.min_ds},
            {"max_ds", d.max_ds},
            {"initial_mass", d.initial_mass},
            {"max_mass_loss_rate", d.max_mass_loss_rate},
            {"mass_loss_flagged", d.mass_loss_flagged},
            {"negativity_steps", d.negativity_steps},
            {"worst_negative_ratio", d.worst_negative_ratio},
            {"snapshots", masses}};
}

void run_fpe_stage(StageRun& run, const RunConfig& cfg) {
    const TrajectoryRecord a = load_trajectory(run.input(Stage::simulate, "trajectory.csv"), cfg);
    const TrajectoryRecord b = load_trajectory(run.input(Stage::simulate, "trajectory_b.csv"), cfg);
    require_coverage(a, cfg, "trajectory.csv");
    require_coverage(b, cfg, "trajectory_b.csv");

    const std::size_t n = cfg.window.snapshots.size();
    std::vector<std::string> planned;
    for (char series : {'a', 'b'})
        for (std::size_t i = 0; i < n; ++i) planned.push_back(density_file_name(series, i));
    planned.push_back("fpe.json");
    run.begin(planned);

    const GridSpec spec = fpe_grid(cfg, a, b);
    FpeConfig fc;
    fc.epsilon = cfg.noise.epsilon;
    fc.sign = cfg.noise.drift_sign;
    fc.form = cfg.noise.mode == SdeMode::additive ? DiffusionForm::additive : DiffusionForm::multiplicative;
    fc.safety = cfg.fpe.safety;
    fc.ds_min = cfg.fpe.ds_min;
    fc.mass_tolerance = cfg.fpe.mass_tolerance;

    json report = {{"grid", json::array()}, {"form", to_string(cfg.noise.mode)}, {"sign_mode", to_string(fc.sign)}};
    for (const Axis& ax : spec) report["grid"].push_back({{"min", ax.min}, {"max", ax.max}, {"n", ax.n}});
    for (char series : {'a', 'b'}) {
        const TrajectoryRecord& t = series == 'a' ? a : b;
        const MomentumGrid p0 = gaussian_density(spec, xi_at(t, cfg.window.s_begin), cfg.fpe.initial_sigma);
        const FpeResult res =
            fpe_evolve(p0, CoefficientSchedule::from_trajectory(t), cfg.window.s_begin, cfg.window.snapshots, fc);
        for (std::size_t i = 0; i < res.snapshots.size(); ++i) {
            const FpeSnapshot& snap = res.snapshots[i];
            run.write(density_file_name(series, i),
                      [&](std::ostream& os) { write_density(os, snap.grid, snap.s, fc.sign, fc.epsilon); });
        }
        report[std::string(1, series)] = diagnostics_json(res);
    }
    run.write("fpe.json", report);
}

std::vector<FpeSnapshot> load_series(StageRun& run, const RunConfig& cfg, char series) {
    std::vector<FpeSnapshot> out;
    for (std::size_t i = 0; i < cfg.window.snapshots.size(); ++i) {
        const fs::path path = run.input(Stage::fpe, density_file_name(series, i));
        std::ifstream is(path);
        if (!is) throw IoError("cannot read " + path.string());
        DensityHeader h;
        MomentumGrid g = read_density(is, &h);
        const double m = total_mass(g);
        out.push_back({h.s, std::move(g), m});
    }
    return out;
}

void run_chaos_stage(StageRun& run, const RunConfig& cfg) {
    const auto a = load_series(run, cfg, 'a');
    const auto b = load_series(run, cfg, 'b');
    run.begin({"chaos.json"});
    run.write("chaos.json", to_json(chaos_report(a, b, cfg.chaos)));
}

void run_channels_stage(StageRun& run, const RunConfig& cfg) {
    const json cons = read_json(run.input(Stage::simulate, "conservation.json"));
    const TrajectoryRecord a = load_trajectory(run.input(Stage::simulate, "trajectory.csv"), cfg);
    const TrajectoryRecord b = load_trajectory(run.input(Stage::simulate, "trajectory_b.csv"), cfg);
    run.begin({"channels.json"});

    auto label = [&](TrajectoryRecord t, const char* key) -> json {
        const std::string term = cons.at(key).at("termination").get<std::string>();
        t.termination = term == "reached_end" ? Termination::reached_end
                        : term == "boundary"  ? Termination::boundary
                                              : Termination::max_steps;
        try {
            return {{"label", to_string(classify_channel(t, cfg.masses, cfg.channels))}, {"termination", term}};
        } catch (const InconclusiveError& e) {
            return {{"label", "inconclusive"}, {"termination", term}, {"reason", e.what()}};
        }
    };
    run.write("channels.json", json{{"a", label(a, "a")},
                                    {"b", label(b, "b")},
                                    {"thresholds",
                                     {{"r_bound", cfg.channels.r_bound},
                                      {"r_free", cfg.channels.r_free},
                                      {"window_fraction", cfg.channels.window_fraction},
                                      {"min_window_samples", cfg.channels.min_window_samples}}}});
}

}  // namespace

void run_stage(Stage stage, const RunConfig& cfg, const StageOptions& opt) {
    StageRun run(stage, cfg, opt);
    switch (stage) {
        case Stage::simulate: run_simulate(run, cfg); break;
        case Stage::ensemble: run_ensemble_stage(run, cfg); break;
        case Stage::fpe: run_fpe_stage(run, cfg); break;
        case Stage::chaos: run_chaos_stage(run, cfg); break;
        case Stage::channels: run_channels_stage(run, cfg); break;
    }
    run.finalize();
}

}  // namespace qtb
