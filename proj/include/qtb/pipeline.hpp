#pragma once

// Batch pipeline: run configuration, the five stages and their manifests.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qtb/chaos_metrics.hpp"
#include "qtb/fokker_planck.hpp"
#include "qtb/geodesic.hpp"
#include "qtb/langevin.hpp"
#include "qtb/potential.hpp"

namespace qtb {

inline constexpr const char* kVersion = "1.0.0";

struct PotentialConfig {
    std::string name = "free";  // free | morse | gravity
    double depth = 1.0;
    double alpha = 1.0;
    double d0 = 1.0;
    double G = 1.0;
    double softening = 0.0;
};

struct IntegratorConfig {
    double s_end = 10.0;
    double tol = 1e-9;
    double sample_ds = 0.1;
    std::size_t max_steps = 1'000'000;
};

struct NoiseConfig {
    /// Effective noise power; filled from (hbar_scale, omega_sq_mean) when
    /// those were given instead.
    Mat3 epsilon = Mat3::Zero();
    std::optional<double> hbar_scale;
    std::optional<double> omega_sq_mean;
    SdeMode mode = SdeMode::additive;
    DriftSign drift_sign = DriftSign::conventional;
};

struct EnsembleConfig {
    std::size_t n_paths = 1000;
    double ds = 1e-3;
    double initial_sigma = 0.0;
    unsigned threads = 0;
};

/// Momentum grid for the density stage; half_width <= 0 sizes the box from
/// the expected spread and the excursion of the two classical xi curves.
struct GridConfig {
    int n = 32;
    double half_width = 0.0;
};

struct FpeStageConfig {
    double initial_sigma = 0.1;
    double safety = 0.5;
    double ds_min = 1e-9;
    double mass_tolerance = 1e-6;
};

/// Shared window of the stochastic stages.
struct WindowConfig {
    double s_begin = 0.0;
    double s_end = 1.0;
    std::vector<double> snapshots;
};

struct RunConfig {
    Masses masses;
    PotentialConfig potential;
    double E = 0.0;
    double U0 = 1.0;
    AngularMomentum J;
    InternalCoords x0;
    Vec3 xi0 = Vec3::Zero();
    IntegratorConfig integrator;
    NoiseConfig noise;
    WindowConfig window;
    EnsembleConfig ensemble;
    GridConfig grid;
    FpeStageConfig fpe;
    /// Offset of the initial internal coordinates of the comparison run.
    Vec3 delta = Vec3(1e-6, 0.0, 0.0);
    ChaosOptions chaos;
    ChannelThresholds channels;
    std::uint64_t seed = 0;
    std::string output_dir = "out";

    double mu0() const;
    EnergySurface surface() const;
    /// Fully expanded configuration with every default written out.
    nlohmann::json echo() const;
};

/// Validates every stage precondition; ConfigError names the offending key.
RunConfig parse_config(const nlohmann::json& doc);
/// Throws IoError when the file is unreadable, ConfigError when malformed.
RunConfig load_config(const std::filesystem::path& path);

PotentialPtr make_potential(const PotentialConfig& p, const Masses& m);

enum class Stage { simulate, ensemble, fpe, chaos, channels };
std::string to_string(Stage s);
Stage stage_from_string(const std::string& name);

struct StageOptions {
    std::filesystem::path out;
    bool force = false;
};

/// Runs one stage; files are written atomically and manifest_<stage>.json
/// goes from "in_progress" to "finalized" last.
void run_stage(Stage stage, const RunConfig& cfg, const StageOptions& opt);

/// 0 ok, 2 config, 3 dependency, 4 numerical, 5 I/O, 1 anything else.
int exit_code(const std::exception& e);

std::string sha256_file(const std::filesystem::path& path);

/// Density snapshot file names used by the fpe and chaos stages.
std::string density_file_name(char series, std::size_t index);

}  // namespace qtb
