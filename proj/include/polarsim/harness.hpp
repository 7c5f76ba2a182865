// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "polarsim/localization.hpp"
#include "polarsim/slow_opt.hpp"

namespace polarsim {

enum class Scheme { fixed, polarforming_only, position_rotation_only, tt_ppr };

std::string to_string(Scheme s);
Scheme scheme_from_string(const std::string& name);

/// Where Phase I takes the user locations from.
enum class LocationMode { genie, sensed };

/// All knobs of one experiment. Zero-valued physical defaults (epsilon0,
/// d_min) are derived from the carrier when the scenario is generated.
struct ScenarioConfig
{
    // system
    int subarrays = 4;
    int antennas = 2;
    int users = 4;
    double side = 1.0;
    double r_min = 20.0;
    double r_max = 200.0;
    double carrier_hz = 24e9;
    double epsilon0 = 0.0;     ///< 0: free space (lambda / 4 pi)^2
    double zeta = 1.0;
    double snr_ref_db = 10.0;  ///< sets sigma2 at the mid-shell distance
    int q_rho = 1;
    int q_theta = 3;
    double d_min = 0.0;        ///< 0: sqrt(2)/2 lambda + lambda/2
    std::vector<double> weights; ///< empty: all ones

    // localization
    int poses = 8;
    int slots = 8;
    int blocks = 8;
    double loc_snr_db = 20.0;
    std::vector<double> snr_db{0.0, 5.0, 10.0, 15.0, 20.0};
    ScaleMode scale = ScaleMode::genie;
    double music_grid_deg = 2.0;

    // two-timescale run
    int coherence = 4; ///< T_c
    LocationMode location = LocationMode::genie;
    std::vector<Scheme> schemes{Scheme::fixed, Scheme::polarforming_only,
                                Scheme::position_rotation_only, Scheme::tt_ppr};
    PsoConfig pso;
    PddConfig pdd;         ///< Phase II and polarforming-only
    PddConfig pdd_fitness; ///< inside the swarm fitness

    // experiment
    int trials = 50;
    std::uint64_t seed = 1;
    std::string sweep_axis = "none"; ///< none|zeta_db|antennas|users|q_theta|q_rho|batch|snr_db
    std::vector<double> sweep_values;

    ScenarioConfig();

    double lambda() const { return kSpeedOfLight / carrier_hz; }
    double resolved_epsilon0() const;
    double resolved_d_min() const;
    double noise_power() const;
    void validate() const;

    /// Copy with one sweep axis set to `value`.
    ScenarioConfig at_sweep_point(double value) const;
};

std::string config_to_json(const ScenarioConfig& cfg);
ScenarioConfig config_from_json(const std::string& text);
ScenarioConfig load_config(const std::filesystem::path& path);

/// 64-bit FNV-1a of a string.
std::uint64_t fnv1a(const std::string& text);

/// Seed of trial `trial` at sweep point `point`; stable across runs.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t point, std::uint64_t trial,
                          std::uint64_t stream = 0);

/// One drawn instance: users and derived physical constants.
struct Scenario
{
    ScenarioConfig cfg;
    PhysicalConstants consts;
    double d_min = 0.0;
    std::vector<UserState> users;
};

/// Users uniform in the spherical shell volume, rotations uniform.
Scenario generate_scenario(const ScenarioConfig& cfg, std::mt19937_64& rng);

/// Three sectors at azimuths 0, 120 and 240 degrees, boresight horizontal and
/// outward, centers at (A/4) n.
std::vector<SubarrayPose> sector_poses(double side);

struct SchemeOutcome
{
    Scheme scheme = Scheme::fixed;
    double mean_rate = 0.0;            ///< weighted sum rate averaged over T_c
    std::vector<double> interval_rates;
    std::vector<SubarrayPose> poses;
    int violations = 0;
    double runtime_s = 0.0;
};

struct RunResult
{
    std::vector<Vec3> sensed_positions;
    std::vector<double> location_errors; ///< empty in genie mode
    std::vector<SchemeOutcome> schemes;
};

/// Phase I (sensing, pose optimization) then Phase II over T_c intervals for
/// each requested scheme. All schemes see the same user rotations.
RunResult run_two_timescale(const Scenario& scenario, std::uint64_t seed);

/// One CSV row of schema v1. Empty optionals are written as empty fields.
struct ResultRow
{
    std::string experiment;
    std::string axis;
    double axis_value = 0.0;
    int trial = 0;
    std::uint64_t seed = 0;
    std::string scheme;
    int user = -1;
    std::optional<double> snr_db;
    std::optional<Vec3> true_position;
    std::optional<Vec3> estimated_position;
    std::optional<double> location_error;
    std::optional<double> weighted_rate;
    std::optional<int> violations;
};

inline constexpr int kCsvSchemaVersion = 1;
const std::vector<std::string>& csv_columns();
std::string csv_header();
std::string csv_row(const ResultRow& row);

struct ExperimentOutput
{
    std::vector<ResultRow> rows;
    std::string summary_json;
};

ExperimentOutput run_localization_experiment(const ScenarioConfig& cfg);
ExperimentOutput run_rate_experiment(const ScenarioConfig& cfg);

/// Single fast-timescale instance at the cube-face poses; JSON with rates,
/// augmented-Lagrangian trace and violation history.
ExperimentOutput run_optimize_experiment(const ScenarioConfig& cfg);

/// Writes results.csv (rows sorted), summary.json and manifest.json into
/// `dir`, creating it if needed. Throws std::runtime_error naming the path
/// on I/O failure.
void export_results(const ExperimentOutput& out, const ScenarioConfig& cfg,
                    const std::string& command, const std::filesystem::path& dir);

} // namespace polarsim
