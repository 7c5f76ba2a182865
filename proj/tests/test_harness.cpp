// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <polarsim/harness.hpp>

using namespace polarsim;

namespace {

ScenarioConfig tiny_config()
{
    ScenarioConfig c;
    c.subarrays = 2;
    c.antennas = 1;
    c.users = 2;
    c.poses = 4;
    c.slots = 2;
    c.blocks = 2;
    c.coherence = 2;
    c.trials = 2;
    c.pso.swarm = 4;
    c.pso.iterations = 2;
    c.pso.total_samples = 4;
    c.pso.batch_size = 2;
    c.pdd.max_outer = 30;
    c.pdd_fitness.max_outer = 5;
    return c;
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<std::string> split(const std::string& line)
{
    std::vector<std::string> out(1);
    for (char ch : line) {
        if (ch == ',')
            out.emplace_back();
        else
            out.back() += ch;
    }
    return out;
}

std::filesystem::path temp_dir(const std::string& name)
{
    const auto d = std::filesystem::temp_directory_path() / ("polarsim_test_" + name);
    std::filesystem::remove_all(d);
    return d;
}

} // namespace

TEST_CASE("scheme names")
{
    for (Scheme s : {Scheme::fixed, Scheme::polarforming_only, Scheme::position_rotation_only, Scheme::tt_ppr})
        CHECK(scheme_from_string(to_string(s)) == s);
    CHECK_THROWS_AS(scheme_from_string("best"), std::invalid_argument);
}

TEST_CASE("hashes and seeds")
{
    CHECK(fnv1a("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
    CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
    CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
    CHECK(derive_seed(1, 2, 3, 0) != derive_seed(1, 2, 3, 1));
    CHECK(derive_seed(1, 0, 0) != derive_seed(2, 0, 0));
}

TEST_CASE("config JSON round trip")
{
    ScenarioConfig c = tiny_config();
    c.weights = {1.0, 2.0};
    c.scale = ScaleMode::eta_calibrated;
    c.location = LocationMode::sensed;
    c.schemes = {Scheme::tt_ppr, Scheme::fixed};
    c.pdd.dual = DualUpdate::literal;
    c.sweep_axis = "zeta_db";
    c.sweep_values = {0.0, 10.0};
    c.seed = 123456789012345ull;
    const std::string text = config_to_json(c);
    const ScenarioConfig back = config_from_json(text);
    CHECK(config_to_json(back) == text);
    CHECK(back.pdd.dual == DualUpdate::literal);
    CHECK(back.seed == c.seed);

    CHECK_THROWS_AS(config_from_json(R"({"users": 2, "colour": 1})"), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(R"({"pso": {"swarm": 3, "speed": 1}})"), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(R"({"users": "two"})"), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(R"({"users": )"), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(R"({"users": 0})"), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(R"({"sweep_axis": "colour"})"), std::invalid_argument);
    CHECK_THROWS_AS(load_config("/nonexistent/polarsim.json"), std::runtime_error);
}

TEST_CASE("derived physical defaults and sweep points")
{
    ScenarioConfig c;
    const double lambda = kSpeedOfLight / 24e9;
    CHECK(c.resolved_epsilon0() == doctest::Approx(std::pow(lambda / (4 * kPi), 2)));
    CHECK(c.resolved_d_min() == doctest::Approx(std::sqrt(2.0) / 2 * lambda + lambda / 2));
    const double d_ref = 110.0;
    CHECK(c.noise_power() == doctest::Approx(c.resolved_epsilon0() / (d_ref * d_ref * 10.0)));

    c.sweep_axis = "zeta_db";
    CHECK(c.at_sweep_point(10.0).zeta == doctest::Approx(10.0));
    c.sweep_axis = "antennas";
    CHECK(c.at_sweep_point(4.0).antennas == 4);
    CHECK_THROWS_AS(c.at_sweep_point(2.5), std::invalid_argument);
    c.sweep_axis = "users";
    c.weights = {1, 1, 1, 1};
    CHECK(c.at_sweep_point(6.0).users == 6);
    c.sweep_axis = "batch";
    CHECK(c.at_sweep_point(8.0).pso.batch_size == 8);
}

TEST_CASE("users fill the spherical shell uniformly")
{
    ScenarioConfig c;
    c.users = 4000;
    c.slots = 4000;
    std::mt19937_64 rng(60);
    const Scenario sc = generate_scenario(c, rng);
    std::vector<double> r;
    Vec3 mean_dir = Vec3::Zero();
    for (const auto& u : sc.users) {
        r.push_back(u.distance);
        mean_dir += u.direction();
        CHECK(u.distance >= c.r_min);
        CHECK(u.distance <= c.r_max);
    }
    std::sort(r.begin(), r.end());
    // Kolmogorov-Smirnov distance against F(r) = (r^3 - a^3) / (b^3 - a^3)
    const double a3 = std::pow(c.r_min, 3), b3 = std::pow(c.r_max, 3);
    double ks = 0.0;
    const double n = static_cast<double>(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double f = (std::pow(r[i], 3) - a3) / (b3 - a3);
        ks = std::max({ks, std::abs(f - i / n), std::abs(f - (i + 1) / n)});
    }
    CHECK(ks < 1.63 / std::sqrt(n)); // 1% critical value
    CHECK((mean_dir / n).norm() < 0.05);
    CHECK(sc.consts.sigma2 == doctest::Approx(c.noise_power()));
}

TEST_CASE("sector poses")
{
    const auto s = sector_poses(1.0);
    REQUIRE(s.size() == 3);
    for (int i = 0; i < 3; ++i) {
        const double az = kTwoPi * i / 3.0;
        const Vec3 n(std::cos(az), std::sin(az), 0.0);
        CHECK((subarray_normal(s[i].u) - n).norm() < 1e-12);
        CHECK((s[i].q - 0.25 * n).norm() < 1e-15);
    }
    CHECK(penalty_violations(s, 0.02).count() == 0);
}

TEST_CASE("CSV schema v1")
{
    CHECK(kCsvSchemaVersion == 1);
    REQUIRE(csv_columns().size() == 17);
    CHECK(split(csv_header()).size() == 17);
    CHECK(csv_columns().front() == "experiment");
    CHECK(csv_columns().back() == "violations");

    ResultRow r;
    r.experiment = "rate";
    r.axis = "none";
    r.scheme = "tt_ppr";
    r.weighted_rate = 1.5;
    const auto f = split(csv_row(r));
    REQUIRE(f.size() == 17);
    CHECK(f[6].empty());  // user
    CHECK(f[8].empty());  // true_x
    CHECK(f[15] == "1.5");

    r.user = 2;
    r.true_position = Vec3(1, 2, 3);
    r.estimated_position = Vec3(0.1, 0.2, 0.30000000000000004);
    r.location_error = 0.125;
    r.violations = 0;
    const auto g = split(csv_row(r));
    REQUIRE(g.size() == 17);
    CHECK(g[6] == "2");
    CHECK(std::stod(g[13]) == 0.30000000000000004);
    CHECK(g[16] == "0");
}

TEST_CASE("export writes header-only CSV for no rows and a manifest")
{
    const auto dir = temp_dir("empty");
    const ScenarioConfig c = tiny_config();
    export_results({}, c, "sweep", dir);
    CHECK(slurp(dir / "results.csv") == csv_header() + "\n");
    const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
    CHECK(manifest["csv_schema_version"] == 1);
    CHECK(manifest["command"] == "sweep");
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(config_to_json(c))));
    CHECK(manifest["config_hash_fnv1a"] == std::string(hash));
    // the embedded config reloads to the same configuration
    CHECK(config_to_json(config_from_json(manifest["config"].dump())) == config_to_json(c));
    std::filesystem::remove_all(dir);

    // a regular file where the directory should be
    const auto file = temp_dir("blocker");
    std::ofstream(file) << "x";
    try {
        export_results({}, c, "sweep", file / "sub");
        FAIL("expected an I/O error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("polarsim_test_blocker") != std::string::npos);
    }
    std::filesystem::remove(file);
}

TEST_CASE("two-timescale run without coherence intervals keeps Phase I only")
{
    ScenarioConfig c = tiny_config();
    c.coherence = 0;
    c.location = LocationMode::sensed;
    std::mt19937_64 rng(61);
    const Scenario sc = generate_scenario(c, rng);
    const RunResult r = run_two_timescale(sc, 7);
    CHECK(r.sensed_positions.size() == 2);
    CHECK(r.location_errors.size() == 2);
    REQUIRE(r.schemes.size() == 4);
    for (const auto& o : r.schemes) {
        CHECK(o.interval_rates.empty());
        CHECK(o.mean_rate == 0.0);
    }
    CHECK(r.schemes[0].poses.size() == 3);
    CHECK(r.schemes[2].poses.size() == 2);
}

TEST_CASE("fixed scheme uses the three sectors")
{
    ScenarioConfig c = tiny_config();
    c.schemes = {Scheme::fixed};
    std::mt19937_64 rng(62);
    const RunResult r = run_two_timescale(generate_scenario(c, rng), 3);
    REQUIRE(r.schemes.size() == 1);
    const auto sectors = sector_poses(c.side);
    for (int i = 0; i < 3; ++i)
        CHECK((r.schemes[0].poses[i].q - sectors[i].q).norm() == 0.0);
    CHECK(r.schemes[0].interval_rates.size() == 2);
    CHECK(r.schemes[0].violations == 0);
}

TEST_CASE("genie locations do at least as well as sensed ones on average")
{
    ScenarioConfig c = tiny_config();
    c.schemes = {Scheme::tt_ppr};
    c.loc_snr_db = 0.0;
    double genie = 0.0, sensed = 0.0;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        std::mt19937_64 rng(seed);
        Scenario sc = generate_scenario(c, rng);
        sc.cfg.location = LocationMode::genie;
        genie += run_two_timescale(sc, seed).schemes[0].mean_rate;
        sc.cfg.location = LocationMode::sensed;
        sensed += run_two_timescale(sc, seed).schemes[0].mean_rate;
    }
    CHECK(genie >= sensed);
}

TEST_CASE("identical config and seed give byte-identical output")
{
    ScenarioConfig c = tiny_config();
    c.location = LocationMode::sensed;
    c.sweep_axis = "users";
    c.sweep_values = {1.0, 2.0};
    const auto a = temp_dir("det_a"), b = temp_dir("det_b");
    export_results(run_rate_experiment(c), c, "sweep", a);
    export_results(run_rate_experiment(c), c, "sweep", b);
    const std::string csv = slurp(a / "results.csv");
    CHECK(csv == slurp(b / "results.csv"));
    CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));

    std::istringstream lines(csv);
    std::string line;
    int rows = 0;
    while (std::getline(lines, line)) {
        CHECK(split(line).size() == 17);
        ++rows;
    }
    // header + 2 points x 2 trials x (4 schemes + users sensing rows)
    CHECK(rows == 1 + 2 * (4 + 1) + 2 * (4 + 2));
    std::filesystem::remove_all(a);
    std::filesystem::remove_all(b);
}

TEST_CASE("localization experiment rows and summary")
{
    ScenarioConfig c = tiny_config();
    c.snr_db = {10.0, 30.0};
    const auto out = run_localization_experiment(c);
    CHECK(out.rows.size() == 2 * 2 * 2);
    for (const auto& r : out.rows) {
        CHECK(r.location_error.has_value());
        CHECK(r.estimated_position.has_value());
    }
    const auto s = nlohmann::json::parse(out.summary_json);
    CHECK(s["points"].size() == 2);

    c.sweep_axis = "users";
    c.sweep_values = {1.0};
    CHECK_THROWS_AS(run_localization_experiment(c), std::invalid_argument);
}

TEST_CASE("optimize experiment reports traces")
{
    ScenarioConfig c = tiny_config();
    const auto out = run_optimize_experiment(c);
    REQUIRE(out.rows.size() == 2);
    const auto s = nlohmann::json::parse(out.summary_json);
    CHECK(s["lagrangian"].size() > 0);
    CHECK(s["violation"].size() > 0);
    CHECK(s["weighted_rate"].get<double>() > 0.0);
}
