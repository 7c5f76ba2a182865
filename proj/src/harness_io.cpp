// SPDX-License-Identifier: Apache-2.0
#include "polarsim/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#ifndef POLARSIM_VERSION
#define POLARSIM_VERSION "0.0.0"
#endif

namespace polarsim {

using json = nlohmann::json;

namespace {

json pdd_to_json(const PddConfig& c)
{
    return {{"mu0", c.mu0},
            {"varpi", c.varpi},
            {"eps_in", c.eps_in},
            {"eps_out", c.eps_out},
            {"max_inner", c.max_inner},
            {"max_outer", c.max_outer},
            {"dual", c.dual == DualUpdate::residual ? "residual" : "literal"}};
}

json pso_to_json(const PsoConfig& c)
{
    return {{"swarm", c.swarm},
            {"iterations", c.iterations},
            {"omega", c.omega},
            {"c1", c.c1},
            {"c2", c.c2},
            {"tau", c.tau},
            {"kappa_exponent", c.kappa_exponent},
            {"total_samples", c.total_samples},
            {"batch_size", c.batch_size},
            {"init_attempts", c.init_attempts},
            {"init_velocity", c.init_velocity}};
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where)
{
    if (!j.is_object())
        throw std::invalid_argument("config: " + where + " must be a JSON object");
    for (const auto& item : j.items())
        if (allowed.count(item.key()) == 0)
            throw std::invalid_argument("config: unknown key '" + item.key() + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out)
{
    if (j.contains(key))
        out = j.at(key).get<T>();
}

PddConfig pdd_from_json(const json& j, PddConfig c)
{
    reject_unknown(j, {"mu0", "varpi", "eps_in", "eps_out", "max_inner", "max_outer", "dual"}, "pdd");
    read(j, "mu0", c.mu0);
    read(j, "varpi", c.varpi);
    read(j, "eps_in", c.eps_in);
    read(j, "eps_out", c.eps_out);
    read(j, "max_inner", c.max_inner);
    read(j, "max_outer", c.max_outer);
    if (j.contains("dual")) {
        const auto d = j.at("dual").get<std::string>();
        if (d == "residual")
            c.dual = DualUpdate::residual;
        else if (d == "literal")
            c.dual = DualUpdate::literal;
        else
            throw std::invalid_argument("config: pdd.dual must be 'residual' or 'literal'");
    }
    return c;
}

PsoConfig pso_from_json(const json& j, PsoConfig c)
{
    reject_unknown(j,
                   {"swarm", "iterations", "omega", "c1", "c2", "tau", "kappa_exponent", "total_samples",
                    "batch_size", "init_attempts", "init_velocity"},
                   "pso");
    read(j, "swarm", c.swarm);
    read(j, "iterations", c.iterations);
    read(j, "omega", c.omega);
    read(j, "c1", c.c1);
    read(j, "c2", c.c2);
    read(j, "tau", c.tau);
    read(j, "kappa_exponent", c.kappa_exponent);
    read(j, "total_samples", c.total_samples);
    read(j, "batch_size", c.batch_size);
    read(j, "init_attempts", c.init_attempts);
    read(j, "init_velocity", c.init_velocity);
    return c;
}

std::string format_double(double x)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void write_file(const std::filesystem::path& path, const std::string& content)
{
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    f << content;
    f.close();
    if (!f)
        throw std::runtime_error("failed writing '" + path.string() + "'");
}

} // namespace

std::string config_to_json(const ScenarioConfig& c)
{
    json schemes = json::array();
    for (Scheme s : c.schemes)
        schemes.push_back(to_string(s));
    json j{{"subarrays", c.subarrays},
           {"antennas", c.antennas},
           {"users", c.users},
           {"side", c.side},
           {"r_min", c.r_min},
           {"r_max", c.r_max},
           {"carrier_hz", c.carrier_hz},
           {"epsilon0", c.epsilon0},
           {"zeta", c.zeta},
           {"snr_ref_db", c.snr_ref_db},
           {"q_rho", c.q_rho},
           {"q_theta", c.q_theta},
           {"d_min", c.d_min},
           {"weights", c.weights},
           {"poses", c.poses},
           {"slots", c.slots},
           {"blocks", c.blocks},
           {"loc_snr_db", c.loc_snr_db},
           {"snr_db", c.snr_db},
           {"scale", c.scale == ScaleMode::genie ? "genie" : "eta_calibrated"},
           {"music_grid_deg", c.music_grid_deg},
           {"coherence", c.coherence},
           {"location", c.location == LocationMode::genie ? "genie" : "sensed"},
           {"schemes", schemes},
           {"pso", pso_to_json(c.pso)},
           {"pdd", pdd_to_json(c.pdd)},
           {"pdd_fitness", pdd_to_json(c.pdd_fitness)},
           {"trials", c.trials},
           {"seed", c.seed},
           {"sweep_axis", c.sweep_axis},
           {"sweep_values", c.sweep_values}};
    return j.dump(2);
}

ScenarioConfig config_from_json(const std::string& text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
    }
    reject_unknown(j,
                   {"subarrays", "antennas", "users", "side", "r_min", "r_max", "carrier_hz", "epsilon0",
                    "zeta", "snr_ref_db", "q_rho", "q_theta", "d_min", "weights", "poses", "slots", "blocks",
                    "loc_snr_db", "snr_db", "scale", "music_grid_deg", "coherence", "location", "schemes",
                    "pso", "pdd", "pdd_fitness", "trials", "seed", "sweep_axis", "sweep_values"},
                   "top level");
    ScenarioConfig c;
    try {
        read(j, "subarrays", c.subarrays);
        read(j, "antennas", c.antennas);
        read(j, "users", c.users);
        read(j, "side", c.side);
        read(j, "r_min", c.r_min);
        read(j, "r_max", c.r_max);
        read(j, "carrier_hz", c.carrier_hz);
        read(j, "epsilon0", c.epsilon0);
        read(j, "zeta", c.zeta);
        read(j, "snr_ref_db", c.snr_ref_db);
        read(j, "q_rho", c.q_rho);
        read(j, "q_theta", c.q_theta);
        read(j, "d_min", c.d_min);
        read(j, "weights", c.weights);
        read(j, "poses", c.poses);
        read(j, "slots", c.slots);
        read(j, "blocks", c.blocks);
        read(j, "loc_snr_db", c.loc_snr_db);
        read(j, "snr_db", c.snr_db);
        read(j, "music_grid_deg", c.music_grid_deg);
        read(j, "coherence", c.coherence);
        read(j, "trials", c.trials);
        read(j, "seed", c.seed);
        read(j, "sweep_axis", c.sweep_axis);
        read(j, "sweep_values", c.sweep_values);
        if (j.contains("scale")) {
            const auto s = j.at("scale").get<std::string>();
            if (s != "genie" && s != "eta_calibrated")
                throw std::invalid_argument("config: scale must be 'genie' or 'eta_calibrated'");
            c.scale = s == "genie" ? ScaleMode::genie : ScaleMode::eta_calibrated;
        }
        if (j.contains("location")) {
            const auto s = j.at("location").get<std::string>();
            if (s != "genie" && s != "sensed")
                throw std::invalid_argument("config: location must be 'genie' or 'sensed'");
            c.location = s == "genie" ? LocationMode::genie : LocationMode::sensed;
        }
        if (j.contains("schemes")) {
            c.schemes.clear();
            for (const auto& s : j.at("schemes"))
                c.schemes.push_back(scheme_from_string(s.get<std::string>()));
        }
        if (j.contains("pso"))
            c.pso = pso_from_json(j.at("pso"), c.pso);
        if (j.contains("pdd"))
            c.pdd = pdd_from_json(j.at("pdd"), c.pdd);
        if (j.contains("pdd_fitness"))
            c.pdd_fitness = pdd_from_json(j.at("pdd_fitness"), c.pdd_fitness);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: wrong value type: ") + e.what());
    }
    c.validate();
    return c;
}

ScenarioConfig load_config(const std::filesystem::path& path)
{
    std::ifstream f(path);
    if (!f)
        throw std::runtime_error("cannot read config '" + path.string() + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return config_from_json(ss.str());
}

const std::vector<std::string>& csv_columns()
{
    static const std::vector<std::string> cols{
        "experiment", "axis",  "axis_value", "trial", "seed",  "scheme",  "user",
        "snr_db",     "true_x", "true_y",    "true_z", "est_x", "est_y",  "est_z",
        "location_error_m", "weighted_rate", "violations"};
    return cols;
}

std::string csv_header()
{
    std::string out;
    for (const auto& c : csv_columns()) {
        if (!out.empty())
            out += ',';
        out += c;
    }
    return out;
}

std::string csv_row(const ResultRow& r)
{
    std::vector<std::string> f;
    f.push_back(r.experiment);
    f.push_back(r.axis);
    f.push_back(format_double(r.axis_value));
    f.push_back(std::to_string(r.trial));
    f.push_back(std::to_string(r.seed));
    f.push_back(r.scheme);
    f.push_back(r.user >= 0 ? std::to_string(r.user) : "");
    f.push_back(r.snr_db ? format_double(*r.snr_db) : "");
    for (int i = 0; i < 3; ++i)
        f.push_back(r.true_position ? format_double((*r.true_position)[i]) : "");
    for (int i = 0; i < 3; ++i)
        f.push_back(r.estimated_position ? format_double((*r.estimated_position)[i]) : "");
    f.push_back(r.location_error ? format_double(*r.location_error) : "");
    f.push_back(r.weighted_rate ? format_double(*r.weighted_rate) : "");
    f.push_back(r.violations ? std::to_string(*r.violations) : "");

    std::string out;
    for (std::size_t i = 0; i < f.size(); ++i) {
        if (i > 0)
            out += ',';
        out += f[i];
    }
    return out;
}

void export_results(const ExperimentOutput& out, const ScenarioConfig& cfg, const std::string& command,
                    const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw std::runtime_error("cannot create output directory '" + dir.string() + "': " + ec.message());

    std::vector<ResultRow> rows = out.rows;
    std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
        return std::tie(a.experiment, a.axis_value, a.trial, a.scheme, a.user) <
               std::tie(b.experiment, b.axis_value, b.trial, b.scheme, b.user);
    });
    std::string csv = csv_header() + "\n";
    for (const auto& r : rows)
        csv += csv_row(r) + "\n";
    write_file(dir / "results.csv", csv);
    write_file(dir / "summary.json", out.summary_json.empty() ? "{}\n" : out.summary_json + "\n");

    const std::string config = config_to_json(cfg);
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(config)));
    json manifest{{"command", command},
                  {"version", std::string("polarsim ") + POLARSIM_VERSION},
                  {"csv_schema_version", kCsvSchemaVersion},
                  {"config_hash_fnv1a", hash},
                  {"seed", cfg.seed},
                  {"rows", rows.size()},
                  {"config", json::parse(config)}};
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

} // namespace polarsim
