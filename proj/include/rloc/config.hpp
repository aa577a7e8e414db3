#pragma once

#include "rloc/common.hpp"
#include "rloc/csv.hpp"
#include "rloc/geo.hpp"

#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace rloc {

struct InterferenceZone {
    XY center;      // meters from the world bbox south-west corner
    double radius_m = 0.0;
    double extra_sigma_db = 0.0;
};

struct IntervalDist {
    enum class Kind { fixed, uniform } kind = Kind::fixed;
    double a = 10.0; // fixed value, or lower bound
    double b = 10.0; // upper bound when uniform
};

struct PipelineConfig {
    // grid / sequencing / split
    double cell_size_m = 20.0;
    double max_gap_s = 120.0;
    std::uint64_t seed = 1;
    double p_test = 0.2;
    double p_dc = 0.375;

    // detection
    double tau_quantile = 0.80;
    double gamma = 5;      // minimum sample size before emission smoothing kicks in
    double epsilon = 0.5;  // Jaccard threshold for similar station sets

    // repair
    double xi = 0.7;       // candidate selection threshold
    int k_max = 15;        // candidates kept per flawed sample
    double d_scale_m = 500.0;

    // localizer
    int knn_k = 5;
    double missing_level_penalty = 2.0;
    std::string repair_accuracy_mode = "grid"; // "grid" or "error"

    // synthetic world
    LonLat bbox_min{121.2, 31.28};
    double world_width_m = 4000.0;
    double world_height_m = 4000.0;
    int n_stations = 50;
    double tx_power_dbm = 30.0;
    double path_loss_exponent = 3.5;
    double noise_sigma_db = 3.0;
    double road_spacing_m = 400.0;
    int n_devices = 100;
    double duration_s = 14400.0;
    IntervalDist interval_dist{IntervalDist::Kind::uniform, 1.0, 60.0};
    std::vector<InterferenceZone> interference_zones;
    bool anonymize_non_serving = false;

    GeoRect world_bbox() const {
        // Anchor the projection at the box center latitude, matching the
        // convention GridSystem uses, so meter extents round-trip.
        Projection proj(bbox_min.lat + 0.5 * world_height_m / Projection::kMetersPerDegLat);
        LonLat max = proj.from_meters(bbox_min, {world_width_m, world_height_m});
        return {bbox_min, max};
    }
};

namespace detail {

inline IntervalDist parse_interval_dist(const std::string& text) {
    auto colon = text.find(':');
    std::string kind = colon == std::string::npos ? text : text.substr(0, colon);
    std::string args = colon == std::string::npos ? "" : text.substr(colon + 1);
    IntervalDist d;
    if (kind == "fixed") {
        d.kind = IntervalDist::Kind::fixed;
        d.a = d.b = std::stod(args);
    } else if (kind == "uniform") {
        d.kind = IntervalDist::Kind::uniform;
        auto comma = args.find(',');
        if (comma == std::string::npos) throw config_error("interval_dist: uniform needs 'a,b'");
        d.a = std::stod(args.substr(0, comma));
        d.b = std::stod(args.substr(comma + 1));
        if (!(d.a <= d.b)) throw config_error("interval_dist: need a <= b");
    } else {
        throw config_error("interval_dist: unknown kind '" + kind + "'");
    }
    if (!(d.a > 0)) throw config_error("interval_dist: intervals must be positive");
    return d;
}

// "x_m,y_m,radius_m,extra_db;..." in world meters
inline std::vector<InterferenceZone> parse_zones(const std::string& text) {
    std::vector<InterferenceZone> zones;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ';')) {
        auto t = trim(part);
        if (t.empty()) continue;
        std::stringstream zs{std::string(t)};
        std::string f;
        std::vector<double> vals;
        while (std::getline(zs, f, ',')) vals.push_back(std::stod(std::string(trim(f))));
        if (vals.size() != 4) throw config_error("interference_zones: each zone needs x,y,radius,extra_db");
        zones.push_back({{vals[0], vals[1]}, vals[2], vals[3]});
    }
    return zones;
}

} // namespace detail

// Flat key=value file; '#' starts a comment. Unknown keys and values outside
// the documented ranges produce warnings on the supplied sink, not errors.
inline PipelineConfig parse_config(std::istream& in,
                                   const std::function<void(const std::string&)>& warn = {}) {
    PipelineConfig cfg;
    auto emit = [&](const std::string& msg) {
        if (warn) warn(msg);
    };

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto text = detail::trim(line);
        if (text.empty()) continue;
        auto eq = text.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(lineno) + ": expected key=value");
        std::string key{detail::trim(text.substr(0, eq))};
        std::string value{detail::trim(text.substr(eq + 1))};

        try {
            if (key == "cell_size_m") cfg.cell_size_m = std::stod(value);
            else if (key == "max_gap_s") cfg.max_gap_s = std::stod(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "p_test") cfg.p_test = std::stod(value);
            else if (key == "p_dc") cfg.p_dc = std::stod(value);
            else if (key == "tau_quantile") cfg.tau_quantile = std::stod(value);
            else if (key == "gamma") cfg.gamma = std::stod(value);
            else if (key == "epsilon") cfg.epsilon = std::stod(value);
            else if (key == "xi") cfg.xi = std::stod(value);
            else if (key == "k_max") cfg.k_max = std::stoi(value);
            else if (key == "d_scale_m") cfg.d_scale_m = std::stod(value);
            else if (key == "knn_k") cfg.knn_k = std::stoi(value);
            else if (key == "missing_level_penalty") cfg.missing_level_penalty = std::stod(value);
            else if (key == "repair_accuracy_mode") cfg.repair_accuracy_mode = value;
            else if (key == "bbox_min_lon") cfg.bbox_min.lon = std::stod(value);
            else if (key == "bbox_min_lat") cfg.bbox_min.lat = std::stod(value);
            else if (key == "world_width_m") cfg.world_width_m = std::stod(value);
            else if (key == "world_height_m") cfg.world_height_m = std::stod(value);
            else if (key == "n_stations") cfg.n_stations = std::stoi(value);
            else if (key == "tx_power_dbm") cfg.tx_power_dbm = std::stod(value);
            else if (key == "path_loss_exponent") cfg.path_loss_exponent = std::stod(value);
            else if (key == "noise_sigma_db") cfg.noise_sigma_db = std::stod(value);
            else if (key == "road_spacing_m") cfg.road_spacing_m = std::stod(value);
            else if (key == "n_devices") cfg.n_devices = std::stoi(value);
            else if (key == "duration_s") cfg.duration_s = std::stod(value);
            else if (key == "interval_dist") cfg.interval_dist = detail::parse_interval_dist(value);
            else if (key == "interference_zones") cfg.interference_zones = detail::parse_zones(value);
            else if (key == "anonymize_non_serving") cfg.anonymize_non_serving = (value == "true" || value == "1");
            else emit("config: unknown key '" + key + "' ignored");
        } catch (const config_error&) {
            throw;
        } catch (const std::exception&) {
            throw config_error("config line " + std::to_string(lineno) + ": bad value for " + key);
        }
    }

    if (!(cfg.p_test > 0 && cfg.p_test < 1) || !(cfg.p_dc > 0 && cfg.p_dc < 1))
        throw config_error("config: p_test and p_dc must lie in (0,1)");
    if (cfg.cell_size_m <= 0) throw config_error("config: cell_size_m must be > 0");

    if (cfg.tau_quantile < 0.70 || cfg.tau_quantile > 0.90)
        emit("config: tau_quantile outside the usual range [0.70, 0.90]");
    if (cfg.gamma < 1 || cfg.gamma > 15) emit("config: gamma outside the usual range [1, 15]");
    if (cfg.epsilon < 0.25 || cfg.epsilon > 1.0) emit("config: epsilon outside the usual range [0.25, 1.0]");
    if (cfg.xi < 0.6 || cfg.xi > 1.0) emit("config: xi outside the usual range [0.6, 1.0]");
    return cfg;
}

} // namespace rloc
