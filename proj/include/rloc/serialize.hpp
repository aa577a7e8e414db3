#pragma once

#include "rloc/common.hpp"
#include "rloc/config.hpp"
#include "rloc/geo.hpp"
#include "rloc/hmm.hpp"
#include "rloc/localizer.hpp"
#include "rloc/metrics.hpp"
#include "rloc/repair.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

namespace rloc {

using Json = nlohmann::ordered_json;

inline Json to_json(const GridSystem& g) {
    return Json{{"origin_lon", g.origin().lon},
                {"origin_lat", g.origin().lat},
                {"width_m", g.width_m()},
                {"height_m", g.height_m()},
                {"cell_size_m", g.cell_size_m()}};
}

inline GridSystem grid_from_json(const Json& j) {
    return GridSystem({j.at("origin_lon").get<double>(), j.at("origin_lat").get<double>()},
                      j.at("width_m").get<double>(), j.at("height_m").get<double>(),
                      j.at("cell_size_m").get<double>());
}

inline Json to_json(const PipelineConfig& c) {
    Json zones = Json::array();
    for (const auto& z : c.interference_zones)
        zones.push_back({z.center.x, z.center.y, z.radius_m, z.extra_sigma_db});
    std::string interval = c.interval_dist.kind == IntervalDist::Kind::fixed
                               ? "fixed:" + std::to_string(c.interval_dist.a)
                               : "uniform:" + std::to_string(c.interval_dist.a) + "," +
                                     std::to_string(c.interval_dist.b);
    return Json{{"cell_size_m", c.cell_size_m},
                {"max_gap_s", c.max_gap_s},
                {"seed", c.seed},
                {"p_test", c.p_test},
                {"p_dc", c.p_dc},
                {"tau_quantile", c.tau_quantile},
                {"gamma", c.gamma},
                {"epsilon", c.epsilon},
                {"xi", c.xi},
                {"k_max", c.k_max},
                {"d_scale_m", c.d_scale_m},
                {"knn_k", c.knn_k},
                {"missing_level_penalty", c.missing_level_penalty},
                {"repair_accuracy_mode", c.repair_accuracy_mode},
                {"bbox_min_lon", c.bbox_min.lon},
                {"bbox_min_lat", c.bbox_min.lat},
                {"world_width_m", c.world_width_m},
                {"world_height_m", c.world_height_m},
                {"n_stations", c.n_stations},
                {"tx_power_dbm", c.tx_power_dbm},
                {"path_loss_exponent", c.path_loss_exponent},
                {"noise_sigma_db", c.noise_sigma_db},
                {"road_spacing_m", c.road_spacing_m},
                {"n_devices", c.n_devices},
                {"duration_s", c.duration_s},
                {"interval_dist", interval},
                {"interference_zones", zones},
                {"anonymize_non_serving", c.anonymize_non_serving}};
}

inline PipelineConfig config_from_json(const Json& j) {
    PipelineConfig c;
    c.cell_size_m = j.at("cell_size_m").get<double>();
    c.max_gap_s = j.at("max_gap_s").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.p_test = j.at("p_test").get<double>();
    c.p_dc = j.at("p_dc").get<double>();
    c.tau_quantile = j.at("tau_quantile").get<double>();
    c.gamma = j.at("gamma").get<double>();
    c.epsilon = j.at("epsilon").get<double>();
    c.xi = j.at("xi").get<double>();
    c.k_max = j.at("k_max").get<int>();
    c.d_scale_m = j.at("d_scale_m").get<double>();
    c.knn_k = j.at("knn_k").get<int>();
    c.missing_level_penalty = j.at("missing_level_penalty").get<double>();
    c.repair_accuracy_mode = j.at("repair_accuracy_mode").get<std::string>();
    c.bbox_min = {j.at("bbox_min_lon").get<double>(), j.at("bbox_min_lat").get<double>()};
    c.world_width_m = j.at("world_width_m").get<double>();
    c.world_height_m = j.at("world_height_m").get<double>();
    c.n_stations = j.at("n_stations").get<int>();
    c.tx_power_dbm = j.at("tx_power_dbm").get<double>();
    c.path_loss_exponent = j.at("path_loss_exponent").get<double>();
    c.noise_sigma_db = j.at("noise_sigma_db").get<double>();
    c.road_spacing_m = j.at("road_spacing_m").get<double>();
    c.n_devices = j.at("n_devices").get<int>();
    c.duration_s = j.at("duration_s").get<double>();
    c.interval_dist = detail::parse_interval_dist(j.at("interval_dist").get<std::string>());
    for (const auto& z : j.at("interference_zones"))
        c.interference_zones.push_back(
            {{z.at(0).get<double>(), z.at(1).get<double>()}, z.at(2).get<double>(), z.at(3).get<double>()});
    c.anonymize_non_serving = j.at("anonymize_non_serving").get<bool>();
    return c;
}

inline Json to_json(const FingerprintModel& m) {
    Json cells = Json::array();
    for (const auto& e : m.cells()) {
        Json sig = Json::array();
        for (const auto& st : e.stations) sig.push_back({st.id.rnc, st.id.cell, st.level_sum, st.count});
        cells.push_back({{"g", {e.grid.col, e.grid.row}}, {"n", e.n_samples}, {"s", sig}});
    }
    return Json{{"k", m.k()}, {"missing_penalty", m.missing_penalty()}, {"cells", cells}};
}

inline FingerprintModel fingerprint_from_json(const Json& j) {
    std::vector<FingerprintModel::CellEntry> cells;
    for (const auto& c : j.at("cells")) {
        FingerprintModel::CellEntry e;
        e.grid = {c.at("g").at(0).get<std::int32_t>(), c.at("g").at(1).get<std::int32_t>()};
        e.n_samples = c.at("n").get<std::int64_t>();
        for (const auto& s : c.at("s"))
            e.stations.push_back({{s.at(0).get<std::int32_t>(), s.at(1).get<std::int32_t>()},
                                  s.at(2).get<std::int64_t>(),
                                  s.at(3).get<std::int64_t>()});
        cells.push_back(std::move(e));
    }
    return FingerprintModel(j.at("k").get<int>(), j.at("missing_penalty").get<double>(), std::move(cells));
}

inline Json to_json(const EmissionIndex& idx) {
    Json keys = Json::array();
    for (std::size_t i = 0; i < idx.keys.size(); ++i) {
        Json bs = Json::array();
        for (const auto& sid : idx.keys[i]) bs.push_back({sid.rnc, sid.cell});
        Json joint = Json::array();
        for (const auto& [ss, counts] : idx.joint[i])
            joint.push_back({{"ss", ss}, {"n", {counts[0], counts[1]}}});
        keys.push_back({{"bs", bs}, {"z", idx.z[i]}, {"joint", joint}});
    }
    return Json{{"state_totals", {idx.state_totals[0], idx.state_totals[1]}}, {"keys", keys}};
}

inline EmissionIndex emission_index_from_json(const Json& j) {
    EmissionIndex idx;
    idx.state_totals = {j.at("state_totals").at(0).get<std::int64_t>(),
                        j.at("state_totals").at(1).get<std::int64_t>()};
    for (const auto& k : j.at("keys")) {
        BsKey bs;
        for (const auto& s : k.at("bs")) bs.push_back({s.at(0).get<std::int32_t>(), s.at(1).get<std::int32_t>()});
        idx.keys.push_back(std::move(bs));
        idx.z.push_back(k.at("z").get<std::int64_t>());
        std::map<SsKey, std::array<std::int64_t, 2>> joint;
        for (const auto& e : k.at("joint")) {
            SsKey ss = e.at("ss").get<SsKey>();
            joint[ss] = {e.at("n").at(0).get<std::int64_t>(), e.at("n").at(1).get<std::int64_t>()};
        }
        idx.joint.push_back(std::move(joint));
    }
    idx.rebuild();
    return idx;
}

inline Json to_json(const DaHmm& m) {
    return Json{{"pi", {m.base.pi[0], m.base.pi[1]}},
                {"a", {{m.base.a[0][0], m.base.a[0][1]}, {m.base.a[1][0], m.base.a[1][1]}}},
                {"alpha", {m.trans.alpha[0], m.trans.alpha[1]}},
                {"beta", {m.trans.beta[0], m.trans.beta[1]}},
                {"transition_fallback", {m.trans.fallback[0], m.trans.fallback[1]}},
                {"gamma", m.gamma},
                {"epsilon", m.epsilon},
                {"index", to_json(m.base.index)}};
}

inline DaHmm da_hmm_from_json(const Json& j) {
    DaHmm m;
    m.base.pi = {j.at("pi").at(0).get<double>(), j.at("pi").at(1).get<double>()};
    for (int i : {0, 1})
        for (int k : {0, 1}) m.base.a[i][k] = j.at("a").at(i).at(k).get<double>();
    m.trans.alpha = {j.at("alpha").at(0).get<double>(), j.at("alpha").at(1).get<double>()};
    m.trans.beta = {j.at("beta").at(0).get<double>(), j.at("beta").at(1).get<double>()};
    m.trans.fallback = {j.at("transition_fallback").at(0).get<bool>(),
                        j.at("transition_fallback").at(1).get<bool>()};
    m.gamma = j.at("gamma").get<double>();
    m.epsilon = j.at("epsilon").get<double>();
    m.base.index = emission_index_from_json(j.at("index"));
    return m;
}

inline Json to_json(const ProfileTable& t) {
    Json arr = Json::array();
    for (const auto& p : t.profiles()) {
        Json all = Json::array(), serving = Json::array();
        for (const auto& s : p.bs_all) all.push_back({s.rnc, s.cell});
        for (const auto& s : p.bs_serving) serving.push_back({s.rnc, s.cell});
        arr.push_back({{"g", {p.grid.col, p.grid.row}}, {"n", p.n_samples}, {"all", all}, {"serving", serving}});
    }
    return arr;
}

inline ProfileTable profiles_from_json(const Json& j) {
    std::vector<GridProfile> profiles;
    for (const auto& e : j) {
        GridProfile p;
        p.grid = {e.at("g").at(0).get<std::int32_t>(), e.at("g").at(1).get<std::int32_t>()};
        p.n_samples = e.at("n").get<std::int64_t>();
        for (const auto& s : e.at("all"))
            p.bs_all.push_back({s.at(0).get<std::int32_t>(), s.at(1).get<std::int32_t>()});
        for (const auto& s : e.at("serving"))
            p.bs_serving.push_back({s.at(0).get<std::int32_t>(), s.at(1).get<std::int32_t>()});
        profiles.push_back(std::move(p));
    }
    return ProfileTable(std::move(profiles));
}

inline Json to_json(const StationDb& db) {
    Json arr = Json::array();
    for (const auto& [id, pos] : db) arr.push_back({id.rnc, id.cell, pos.lon, pos.lat});
    return arr;
}

inline StationDb stations_from_json(const Json& j) {
    StationDb db;
    for (const auto& e : j)
        db[{e.at(0).get<std::int32_t>(), e.at(1).get<std::int32_t>()}] = {e.at(2).get<double>(),
                                                                          e.at(3).get<double>()};
    return db;
}

// Self-describing model container: everything cmd_run and cmd_eval need, plus
// the configuration echo that produced it.
struct Bundle {
    GridSystem grid;
    FingerprintModel localizer;
    DaHmm hmm;
    ProfileTable profiles;
    StationDb stations;
    double tau_m = 0.0;
    PipelineConfig config;
    std::int64_t dropped_dc_sequences = 0;
    std::int64_t profile_station_warnings = 0;
};

inline constexpr int kBundleVersion = 1;

inline Json to_json(const Bundle& b) {
    return Json{{"format", "rloc-bundle"},
                {"version", kBundleVersion},
                {"grid", to_json(b.grid)},
                {"grid_hash", b.grid.hash()},
                {"tau_m", b.tau_m},
                {"config", to_json(b.config)},
                {"localizer", to_json(b.localizer)},
                {"hmm", to_json(b.hmm)},
                {"profiles", to_json(b.profiles)},
                {"stations", to_json(b.stations)},
                {"meta",
                 {{"dropped_dc_sequences", b.dropped_dc_sequences},
                  {"profile_station_warnings", b.profile_station_warnings}}}};
}

inline Bundle bundle_from_json(const Json& j) {
    if (j.value("format", "") != std::string("rloc-bundle"))
        throw data_error("bundle: unrecognized format");
    if (j.at("version").get<int>() != kBundleVersion) throw data_error("bundle: unsupported version");
    Bundle b;
    b.grid = grid_from_json(j.at("grid"));
    if (j.at("grid_hash").get<std::uint64_t>() != b.grid.hash())
        throw data_error("bundle: grid hash mismatch");
    b.tau_m = j.at("tau_m").get<double>();
    b.config = config_from_json(j.at("config"));
    b.localizer = fingerprint_from_json(j.at("localizer"));
    b.hmm = da_hmm_from_json(j.at("hmm"));
    b.profiles = profiles_from_json(j.at("profiles"));
    b.stations = stations_from_json(j.at("stations"));
    b.dropped_dc_sequences = j.at("meta").at("dropped_dc_sequences").get<std::int64_t>();
    b.profile_station_warnings = j.at("meta").at("profile_station_warnings").get<std::int64_t>();
    return b;
}

// Atomic write: the bundle lands complete or not at all.
inline void save_bundle(const std::string& path, const Bundle& b) {
    std::filesystem::path target(path);
    auto tmp = target;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw data_error("save_bundle: cannot open " + tmp.string());
        os << to_json(b).dump(1, '\t') << '\n';
    }
    std::filesystem::rename(tmp, target);
}

inline Bundle load_bundle(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("load_bundle: cannot open " + path);
    Json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw data_error("load_bundle: " + std::string(e.what()));
    }
    return bundle_from_json(j);
}

inline Json to_json(const EvalReport& r, const PipelineConfig& cfg) {
    Json j{{"mean_m", r.errors.mean_m},
           {"median_m", r.errors.median_m},
           {"p67_m", r.errors.p67_m},
           {"p90_m", r.errors.p90_m},
           {"p95_m", r.errors.p95_m},
           {"precision", r.detection.precision},
           {"recall", r.detection.recall},
           {"f_score", r.detection.f_score},
           {"repair_accuracy", nullptr},
           {"i_d", r.repair.i_d},
           {"i_s", r.repair.i_s},
           {"i_l", r.repair.i_l},
           {"p_c", r.candidates.p_c},
           {"mean_candidates", r.candidates.mean_candidates},
           {"tau_m", r.tau_m},
           {"n_samples", r.n_samples},
           {"before",
            {{"mean_m", r.errors_before.mean_m},
             {"median_m", r.errors_before.median_m},
             {"p67_m", r.errors_before.p67_m},
             {"p90_m", r.errors_before.p90_m},
             {"p95_m", r.errors_before.p95_m}}},
           {"config", to_json(cfg)}};
    if (r.repair.repair_accuracy) j["repair_accuracy"] = *r.repair.repair_accuracy;
    return j;
}

} // namespace rloc
