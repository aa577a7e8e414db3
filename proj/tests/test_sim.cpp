#include "rloc/csv.hpp"
#include "rloc/sim.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

using namespace rloc;

namespace {

PipelineConfig small_world_config() {
    PipelineConfig cfg;
    cfg.world_width_m = 1000.0;
    cfg.world_height_m = 1000.0;
    cfg.n_stations = 10;
    cfg.road_spacing_m = 200.0;
    cfg.noise_sigma_db = 2.0;
    cfg.n_devices = 3;
    cfg.duration_s = 600.0;
    cfg.interval_dist = {IntervalDist::Kind::fixed, 10.0, 10.0};
    cfg.seed = 42;
    return cfg;
}

std::string dump_samples(const std::vector<MrSample>& samples) {
    std::stringstream ss;
    write_mr_csv(ss, samples);
    return ss.str();
}

} // namespace

TEST_CASE("generate_world is deterministic and validates its inputs") {
    auto cfg = small_world_config();
    auto w1 = sim::generate_world(cfg);
    auto w2 = sim::generate_world(cfg);
    REQUIRE(w1.stations.size() == 10);
    for (std::size_t i = 0; i < w1.stations.size(); ++i) {
        CHECK(w1.stations[i].id == w2.stations[i].id);
        CHECK(w1.stations[i].pos.lon == w2.stations[i].pos.lon);
        CHECK(w1.stations[i].pos.lat == w2.stations[i].pos.lat);
    }

    auto bad = cfg;
    bad.n_stations = 5;
    CHECK_THROWS_AS(sim::generate_world(bad), config_error);
    bad = cfg;
    bad.road_spacing_m = 5000.0;
    CHECK_THROWS_AS(sim::generate_world(bad), config_error);
}

TEST_CASE("fixed-interval trajectories emit the expected point count") {
    auto cfg = small_world_config();
    auto world = sim::generate_world(cfg);
    auto tracks = sim::generate_trajectories(world, 3, 600.0, {IntervalDist::Kind::fixed, 10.0, 10.0});
    REQUIRE(tracks.size() == 3);
    for (const auto& tr : tracks) CHECK(tr.points.size() == 61);
}

TEST_CASE("trajectories respect the speed bound") {
    auto cfg = small_world_config();
    auto world = sim::generate_world(cfg);
    auto tracks = sim::generate_trajectories(world, 5, 900.0, {IntervalDist::Kind::uniform, 1.0, 60.0});
    for (const auto& tr : tracks)
        for (std::size_t i = 1; i < tr.points.size(); ++i) {
            double dt = tr.points[i].t_s - tr.points[i - 1].t_s;
            double d = std::hypot(tr.points[i].pos.x - tr.points[i - 1].pos.x,
                                  tr.points[i].pos.y - tr.points[i - 1].pos.y);
            REQUIRE(d <= 15.0 * dt + 1e-6);
        }
}

TEST_CASE("uniform intervals span the configured range") {
    auto cfg = small_world_config();
    auto world = sim::generate_world(cfg);
    auto tracks = sim::generate_trajectories(world, 20, 3000.0, {IntervalDist::Kind::uniform, 1.0, 60.0});
    double lo = 1e9, hi = 0.0;
    for (const auto& tr : tracks)
        for (std::size_t i = 1; i < tr.points.size(); ++i) {
            double dt = tr.points[i].t_s - tr.points[i - 1].t_s;
            lo = std::min(lo, dt);
            hi = std::max(hi, dt);
            REQUIRE(dt >= 1.0);
            REQUIRE(dt <= 60.0);
        }
    CHECK(lo < 10.0);
    CHECK(hi > 50.0);
}

TEST_CASE("synthesize_mr follows the closed-form path loss when noise is off") {
    sim::World world;
    world.bbox = {{121.2, 31.28}, {121.25, 31.33}};
    world.proj = Projection(31.3);
    world.width_m = 5000.0;
    world.height_m = 5000.0;
    world.path_loss_exponent = 3.5;
    world.noise_sigma_db = 0.0;
    world.seed = 9;
    // one station 100 m east of the sample point, six more far away
    XY at{1000.0, 1000.0};
    auto mk = [&](int cell, XY pos) {
        StationRecord r;
        r.id = {6100, cell};
        r.pos = world.to_lonlat(pos);
        r.tx_power_dbm = 30.0;
        return r;
    };
    world.stations.push_back(mk(1, {at.x + 100.0, at.y}));
    for (int i = 2; i <= 7; ++i) world.stations.push_back(mk(i, {at.x + 3000.0 + 10.0 * i, at.y}));

    sim::Track tr;
    tr.imsi = "460001";
    tr.device_index = 0;
    tr.points.push_back({0.0, at});
    auto samples = sim::synthesize_mr(world, {tr});
    REQUIRE(samples.size() == 1);
    const auto& serving = samples[0].cells[0];
    CHECK(serving.cell_id == 1);
    CHECK(*serving.rssi_dbm == Catch::Approx(30.0 - 35.0 * 2.0).margin(1e-9)); // -40 dBm
    CHECK(serving.level() == 1);
}

TEST_CASE("serving station ties break by identity order") {
    sim::World world;
    world.bbox = {{121.2, 31.28}, {121.25, 31.33}};
    world.proj = Projection(31.3);
    world.width_m = 5000.0;
    world.height_m = 5000.0;
    world.path_loss_exponent = 3.0;
    world.noise_sigma_db = 0.0;
    world.seed = 1;
    XY at{1000.0, 1000.0};
    auto mk = [&](StationId id, XY pos) {
        StationRecord r;
        r.id = id;
        r.pos = world.to_lonlat(pos);
        r.tx_power_dbm = 30.0;
        return r;
    };
    // two co-located stations: identical distance, identical mean rssi
    world.stations.push_back(mk({6100, 2}, {at.x + 200.0, at.y}));
    world.stations.push_back(mk({6100, 1}, {at.x + 200.0, at.y}));
    for (int i = 3; i <= 7; ++i) world.stations.push_back(mk({6100, i}, {at.x, at.y + 2000.0 + i}));
    std::sort(world.stations.begin(), world.stations.end(),
              [](const StationRecord& a, const StationRecord& b) { return a.id < b.id; });

    sim::Track tr;
    tr.imsi = "460001";
    tr.device_index = 0;
    tr.points.push_back({0.0, at});
    auto samples = sim::synthesize_mr(world, {tr});
    CHECK(samples[0].serving() == StationId{6100, 1});
}

TEST_CASE("noise variance inside an interference zone matches the configured sigma") {
    // Exactly 7 stations so every reading is kept and no top-7 selection
    // truncates the noise distribution.
    sim::World world;
    world.bbox = {{121.2, 31.28}, {121.25, 31.33}};
    world.proj = Projection(31.3);
    world.width_m = 5000.0;
    world.height_m = 5000.0;
    world.path_loss_exponent = 3.5;
    world.noise_sigma_db = 2.0;
    world.zones = {{{500.0, 500.0}, 150.0, 8.0}};
    world.seed = 77;
    for (int i = 1; i <= 7; ++i) {
        StationRecord r;
        r.id = {6100, i};
        r.pos = world.to_lonlat({500.0 + 300.0 * i, 500.0});
        r.tx_power_dbm = 30.0;
        world.stations.push_back(r);
    }

    XY inside{500.0, 500.0};
    REQUIRE(world.in_zone(inside));
    double sigma = world.sigma_at(inside);
    CHECK(sigma == Catch::Approx(10.0));

    sim::Track tr;
    tr.imsi = "460001";
    tr.device_index = 0;
    for (int i = 0; i < 20000; ++i) tr.points.push_back({static_cast<double>(i), inside});
    auto samples = sim::synthesize_mr(world, {tr});

    double mu = world.mean_rssi_dbm(world.stations[0], world.to_lonlat(inside));
    double sum = 0.0, sum2 = 0.0;
    std::size_t n = 0;
    for (const auto& s : samples)
        for (const auto& c : s.cells)
            if (c.station() == std::optional<StationId>(world.stations[0].id)) {
                double d = *c.rssi_dbm - mu;
                sum += d;
                sum2 += d * d;
                ++n;
            }
    REQUIRE(n == samples.size());
    double var = sum2 / n - (sum / n) * (sum / n);
    CHECK(var == Catch::Approx(sigma * sigma).epsilon(0.10));
}

TEST_CASE("identical seeds give byte-identical MR output") {
    auto cfg = small_world_config();
    auto make = [&] {
        auto world = sim::generate_world(cfg);
        auto tracks = sim::generate_trajectories(world, cfg.n_devices, cfg.duration_s, cfg.interval_dist);
        return sim::synthesize_mr(world, tracks);
    };
    CHECK(dump_samples(make()) == dump_samples(make()));
}

TEST_CASE("anonymized non-serving ids keep readings but drop identities") {
    auto cfg = small_world_config();
    auto world = sim::generate_world(cfg);
    auto tracks = sim::generate_trajectories(world, 1, 100.0, cfg.interval_dist);
    auto samples = sim::synthesize_mr(world, tracks, true);
    for (const auto& s : samples) {
        CHECK(s.station_set().size() == 1);
        CHECK(s.cells.size() == 7);
        for (std::size_t i = 1; i < s.cells.size(); ++i) {
            CHECK(!s.cells[i].has_station());
            CHECK(s.cells[i].rssi_dbm.has_value());
        }
    }
}
