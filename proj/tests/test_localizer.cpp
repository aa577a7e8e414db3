#include "rloc/localizer.hpp"
#include "rloc/sequence.hpp"
#include "rloc/serialize.hpp"
#include "rloc/sim.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <set>

using namespace rloc;

namespace {

MrSample sample_at(const GridSystem& grid, GridCellId cell,
                   const std::vector<std::pair<StationId, double>>& readings) {
    MrSample s;
    s.imsi = "460001";
    s.timestamp_ms = 1000;
    for (const auto& [id, rssi] : readings) {
        CellObservation c;
        c.rnc_id = id.rnc;
        c.cell_id = id.cell;
        c.rssi_dbm = rssi;
        s.cells.push_back(c);
    }
    s.truth = grid.centroid(cell);
    return s;
}

GridSystem small_grid() { return GridSystem({121.4, 31.2}, 400.0, 400.0, 50.0); }

} // namespace

TEST_CASE("training on one cell produces one signature") {
    auto grid = small_grid();
    std::vector<MrSample> d_l{sample_at(grid, {1, 1}, {{{6100, 1}, -70.0}, {{6100, 2}, -90.0}}),
                              sample_at(grid, {1, 1}, {{{6100, 1}, -75.0}})};
    auto model = train_fingerprint(d_l, grid, 5, 2.0);
    REQUIRE(model.cells().size() == 1);
    CHECK(model.cells()[0].n_samples == 2);

    SECTION("training twice yields an identical model") {
        auto again = train_fingerprint(d_l, grid, 5, 2.0);
        CHECK(to_json(model) == to_json(again));
    }
}

TEST_CASE("training rejects bad inputs") {
    auto grid = small_grid();
    CHECK_THROWS_AS(train_fingerprint({}, grid, 5, 2.0), training_error);
    MrSample no_truth = sample_at(grid, {0, 0}, {{{6100, 1}, -70.0}});
    no_truth.truth.reset();
    CHECK_THROWS_AS(train_fingerprint({no_truth}, grid, 5, 2.0), training_error);
    MrSample outside = sample_at(grid, {0, 0}, {{{6100, 1}, -70.0}});
    outside.truth = LonLat{100.0, 10.0};
    CHECK_THROWS_AS(train_fingerprint({outside}, grid, 5, 2.0), training_error);
}

TEST_CASE("a sample identical to the only training sample maps to its truth grid") {
    auto grid = small_grid();
    auto train = sample_at(grid, {3, 4}, {{{6100, 1}, -70.0}, {{6100, 2}, -85.0}});
    auto model = train_fingerprint({train}, grid, 5, 2.0);
    auto pred = model.predict(train, grid);
    CHECK(pred.grid == GridCellId{3, 4});
    CHECK(pred.position.lon == grid.centroid({3, 4}).lon);
}

TEST_CASE("prediction scores are a distribution whose argmax is the grid") {
    auto grid = small_grid();
    std::vector<MrSample> d_l;
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> urssi(-100.0, -60.0);
    for (int c = 0; c < 6; ++c)
        for (int r = 0; r < 6; ++r)
            for (int rep = 0; rep < 2; ++rep)
                d_l.push_back(sample_at(grid, {c, r},
                                        {{{6100, 1 + (c + r) % 4}, urssi(rng)},
                                         {{6100, 5 + (c * r) % 3}, urssi(rng)},
                                         {{6100, 9}, urssi(rng)}}));
    auto model = train_fingerprint(d_l, grid, 5, 2.0);

    for (int i = 0; i < 50; ++i) {
        auto probe = sample_at(grid, {i % 6, (i / 6) % 6},
                               {{{6100, 1 + i % 4}, urssi(rng)}, {{6100, 9}, urssi(rng)}});
        auto pred = model.predict(probe, grid);
        double total = 0.0;
        double best = -1.0;
        for (const auto& [g, w] : pred.scores) {
            REQUIRE(w >= 0.0);
            total += w;
            best = std::max(best, w);
        }
        REQUIRE(total == Catch::Approx(1.0).margin(1e-9));
        // argmax matches the predicted grid, ties broken lexicographically
        for (const auto& [g, w] : pred.scores)
            if (w == best) {
                CHECK(pred.grid == g);
                break;
            }
    }
}

TEST_CASE("unseen stations raise a no-coverage error") {
    auto grid = small_grid();
    auto model = train_fingerprint({sample_at(grid, {0, 0}, {{{6100, 1}, -70.0}})}, grid, 5, 2.0);
    auto probe = sample_at(grid, {0, 0}, {{{6999, 77}, -70.0}});
    CHECK_THROWS_AS(model.predict(probe, grid), data_error);
}

TEST_CASE("batch_predict is element-wise and order preserving") {
    auto grid = small_grid();
    auto model = train_fingerprint({sample_at(grid, {0, 0}, {{{6100, 1}, -70.0}}),
                                    sample_at(grid, {2, 2}, {{{6100, 2}, -80.0}})},
                                   grid, 5, 2.0);
    MrSequence seq;
    seq.imsi = "460001";
    seq.samples = {sample_at(grid, {0, 0}, {{{6100, 1}, -70.0}}),
                   sample_at(grid, {0, 0}, {{{6999, 9}, -70.0}}), // flagged failure
                   sample_at(grid, {2, 2}, {{{6100, 2}, -80.0}})};
    seq.deltas_s = {1.0, 1.0};
    auto out = model.batch_predict(seq, grid);
    REQUIRE(out.size() == 3);
    CHECK(out[0].has_value());
    CHECK(!out[1].has_value());
    CHECK(out[2].has_value());
    CHECK(out[0]->grid == GridCellId{0, 0});
    CHECK(out[2]->grid == GridCellId{2, 2});
    for (const auto& p : out)
        if (p) CHECK(p->position.lon == grid.centroid(p->grid).lon);
}

TEST_CASE("model serialization round trips losslessly") {
    auto grid = small_grid();
    std::vector<MrSample> d_l;
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> urssi(-110.0, -50.0);
    for (int i = 0; i < 100; ++i)
        d_l.push_back(sample_at(grid, {static_cast<std::int32_t>(rng() % 8),
                                       static_cast<std::int32_t>(rng() % 8)},
                                {{{6100, 1 + static_cast<int>(rng() % 6)}, urssi(rng)},
                                 {{6100, 10 + static_cast<int>(rng() % 3)}, urssi(rng)}}));
    auto model = train_fingerprint(d_l, grid, 5, 2.0);
    auto json = to_json(model);
    auto restored = fingerprint_from_json(json);
    CHECK(to_json(restored) == json);

    for (int i = 0; i < 20; ++i) {
        auto probe = sample_at(grid, {static_cast<std::int32_t>(rng() % 8),
                                      static_cast<std::int32_t>(rng() % 8)},
                               {{{6100, 1 + static_cast<int>(rng() % 6)}, urssi(rng)}});
        auto a = model.predict(probe, grid);
        auto b = restored.predict(probe, grid);
        CHECK(a.grid == b.grid);
        CHECK(a.scores == b.scores);
    }
}

TEST_CASE("noise-free dense coverage keeps errors in the quantization regime") {
    // Dense stations and sigma=0: the station set plus exact levels identify
    // cells well enough that the error is bounded by grid quantization.
    PipelineConfig cfg;
    cfg.world_width_m = 800.0;
    cfg.world_height_m = 800.0;
    cfg.cell_size_m = 40.0;
    cfg.n_stations = 36;
    cfg.road_spacing_m = 100.0;
    cfg.noise_sigma_db = 0.0;
    cfg.n_devices = 60;
    cfg.duration_s = 500.0;
    cfg.interval_dist = {IntervalDist::Kind::fixed, 5.0, 5.0};
    cfg.seed = 4;
    cfg.path_loss_exponent = 4.5;

    auto world = sim::generate_world(cfg);
    auto tracks = sim::generate_trajectories(world, cfg.n_devices, cfg.duration_s, cfg.interval_dist);
    auto samples = sim::synthesize_mr(world, tracks);
    GridSystem grid = build_grid_system(world.bbox, cfg.cell_size_m);

    std::vector<MrSample> train_set, test_set;
    for (std::size_t i = 0; i < samples.size(); ++i)
        (i % 5 == 0 ? test_set : train_set).push_back(samples[i]);
    auto model = train_fingerprint(train_set, grid, cfg.knn_k, cfg.missing_level_penalty);

    std::vector<double> errors;
    for (const auto& s : test_set) {
        auto pred = model.predict(s, grid);
        errors.push_back(grid.distance_m(pred.position, *s.truth));
    }
    std::sort(errors.begin(), errors.end());
    double median = errors[errors.size() / 2];
    double p95 = errors[static_cast<std::size_t>(0.95 * errors.size())];
    CHECK(median <= cfg.cell_size_m);
    CHECK(p95 <= cfg.cell_size_m * std::sqrt(2.0));

    SECTION("occupied cells are bounded by the total cell count") {
        std::set<GridCellId> occupied;
        for (const auto& s : train_set) occupied.insert(grid.grid_of(*s.truth));
        CHECK(model.cells().size() == occupied.size());
        CHECK(model.cells().size() <= static_cast<std::size_t>(grid.cols()) * grid.rows());
    }
}
