#pragma once

#include "rloc/common.hpp"
#include "rloc/config.hpp"
#include "rloc/csv.hpp"
#include "rloc/geo.hpp"
#include "rloc/mr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace rloc::sim {

struct World {
    GeoRect bbox;
    Projection proj;
    double width_m = 0.0;
    double height_m = 0.0;
    std::vector<StationRecord> stations; // ordered by station identity
    std::vector<double> road_xs;         // vertical road lines, meters from west edge
    std::vector<double> road_ys;         // horizontal road lines, meters from south edge
    double path_loss_exponent = 3.5;
    double noise_sigma_db = 0.0;
    std::vector<InterferenceZone> zones;
    std::uint64_t seed = 0;

    LonLat to_lonlat(XY xy) const { return proj.from_meters(bbox.min, xy); }
    XY to_xy(LonLat p) const { return proj.to_meters(bbox.min, p); }

    double sigma_at(XY p) const {
        double sigma = noise_sigma_db;
        for (const auto& z : zones)
            if (std::hypot(p.x - z.center.x, p.y - z.center.y) <= z.radius_m) sigma += z.extra_sigma_db;
        return sigma;
    }

    bool in_zone(XY p) const {
        for (const auto& z : zones)
            if (std::hypot(p.x - z.center.x, p.y - z.center.y) <= z.radius_m) return true;
        return false;
    }

    // Log-distance path loss, before shadowing noise.
    double mean_rssi_dbm(const StationRecord& bs, LonLat at) const {
        double d = proj.distance_m(bs.pos, at);
        return bs.tx_power_dbm - 10.0 * path_loss_exponent * std::log10(std::max(d, 1.0));
    }
};

struct TrackPoint {
    double t_s = 0.0;
    XY pos;
};

struct Track {
    std::string imsi;
    int device_index = 0;
    std::vector<TrackPoint> points;
};

namespace detail {

inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    std::seed_seq seq{seed, stream, index};
    return std::mt19937_64(seq);
}

inline std::vector<double> grid_lines(double extent, double spacing) {
    std::vector<double> lines;
    for (double v = 0.0; v <= extent + 1e-9; v += spacing) lines.push_back(std::min(v, extent));
    return lines;
}

} // namespace detail

inline World generate_world(const PipelineConfig& cfg) {
    if (cfg.n_stations < kMaxStationsPerSample)
        throw config_error("generate_world: need at least 7 stations");
    if (cfg.noise_sigma_db < 0) throw config_error("generate_world: noise_sigma_db must be >= 0");
    for (const auto& z : cfg.interference_zones)
        if (z.extra_sigma_db < 0) throw config_error("generate_world: zone extra_sigma_db must be >= 0");

    World w;
    w.bbox = cfg.world_bbox();
    w.proj = Projection(0.5 * (w.bbox.min.lat + w.bbox.max.lat));
    w.width_m = cfg.world_width_m;
    w.height_m = cfg.world_height_m;
    w.path_loss_exponent = cfg.path_loss_exponent;
    w.noise_sigma_db = cfg.noise_sigma_db;
    w.zones = cfg.interference_zones;
    w.seed = cfg.seed;

    w.road_xs = detail::grid_lines(w.width_m, cfg.road_spacing_m);
    w.road_ys = detail::grid_lines(w.height_m, cfg.road_spacing_m);
    if (w.road_xs.size() < 2 || w.road_ys.size() < 2)
        throw config_error("generate_world: bbox too small for road spacing");

    auto rng = detail::substream(cfg.seed, 0, 0);
    std::uniform_real_distribution<double> ux(0.0, w.width_m), uy(0.0, w.height_m);
    for (int i = 0; i < cfg.n_stations; ++i) {
        StationRecord bs;
        bs.id = {6100 + i % 4, 26000 + i};
        double x = ux(rng), y = uy(rng);
        bs.pos = w.to_lonlat({x, y});
        bs.tx_power_dbm = cfg.tx_power_dbm;
        w.stations.push_back(bs);
    }
    std::sort(w.stations.begin(), w.stations.end(),
              [](const StationRecord& a, const StationRecord& b) { return a.id < b.id; });
    return w;
}

namespace detail {

// Road-lattice walker. Moves node to node at a speed redrawn per segment;
// at intersections it prefers going straight, turning with fixed probability.
class Walker {
public:
    Walker(const World& w, std::mt19937_64& rng) : w_(w), rng_(rng) {
        std::uniform_int_distribution<std::size_t> px(0, w.road_xs.size() - 1), py(0, w.road_ys.size() - 1);
        ix_ = px(rng_);
        iy_ = py(rng_);
        pos_ = node_pos(ix_, iy_);
        pick_next_edge(-1);
    }

    XY pos() const { return pos_; }

    void advance(double dt) {
        while (dt > 1e-12) {
            XY target = node_pos(tx_, ty_);
            double dist = std::hypot(target.x - pos_.x, target.y - pos_.y);
            double tt = dist / speed_;
            if (dt < tt) {
                double f = speed_ * dt / dist;
                pos_.x += (target.x - pos_.x) * f;
                pos_.y += (target.y - pos_.y) * f;
                return;
            }
            pos_ = target;
            dt -= tt;
            ix_ = tx_;
            iy_ = ty_;
            pick_next_edge(reverse_dir());
        }
    }

private:
    static constexpr double kTurnProb = 0.4;

    XY node_pos(std::size_t ix, std::size_t iy) const { return {w_.road_xs[ix], w_.road_ys[iy]}; }

    int reverse_dir() const { return came_from_; }

    // Directions: 0=east 1=west 2=north 3=south
    void pick_next_edge(int reverse) {
        std::vector<int> options;
        if (ix_ + 1 < w_.road_xs.size()) options.push_back(0);
        if (ix_ > 0) options.push_back(1);
        if (iy_ + 1 < w_.road_ys.size()) options.push_back(2);
        if (iy_ > 0) options.push_back(3);

        int straight = -1;
        if (last_dir_ >= 0) {
            for (int o : options)
                if (o == last_dir_) straight = o;
        }
        std::vector<int> non_reverse;
        for (int o : options)
            if (o != reverse) non_reverse.push_back(o);
        if (non_reverse.empty()) non_reverse = options; // dead end: turn back

        int dir;
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        if (straight >= 0 && u01(rng_) >= kTurnProb) {
            dir = straight;
        } else {
            std::vector<int> turns;
            for (int o : non_reverse)
                if (o != straight) turns.push_back(o);
            if (turns.empty()) turns = non_reverse;
            std::uniform_int_distribution<std::size_t> pick(0, turns.size() - 1);
            dir = turns[pick(rng_)];
        }

        tx_ = ix_ + (dir == 0 ? 1 : dir == 1 ? -1 : 0);
        ty_ = iy_ + (dir == 2 ? 1 : dir == 3 ? -1 : 0);
        came_from_ = dir == 0 ? 1 : dir == 1 ? 0 : dir == 2 ? 3 : 2;
        last_dir_ = dir;
        std::uniform_real_distribution<double> uspeed(1.0, 15.0);
        speed_ = uspeed(rng_);
    }

    const World& w_;
    std::mt19937_64& rng_;
    std::size_t ix_ = 0, iy_ = 0;
    std::size_t tx_ = 0, ty_ = 0;
    XY pos_;
    double speed_ = 1.0;
    int last_dir_ = -1;
    int came_from_ = -1;
};

inline std::string imsi_for(int device_index) {
    std::string tail = std::to_string(device_index);
    return "46000" + std::string(10 - std::min<std::size_t>(10, tail.size()), '0') + tail;
}

} // namespace detail

inline std::vector<Track> generate_trajectories(const World& world, int n_devices, double duration_s,
                                                const IntervalDist& dist) {
    if (!(duration_s > 0)) throw config_error("generate_trajectories: duration must be > 0");
    std::vector<Track> tracks;
    for (int dev = 0; dev < n_devices; ++dev) {
        auto rng = detail::substream(world.seed, 1, static_cast<std::uint64_t>(dev));
        detail::Walker walker(world, rng);
        Track tr;
        tr.imsi = detail::imsi_for(dev);
        tr.device_index = dev;

        std::uniform_real_distribution<double> udraw(dist.a, dist.b);
        double t = 0.0;
        tr.points.push_back({t, walker.pos()});
        while (true) {
            double step = dist.kind == IntervalDist::Kind::fixed ? dist.a : udraw(rng);
            if (t + step > duration_s + 1e-9) break;
            walker.advance(step);
            t += step;
            tr.points.push_back({t, walker.pos()});
        }
        tracks.push_back(std::move(tr));
    }
    return tracks;
}

inline std::vector<MrSample> synthesize_mr(const World& world, const std::vector<Track>& tracks,
                                           bool anonymize_non_serving = false) {
    constexpr std::int64_t kBaseEpochMs = 1600000000000;
    std::vector<MrSample> out;
    for (const auto& tr : tracks) {
        auto rng = detail::substream(world.seed, 2, static_cast<std::uint64_t>(tr.device_index));
        std::normal_distribution<double> unit_normal(0.0, 1.0);
        for (const auto& pt : tr.points) {
            LonLat at = world.to_lonlat(pt.pos);
            double sigma = world.sigma_at(pt.pos);

            std::vector<std::pair<double, std::size_t>> readings;
            readings.reserve(world.stations.size());
            for (std::size_t i = 0; i < world.stations.size(); ++i) {
                double rssi = world.mean_rssi_dbm(world.stations[i], at) + sigma * unit_normal(rng);
                readings.emplace_back(rssi, i);
            }
            std::sort(readings.begin(), readings.end(), [&](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return world.stations[a.second].id < world.stations[b.second].id;
            });

            MrSample s;
            s.imsi = tr.imsi;
            s.timestamp_ms = kBaseEpochMs + static_cast<std::int64_t>(std::llround(pt.t_s * 1000.0));
            s.truth = at;
            for (int k = 0; k < kMaxStationsPerSample; ++k) {
                const auto& [rssi, idx] = readings[static_cast<std::size_t>(k)];
                CellObservation obs;
                if (k == 0 || !anonymize_non_serving) {
                    obs.rnc_id = world.stations[idx].id.rnc;
                    obs.cell_id = world.stations[idx].id.cell;
                }
                obs.rssi_dbm = rssi;
                obs.asu_level = std::clamp(static_cast<int>(std::lround((rssi + 113.0) / 2.0)), 0, 31);
                int lvl = discretize_rssi(rssi);
                obs.signal_level = std::clamp(4 - (lvl - 1) / 2, 0, 4);
                s.cells.push_back(obs);
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

} // namespace rloc::sim
