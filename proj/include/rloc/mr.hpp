#pragma once

#include "rloc/common.hpp"
#include "rloc/geo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rloc {

// Known upper bound on stations reported per MR sample.
inline constexpr int kMaxStationsPerSample = 7;

// Signal strength buckets: level 1 above -50 dBm, 2..7 in width-10 steps down
// to -110 dBm, level 8 at or below -110 dBm or when no signal was read.
inline int discretize_rssi(double rssi_dbm) {
    if (!std::isfinite(rssi_dbm)) throw data_error("discretize_rssi: non-finite reading");
    if (rssi_dbm > -50.0) return 1;
    if (rssi_dbm <= -110.0) return 8;
    // Buckets are right-closed: (-60,-50] -> 2, (-70,-60] -> 3, ...
    int level = 2 + static_cast<int>(std::floor((-50.0 - rssi_dbm) / 10.0));
    return std::clamp(level, 2, 7);
}

inline int discretize_rssi(std::optional<double> rssi_dbm) {
    if (!rssi_dbm) return 8; // no signal
    return discretize_rssi(*rssi_dbm);
}

struct CellObservation {
    std::optional<std::int32_t> rnc_id;
    std::optional<std::int32_t> cell_id;
    std::optional<std::int32_t> asu_level;
    std::optional<std::int32_t> signal_level;
    std::optional<double> rssi_dbm;

    bool has_station() const { return rnc_id.has_value() && cell_id.has_value(); }

    std::optional<StationId> station() const {
        if (!has_station()) return std::nullopt;
        return StationId{*rnc_id, *cell_id};
    }

    int level() const { return discretize_rssi(rssi_dbm); }
};

struct MrSample {
    std::string imsi;
    std::int64_t timestamp_ms = 0;
    std::vector<CellObservation> cells; // first entry is the serving station
    std::optional<LonLat> truth;

    StationId serving() const {
        if (cells.empty() || !cells.front().has_station())
            throw data_error("MrSample: missing serving station");
        return *cells.front().station();
    }

    // Sorted unique identified station identities.
    std::vector<StationId> station_set() const {
        std::vector<StationId> out;
        for (const auto& c : cells)
            if (auto s = c.station()) out.push_back(*s);
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }
};

struct MrSequence {
    std::string imsi;
    std::vector<MrSample> samples;
    std::vector<double> deltas_s; // length samples.size()-1

    std::size_t size() const { return samples.size(); }
};

} // namespace rloc
