#pragma once

#include "rloc/common.hpp"
#include "rloc/mr.hpp"

#include <charconv>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace rloc {

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == ',') {
            out.push_back(trim(line.substr(start, i - start)));
            start = i + 1;
        }
    }
    return out;
}

template <typename T>
std::optional<T> parse_number(std::string_view field, std::size_t row, const std::string& col) {
    if (field.empty()) return std::nullopt;
    T value{};
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc{} || ptr != field.data() + field.size())
        throw data_error("csv row " + std::to_string(row) + ", column " + col + ": malformed value '" +
                         std::string(field) + "'");
    return value;
}

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace detail

// Column layout mirrors frontend MR exports: MRTime,IMSI,Num_BS, then seven
// station blocks (RNCID_i,CellID_i,AsuLevel_i,SignalLevel_i,RSSI_i), then
// optional Longitude,Latitude ground truth.
inline std::vector<MrSample> parse_mr_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw data_error("mr csv: missing header");
    auto header = detail::split_csv(line);
    std::map<std::string, std::size_t, std::less<>> col;
    for (std::size_t i = 0; i < header.size(); ++i) col.emplace(std::string(header[i]), i);

    auto need = [&](const std::string& name) {
        auto it = col.find(name);
        if (it == col.end()) throw data_error("mr csv: header lacks column " + name);
        return it->second;
    };
    std::size_t c_time = need("MRTime");
    std::size_t c_imsi = need("IMSI");
    struct SlotCols {
        std::size_t rnc, cell, asu, sig, rssi;
    };
    std::vector<SlotCols> slots;
    for (int i = 1; i <= kMaxStationsPerSample; ++i) {
        std::string sfx = "_" + std::to_string(i);
        slots.push_back({need("RNCID" + sfx), need("CellID" + sfx), need("AsuLevel" + sfx),
                         need("SignalLevel" + sfx), need("RSSI" + sfx)});
    }
    auto c_lon = col.find("Longitude");
    auto c_lat = col.find("Latitude");

    std::vector<MrSample> out;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (detail::trim(line).empty()) continue;
        auto fields = detail::split_csv(line);
        auto at = [&](std::size_t i) -> std::string_view {
            return i < fields.size() ? fields[i] : std::string_view{};
        };

        MrSample s;
        s.imsi = std::string(at(c_imsi));
        auto ts = detail::parse_number<std::int64_t>(at(c_time), row, "MRTime");
        if (!ts) throw data_error("csv row " + std::to_string(row) + ": missing MRTime");
        s.timestamp_ms = *ts;

        for (int i = 0; i < kMaxStationsPerSample; ++i) {
            const auto& sc = slots[i];
            std::string sfx = "_" + std::to_string(i + 1);
            CellObservation obs;
            obs.rnc_id = detail::parse_number<std::int32_t>(at(sc.rnc), row, "RNCID" + sfx);
            obs.cell_id = detail::parse_number<std::int32_t>(at(sc.cell), row, "CellID" + sfx);
            obs.asu_level = detail::parse_number<std::int32_t>(at(sc.asu), row, "AsuLevel" + sfx);
            obs.signal_level = detail::parse_number<std::int32_t>(at(sc.sig), row, "SignalLevel" + sfx);
            obs.rssi_dbm = detail::parse_number<double>(at(sc.rssi), row, "RSSI" + sfx);
            if (obs.rnc_id.has_value() != obs.cell_id.has_value())
                throw data_error("csv row " + std::to_string(row) + ": half station identity in slot " +
                                 std::to_string(i + 1));
            if (obs.has_station() || obs.rssi_dbm || obs.asu_level || obs.signal_level)
                s.cells.push_back(obs);
        }
        if (s.cells.empty() || !s.cells.front().has_station())
            throw data_error("csv row " + std::to_string(row) + ": no serving station");

        if (c_lon != col.end() && c_lat != col.end()) {
            auto lon = detail::parse_number<double>(at(c_lon->second), row, "Longitude");
            auto lat = detail::parse_number<double>(at(c_lat->second), row, "Latitude");
            if (lon && lat) s.truth = LonLat{*lon, *lat};
        }
        out.push_back(std::move(s));
    }
    return out;
}

inline void write_mr_csv(std::ostream& os, const std::vector<MrSample>& samples) {
    os << "MRTime,IMSI,Num_BS";
    for (int i = 1; i <= kMaxStationsPerSample; ++i)
        os << ",RNCID_" << i << ",CellID_" << i << ",AsuLevel_" << i << ",SignalLevel_" << i << ",RSSI_" << i;
    os << ",Longitude,Latitude\n";
    for (const auto& s : samples) {
        os << s.timestamp_ms << ',' << s.imsi << ',' << s.cells.size();
        for (int i = 0; i < kMaxStationsPerSample; ++i) {
            if (i < static_cast<int>(s.cells.size())) {
                const auto& c = s.cells[i];
                os << ',';
                if (c.rnc_id) os << *c.rnc_id;
                os << ',';
                if (c.cell_id) os << *c.cell_id;
                os << ',';
                if (c.asu_level) os << *c.asu_level;
                os << ',';
                if (c.signal_level) os << *c.signal_level;
                os << ',';
                if (c.rssi_dbm) os << detail::fmt_double(*c.rssi_dbm);
            } else {
                os << ",,,,,";
            }
        }
        os << ',';
        if (s.truth) os << detail::fmt_double(s.truth->lon);
        os << ',';
        if (s.truth) os << detail::fmt_double(s.truth->lat);
        os << '\n';
    }
}

struct StationRecord {
    StationId id;
    LonLat pos;
    double tx_power_dbm = 0.0;
};

// rnc_id,cell_id,lon,lat[,tx_power_dbm]
inline std::vector<StationRecord> parse_stations_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw data_error("stations csv: missing header");
    auto header = detail::split_csv(line);
    std::map<std::string, std::size_t, std::less<>> col;
    for (std::size_t i = 0; i < header.size(); ++i) col.emplace(std::string(header[i]), i);
    auto need = [&](const std::string& name) {
        auto it = col.find(name);
        if (it == col.end()) throw data_error("stations csv: header lacks column " + name);
        return it->second;
    };
    std::size_t c_rnc = need("rnc_id"), c_cell = need("cell_id"), c_lon = need("lon"), c_lat = need("lat");
    auto c_tx = col.find("tx_power_dbm");

    std::vector<StationRecord> out;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (detail::trim(line).empty()) continue;
        auto f = detail::split_csv(line);
        auto at = [&](std::size_t i) -> std::string_view {
            return i < f.size() ? f[i] : std::string_view{};
        };
        StationRecord r;
        auto rnc = detail::parse_number<std::int32_t>(at(c_rnc), row, "rnc_id");
        auto cell = detail::parse_number<std::int32_t>(at(c_cell), row, "cell_id");
        auto lon = detail::parse_number<double>(at(c_lon), row, "lon");
        auto lat = detail::parse_number<double>(at(c_lat), row, "lat");
        if (!rnc || !cell || !lon || !lat)
            throw data_error("stations csv row " + std::to_string(row) + ": incomplete record");
        r.id = {*rnc, *cell};
        r.pos = {*lon, *lat};
        if (c_tx != col.end())
            if (auto tx = detail::parse_number<double>(at(c_tx->second), row, "tx_power_dbm")) r.tx_power_dbm = *tx;
        out.push_back(r);
    }
    return out;
}

inline void write_stations_csv(std::ostream& os, const std::vector<StationRecord>& stations) {
    os << "rnc_id,cell_id,lon,lat,tx_power_dbm\n";
    for (const auto& s : stations)
        os << s.id.rnc << ',' << s.id.cell << ',' << detail::fmt_double(s.pos.lon) << ','
           << detail::fmt_double(s.pos.lat) << ',' << detail::fmt_double(s.tx_power_dbm) << '\n';
}

} // namespace rloc
