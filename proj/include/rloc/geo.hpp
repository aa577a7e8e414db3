#pragma once

#include "rloc/common.hpp"

#include <cmath>
#include <compare>
#include <cstdint>

namespace rloc {

struct LonLat {
    double lon = 0.0;
    double lat = 0.0;

    friend bool operator==(const LonLat&, const LonLat&) = default;
};

struct GeoRect {
    LonLat min;
    LonLat max;
};

struct XY {
    double x = 0.0;
    double y = 0.0;
};

// Local equirectangular projection anchored at a reference latitude.
// Valid for areas of a few km where spherical distortion is negligible.
class Projection {
public:
    Projection() = default;
    explicit Projection(double ref_lat_deg)
        : m_per_deg_lat_(kMetersPerDegLat),
          m_per_deg_lon_(kMetersPerDegLat * std::cos(ref_lat_deg * kDegToRad)) {}

    double m_per_deg_lat() const { return m_per_deg_lat_; }
    double m_per_deg_lon() const { return m_per_deg_lon_; }

    XY to_meters(LonLat origin, LonLat p) const {
        return {(p.lon - origin.lon) * m_per_deg_lon_, (p.lat - origin.lat) * m_per_deg_lat_};
    }

    LonLat from_meters(LonLat origin, XY xy) const {
        return {origin.lon + xy.x / m_per_deg_lon_, origin.lat + xy.y / m_per_deg_lat_};
    }

    double distance_m(LonLat a, LonLat b) const {
        double dx = (a.lon - b.lon) * m_per_deg_lon_;
        double dy = (a.lat - b.lat) * m_per_deg_lat_;
        return std::hypot(dx, dy);
    }

    static constexpr double kMetersPerDegLat = 111320.0;
    static constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

private:
    double m_per_deg_lat_ = kMetersPerDegLat;
    double m_per_deg_lon_ = kMetersPerDegLat;
};

struct GridCellId {
    std::int32_t col = 0;
    std::int32_t row = 0;

    friend auto operator<=>(const GridCellId&, const GridCellId&) = default;
};

// Square tessellation of a geographic bounding box. Cell (0,0) sits at the
// south-west corner; indices grow east (col) and north (row).
class GridSystem {
public:
    GridSystem() = default;

    GridSystem(LonLat origin, double width_m, double height_m, double cell_size_m)
        : origin_(origin),
          width_m_(width_m),
          height_m_(height_m),
          cell_size_m_(cell_size_m),
          proj_(origin.lat + 0.5 * height_m / Projection::kMetersPerDegLat) {
        if (!(cell_size_m > 0.0)) throw config_error("grid: cell_size_m must be > 0");
        if (!(width_m > 0.0) || !(height_m > 0.0)) throw config_error("grid: degenerate bbox");
        // epsilon guard: a projection round trip must not fabricate a column
        cols_ = static_cast<std::int32_t>(std::ceil(width_m / cell_size_m - 1e-9));
        rows_ = static_cast<std::int32_t>(std::ceil(height_m / cell_size_m - 1e-9));
    }

    LonLat origin() const { return origin_; }
    double width_m() const { return width_m_; }
    double height_m() const { return height_m_; }
    double cell_size_m() const { return cell_size_m_; }
    std::int32_t cols() const { return cols_; }
    std::int32_t rows() const { return rows_; }
    const Projection& projection() const { return proj_; }

    bool contains(LonLat p) const {
        constexpr double tol = 1e-6; // meters; absorbs lon/lat round trips
        XY xy = proj_.to_meters(origin_, p);
        return xy.x >= -tol && xy.y >= -tol && xy.x <= width_m_ + tol && xy.y <= height_m_ + tol;
    }

    GridCellId grid_of(LonLat p) const {
        XY xy = proj_.to_meters(origin_, p);
        auto clamp_idx = [](double v, double cell, std::int32_t n) {
            auto i = static_cast<std::int32_t>(std::floor(v / cell));
            if (i < 0) i = 0;
            if (i >= n) i = n - 1;
            return i;
        };
        return {clamp_idx(xy.x, cell_size_m_, cols_), clamp_idx(xy.y, cell_size_m_, rows_)};
    }

    LonLat centroid(GridCellId c) const {
        XY xy{(c.col + 0.5) * cell_size_m_, (c.row + 0.5) * cell_size_m_};
        return proj_.from_meters(origin_, xy);
    }

    double distance_m(LonLat a, LonLat b) const { return proj_.distance_m(a, b); }

    // Identifies the geometry for bundle compatibility checks.
    std::uint64_t hash() const {
        double fields[5] = {origin_.lon, origin_.lat, width_m_, height_m_, cell_size_m_};
        return fnv1a64(fields, sizeof(fields));
    }

private:
    LonLat origin_;
    double width_m_ = 0.0;
    double height_m_ = 0.0;
    double cell_size_m_ = 0.0;
    std::int32_t cols_ = 0;
    std::int32_t rows_ = 0;
    Projection proj_;
};

inline GridSystem build_grid_system(const GeoRect& bbox, double cell_size_m) {
    if (!(cell_size_m > 0.0)) throw config_error("build_grid_system: cell_size_m must be > 0");
    Projection proj(0.5 * (bbox.min.lat + bbox.max.lat));
    XY extent = proj.to_meters(bbox.min, bbox.max);
    if (!(extent.x > 0.0) || !(extent.y > 0.0)) throw config_error("build_grid_system: degenerate bbox");
    return GridSystem(bbox.min, extent.x, extent.y, cell_size_m);
}

} // namespace rloc
