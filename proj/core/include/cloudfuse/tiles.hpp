#pragma once

namespace cloudfuse {

// XYZ slippy-map tile address in Web-Mercator space.
struct TileCoord {
    int z = 0;
    long long x = 0;
    long long y = 0;
    bool operator==(const TileCoord&) const = default;
};

inline constexpr double kWebMercatorMaxLat = 85.05113;

TileCoord lonlat_to_tile(double lon_deg, double lat_deg, int zoom);

// lon/lat of the tile's center pixel
void tile_center(const TileCoord& tile, double& lon_deg, double& lat_deg);

} // namespace cloudfuse
