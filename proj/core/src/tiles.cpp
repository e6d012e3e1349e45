#include "cloudfuse/tiles.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cloudfuse {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

TileCoord lonlat_to_tile(double lon_deg, double lat_deg, int zoom) {
    if (zoom < 0) throw std::invalid_argument("lonlat_to_tile: zoom must be >= 0");
    if (!(lat_deg > -kWebMercatorMaxLat && lat_deg < kWebMercatorMaxLat))
        throw std::invalid_argument("lonlat_to_tile: latitude " +
                                    std::to_string(lat_deg) +
                                    " outside Web-Mercator bounds");
    if (lon_deg < -180.0 || lon_deg >= 180.0)
        throw std::invalid_argument("lonlat_to_tile: longitude " +
                                    std::to_string(lon_deg) + " outside [-180, 180)");

    const double n = std::pow(2.0, zoom);
    const double phi = lat_deg * kPi / 180.0;
    TileCoord t;
    t.z = zoom;
    t.x = static_cast<long long>(std::floor((lon_deg + 180.0) / 360.0 * n));
    t.y = static_cast<long long>(std::floor(
        (1.0 - std::log(std::tan(phi) + 1.0 / std::cos(phi)) / kPi) / 2.0 * n));
    const long long lim = 1LL << zoom;
    t.x = std::min(std::max(t.x, 0LL), lim - 1);
    t.y = std::min(std::max(t.y, 0LL), lim - 1);
    return t;
}

void tile_center(const TileCoord& tile, double& lon_deg, double& lat_deg) {
    const double n = std::pow(2.0, tile.z);
    lon_deg = (tile.x + 0.5) / n * 360.0 - 180.0;
    const double y = kPi * (1.0 - 2.0 * (tile.y + 0.5) / n);
    lat_deg = std::atan(std::sinh(y)) * 180.0 / kPi;
}

} // namespace cloudfuse
