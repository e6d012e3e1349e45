#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cloudfuse {

struct GrayImage {
    int h = 0, w = 0;
    std::vector<std::uint8_t> pix; // row-major
};

struct RgbImage {
    int h = 0, w = 0;
    std::vector<std::uint8_t> pix; // row-major, interleaved RGB
};

void write_pgm(const std::string& path, const GrayImage& img);
void write_ppm(const std::string& path, const RgbImage& img);
GrayImage read_pgm(const std::string& path);
RgbImage read_ppm(const std::string& path);

} // namespace cloudfuse
