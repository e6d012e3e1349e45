#include "cloudfuse/netpbm.hpp"

#include <fstream>
#include <stdexcept>
#include <string>

namespace cloudfuse {

namespace {

void write_header(std::ofstream& os, const char* magic, int w, int h) {
    os << magic << "\n" << w << " " << h << "\n255\n";
}

int read_token(std::istream& is, const std::string& path) {
    // skips whitespace and '#' comments per the NetPBM grammar
    int c = is.get();
    while (c == '#' || std::isspace(c)) {
        if (c == '#')
            while (c != '\n' && c != EOF) c = is.get();
        c = is.get();
    }
    int v = 0;
    bool any = false;
    while (c >= '0' && c <= '9') {
        v = v * 10 + (c - '0');
        any = true;
        c = is.get();
    }
    if (!any) throw std::runtime_error("NetPBM: malformed header in " + path);
    return v;
}

void read_magic(std::istream& is, const char* expect, const std::string& path) {
    char m0 = static_cast<char>(is.get());
    char m1 = static_cast<char>(is.get());
    if (m0 != expect[0] || m1 != expect[1])
        throw std::runtime_error(std::string("NetPBM: expected ") + expect +
                                 " in " + path);
}

} // namespace

void write_pgm(const std::string& path, const GrayImage& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    write_header(os, "P5", img.w, img.h);
    os.write(reinterpret_cast<const char*>(img.pix.data()),
             static_cast<std::streamsize>(img.pix.size()));
    if (!os) throw std::runtime_error("write failed: " + path);
}

void write_ppm(const std::string& path, const RgbImage& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    write_header(os, "P6", img.w, img.h);
    os.write(reinterpret_cast<const char*>(img.pix.data()),
             static_cast<std::streamsize>(img.pix.size()));
    if (!os) throw std::runtime_error("write failed: " + path);
}

GrayImage read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    read_magic(is, "P5", path);
    GrayImage img;
    img.w = read_token(is, path);
    img.h = read_token(is, path);
    const int maxval = read_token(is, path);
    if (maxval != 255) throw std::runtime_error("NetPBM: expected maxval 255 in " + path);
    img.pix.resize(static_cast<std::size_t>(img.w) * img.h);
    is.read(reinterpret_cast<char*>(img.pix.data()),
            static_cast<std::streamsize>(img.pix.size()));
    if (!is) throw std::runtime_error("NetPBM: truncated pixel data in " + path);
    return img;
}

RgbImage read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    read_magic(is, "P6", path);
    RgbImage img;
    img.w = read_token(is, path);
    img.h = read_token(is, path);
    const int maxval = read_token(is, path);
    if (maxval != 255) throw std::runtime_error("NetPBM: expected maxval 255 in " + path);
    img.pix.resize(static_cast<std::size_t>(img.w) * img.h * 3);
    is.read(reinterpret_cast<char*>(img.pix.data()),
            static_cast<std::streamsize>(img.pix.size()));
    if (!is) throw std::runtime_error("NetPBM: truncated pixel data in " + path);
    return img;
}

} // namespace cloudfuse
