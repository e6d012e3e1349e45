#include "cloudfuse/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "FTZ writer assumes a little-endian host");

namespace cloudfuse {

namespace {

template <typename T>
void write_le(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("FTZ: truncated file");
    return v;
}

} // namespace

void save_ftz(const std::string& path, const std::vector<FtzEntry>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write("FTEN", 4);
    write_le<std::uint32_t>(os, 1);
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        if (e.name.size() > 0xFFFF)
            throw std::invalid_argument("FTZ: entry name too long: " + e.name);
        write_le<std::uint16_t>(os, static_cast<std::uint16_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        write_le<std::uint8_t>(os, static_cast<std::uint8_t>(e.shape.size()));
        std::size_t n = 1;
        for (int d : e.shape) {
            write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
            n *= static_cast<std::size_t>(d);
        }
        if (n != e.values.size())
            throw std::invalid_argument("FTZ: shape/value mismatch for " + e.name);
        write_le<std::uint8_t>(os, 0); // dtype f32
        os.write(reinterpret_cast<const char*>(e.values.data()),
                 static_cast<std::streamsize>(n * sizeof(float)));
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<FtzEntry> load_ftz(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "FTEN", 4) != 0)
        throw std::runtime_error("FTZ: bad magic in " + path);
    const auto version = read_le<std::uint32_t>(is);
    if (version != 1)
        throw std::runtime_error("FTZ: unsupported version " + std::to_string(version));
    const auto count = read_le<std::uint32_t>(is);
    std::vector<FtzEntry> entries(count);
    for (auto& e : entries) {
        const auto name_len = read_le<std::uint16_t>(is);
        e.name.resize(name_len);
        is.read(e.name.data(), name_len);
        const auto rank = read_le<std::uint8_t>(is);
        std::size_t n = 1;
        e.shape.resize(rank);
        for (int r = 0; r < rank; ++r) {
            e.shape[r] = static_cast<int>(read_le<std::uint32_t>(is));
            n *= static_cast<std::size_t>(e.shape[r]);
        }
        const auto dtype = read_le<std::uint8_t>(is);
        if (dtype != 0)
            throw std::runtime_error("FTZ: unsupported dtype in " + path);
        e.values.resize(n);
        is.read(reinterpret_cast<char*>(e.values.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
        if (!is) throw std::runtime_error("FTZ: truncated payload in " + path);
    }
    return entries;
}

std::vector<FtzEntry> to_entries(const std::vector<NamedParam>& params) {
    std::vector<FtzEntry> out;
    out.reserve(params.size());
    for (const auto& p : params)
        out.push_back({p.name, p.tensor->shape, p.tensor->data});
    return out;
}

void load_into(const std::string& path, const std::vector<NamedParam>& params) {
    auto entries = load_ftz(path);
    for (const auto& p : params) {
        bool found = false;
        for (const auto& e : entries) {
            if (e.name != p.name) continue;
            if (e.shape != p.tensor->shape)
                throw std::runtime_error("FTZ: shape mismatch for " + p.name +
                                         " in " + path);
            p.tensor->data = e.values;
            found = true;
            break;
        }
        if (!found)
            throw std::runtime_error("FTZ: missing entry " + p.name + " in " + path);
    }
}

} // namespace cloudfuse
