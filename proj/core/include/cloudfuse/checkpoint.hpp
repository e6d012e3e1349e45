#pragma once

#include <string>
#include <vector>

#include "cloudfuse/optim.hpp"
#include "cloudfuse/tensor.hpp"

namespace cloudfuse {

// FTZ checkpoint: magic "FTEN", u32 version = 1, u32 entry count;
// per entry: u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
// u8 dtype (0 = f32), little-endian f32 payload.
struct FtzEntry {
    std::string name;
    std::vector<int> shape;
    std::vector<float> values;
};

void save_ftz(const std::string& path, const std::vector<FtzEntry>& entries);
std::vector<FtzEntry> load_ftz(const std::string& path);

std::vector<FtzEntry> to_entries(const std::vector<NamedParam>& params);
void load_into(const std::string& path, const std::vector<NamedParam>& params);

} // namespace cloudfuse
