#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cloudfuse/tensor.hpp"

namespace cloudfuse {

// Everything needed to regenerate a dataset byte-for-byte.
struct SceneRecipe {
    std::uint64_t seed = 42;
    int num_classes = 6;
    int image_size = 64;
    int k = 6; // images per location
    double coverage_lo = 0.15;
    double coverage_hi = 0.45;
    int cloud_octaves = 4;
    double cloud_persistence = 0.5;
};

struct StackEntry {
    std::string image_path;
    std::string mask_path;
    double coverage = 0.0;
};

struct LocationEntry {
    std::string id;
    std::string label_path;
    std::vector<StackEntry> images;
};

struct DatasetManifest {
    SceneRecipe recipe;
    std::string base_dir;
    std::vector<LocationEntry> locations;
};

// K co-registered images of one location, float CHW in [0,1]
struct ImageStack {
    std::string id;
    int h = 0, w = 0;
    std::vector<std::vector<float>> images;     // K x [3*h*w]
    std::vector<int> labels;                    // h*w, empty if absent
    std::vector<std::vector<std::uint8_t>> masks; // K x [h*w], empty if absent
    std::size_t k() const { return images.size(); }
};

DatasetManifest generate_dataset(const SceneRecipe& recipe, int n_locations,
                                 const std::string& out_dir);

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest_file(const std::string& path);

ImageStack load_stack(const DatasetManifest& m, std::size_t location_index);

ImageStack random_crop(const ImageStack& stack, int size, std::uint64_t seed);
ImageStack sample_k(const ImageStack& stack, std::size_t k, std::uint64_t seed);

// [1,3,H,W] tensor view of one stack image
TensorPtr image_to_tensor(const ImageStack& stack, std::size_t image_index);

// seeded multi-octave value noise in [0,1], h*w row-major
std::vector<double> value_noise(int h, int w, int octaves, double persistence,
                                std::uint64_t seed);

} // namespace cloudfuse
