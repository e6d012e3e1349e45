#include "cloudfuse/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include <json.hpp>

#include "cloudfuse/netpbm.hpp"
#include "cloudfuse/rng.hpp"

namespace fs = std::filesystem;

namespace cloudfuse {

// ---------------------------------------------------------------------------
// value noise

std::vector<double> value_noise(int h, int w, int octaves, double persistence,
                                std::uint64_t seed) {
    std::vector<double> field(static_cast<std::size_t>(h) * w, 0.0);
    Rng rng(seed);
    double amp = 1.0, total = 0.0;
    for (int oct = 0; oct < octaves; ++oct) {
        const int res = 4 << oct;
        std::vector<double> lattice(static_cast<std::size_t>(res + 1) * (res + 1));
        for (auto& v : lattice) v = rng.uniform();
        for (int y = 0; y < h; ++y) {
            const double fy = static_cast<double>(y) / h * res;
            const int y0 = static_cast<int>(fy);
            double ty = fy - y0;
            ty = ty * ty * (3.0 - 2.0 * ty); // smoothstep
            for (int x = 0; x < w; ++x) {
                const double fx = static_cast<double>(x) / w * res;
                const int x0 = static_cast<int>(fx);
                double tx = fx - x0;
                tx = tx * tx * (3.0 - 2.0 * tx);
                const double* row0 = lattice.data() + static_cast<std::size_t>(y0) * (res + 1);
                const double* row1 = row0 + (res + 1);
                const double a = row0[x0] + (row0[x0 + 1] - row0[x0]) * tx;
                const double b = row1[x0] + (row1[x0 + 1] - row1[x0]) * tx;
                field[static_cast<std::size_t>(y) * w + x] += amp * (a + (b - a) * ty);
            }
        }
        total += amp;
        amp *= persistence;
    }
    for (auto& v : field) v /= total;
    return field;
}

namespace {

// fraction of field strictly above t
double coverage_at(const std::vector<double>& field, double t) {
    std::size_t n = 0;
    for (double v : field)
        if (v > t) ++n;
    return static_cast<double>(n) / static_cast<double>(field.size());
}

// alpha layer: zero below the band, soft ramp up to the threshold, opaque
// core above it; mask = alpha > 0.5 iff field > threshold
double cloud_alpha(double field, double threshold) {
    constexpr double band = 0.03;
    if (field > threshold) {
        const double s = std::min(1.0, (field - threshold) / band);
        return 0.8 + 0.2 * s;
    }
    if (field > threshold - band) return 0.45 * (field - (threshold - band)) / band;
    return 0.0;
}

struct Palette {
    std::vector<std::array<double, 3>> colors;
    std::vector<double> texture_amp;
};

Palette make_palette(const SceneRecipe& recipe) {
    Rng rng(mix_seed(recipe.seed, 0x50414CULL));
    Palette p;
    for (int c = 0; c < recipe.num_classes; ++c) {
        // kept well below cloud brightness so clouds remain the bright outlier
        p.colors.push_back({rng.uniform(0.05, 0.60), rng.uniform(0.05, 0.60),
                            rng.uniform(0.05, 0.60)});
        p.texture_amp.push_back(rng.uniform(0.02, 0.08));
    }
    return p;
}

std::vector<std::uint8_t> render_label_map(const SceneRecipe& recipe,
                                           std::uint64_t seed) {
    const int s = recipe.image_size;
    auto field = value_noise(s, s, 3, 0.6, seed);
    // quantile cuts so every class occupies a comparable area
    std::vector<double> sorted = field;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> cuts(recipe.num_classes - 1);
    for (int c = 1; c < recipe.num_classes; ++c)
        cuts[c - 1] = sorted[sorted.size() * c / recipe.num_classes];
    std::vector<std::uint8_t> labels(field.size());
    for (std::size_t i = 0; i < field.size(); ++i) {
        int cls = 0;
        while (cls < recipe.num_classes - 1 && field[i] >= cuts[cls]) ++cls;
        labels[i] = static_cast<std::uint8_t>(cls);
    }
    return labels;
}

struct RenderedImage {
    RgbImage image;
    GrayImage mask;
    double coverage = 0.0;
    bool ok = false;
};

RenderedImage render_image(const SceneRecipe& recipe, const Palette& palette,
                           const std::vector<std::uint8_t>& labels,
                           std::uint64_t seed) {
    const int s = recipe.image_size;
    const std::size_t n = static_cast<std::size_t>(s) * s;
    Rng rng(seed);

    const double target = rng.uniform(recipe.coverage_lo, recipe.coverage_hi);
    const double cloud_grey = rng.uniform(0.90, 0.97);

    RenderedImage out;
    for (int attempt = 0; attempt < 50; ++attempt) {
        auto cloud_field = value_noise(s, s, recipe.cloud_octaves,
                                       recipe.cloud_persistence, rng.next_u64());
        // monotone in t: binary search the threshold onto the target coverage
        double lo = 0.0, hi = 1.0;
        for (int it = 0; it < 48; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (coverage_at(cloud_field, mid) > target)
                lo = mid;
            else
                hi = mid;
        }
        const double threshold = 0.5 * (lo + hi);
        const double realized = coverage_at(cloud_field, threshold);
        if (realized < 0.10 || realized > 0.50) continue;

        auto texture = value_noise(s, s, 3, 0.5, rng.next_u64());
        out.image.h = out.image.w = s;
        out.image.pix.resize(n * 3);
        out.mask.h = out.mask.w = s;
        out.mask.pix.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const int cls = labels[i];
            const double tex = (texture[i] - 0.5) * 2.0 * palette.texture_amp[cls];
            const double a = cloud_alpha(cloud_field[i], threshold);
            const double cloud = cloud_grey + tex * 0.5;
            for (int ch = 0; ch < 3; ++ch) {
                const double base = palette.colors[cls][ch] + tex;
                const double v = std::clamp((1.0 - a) * base + a * cloud, 0.0, 1.0);
                out.image.pix[i * 3 + ch] =
                    static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
            out.mask.pix[i] = cloud_field[i] > threshold ? 255 : 0;
        }
        out.coverage = realized;
        out.ok = true;
        return out;
    }
    return out;
}

std::string loc_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "loc_%04d", index);
    return buf;
}

} // namespace

// ---------------------------------------------------------------------------
// generation

DatasetManifest generate_dataset(const SceneRecipe& recipe, int n_locations,
                                 const std::string& out_dir) {
    if (n_locations < 1)
        throw std::invalid_argument("generate_dataset: need at least one location");
    if (recipe.image_size < 8 || recipe.image_size % 4 != 0)
        throw std::invalid_argument("generate_dataset: image size must be >= 8 and divisible by 4");
    if (recipe.k < 1) throw std::invalid_argument("generate_dataset: k must be >= 1");
    if (recipe.num_classes < 2 || recipe.num_classes > 255)
        throw std::invalid_argument("generate_dataset: class count out of range");

    fs::create_directories(out_dir);
    const Palette palette = make_palette(recipe);

    DatasetManifest manifest;
    manifest.recipe = recipe;
    manifest.base_dir = out_dir;

    for (int loc = 0; loc < n_locations; ++loc) {
        const std::uint64_t loc_seed = mix_seed(recipe.seed, static_cast<std::uint64_t>(loc));
        const auto labels = render_label_map(recipe, mix_seed(loc_seed, 1));

        LocationEntry entry;
        entry.id = loc_id(loc);
        bool all_ok = true;
        std::vector<RenderedImage> rendered;
        for (int j = 0; j < recipe.k; ++j) {
            auto img = render_image(recipe, palette, labels,
                                    mix_seed(loc_seed, 100 + static_cast<std::uint64_t>(j)));
            if (!img.ok) {
                all_ok = false;
                break;
            }
            rendered.push_back(std::move(img));
        }
        if (!all_ok) {
            std::cerr << "warning: skipping " << entry.id
                      << " (cloud coverage unattainable after 50 attempts)\n";
            continue;
        }

        GrayImage label_img{recipe.image_size, recipe.image_size, labels};
        entry.label_path = entry.id + "_label.pgm";
        write_pgm(out_dir + "/" + entry.label_path, label_img);
        for (int j = 0; j < recipe.k; ++j) {
            char suffix[16];
            std::snprintf(suffix, sizeof(suffix), "_%02d", j);
            StackEntry se;
            se.image_path = entry.id + "_img" + suffix + ".ppm";
            se.mask_path = entry.id + "_mask" + suffix + ".pgm";
            se.coverage = rendered[j].coverage;
            write_ppm(out_dir + "/" + se.image_path, rendered[j].image);
            write_pgm(out_dir + "/" + se.mask_path, rendered[j].mask);
            entry.images.push_back(std::move(se));
        }
        manifest.locations.push_back(std::move(entry));
    }

    if (manifest.locations.empty())
        throw std::runtime_error("generate_dataset: no locations generated");

    save_manifest(manifest, out_dir + "/manifest.json");
    return manifest;
}

// ---------------------------------------------------------------------------
// manifest JSON

void save_manifest(const DatasetManifest& m, const std::string& path) {
    nlohmann::json j;
    j["recipe"] = {{"seed", m.recipe.seed},
                   {"num_classes", m.recipe.num_classes},
                   {"image_size", m.recipe.image_size},
                   {"k", m.recipe.k},
                   {"coverage_lo", m.recipe.coverage_lo},
                   {"coverage_hi", m.recipe.coverage_hi},
                   {"cloud_octaves", m.recipe.cloud_octaves},
                   {"cloud_persistence", m.recipe.cloud_persistence}};
    j["locations"] = nlohmann::json::array();
    for (const auto& loc : m.locations) {
        nlohmann::json lj;
        lj["id"] = loc.id;
        lj["label"] = loc.label_path;
        lj["images"] = nlohmann::json::array();
        for (const auto& img : loc.images)
            lj["images"].push_back({{"image", img.image_path},
                                    {"mask", img.mask_path},
                                    {"coverage", img.coverage}});
        j["locations"].push_back(std::move(lj));
    }
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << j.dump(2) << "\n";
}

DatasetManifest load_manifest_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path);
    nlohmann::json j = nlohmann::json::parse(is);
    DatasetManifest m;
    const auto& r = j.at("recipe");
    m.recipe.seed = r.at("seed").get<std::uint64_t>();
    m.recipe.num_classes = r.at("num_classes").get<int>();
    m.recipe.image_size = r.at("image_size").get<int>();
    m.recipe.k = r.at("k").get<int>();
    m.recipe.coverage_lo = r.at("coverage_lo").get<double>();
    m.recipe.coverage_hi = r.at("coverage_hi").get<double>();
    m.recipe.cloud_octaves = r.at("cloud_octaves").get<int>();
    m.recipe.cloud_persistence = r.at("cloud_persistence").get<double>();
    m.base_dir = fs::path(path).parent_path().string();
    if (m.base_dir.empty()) m.base_dir = ".";
    for (const auto& lj : j.at("locations")) {
        LocationEntry loc;
        loc.id = lj.at("id").get<std::string>();
        loc.label_path = lj.at("label").get<std::string>();
        for (const auto& ij : lj.at("images")) {
            StackEntry se;
            se.image_path = ij.at("image").get<std::string>();
            se.mask_path = ij.at("mask").get<std::string>();
            se.coverage = ij.at("coverage").get<double>();
            loc.images.push_back(std::move(se));
        }
        m.locations.push_back(std::move(loc));
    }
    return m;
}

// ---------------------------------------------------------------------------
// stack loading and sampling

ImageStack load_stack(const DatasetManifest& m, std::size_t location_index) {
    if (location_index >= m.locations.size())
        throw std::out_of_range("load_stack: location index out of range");
    const auto& loc = m.locations[location_index];
    ImageStack stack;
    stack.id = loc.id;

    const auto label_img = read_pgm(m.base_dir + "/" + loc.label_path);
    stack.h = label_img.h;
    stack.w = label_img.w;
    stack.labels.assign(label_img.pix.begin(), label_img.pix.end());

    for (const auto& se : loc.images) {
        const auto rgb = read_ppm(m.base_dir + "/" + se.image_path);
        if (rgb.h != stack.h || rgb.w != stack.w)
            throw std::runtime_error("load_stack: image size mismatch in " + se.image_path);
        const std::size_t hw = static_cast<std::size_t>(stack.h) * stack.w;
        std::vector<float> chw(3 * hw);
        for (std::size_t i = 0; i < hw; ++i)
            for (int c = 0; c < 3; ++c)
                chw[c * hw + i] = static_cast<float>(rgb.pix[i * 3 + c]) / 255.0f;
        stack.images.push_back(std::move(chw));

        const auto mask = read_pgm(m.base_dir + "/" + se.mask_path);
        std::vector<std::uint8_t> bin(hw);
        for (std::size_t i = 0; i < hw; ++i) bin[i] = mask.pix[i] > 127 ? 1 : 0;
        stack.masks.push_back(std::move(bin));
    }
    return stack;
}

ImageStack random_crop(const ImageStack& stack, int size, std::uint64_t seed) {
    if (size > stack.h || size > stack.w)
        throw std::invalid_argument("random_crop: crop " + std::to_string(size) +
                                    " larger than image " + std::to_string(stack.h) +
                                    "x" + std::to_string(stack.w));
    Rng rng(seed);
    const int oy = static_cast<int>(rng.below(static_cast<std::uint64_t>(stack.h - size) + 1));
    const int ox = static_cast<int>(rng.below(static_cast<std::uint64_t>(stack.w - size) + 1));

    ImageStack out;
    out.id = stack.id;
    out.h = out.w = size;
    const std::size_t hw = static_cast<std::size_t>(stack.h) * stack.w;
    const std::size_t chw_out = static_cast<std::size_t>(size) * size;

    auto crop_plane = [&](const auto& src, auto& dst, std::size_t src_off,
                          std::size_t dst_off) {
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                dst[dst_off + static_cast<std::size_t>(y) * size + x] =
                    src[src_off + static_cast<std::size_t>(oy + y) * stack.w + ox + x];
    };

    for (const auto& img : stack.images) {
        std::vector<float> chw(3 * chw_out);
        for (int c = 0; c < 3; ++c)
            crop_plane(img, chw, static_cast<std::size_t>(c) * hw,
                       static_cast<std::size_t>(c) * chw_out);
        out.images.push_back(std::move(chw));
    }
    if (!stack.labels.empty()) {
        out.labels.resize(chw_out);
        crop_plane(stack.labels, out.labels, 0, 0);
    }
    for (const auto& mask : stack.masks) {
        std::vector<std::uint8_t> mm(chw_out);
        crop_plane(mask, mm, 0, 0);
        out.masks.push_back(std::move(mm));
    }
    return out;
}

ImageStack sample_k(const ImageStack& stack, std::size_t k, std::uint64_t seed) {
    if (k > stack.k())
        throw std::invalid_argument("sample_k: k exceeds stack size");
    // partial Fisher-Yates, then sort so the original order is preserved
    std::vector<std::size_t> idx(stack.k());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.below(idx.size() - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());

    ImageStack out;
    out.id = stack.id;
    out.h = stack.h;
    out.w = stack.w;
    out.labels = stack.labels;
    for (std::size_t i : idx) {
        out.images.push_back(stack.images[i]);
        if (!stack.masks.empty()) out.masks.push_back(stack.masks[i]);
    }
    return out;
}

TensorPtr image_to_tensor(const ImageStack& stack, std::size_t image_index) {
    if (image_index >= stack.k())
        throw std::out_of_range("image_to_tensor: index out of range");
    return Tensor::from_data({1, 3, stack.h, stack.w}, stack.images[image_index]);
}

} // namespace cloudfuse
