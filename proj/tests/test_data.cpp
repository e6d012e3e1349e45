#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cloudfuse/dataset.hpp"
#include "cloudfuse/netpbm.hpp"
#include "cloudfuse/rng.hpp"
#include "cloudfuse/tiles.hpp"

using namespace cloudfuse;
namespace fs = std::filesystem;

TEST_CASE("tile math matches known coordinates") {
    auto t0 = lonlat_to_tile(0.0, 0.0, 0);
    CHECK(t0.x == 0);
    CHECK(t0.y == 0);

    auto t = lonlat_to_tile(-75.5, 39.0, 13);
    CHECK(t.x == 2377);
    CHECK(t.y == 3130);

    // lon = -180 is the first column, lon just under +180 the last
    CHECK(lonlat_to_tile(-180.0, 0.0, 4).x == 0);
    CHECK(lonlat_to_tile(179.999, 0.0, 4).x == 15);
}

TEST_CASE("tile math rejects out-of-range latitude") {
    CHECK_THROWS_AS(lonlat_to_tile(0.0, 86.0, 5), std::invalid_argument);
    CHECK_THROWS_AS(lonlat_to_tile(0.0, -86.0, 5), std::invalid_argument);
}

TEST_CASE("tile centers round-trip to the same tile") {
    Rng rng(99);
    for (int i = 0; i < 1000; ++i) {
        int z = static_cast<int>(rng.below(16));
        double lon = rng.uniform(-180.0, 180.0);
        double lat = rng.uniform(-85.0, 85.0);
        auto tile = lonlat_to_tile(lon, lat, z);
        double clon = 0.0, clat = 0.0;
        tile_center(tile, clon, clat);
        auto again = lonlat_to_tile(clon, clat, z);
        CHECK(again.x == tile.x);
        CHECK(again.y == tile.y);
    }
}

TEST_CASE("netpbm round-trips exactly") {
    Rng rng(5);
    GrayImage g{17, 9, {}};
    g.pix.resize(17 * 9);
    for (auto& v : g.pix) v = static_cast<std::uint8_t>(rng.below(256));
    RgbImage c{11, 13, {}};
    c.pix.resize(11 * 13 * 3);
    for (auto& v : c.pix) v = static_cast<std::uint8_t>(rng.below(256));

    const auto dir = fs::temp_directory_path() / "cf_pbm_test";
    fs::create_directories(dir);
    write_pgm((dir / "g.pgm").string(), g);
    write_ppm((dir / "c.ppm").string(), c);
    auto g2 = read_pgm((dir / "g.pgm").string());
    auto c2 = read_ppm((dir / "c.ppm").string());
    CHECK(g2.w == g.w);
    CHECK(g2.h == g.h);
    CHECK(g2.pix == g.pix);
    CHECK(c2.pix == c.pix);
    fs::remove_all(dir);
}

namespace {
DatasetManifest make_small_dataset(const fs::path& dir, std::uint64_t seed,
                                   int locations = 3, int k = 3, int size = 32) {
    SceneRecipe recipe;
    recipe.seed = seed;
    recipe.image_size = size;
    recipe.k = k;
    return generate_dataset(recipe, locations, dir.string());
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}
} // namespace

TEST_CASE("dataset generation is byte-identical across runs") {
    const auto base = fs::temp_directory_path() / "cf_ds_det";
    fs::remove_all(base);
    auto m1 = make_small_dataset(base / "a", 7);
    auto m2 = make_small_dataset(base / "b", 7);
    auto m3 = make_small_dataset(base / "c", 8);
    CHECK(m1.locations.size() == m2.locations.size());

    bool all_equal = true, any_differs = false;
    for (const auto& entry : fs::directory_iterator(base / "a")) {
        auto name = entry.path().filename();
        if (name == "manifest.json") continue;
        auto bytes_a = slurp(entry.path());
        all_equal = all_equal && bytes_a == slurp(base / "b" / name);
        if (fs::exists(base / "c" / name))
            any_differs = any_differs || bytes_a != slurp(base / "c" / name);
    }
    CHECK(all_equal);
    CHECK(any_differs);
    fs::remove_all(base);
}

TEST_CASE("generated scenes satisfy coverage, label and mask invariants") {
    const auto base = fs::temp_directory_path() / "cf_ds_inv";
    fs::remove_all(base);
    auto manifest = make_small_dataset(base, 31, 4, 4, 32);
    CHECK(manifest.locations.size() == 4);

    for (std::size_t loc = 0; loc < manifest.locations.size(); ++loc) {
        auto stack = load_stack(manifest, loc);
        CHECK(stack.images.size() == 4);
        const int n = stack.h * stack.w;

        for (int label : stack.labels) {
            CHECK(label >= 0);
            CHECK(label < manifest.recipe.num_classes);
        }

        for (int j = 0; j < static_cast<int>(stack.images.size()); ++j) {
            int cloudy = 0;
            for (int p = 0; p < n; ++p) {
                if (stack.masks[j][p] == 0) continue;
                ++cloudy;
                // cloud pixels are bright in every channel
                for (int ch = 0; ch < 3; ++ch)
                    CHECK(stack.images[j][ch * n + p] > 0.5f);
            }
            double cover = static_cast<double>(cloudy) / n;
            CHECK(cover >= 0.10);
            CHECK(cover <= 0.50);
        }
    }
    fs::remove_all(base);
}

TEST_CASE("random_crop is in-bounds, deterministic, and rejects oversize") {
    const auto base = fs::temp_directory_path() / "cf_ds_crop";
    fs::remove_all(base);
    auto manifest = make_small_dataset(base, 17, 1, 2, 32);
    auto stack = load_stack(manifest, 0);

    auto a = random_crop(stack, 16, 77);
    auto b = random_crop(stack, 16, 77);
    auto c = random_crop(stack, 16, 78);
    CHECK(a.h == 16);
    CHECK(a.w == 16);
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);
    bool differs = a.images != c.images || a.labels != c.labels;
    CHECK(differs);

    CHECK_THROWS_AS(random_crop(stack, 64, 1), std::invalid_argument);
    fs::remove_all(base);
}

TEST_CASE("sample_k keeps original ordering and handles edge counts") {
    const auto base = fs::temp_directory_path() / "cf_ds_sample";
    fs::remove_all(base);
    auto manifest = make_small_dataset(base, 23, 1, 5, 32);
    auto stack = load_stack(manifest, 0);

    auto sub = sample_k(stack, 3, 9);
    CHECK(sub.images.size() == 3);
    CHECK(sub.masks.size() == 3);
    CHECK(sub.labels == stack.labels);

    // sampled images appear in their original relative order
    std::vector<std::size_t> positions;
    for (const auto& img : sub.images)
        for (std::size_t j = 0; j < stack.images.size(); ++j)
            if (stack.images[j] == img) positions.push_back(j);
    REQUIRE(positions.size() == 3);
    for (std::size_t i = 1; i < positions.size(); ++i)
        CHECK(positions[i] > positions[i - 1]);

    auto same = sample_k(stack, 3, 9);
    CHECK(same.images == sub.images);
    auto all = sample_k(stack, 5, 9);
    CHECK(all.images == stack.images);
    CHECK_THROWS_AS(sample_k(stack, 6, 9), std::invalid_argument);
    fs::remove_all(base);
}

TEST_CASE("value noise is seed-deterministic and bounded") {
    auto a = value_noise(32, 32, 4, 0.5, 101);
    auto b = value_noise(32, 32, 4, 0.5, 101);
    auto c = value_noise(32, 32, 4, 0.5, 102);
    CHECK(a == b);
    CHECK(a != c);
    for (float v : a) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}
