#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "cloudfuse/fusion.hpp"
#include "cloudfuse/rng.hpp"
#include "golden_fixtures.hpp"

using namespace cloudfuse;
namespace fs = std::filesystem;

namespace {
ImageStack random_stack(int k, int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    ImageStack stack;
    stack.h = h;
    stack.w = w;
    const int n = h * w;
    for (int j = 0; j < k; ++j) {
        std::vector<float> img(3 * n);
        for (auto& v : img) v = static_cast<float>(rng.uniform());
        stack.images.push_back(std::move(img));
        stack.masks.emplace_back(n, 0);
    }
    stack.labels.assign(n, 0);
    return stack;
}
} // namespace

TEST_CASE("fusing a single image reproduces it exactly") {
    QualityNet net(3);
    auto stack = random_stack(1, 16, 16, 5);
    auto result = fuse(stack, net);
    REQUIRE(result.relative.size() == 1);
    for (float w : result.relative[0]->data) CHECK(w == doctest::Approx(1.0).epsilon(1e-6));
    for (std::size_t i = 0; i < stack.images[0].size(); ++i)
        CHECK(result.fused->data[i] == doctest::Approx(stack.images[0][i]).epsilon(1e-5));
}

TEST_CASE("identical inputs fuse to the common image with uniform weights") {
    QualityNet net(3);
    auto stack = random_stack(1, 16, 16, 7);
    stack.images.push_back(stack.images[0]);
    stack.masks.push_back(stack.masks[0]);
    auto result = fuse(stack, net);
    for (const auto& rel : result.relative)
        for (float w : rel->data) CHECK(w == doctest::Approx(0.5).epsilon(1e-5));
    for (std::size_t i = 0; i < stack.images[0].size(); ++i)
        CHECK(result.fused->data[i] == doctest::Approx(stack.images[0][i]).epsilon(1e-5));
}

TEST_CASE("fusion weights sum to one and stay within the sigmoid envelope") {
    QualityNet net(17);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto stack = random_stack(4, 16, 16, 100 + seed);
        auto result = fuse(stack, net);
        const int n = stack.h * stack.w;
        for (int p = 0; p < n; ++p) {
            double sum = 0.0;
            float wmin = 1.0f, wmax = 0.0f;
            double fmin = 1e9, fmax = -1e9;
            for (int j = 0; j < 4; ++j) {
                float w = result.relative[j]->data[p];
                sum += w;
                wmin = std::min(wmin, w);
                wmax = std::max(wmax, w);
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
            // quality nets end in a sigmoid, so logits span at most 1
            // and no weight ratio can exceed e
            CHECK(wmax / wmin <= std::exp(1.0) * (1.0 + 1e-5));
            for (int ch = 0; ch < 3; ++ch) {
                double fused = result.fused->data[ch * n + p];
                fmin = 1e9;
                fmax = -1e9;
                for (int j = 0; j < 4; ++j) {
                    double v = stack.images[j][ch * n + p];
                    fmin = std::min(fmin, v);
                    fmax = std::max(fmax, v);
                }
                CHECK(fused >= fmin - 1e-5);
                CHECK(fused <= fmax + 1e-5);
            }
        }
    }
}

TEST_CASE("fuse rejects empty stacks and mismatched shapes") {
    QualityNet net(1);
    ImageStack empty;
    empty.h = empty.w = 16;
    CHECK_THROWS_AS(fuse(empty, net), std::invalid_argument);

    auto stack = random_stack(2, 16, 16, 3);
    stack.images[1].resize(3 * 16 * 12);
    stack.w = 16;
    CHECK_THROWS_AS(fuse(stack, net), std::invalid_argument);
}

TEST_CASE("gradients flow from the fused loss back into the quality net") {
    QualityNet net(9);
    auto stack = random_stack(3, 16, 16, 11);
    // make the images differ strongly so the fused output depends on weights
    for (auto& v : stack.images[0]) v = 0.05f;
    for (auto& v : stack.images[1]) v = 0.95f;
    auto result = fuse(stack, net);
    auto loss = sum_all(result.fused);
    backward(loss);
    bool any_nonzero = false;
    for (const auto& p : net.parameters())
        for (float g : p.tensor->grad)
            if (g != 0.0f) any_nonzero = true;
    CHECK(any_nonzero);
}

TEST_CASE("end-to-end training runs, logs, and is a no-op at lr zero") {
    const auto base = fs::temp_directory_path() / "cf_train_test";
    fs::remove_all(base);
    SceneRecipe recipe;
    recipe.seed = 3;
    recipe.image_size = 32;
    recipe.k = 3;
    auto manifest = generate_dataset(recipe, 2, (base / "data").string());

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 2;
    cfg.crop = 16;
    cfg.images_per_location = 2;
    cfg.seed = 42;

    auto result = train_fusion(manifest, cfg, (base / "run").string());
    CHECK(result.epoch_losses.size() == 2);
    for (double l : result.epoch_losses) CHECK(std::isfinite(l));
    CHECK(fs::exists(result.quality_checkpoint));
    CHECK(fs::exists(result.seg_checkpoint));
    CHECK(fs::exists(result.loss_log));

    // lr = 0 must leave the initial weights bitwise intact
    TrainConfig frozen = cfg;
    frozen.lr = 0.0f;
    train_fusion(manifest, frozen, (base / "run0").string());
    auto trained = QualityNet::load((base / "run0" / "quality_last.ftz").string());
    QualityNet fresh(mix_seed(cfg.seed, 1));
    auto pa = trained.parameters(), pb = fresh.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i)
        CHECK(pa[i].tensor->data == pb[i].tensor->data);
    fs::remove_all(base);
}

TEST_CASE("training is byte-deterministic for a fixed seed") {
    const auto base = fs::temp_directory_path() / "cf_train_det";
    fs::remove_all(base);
    SceneRecipe recipe;
    recipe.seed = 4;
    recipe.image_size = 32;
    recipe.k = 3;
    auto manifest = generate_dataset(recipe, 2, (base / "data").string());

    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 2;
    cfg.crop = 16;
    cfg.images_per_location = 2;

    auto r1 = train_fusion(manifest, cfg, (base / "a").string());
    auto r2 = train_fusion(manifest, cfg, (base / "b").string());
    CHECK(r1.epoch_losses == r2.epoch_losses);
    auto n1 = QualityNet::load(r1.quality_checkpoint);
    auto n2 = QualityNet::load(r2.quality_checkpoint);
    auto pa = n1.parameters(), pb = n2.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i)
        CHECK(pa[i].tensor->data == pb[i].tensor->data);
    fs::remove_all(base);
}

TEST_CASE("export emits one mask per image plus the fused composite") {
    const auto dir = fs::temp_directory_path() / "cf_export_test";
    fs::remove_all(dir);
    QualityNet net(5);
    auto stack = random_stack(3, 16, 16, 21);
    stack.id = "loc_0000";
    auto paths = export_quality(stack, net, dir.string());
    CHECK(paths.size() == 4);
    for (const auto& p : paths) CHECK(fs::exists(p));
    int pgm = 0, ppm = 0;
    for (const auto& p : paths) {
        if (p.size() > 4 && p.substr(p.size() - 4) == ".pgm") ++pgm;
        if (p.size() > 4 && p.substr(p.size() - 4) == ".ppm") ++ppm;
    }
    CHECK(pgm == 3);
    CHECK(ppm == 1);
    fs::remove_all(dir);
}

TEST_CASE("export output matches the frozen golden files byte for byte") {
    const auto dir = fs::temp_directory_path() / "cf_export_golden";
    fs::remove_all(dir);
    QualityNet net(golden::kQualitySeed);
    auto paths = export_quality(golden::input_stack(), net, dir.string());
    REQUIRE(paths.size() == 3);
    for (const auto& p : paths) {
        auto name = fs::path(p).filename();
        std::ifstream fresh(p, std::ios::binary);
        std::ifstream frozen(fs::path(CLOUDFUSE_GOLDEN_DIR) / "export" / name,
                             std::ios::binary);
        REQUIRE(frozen.good());
        std::string a((std::istreambuf_iterator<char>(fresh)), std::istreambuf_iterator<char>());
        std::string b((std::istreambuf_iterator<char>(frozen)), std::istreambuf_iterator<char>());
        CHECK(a == b);
    }
    fs::remove_all(dir);
}

TEST_CASE("train config validation rejects nonsense") {
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.batch_size = -1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.crop = 13; // not divisible by 4
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
