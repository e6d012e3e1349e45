#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "cloudfuse/checkpoint.hpp"
#include "cloudfuse/rng.hpp"

using namespace cloudfuse;

namespace {
std::string tmp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}
} // namespace

TEST_CASE("FTZ round-trip is bit-exact") {
    Rng rng(5);
    std::vector<FtzEntry> entries;
    entries.push_back({"a.weight", {2, 3}, {}});
    entries.push_back({"a.bias", {3}, {}});
    entries.push_back({"nested.name.with.dots", {1, 2, 2, 2}, {}});
    for (auto& e : entries) {
        std::size_t n = 1;
        for (int d : e.shape) n *= d;
        e.values.resize(n);
        for (auto& v : e.values) v = static_cast<float>(rng.normal());
    }

    const auto path = tmp_path("ftz_roundtrip.ftz");
    save_ftz(path, entries);
    auto loaded = load_ftz(path);
    REQUIRE(loaded.size() == entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        CHECK(loaded[i].name == entries[i].name);
        CHECK(loaded[i].shape == entries[i].shape);
        // bitwise, not approximate
        REQUIRE(loaded[i].values.size() == entries[i].values.size());
        for (std::size_t j = 0; j < entries[i].values.size(); ++j) {
            float a = loaded[i].values[j], b = entries[i].values[j];
            CHECK(std::memcmp(&a, &b, sizeof(float)) == 0);
        }
    }

    // re-saving the loaded entries is byte-identical
    const auto path2 = tmp_path("ftz_roundtrip2.ftz");
    save_ftz(path2, loaded);
    CHECK(slurp(path) == slurp(path2));
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("FTZ header layout matches the format spec") {
    const auto path = tmp_path("ftz_header.ftz");
    save_ftz(path, {{"ab", {2}, {1.0f, 2.0f}}});
    auto bytes = slurp(path);
    // magic, version=1, count=1
    REQUIRE(bytes.size() == 4 + 4 + 4 + 2 + 2 + 1 + 4 + 1 + 8);
    CHECK(std::string(bytes.data(), 4) == "FTEN");
    CHECK(bytes[4] == 1);
    CHECK(bytes[8] == 1);
    CHECK(bytes[12] == 2); // name length u16 LE
    CHECK(bytes[14] == 'a');
    CHECK(bytes[15] == 'b');
    CHECK(bytes[16] == 1); // rank
    CHECK(bytes[17] == 2); // dim u32 LE
    CHECK(bytes[21] == 0); // dtype f32
    std::remove(path.c_str());
}

TEST_CASE("FTZ rejects corrupt input") {
    const auto path = tmp_path("ftz_bad.ftz");
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE";
    }
    CHECK_THROWS_WITH_AS(load_ftz(path), doctest::Contains("magic"), std::runtime_error);
    CHECK_THROWS_AS(load_ftz(tmp_path("does_not_exist.ftz")), std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("load_into restores named parameters and validates shape") {
    auto t = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
    const auto path = tmp_path("ftz_params.ftz");
    save_ftz(path, to_entries({{"p", t}}));
    auto fresh = Tensor::create({2, 2}, true);
    load_into(path, {{"p", fresh}});
    CHECK(fresh->data == t->data);

    auto wrong = Tensor::create({4}, true);
    CHECK_THROWS_AS(load_into(path, {{"p", wrong}}), std::runtime_error);
    CHECK_THROWS_AS(load_into(path, {{"missing", fresh}}), std::runtime_error);
    std::remove(path.c_str());
}
