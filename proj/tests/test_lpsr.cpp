#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "stmae/lpsr.hpp"

using namespace stmae;

namespace {
Grid test_image(int size, double seed_scale = 1.0) {
    Grid raw(size, size, 3);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c)
                raw.at(y, x, c) = std::fmod(seed_scale * (y * 31 + x * 7 + c * 101), 256.0);
    return raw;
}
}  // namespace

TEST_CASE("normalization maps 255*mean to zero and 255 to (1-mean)/std") {
    NormalizeStats stats;
    Grid raw(2, 2, 3);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 4; ++i) raw.at(i / 2, i % 2, c) = 255.0 * stats.mean[c];
    ImageTensor t = normalize_image(raw, stats);
    for (double v : t.data.data) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

    Grid white(1, 1, 3, 255.0);
    t = normalize_image(white, stats);
    CHECK(t.data.at(0, 0, 0) == doctest::Approx((1.0 - 0.485) / 0.229));  // ~2.249
    CHECK(t.data.at(0, 0, 0) == doctest::Approx(2.249).epsilon(1e-3));
}

TEST_CASE("normalization rejects wrong channel counts and keeps shape") {
    CHECK_THROWS_AS(normalize_image(Grid(4, 4, 1), NormalizeStats{}), InvalidInput);
    const ImageTensor t = normalize_image(Grid(256, 256, 3, 10.0), NormalizeStats{});
    CHECK(t.data.h == 256);
    CHECK(t.data.w == 256);
    CHECK(t.data.c == 3);
}

TEST_CASE("vgg19 exposes four taps with widths 64/128/256/512 totalling 960") {
    Backbone bb({.name = "vgg19", .weights = "random:1", .taps = {1, 2, 3, 4}});
    REQUIRE(bb.tap_channels() == std::vector<int>{64, 128, 256, 512});
    int total = 0;
    for (int c : bb.tap_channels()) total += c;
    CHECK(total == 960);

    const ImageTensor img = normalize_image(test_image(64), NormalizeStats{});
    const HierarchicalFeatures f = bb.extract(img);
    REQUIRE(f.levels.size() == 4);
    for (std::size_t i = 1; i < f.levels.size(); ++i) {
        CHECK(f.levels[i].h <= f.levels[i - 1].h);  // spatially non-increasing
        CHECK(f.levels[i].w <= f.levels[i - 1].w);
    }
}

TEST_CASE("extraction is deterministic and the weights stay frozen") {
    Backbone bb({.name = "vgg19", .weights = "random:7", .taps = {1, 2}});
    const ImageTensor img = normalize_image(test_image(32), NormalizeStats{});
    const std::uint64_t digest = bb.weights_digest();
    const HierarchicalFeatures a = bb.extract(img);
    const HierarchicalFeatures b = bb.extract(img);
    REQUIRE(a.levels.size() == b.levels.size());
    for (std::size_t i = 0; i < a.levels.size(); ++i)
        CHECK(a.levels[i].data == b.levels[i].data);  // bitwise
    CHECK(bb.weights_digest() == digest);
}

TEST_CASE("resnet and mobilenet tap widths follow their stage definitions") {
    Backbone r34({.name = "resnet34", .weights = "random:1", .taps = {1, 2, 3, 4}});
    CHECK(r34.tap_channels() == std::vector<int>{64, 128, 256, 512});
    Backbone r50({.name = "resnet50", .weights = "random:1", .taps = {1, 2, 3, 4}});
    CHECK(r50.tap_channels() == std::vector<int>{256, 512, 1024, 2048});
    Backbone mnv2({.name = "mobilenetv2", .weights = "random:1", .taps = {1, 2, 3, 4}});
    CHECK(mnv2.tap_channels() == std::vector<int>{16, 24, 32, 64});
}

TEST_CASE("pixel backbone passes the normalized image through") {
    Backbone px({.name = "pixel", .weights = "random", .taps = {1}});
    CHECK(px.tap_channels() == std::vector<int>{3});
    const ImageTensor img = normalize_image(test_image(16), NormalizeStats{});
    const HierarchicalFeatures f = px.extract(img);
    REQUIRE(f.levels.size() == 1);
    CHECK(f.levels[0].data == img.data.data);
}

TEST_CASE("fusion concatenates interpolated levels; width = sum of tap widths") {
    Backbone bb({.name = "vgg19", .weights = "random:3", .taps = {1, 2}});
    const ImageTensor img = normalize_image(test_image(64), NormalizeStats{});
    const Grid pfdf = fuse_pfdf(bb.extract(img), 16, 16);
    CHECK(pfdf.h == 16);
    CHECK(pfdf.w == 16);
    CHECK(pfdf.c == 64 + 128);
}

TEST_CASE("fusing a single level already at target size is verbatim") {
    HierarchicalFeatures f;
    Grid level(8, 8, 5);
    for (std::size_t i = 0; i < level.data.size(); ++i) level.data[i] = 0.1 * i;
    f.levels.push_back(level);
    f.tap_ids.push_back(1);
    const Grid pfdf = fuse_pfdf(f, 8, 8);
    CHECK(pfdf.data == level.data);
}

TEST_CASE("restricting taps changes only the channel count, never H x W") {
    const ImageTensor img = normalize_image(test_image(64), NormalizeStats{});
    Backbone shallow({.name = "vgg19", .weights = "random:2", .taps = {1, 2}});
    Backbone deep({.name = "vgg19", .weights = "random:2", .taps = {3, 4}});
    const Grid a = fuse_pfdf(shallow.extract(img), 16, 16);
    const Grid b = fuse_pfdf(deep.extract(img), 16, 16);
    CHECK(a.h == b.h);
    CHECK(a.w == b.w);
    CHECK(a.c == 192);
    CHECK(b.c == 768);
}

TEST_CASE("unknown backbone or missing weights file fail loudly") {
    CHECK_THROWS_AS(Backbone({.name = "alexnet", .weights = "random", .taps = {1}}), ConfigError);
    CHECK_THROWS_AS(Backbone({.name = "vgg19", .weights = "/no/such/file.stmw", .taps = {1}}),
                    IoError);
    CHECK_THROWS_AS(Backbone({.name = "vgg19", .weights = "random", .taps = {5}}), ConfigError);
}
