#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "stmae/tensor.hpp"

using namespace stmae;

TEST_CASE("resize is the identity at the source size") {
    std::mt19937_64 rng(1);
    Grid g(5, 7, 3);
    for (double& v : g.data) v = std::uniform_real_distribution<>(-1, 1)(rng);
    const Grid out = resize_bilinear(g, 5, 7);
    REQUIRE(out.data == g.data);
}

TEST_CASE("resize keeps constants constant") {
    Grid g(4, 4, 2, 3.25);
    const Grid out = resize_bilinear(g, 11, 7);
    for (double v : out.data) CHECK(v == doctest::Approx(3.25).epsilon(1e-12));
}

TEST_CASE("resize uses half-pixel sample centers with edge clamp") {
    // 1x2 row [0, 1] -> 1x4: source coords -0.25, 0.25, 0.75, 1.25 clamp to
    // values 0, 0.25, 0.75, 1.
    Grid g(1, 2, 1);
    g.at(0, 0, 0) = 0.0;
    g.at(0, 1, 0) = 1.0;
    const Grid out = resize_bilinear(g, 1, 4);
    CHECK(out.at(0, 0, 0) == doctest::Approx(0.0));
    CHECK(out.at(0, 1, 0) == doctest::Approx(0.25));
    CHECK(out.at(0, 2, 0) == doctest::Approx(0.75));
    CHECK(out.at(0, 3, 0) == doctest::Approx(1.0));
}

TEST_CASE("channel concatenation preserves order and widths") {
    Grid a(2, 2, 1, 1.0), b(2, 2, 2, 2.0);
    const Grid out = concat_channels({a, b});
    REQUIRE(out.c == 3);
    CHECK(out.at(1, 1, 0) == 1.0);
    CHECK(out.at(1, 1, 1) == 2.0);
    CHECK(out.at(1, 1, 2) == 2.0);
}

TEST_CASE("gaussian kernel is normalized and peaked as expected") {
    const auto k = gaussian_kernel(4.0, 16);
    REQUIRE(k.size() == 33);
    double sum = 0.0;
    for (double v : k) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    // 2-D impulse response center = (1-D center)^2 ~ 1/(2 pi sigma^2)
    const double center2d = k[16] * k[16];
    CHECK(center2d == doctest::Approx(1.0 / (2.0 * M_PI * 16.0)).epsilon(1e-3));
}

TEST_CASE("gaussian blur preserves constants exactly") {
    Grid g(16, 16, 1, 0.75);
    const Grid out = gaussian_blur(g, 4.0, 16);
    for (double v : out.data) CHECK(v == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("gaussian blur of a unit impulse reproduces the separable kernel") {
    Grid g(33, 33, 1, 0.0);
    g.at(16, 16, 0) = 1.0;
    const Grid out = gaussian_blur(g, 4.0, 16);
    const auto k = gaussian_kernel(4.0, 16);
    CHECK(out.at(16, 16, 0) == doctest::Approx(k[16] * k[16]).epsilon(1e-10));
    CHECK(out.at(16, 12, 0) == doctest::Approx(k[16] * k[12]).epsilon(1e-10));
}

TEST_CASE("seed derivation is a pure function and spreads bits") {
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) != derive_seed(2, 2));
}
