#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "qlfb/tensor.hpp"

using namespace qlfb;

TEST_CASE("tensor_new fills and validates dimensions") {
    const Tensor3 z = tensor_new(1, 2, 2, 0.0);
    for (double v : z.values()) CHECK(v == 0.0);

    const Tensor3 ones = tensor_new(3, 2, 2, 1.0);
    CHECK(ones.size() == 12);
    for (double v : ones.values()) CHECK(v == 1.0);

    CHECK_THROWS_AS(tensor_new(1, 0, 2, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(tensor_new(0, 2, 2, 0.0), std::invalid_argument);
}

TEST_CASE("channel_select copies planes in RGB order") {
    Rng rng(11);
    const Tensor3 img = testing::random_tensor(rng, 3, 4, 5, 0.0, 1.0);

    SECTION("full mask is the identity") {
        const Tensor3 same = channel_select(img, ChannelMask::rgb());
        CHECK(testing::max_abs_diff(img, same) == 0.0);
    }
    SECTION("single channel projection") {
        const Tensor3 red = channel_select(img, ChannelMask::r());
        REQUIRE(red.channels() == 1);
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x) CHECK(red.at(0, y, x) == img.at(0, y, x));
    }
    SECTION("rg keeps both planes") {
        const Tensor3 rg = channel_select(img, ChannelMask::rg());
        REQUIRE(rg.channels() == 2);
        CHECK(rg.at(1, 2, 3) == img.at(1, 2, 3));
    }
    SECTION("non-3-channel input is rejected") {
        const Tensor3 single(1, 4, 5, 0.0);
        CHECK_THROWS_AS(channel_select(single, ChannelMask::rg()), ShapeError);
    }
}

TEST_CASE("channel mask parsing") {
    CHECK(ChannelMask::parse("r").name() == "r");
    CHECK(ChannelMask::parse("rg").name() == "rg");
    CHECK(ChannelMask::parse("rgb").name() == "rgb");
    CHECK(ChannelMask::parse("gb").count() == 2);
    CHECK_THROWS_AS(ChannelMask::parse(""), std::invalid_argument);
    CHECK_THROWS_AS(ChannelMask::parse("x"), std::invalid_argument);
    CHECK_THROWS_AS(ChannelMask::parse("gr"), std::invalid_argument);
    CHECK_THROWS_AS(ChannelMask::parse("rr"), std::invalid_argument);
}

TEST_CASE("normalize maps raw range to unit interval") {
    const Tensor3 zeros(1, 3, 3, 0.0);
    const Tensor3 z = normalize(zeros, 255.0);
    for (double v : z.values()) CHECK(v == 0.0);

    const Tensor3 full(2, 2, 2, 255.0);
    const Tensor3 f = normalize(full, 255.0);
    for (double v : f.values()) CHECK(v == 1.0);

    Tensor3 bad(1, 1, 1, 256.0);
    CHECK_THROWS_AS(normalize(bad, 255.0), std::range_error);
    CHECK_THROWS_AS(normalize(zeros, 0.0), std::invalid_argument);
}

TEST_CASE("normalize is monotone") {
    Rng rng(5);
    Tensor3 a = testing::random_tensor(rng, 1, 6, 6, 0.0, 255.0);
    Tensor3 b = a;
    for (double& v : b.values()) v = std::min(255.0, v + rng.uniform(0.0, 10.0));
    const Tensor3 na = normalize(a), nb = normalize(b);
    auto av = na.values();
    auto bv = nb.values();
    for (std::size_t i = 0; i < av.size(); ++i) CHECK(av[i] <= bv[i]);
}

TEST_CASE("flatten follows channel-major layout and round-trips") {
    const Tensor3 t = Tensor3::from_data(1, 2, 2, {1, 2, 3, 4});
    CHECK(flatten(t) == std::vector<double>{1, 2, 3, 4});

    const Tensor3 rgb = Tensor3::from_data(3, 1, 1, {0.3, 0.6, 0.9});
    CHECK(flatten(rgb) == std::vector<double>{0.3, 0.6, 0.9});

    Rng rng(7);
    for (int i = 0; i < 20; ++i) {
        const int c = 1 + static_cast<int>(rng.uniform_index(4));
        const int h = 1 + static_cast<int>(rng.uniform_index(6));
        const int w = 1 + static_cast<int>(rng.uniform_index(6));
        const Tensor3 x = testing::random_tensor(rng, c, h, w);
        const Tensor3 back = reshape(flatten(x), c, h, w);
        CHECK(testing::max_abs_diff(x, back) == 0.0);
    }
}
