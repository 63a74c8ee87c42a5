#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "qlfb/conv.hpp"

using namespace qlfb;
using testing::conv_oracle;
using testing::max_abs_diff;
using testing::random_filter;
using testing::random_tensor;

namespace {

double weighted_sum(const Tensor3& y, const Tensor3& g) {
    double acc = 0.0;
    auto yv = y.values();
    auto gv = g.values();
    for (std::size_t i = 0; i < yv.size(); ++i) acc += yv[i] * gv[i];
    return acc;
}

double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) / (std::abs(analytic) + 1e-8);
}

}  // namespace

TEST_CASE("identity kernel reproduces the plane") {
    Rng rng(1);
    const Tensor3 plane = random_tensor(rng, 1, 5, 7);
    const Filter identity = Filter::from_weights(0, 0, {1.0});
    CHECK(max_abs_diff(convolve2d(plane, identity), plane) == 0.0);
}

TEST_CASE("all-ones 3x3 filter sums the neighbourhood") {
    const Tensor3 plane(1, 5, 5, 1.0);
    const Filter ones = Filter::from_weights(1, 1, std::vector<double>(9, 1.0));
    const Tensor3 out = convolve2d(plane, ones);
    for (int r = 1; r < 4; ++r)
        for (int s = 1; s < 4; ++s) CHECK(out.at(0, r, s) == 9.0);
    CHECK(out.at(0, 0, 0) == 4.0);  // corner sees a 2x2 neighbourhood
}

TEST_CASE("plus-shaped plane against the quadruple-loop oracle") {
    const Tensor3 plane = Tensor3::from_data(1, 3, 3, {0, 1, 0, 1, 1, 1, 0, 1, 0});
    const Filter ones = Filter::from_weights(1, 1, std::vector<double>(9, 1.0));
    const Tensor3 out = convolve2d(plane, ones);
    CHECK(out.at(0, 1, 1) == 5.0);
    const Tensor3 expect = conv_oracle(plane, ones);
    CHECK(max_abs_diff(out, expect) == 0.0);
}

TEST_CASE("convolve2d matches the oracle on random instances") {
    Rng rng(42);
    for (int i = 0; i < 200; ++i) {
        const int h = 1 + static_cast<int>(rng.uniform_index(9));
        const int w = 1 + static_cast<int>(rng.uniform_index(9));
        const int hh = static_cast<int>(rng.uniform_index(3));
        const int hw = static_cast<int>(rng.uniform_index(3));
        const Tensor3 plane = random_tensor(rng, 1, h, w);
        const Filter f = random_filter(rng, hh, hw);
        CHECK(max_abs_diff(convolve2d(plane, f), conv_oracle(plane, f)) < 1e-12);
    }
}

TEST_CASE("convolution is linear in the image") {
    Rng rng(7);
    for (int i = 0; i < 50; ++i) {
        const Tensor3 a = random_tensor(rng, 1, 6, 6);
        const Tensor3 b = random_tensor(rng, 1, 6, 6);
        const double ca = rng.uniform(-2.0, 2.0), cb = rng.uniform(-2.0, 2.0);
        const Filter f = random_filter(rng, 1, 1);
        Tensor3 mix(1, 6, 6);
        for (std::size_t k = 0; k < mix.size(); ++k) mix.values()[k] = ca * a.values()[k] + cb * b.values()[k];
        const Tensor3 lhs = convolve2d(mix, f);
        Tensor3 rhs = convolve2d(a, f);
        const Tensor3 rb = convolve2d(b, f);
        for (std::size_t k = 0; k < rhs.size(); ++k) rhs.values()[k] = ca * rhs.values()[k] + cb * rb.values()[k];
        CHECK(max_abs_diff(lhs, rhs) < 1e-12);
    }
}

TEST_CASE("conv_layer_forward composes single-plane convolutions") {
    SECTION("identity layer") {
        Rng rng(3);
        const Tensor3 x = random_tensor(rng, 1, 4, 4);
        ConvLayer layer(1, 1, 0, 0);
        layer.filter(0, 0).at(0, 0) = 1.0;
        CHECK(max_abs_diff(conv_layer_forward(x, layer), x) == 0.0);
    }
    SECTION("bias only") {
        const Tensor3 x(2, 3, 3, 0.5);
        ConvLayer layer(2, 1, 1, 1);
        layer.biases()[0] = 2.5;
        const Tensor3 y = conv_layer_forward(x, layer);
        for (double v : y.values()) CHECK(v == 2.5);
    }
    SECTION("two inputs sum their oracle convolutions plus bias") {
        Rng rng(9);
        const Tensor3 x = random_tensor(rng, 2, 5, 5);
        ConvLayer layer(2, 1, 1, 1);
        layer.filter(0, 0) = random_filter(rng, 1, 1);
        layer.filter(0, 1) = random_filter(rng, 1, 1);
        layer.biases()[0] = 0.25;

        Tensor3 plane0(1, 5, 5), plane1(1, 5, 5);
        std::copy(x.plane(0), x.plane(0) + x.plane_size(), plane0.plane(0));
        std::copy(x.plane(1), x.plane(1) + x.plane_size(), plane1.plane(0));
        const Tensor3 o0 = conv_oracle(plane0, layer.filter(0, 0));
        const Tensor3 o1 = conv_oracle(plane1, layer.filter(0, 1));

        const Tensor3 y = conv_layer_forward(x, layer);
        REQUIRE(y.channels() == 1);
        for (int r = 0; r < 5; ++r)
            for (int s = 0; s < 5; ++s)
                CHECK(std::abs(y.at(0, r, s) - (0.25 + o0.at(0, r, s) + o1.at(0, r, s))) < 1e-12);
    }
    SECTION("channel mismatch is a shape error") {
        const Tensor3 x(3, 4, 4, 0.0);
        const ConvLayer layer(2, 1, 1, 1);
        CHECK_THROWS_AS(conv_layer_forward(x, layer), ShapeError);
    }
}

TEST_CASE("relu and max pooling basics") {
    const Tensor3 x = Tensor3::from_data(1, 1, 3, {-1.0, 0.0, 2.0});
    const Tensor3 y = relu(x);
    CHECK(y.at(0, 0, 0) == 0.0);
    CHECK(y.at(0, 0, 1) == 0.0);
    CHECK(y.at(0, 0, 2) == 2.0);

    const Tensor3 p = Tensor3::from_data(1, 2, 2, {1, 2, 3, 4});
    const Tensor3 pooled = max_pool2d(p);
    REQUIRE(pooled.height() == 1);
    CHECK(pooled.at(0, 0, 0) == 4.0);

    const Tensor3 c(2, 4, 6, 0.7);
    const Tensor3 cp = max_pool2d(c);
    CHECK(cp.height() == 2);
    CHECK(cp.width() == 3);
    for (double v : cp.values()) CHECK(v == 0.7);

    const Tensor3 odd(1, 3, 4, 0.0);
    CHECK_THROWS_AS(max_pool2d(odd), ShapeError);
}

TEST_CASE("residual block forward") {
    SECTION("zero parameters act as relu") {
        Rng rng(13);
        Tensor3 x = random_tensor(rng, 2, 4, 4, 0.0, 1.0);  // non-negative input
        const ResidualBlock block = ResidualBlock::make(2, 2, 1, 1);
        const Tensor3 y = residual_block_forward(x, block);
        CHECK(max_abs_diff(y, relu(x)) == 0.0);
        CHECK(max_abs_diff(y, x) == 0.0);
    }
    SECTION("zero input with zero biases stays zero") {
        const Tensor3 x(3, 4, 4, 0.0);
        const ResidualBlock block = ResidualBlock::make(3, 5, 1, 1);
        const Tensor3 y = residual_block_forward(x, block);
        for (double v : y.values()) CHECK(v == 0.0);
    }
    SECTION("matches composition of layer forwards") {
        Rng rng(17);
        const Tensor3 x = random_tensor(rng, 1, 4, 4);
        ConvLayer a(1, 2, 1, 1), b(2, 1, 1, 1);
        for (int i = 0; i < 2; ++i) a.filter(i, 0) = random_filter(rng, 1, 1, -0.5, 0.5);
        for (int j = 0; j < 2; ++j) b.filter(0, j) = random_filter(rng, 1, 1, -0.5, 0.5);
        a.biases() = {0.1, -0.2};
        b.biases() = {0.05};
        const ResidualBlock block(a, b);

        Tensor3 expect = conv_layer_forward(relu(conv_layer_forward(x, a)), b);
        for (std::size_t k = 0; k < expect.size(); ++k) expect.values()[k] += x.values()[k];
        expect = relu(expect);

        CHECK(max_abs_diff(residual_block_forward(x, block), expect) < 1e-12);
    }
    SECTION("projection shape mismatch is rejected") {
        CHECK_THROWS_AS(ResidualBlock(ConvLayer(2, 3, 1, 1), ConvLayer(3, 4, 1, 1)), ShapeError);
    }
}

TEST_CASE("conv layer backward matches finite differences") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const int in = 1 + static_cast<int>(rng.uniform_index(3));
        const int out = 1 + static_cast<int>(rng.uniform_index(3));
        const int h = 2 + static_cast<int>(rng.uniform_index(4));
        const int w = 2 + static_cast<int>(rng.uniform_index(4));
        const Tensor3 x = random_tensor(rng, in, h, w);
        ConvLayer layer(in, out, 1, 1);
        for (int i = 0; i < out; ++i)
            for (int j = 0; j < in; ++j) layer.filter(i, j) = random_filter(rng, 1, 1, -0.5, 0.5);
        for (double& b : layer.biases()) b = rng.uniform(-0.5, 0.5);
        const Tensor3 g = random_tensor(rng, out, h, w);

        ConvLayerGrad grad;
        const Tensor3 dx = conv_layer_backward(x, layer, g, grad);

        const double eps = 1e-5;
        double worst = 0.0;
        // filter weights
        for (int i = 0; i < out; ++i)
            for (int j = 0; j < in; ++j)
                for (int u = -1; u <= 1; ++u)
                    for (int v = -1; v <= 1; ++v) {
                        ConvLayer pert = layer;
                        pert.filter(i, j).at(u, v) += eps;
                        const double up = weighted_sum(conv_layer_forward(x, pert), g);
                        pert.filter(i, j).at(u, v) -= 2 * eps;
                        const double dn = weighted_sum(conv_layer_forward(x, pert), g);
                        worst = std::max(worst, rel_err(grad.d_filters[static_cast<std::size_t>(i) * in + j].at(u, v),
                                                        (up - dn) / (2 * eps)));
                    }
        // biases
        for (int i = 0; i < out; ++i) {
            ConvLayer pert = layer;
            pert.biases()[static_cast<std::size_t>(i)] += eps;
            const double up = weighted_sum(conv_layer_forward(x, pert), g);
            pert.biases()[static_cast<std::size_t>(i)] -= 2 * eps;
            const double dn = weighted_sum(conv_layer_forward(x, pert), g);
            worst = std::max(worst, rel_err(grad.d_biases[static_cast<std::size_t>(i)], (up - dn) / (2 * eps)));
        }
        // a few input coordinates
        for (int k = 0; k < 6; ++k) {
            const int c = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(in)));
            const int r = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(h)));
            const int s = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(w)));
            Tensor3 xp = x;
            xp.at(c, r, s) += eps;
            const double up = weighted_sum(conv_layer_forward(xp, layer), g);
            xp.at(c, r, s) -= 2 * eps;
            const double dn = weighted_sum(conv_layer_forward(xp, layer), g);
            worst = std::max(worst, rel_err(dx.at(c, r, s), (up - dn) / (2 * eps)));
        }
        CHECK(worst < 1e-5);
    }
}

TEST_CASE("identity-kernel convolution passes the upstream gradient through") {
    Rng rng(29);
    const Tensor3 x = random_tensor(rng, 1, 4, 4);
    ConvLayer layer(1, 1, 0, 0);
    layer.filter(0, 0).at(0, 0) = 1.0;
    const Tensor3 g = random_tensor(rng, 1, 4, 4);
    ConvLayerGrad grad;
    const Tensor3 dx = conv_layer_backward(x, layer, g, grad);
    CHECK(max_abs_diff(dx, g) == 0.0);
}

TEST_CASE("relu backward gates negatives and zero") {
    const Tensor3 x = Tensor3::from_data(1, 1, 4, {-2.0, 0.0, 1e-12, 3.0});
    const Tensor3 g(1, 1, 4, 1.0);
    const Tensor3 dx = relu_backward(x, g);
    CHECK(dx.at(0, 0, 0) == 0.0);
    CHECK(dx.at(0, 0, 1) == 0.0);  // relu'(0) := 0
    CHECK(dx.at(0, 0, 2) == 1.0);
    CHECK(dx.at(0, 0, 3) == 1.0);
}

TEST_CASE("max pool backward routes gradient to the argmax") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor3 x = random_tensor(rng, 2, 4, 4);
        MaxPoolCtx ctx;
        const Tensor3 y = max_pool2d(x, &ctx);
        const Tensor3 g = random_tensor(rng, 2, 2, 2);
        const Tensor3 dx = max_pool2d_backward(ctx, g);

        const double eps = 1e-5;
        double worst = 0.0;
        for (int c = 0; c < 2; ++c)
            for (int r = 0; r < 4; ++r)
                for (int s = 0; s < 4; ++s) {
                    Tensor3 xp = x;
                    xp.at(c, r, s) += eps;
                    const double up = weighted_sum(max_pool2d(xp), g);
                    xp.at(c, r, s) -= 2 * eps;
                    const double dn = weighted_sum(max_pool2d(xp), g);
                    worst = std::max(worst, rel_err(dx.at(c, r, s), (up - dn) / (2 * eps)));
                }
        CHECK(worst < 1e-5);
        (void)y;
    }
}

TEST_CASE("backward before forward is a state error") {
    MaxPoolCtx pool_ctx;
    CHECK_THROWS_AS(max_pool2d_backward(pool_ctx, Tensor3(1, 1, 1, 0.0)), StateError);

    ResidualCtx res_ctx;
    ResidualGrad grad;
    const ResidualBlock block = ResidualBlock::make(1, 1, 1, 1);
    CHECK_THROWS_AS(residual_block_backward(block, res_ctx, Tensor3(1, 2, 2, 0.0), grad), StateError);
}

TEST_CASE("residual block backward matches finite differences") {
    Rng rng(37);
    for (int trial = 0; trial < 10; ++trial) {
        const int in = 1 + static_cast<int>(rng.uniform_index(2));
        const int out = 1 + static_cast<int>(rng.uniform_index(3));
        const Tensor3 x = random_tensor(rng, in, 4, 4);
        ResidualBlock block = ResidualBlock::make(in, out, 1, 1);
        auto randomize = [&rng](ConvLayer& l) {
            for (int i = 0; i < l.out_maps(); ++i)
                for (int j = 0; j < l.in_maps(); ++j)
                    l.filter(i, j) = random_filter(rng, l.half_h(), l.half_w(), -0.4, 0.4);
            for (double& b : l.biases()) b = rng.uniform(-0.3, 0.3);
        };
        randomize(block.conv_a());
        randomize(block.conv_b());
        if (block.projection()) randomize(*block.projection());

        ResidualCtx ctx;
        const Tensor3 y = residual_block_forward(x, block, &ctx);
        const Tensor3 g = random_tensor(rng, out, 4, 4);
        ResidualGrad grad;
        const Tensor3 dx = residual_block_backward(block, ctx, g, grad);

        const double eps = 1e-5;
        double worst = 0.0;
        for (int k = 0; k < 10; ++k) {
            const int c = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(in)));
            const int r = static_cast<int>(rng.uniform_index(4));
            const int s = static_cast<int>(rng.uniform_index(4));
            Tensor3 xp = x;
            xp.at(c, r, s) += eps;
            const double up = weighted_sum(residual_block_forward(xp, block), g);
            xp.at(c, r, s) -= 2 * eps;
            const double dn = weighted_sum(residual_block_forward(xp, block), g);
            worst = std::max(worst, rel_err(dx.at(c, r, s), (up - dn) / (2 * eps)));
        }
        // a few conv_a weights
        for (int k = 0; k < 5; ++k) {
            const int i = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(block.conv_a().out_maps())));
            const int j = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(in)));
            const int u = static_cast<int>(rng.uniform_index(3)) - 1;
            const int v = static_cast<int>(rng.uniform_index(3)) - 1;
            ResidualBlock pert = block;
            pert.conv_a().filter(i, j).at(u, v) += eps;
            const double up = weighted_sum(residual_block_forward(x, pert), g);
            pert.conv_a().filter(i, j).at(u, v) -= 2 * eps;
            const double dn = weighted_sum(residual_block_forward(x, pert), g);
            worst = std::max(worst,
                             rel_err(grad.conv_a.d_filters[static_cast<std::size_t>(i) * in + j].at(u, v),
                                     (up - dn) / (2 * eps)));
        }
        (void)y;
        CHECK(worst < 1e-5);
    }
}
