#pragma once

#include <cstring>
#include <optional>
#include <utility>
#include <vector>

#include "qlfb/tensor.hpp"

namespace qlfb {

// Odd-sided kernel addressed by offsets u in [-half_h, half_h],
// v in [-half_w, half_w].
class Filter {
public:
    Filter() = default;

    Filter(int half_h, int half_w, double fill = 0.0) : half_h_(half_h), half_w_(half_w) {
        if (half_h < 0 || half_w < 0) throw std::invalid_argument("Filter: negative half size");
        weights_.assign(static_cast<std::size_t>(kh()) * kw(), fill);
    }

    static Filter from_weights(int half_h, int half_w, std::vector<double> w) {
        Filter f(half_h, half_w);
        if (w.size() != f.weights_.size()) throw ShapeError("Filter: weight count does not match kernel size");
        f.weights_ = std::move(w);
        return f;
    }

    int half_h() const { return half_h_; }
    int half_w() const { return half_w_; }
    int kh() const { return 2 * half_h_ + 1; }
    int kw() const { return 2 * half_w_ + 1; }

    double& at(int u, int v) { return weights_[static_cast<std::size_t>(u + half_h_) * kw() + (v + half_w_)]; }
    double at(int u, int v) const { return weights_[static_cast<std::size_t>(u + half_h_) * kw() + (v + half_w_)]; }

    std::vector<double>& weights() { return weights_; }
    const std::vector<double>& weights() const { return weights_; }

    Filter flipped() const {
        Filter f(half_h_, half_w_);
        for (int u = -half_h_; u <= half_h_; ++u)
            for (int v = -half_w_; v <= half_w_; ++v) f.at(u, v) = at(-u, -v);
        return f;
    }

private:
    int half_h_ = 0;
    int half_w_ = 0;
    std::vector<double> weights_;
};

namespace detail {

// One zero-padded plane per input map, h + 2*half_h rows by w + 2*half_w
// columns, stored contiguously.
struct PaddedPlanes {
    int maps = 0, h = 0, w = 0, half_h = 0, half_w = 0;
    std::vector<double> buf;

    int ph() const { return h + 2 * half_h; }
    int pw() const { return w + 2 * half_w; }

    const double* row(int map, int r) const {
        return buf.data() + (static_cast<std::size_t>(map) * ph() + r) * pw();
    }
};

inline PaddedPlanes pad_planes(const Tensor3& x, int half_h, int half_w) {
    PaddedPlanes p;
    p.maps = x.channels();
    p.h = x.height();
    p.w = x.width();
    p.half_h = half_h;
    p.half_w = half_w;
    p.buf.assign(static_cast<std::size_t>(p.maps) * p.ph() * p.pw(), 0.0);
    for (int m = 0; m < p.maps; ++m) {
        const double* src = x.plane(m);
        for (int r = 0; r < p.h; ++r) {
            double* dst = p.buf.data() + (static_cast<std::size_t>(m) * p.ph() + r + half_h) * p.pw() + half_w;
            std::memcpy(dst, src + static_cast<std::size_t>(r) * p.w, sizeof(double) * p.w);
        }
    }
    return p;
}

// out(r,s) += sum_{u,v} K(u,v) * I(r+u, s+v) over a zero-padded plane.
// The s loop runs over contiguous memory in both source and destination.
inline void correlate_accum(const PaddedPlanes& p, int map, const Filter& f, double* out) {
    const int kh = f.kh(), kw = f.kw(), w = p.w, pw = p.pw();
    const double* weights = f.weights().data();
    for (int r = 0; r < p.h; ++r) {
        double* orow = out + static_cast<std::size_t>(r) * w;
        for (int u = 0; u < kh; ++u) {
            const double* prow = p.row(map, r + u);
            for (int v = 0; v < kw; ++v) {
                const double k = weights[static_cast<std::size_t>(u) * kw + v];
                if (k == 0.0) continue;
                const double* in = prow + v;
                for (int s = 0; s < w; ++s) orow[s] += k * in[s];
            }
        }
        (void)pw;
    }
}

// dK(u,v) = sum_{r,s} g(r,s) * I(r+u, s+v), accumulated into f_grad.
inline void correlate_weight_grad(const PaddedPlanes& p, int map, const double* g, Filter& f_grad) {
    const int kh = f_grad.kh(), kw = f_grad.kw(), w = p.w;
    double* wg = f_grad.weights().data();
    for (int u = 0; u < kh; ++u) {
        for (int v = 0; v < kw; ++v) {
            double acc = 0.0;
            for (int r = 0; r < p.h; ++r) {
                const double* in = p.row(map, r + u) + v;
                const double* grow = g + static_cast<std::size_t>(r) * w;
                for (int s = 0; s < w; ++s) acc += grow[s] * in[s];
            }
            wg[static_cast<std::size_t>(u) * kw + v] += acc;
        }
    }
}

}  // namespace detail

// Discrete convolution with zero padding and same-size output:
// out(r,s) = sum_{u=-h1..h1} sum_{v=-h2..h2} K(u,v) * I(r+u, s+v).
inline Tensor3 convolve2d(const Tensor3& plane, const Filter& filter) {
    if (plane.channels() != 1) throw ShapeError("convolve2d: expected a single-plane tensor");
    Tensor3 out(1, plane.height(), plane.width(), 0.0);
    const detail::PaddedPlanes p = detail::pad_planes(plane, filter.half_h(), filter.half_w());
    detail::correlate_accum(p, 0, filter, out.plane(0));
    return out;
}

// Learnable filter bank: out_maps x in_maps filters sharing one kernel size,
// plus one bias per output map (broadcast as a constant plane).
class ConvLayer {
public:
    ConvLayer() = default;

    ConvLayer(int in_maps, int out_maps, int half_h, int half_w)
        : in_maps_(in_maps), out_maps_(out_maps), half_h_(half_h), half_w_(half_w) {
        if (in_maps < 1 || out_maps < 1) throw std::invalid_argument("ConvLayer: map counts must be >= 1");
        filters_.assign(static_cast<std::size_t>(in_maps) * out_maps, Filter(half_h, half_w, 0.0));
        biases_.assign(static_cast<std::size_t>(out_maps), 0.0);
    }

    int in_maps() const { return in_maps_; }
    int out_maps() const { return out_maps_; }
    int half_h() const { return half_h_; }
    int half_w() const { return half_w_; }

    Filter& filter(int out_map, int in_map) { return filters_[static_cast<std::size_t>(out_map) * in_maps_ + in_map]; }
    const Filter& filter(int out_map, int in_map) const {
        return filters_[static_cast<std::size_t>(out_map) * in_maps_ + in_map];
    }

    std::vector<double>& biases() { return biases_; }
    const std::vector<double>& biases() const { return biases_; }

    std::size_t param_count() const {
        return static_cast<std::size_t>(in_maps_) * out_maps_ * (2 * half_h_ + 1) * (2 * half_w_ + 1) + out_maps_;
    }

private:
    int in_maps_ = 0, out_maps_ = 0, half_h_ = 0, half_w_ = 0;
    std::vector<Filter> filters_;  // [out_map * in_maps + in_map]
    std::vector<double> biases_;
};

struct ConvLayerGrad {
    std::vector<Filter> d_filters;  // same indexing as ConvLayer
    std::vector<double> d_biases;
};

// Y_i = B_i + sum_j K_{i,j} * X_j, each term a zero-padded convolution.
inline Tensor3 conv_layer_forward(const Tensor3& inputs, const ConvLayer& layer) {
    if (inputs.channels() != layer.in_maps())
        throw ShapeError("conv_layer_forward: input has " + std::to_string(inputs.channels()) +
                         " maps, layer expects " + std::to_string(layer.in_maps()));
    Tensor3 out(layer.out_maps(), inputs.height(), inputs.width());
    const detail::PaddedPlanes p = detail::pad_planes(inputs, layer.half_h(), layer.half_w());
    for (int i = 0; i < layer.out_maps(); ++i) {
        double* plane = out.plane(i);
        const double b = layer.biases()[static_cast<std::size_t>(i)];
        std::fill(plane, plane + out.plane_size(), b);
        for (int j = 0; j < layer.in_maps(); ++j) detail::correlate_accum(p, j, layer.filter(i, j), plane);
    }
    return out;
}

// Gradients of the layer map given its forward input and the upstream
// gradient on the outputs. Returns d(inputs) and accumulates into `grad`.
inline Tensor3 conv_layer_backward(const Tensor3& inputs, const ConvLayer& layer, const Tensor3& upstream,
                                   ConvLayerGrad& grad) {
    if (inputs.channels() != layer.in_maps()) throw ShapeError("conv_layer_backward: input map mismatch");
    if (upstream.channels() != layer.out_maps() || upstream.height() != inputs.height() ||
        upstream.width() != inputs.width())
        throw ShapeError("conv_layer_backward: upstream shape mismatch");
    if (grad.d_filters.empty()) {
        grad.d_filters.assign(static_cast<std::size_t>(layer.in_maps()) * layer.out_maps(),
                              Filter(layer.half_h(), layer.half_w(), 0.0));
        grad.d_biases.assign(static_cast<std::size_t>(layer.out_maps()), 0.0);
    }

    const detail::PaddedPlanes px = detail::pad_planes(inputs, layer.half_h(), layer.half_w());
    const detail::PaddedPlanes pg = detail::pad_planes(upstream, layer.half_h(), layer.half_w());

    Tensor3 d_input(layer.in_maps(), inputs.height(), inputs.width(), 0.0);
    for (int i = 0; i < layer.out_maps(); ++i) {
        const double* g = upstream.plane(i);
        double acc = 0.0;
        for (std::size_t k = 0; k < upstream.plane_size(); ++k) acc += g[k];
        grad.d_biases[static_cast<std::size_t>(i)] += acc;
        for (int j = 0; j < layer.in_maps(); ++j) {
            // dX_j += g_i (*) flip(K_{i,j});  dK_{i,j} += corr(X_j, g_i)
            detail::correlate_accum(pg, i, layer.filter(i, j).flipped(), d_input.plane(j));
            detail::correlate_weight_grad(px, j, g, grad.d_filters[static_cast<std::size_t>(i) * layer.in_maps() + j]);
        }
    }
    return d_input;
}

inline Tensor3 relu(const Tensor3& x) {
    Tensor3 out = x;
    for (double& v : out.values())
        if (v < 0.0) v = 0.0;
    return out;
}

// relu'(0) := 0, so only strictly positive inputs pass gradient.
inline Tensor3 relu_backward(const Tensor3& forward_input, const Tensor3& upstream) {
    if (!forward_input.same_shape(upstream)) throw ShapeError("relu_backward: shape mismatch");
    Tensor3 out = upstream;
    auto xs = forward_input.values();
    auto os = out.values();
    for (std::size_t i = 0; i < os.size(); ++i)
        if (xs[i] <= 0.0) os[i] = 0.0;
    return out;
}

// 2x2/stride-2 max pooling. The context records the argmax of each window
// (first maximum in row-major window order) for the backward pass.
struct MaxPoolCtx {
    bool valid = false;
    int channels = 0, in_h = 0, in_w = 0;
    std::vector<std::size_t> argmax;  // flat input index per output element
};

inline Tensor3 max_pool2d(const Tensor3& x, MaxPoolCtx* ctx = nullptr) {
    if (x.height() % 2 != 0 || x.width() % 2 != 0)
        throw ShapeError("max_pool2d: dimensions must be even, got " + std::to_string(x.height()) + "x" +
                         std::to_string(x.width()));
    const int oh = x.height() / 2, ow = x.width() / 2;
    Tensor3 out(x.channels(), oh, ow);
    if (ctx) {
        ctx->valid = true;
        ctx->channels = x.channels();
        ctx->in_h = x.height();
        ctx->in_w = x.width();
        ctx->argmax.assign(out.size(), 0);
    }
    std::size_t oidx = 0;
    for (int c = 0; c < x.channels(); ++c) {
        for (int r = 0; r < oh; ++r) {
            for (int s = 0; s < ow; ++s, ++oidx) {
                double best = x.at(c, 2 * r, 2 * s);
                int bu = 0, bv = 0;
                for (int u = 0; u < 2; ++u)
                    for (int v = 0; v < 2; ++v) {
                        const double val = x.at(c, 2 * r + u, 2 * s + v);
                        if (val > best) {
                            best = val;
                            bu = u;
                            bv = v;
                        }
                    }
                out.at(c, r, s) = best;
                if (ctx)
                    ctx->argmax[oidx] =
                        (static_cast<std::size_t>(c) * x.height() + 2 * r + bu) * x.width() + 2 * s + bv;
            }
        }
    }
    return out;
}

inline Tensor3 max_pool2d_backward(const MaxPoolCtx& ctx, const Tensor3& upstream) {
    if (!ctx.valid) throw StateError("max_pool2d_backward: forward pass was not recorded");
    if (upstream.channels() != ctx.channels || upstream.height() != ctx.in_h / 2 || upstream.width() != ctx.in_w / 2)
        throw ShapeError("max_pool2d_backward: upstream shape mismatch");
    Tensor3 dx(ctx.channels, ctx.in_h, ctx.in_w, 0.0);
    auto g = upstream.values();
    auto d = dx.values();
    for (std::size_t i = 0; i < g.size(); ++i) d[ctx.argmax[i]] += g[i];
    return dx;
}

// Two stacked conv layers with a shortcut; the shortcut is the identity when
// channel counts match and a learnable 1x1 projection otherwise.
class ResidualBlock {
public:
    ResidualBlock() = default;

    ResidualBlock(ConvLayer conv_a, ConvLayer conv_b, std::optional<ConvLayer> projection = std::nullopt)
        : conv_a_(std::move(conv_a)), conv_b_(std::move(conv_b)), projection_(std::move(projection)) {
        if (conv_a_.out_maps() != conv_b_.in_maps())
            throw ShapeError("ResidualBlock: conv_a output maps must match conv_b input maps");
        const int in = conv_a_.in_maps(), out = conv_b_.out_maps();
        if (in != out && !projection_)
            throw ShapeError("ResidualBlock: channel counts differ (" + std::to_string(in) + " vs " +
                             std::to_string(out) + ") but no projection given");
        if (projection_) {
            if (projection_->in_maps() != in || projection_->out_maps() != out ||
                projection_->half_h() != 0 || projection_->half_w() != 0)
                throw ShapeError("ResidualBlock: projection must be a 1x1 layer mapping in to out channels");
        }
    }

    static ResidualBlock make(int in_maps, int out_maps, int half_h, int half_w) {
        std::optional<ConvLayer> proj;
        if (in_maps != out_maps) proj = ConvLayer(in_maps, out_maps, 0, 0);
        return {ConvLayer(in_maps, out_maps, half_h, half_w), ConvLayer(out_maps, out_maps, half_h, half_w),
                std::move(proj)};
    }

    ConvLayer& conv_a() { return conv_a_; }
    const ConvLayer& conv_a() const { return conv_a_; }
    ConvLayer& conv_b() { return conv_b_; }
    const ConvLayer& conv_b() const { return conv_b_; }
    std::optional<ConvLayer>& projection() { return projection_; }
    const std::optional<ConvLayer>& projection() const { return projection_; }

    int in_maps() const { return conv_a_.in_maps(); }
    int out_maps() const { return conv_b_.out_maps(); }

    std::size_t param_count() const {
        return conv_a_.param_count() + conv_b_.param_count() + (projection_ ? projection_->param_count() : 0);
    }

private:
    ConvLayer conv_a_;
    ConvLayer conv_b_;
    std::optional<ConvLayer> projection_;
};

struct ResidualCtx {
    bool valid = false;
    Tensor3 input;      // x
    Tensor3 a_pre;      // conv_a(x)
    Tensor3 a_act;      // relu(a_pre)
    Tensor3 sum_pre;    // conv_b(a_act) + shortcut(x)
};

// output = relu( conv_b( relu( conv_a(x) ) ) + shortcut(x) )
inline Tensor3 residual_block_forward(const Tensor3& x, const ResidualBlock& block, ResidualCtx* ctx = nullptr) {
    Tensor3 a_pre = conv_layer_forward(x, block.conv_a());
    Tensor3 a_act = relu(a_pre);
    Tensor3 sum = conv_layer_forward(a_act, block.conv_b());
    const Tensor3 shortcut = block.projection() ? conv_layer_forward(x, *block.projection()) : x;
    if (!sum.same_shape(shortcut)) throw ShapeError("residual_block_forward: shortcut shape mismatch");
    {
        auto sv = sum.values();
        auto cv = shortcut.values();
        for (std::size_t i = 0; i < sv.size(); ++i) sv[i] += cv[i];
    }
    Tensor3 out = relu(sum);
    if (ctx) {
        ctx->valid = true;
        ctx->input = x;
        ctx->a_pre = std::move(a_pre);
        ctx->a_act = std::move(a_act);
        ctx->sum_pre = std::move(sum);
    }
    return out;
}

struct ResidualGrad {
    ConvLayerGrad conv_a;
    ConvLayerGrad conv_b;
    ConvLayerGrad projection;
};

inline Tensor3 residual_block_backward(const ResidualBlock& block, const ResidualCtx& ctx, const Tensor3& upstream,
                                       ResidualGrad& grad) {
    if (!ctx.valid) throw StateError("residual_block_backward: forward pass was not recorded");
    const Tensor3 d_sum = relu_backward(ctx.sum_pre, upstream);
    Tensor3 d_a_act = conv_layer_backward(ctx.a_act, block.conv_b(), d_sum, grad.conv_b);
    const Tensor3 d_a_pre = relu_backward(ctx.a_pre, d_a_act);
    Tensor3 dx = conv_layer_backward(ctx.input, block.conv_a(), d_a_pre, grad.conv_a);
    if (block.projection()) {
        const Tensor3 d_proj = conv_layer_backward(ctx.input, *block.projection(), d_sum, grad.projection);
        auto dv = dx.values();
        auto pv = d_proj.values();
        for (std::size_t i = 0; i < dv.size(); ++i) dv[i] += pv[i];
    } else {
        auto dv = dx.values();
        auto sv = d_sum.values();
        for (std::size_t i = 0; i < dv.size(); ++i) dv[i] += sv[i];
    }
    return dx;
}

}  // namespace qlfb
