#pragma once

#include <cstring>
#include <fstream>
#include <utility>
#include <vector>

#include "qlfb/conv.hpp"
#include "qlfb/dataset.hpp"
#include "qlfb/metrics.hpp"
#include "qlfb/rng.hpp"

namespace qlfb {

struct BlockSpec {
    int maps = 8;
    bool pool_after = false;
};

// Network sizing. The input resolution is part of the spec so the dense head
// and the checkpoint layout are fixed at build time.
struct ArchSpec {
    int input_channels = 3;
    int input_height = 16;
    int input_width = 16;
    int stem_maps = 8;
    std::vector<BlockSpec> blocks = {{8, true}, {16, true}};
    int dense_hidden = 32;
    int classes = 3;
    int kernel_half = 1;  // 3x3 filters

    void validate() const {
        if (classes < 2) throw std::invalid_argument("ArchSpec: classes must be >= 2");
        if (blocks.empty()) throw std::invalid_argument("ArchSpec: at least one residual block required");
        if (input_channels < 1 || input_height < 1 || input_width < 1 || stem_maps < 1 || dense_hidden < 1 ||
            kernel_half < 0)
            throw std::invalid_argument("ArchSpec: all counts must be >= 1");
        for (const auto& b : blocks)
            if (b.maps < 1) throw std::invalid_argument("ArchSpec: block map count must be >= 1");
        int h = input_height, w = input_width;
        for (const auto& b : blocks) {
            if (b.pool_after) {
                if (h % 2 != 0 || w % 2 != 0)
                    throw std::invalid_argument("ArchSpec: pooling at " + std::to_string(h) + "x" +
                                                std::to_string(w) + " requires even dimensions");
                h /= 2;
                w /= 2;
            }
        }
    }

    // Spatial size after all pooling stages.
    std::pair<int, int> final_hw() const {
        int h = input_height, w = input_width;
        for (const auto& b : blocks)
            if (b.pool_after) {
                h /= 2;
                w /= 2;
            }
        return {h, w};
    }

    int head_input_size() const {
        const auto [h, w] = final_hw();
        return blocks.back().maps * h * w;
    }
};

// Desk-scale default: the smallest net that exercises every mechanism
// (discrete convolution, layer composition, shortcuts).
inline ArchSpec default_desk_arch(int input_channels = 3, int input_height = 16, int input_width = 16,
                                  int classes = 3) {
    ArchSpec arch;
    arch.input_channels = input_channels;
    arch.input_height = input_height;
    arch.input_width = input_width;
    arch.stem_maps = 8;
    arch.blocks = {{8, true}, {16, true}};
    arch.dense_hidden = 32;
    arch.classes = classes;
    return arch;
}

struct DenseLayer {
    Matrix weights;              // out x in, row-major
    std::vector<double> biases;  // out

    DenseLayer() = default;
    DenseLayer(int in, int out) : weights(out, in, 0.0), biases(static_cast<std::size_t>(out), 0.0) {}

    int in_size() const { return weights.cols(); }
    int out_size() const { return weights.rows(); }

    std::vector<double> forward(const std::vector<double>& x) const {
        if (static_cast<int>(x.size()) != in_size()) throw ShapeError("DenseLayer: input size mismatch");
        std::vector<double> y(biases);
        for (int r = 0; r < out_size(); ++r) {
            const double* wr = weights.row(r);
            double acc = 0.0;
            for (int c = 0; c < in_size(); ++c) acc += wr[c] * x[static_cast<std::size_t>(c)];
            y[static_cast<std::size_t>(r)] += acc;
        }
        return y;
    }
};

struct CnnModel {
    ArchSpec arch;
    ConvLayer stem;
    std::vector<ResidualBlock> blocks;
    DenseLayer hidden;
    DenseLayer out;

    std::size_t param_count() const {
        std::size_t n = stem.param_count();
        for (const auto& b : blocks) n += b.param_count();
        n += static_cast<std::size_t>(hidden.weights.rows()) * hidden.weights.cols() + hidden.biases.size();
        n += static_cast<std::size_t>(out.weights.rows()) * out.weights.cols() + out.biases.size();
        return n;
    }
};

namespace detail {

inline void init_conv_layer(ConvLayer& layer, Rng& rng) {
    const int fan_in = layer.in_maps() * (2 * layer.half_h() + 1) * (2 * layer.half_w() + 1);
    const double s = std::sqrt(1.0 / fan_in);
    for (int i = 0; i < layer.out_maps(); ++i)
        for (int j = 0; j < layer.in_maps(); ++j)
            for (double& w : layer.filter(i, j).weights()) w = rng.uniform(-s, s);
    // biases stay zero
}

inline void init_dense(DenseLayer& layer, Rng& rng) {
    const double s = std::sqrt(1.0 / layer.in_size());
    for (double& w : layer.weights.data()) w = rng.uniform(-s, s);
}

}  // namespace detail

// Deterministic construction: identical (arch, seed) yields bit-identical
// parameters. Weights are fan-in-scaled uniform, biases zero.
inline CnnModel build_model(const ArchSpec& arch, std::uint64_t seed) {
    arch.validate();
    CnnModel m;
    m.arch = arch;
    Rng rng(derive_seed(seed, 0x1217));

    m.stem = ConvLayer(arch.input_channels, arch.stem_maps, arch.kernel_half, arch.kernel_half);
    detail::init_conv_layer(m.stem, rng);

    int maps = arch.stem_maps;
    for (const auto& spec : arch.blocks) {
        ResidualBlock block = ResidualBlock::make(maps, spec.maps, arch.kernel_half, arch.kernel_half);
        detail::init_conv_layer(block.conv_a(), rng);
        detail::init_conv_layer(block.conv_b(), rng);
        if (block.projection()) detail::init_conv_layer(*block.projection(), rng);
        m.blocks.push_back(std::move(block));
        maps = spec.maps;
    }

    m.hidden = DenseLayer(arch.head_input_size(), arch.dense_hidden);
    detail::init_dense(m.hidden, rng);
    m.out = DenseLayer(arch.dense_hidden, arch.classes);
    detail::init_dense(m.out, rng);
    return m;
}

// Numerically stable softmax cross-entropy. Returns the loss and the
// gradient wrt the logits (softmax minus one-hot).
inline std::pair<double, std::vector<double>> softmax_cross_entropy(const std::vector<double>& logits, int label) {
    if (label < 0 || label >= static_cast<int>(logits.size()))
        throw std::invalid_argument("softmax_cross_entropy: label out of range");
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    std::vector<double> grad(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        grad[i] = std::exp(logits[i] - m);
        sum += grad[i];
    }
    const double loss = std::log(sum) + m - logits[static_cast<std::size_t>(label)];
    for (double& g : grad) g /= sum;
    grad[static_cast<std::size_t>(label)] -= 1.0;
    return {loss, std::move(grad)};
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

// Activations recorded during a forward pass, consumed by backward().
struct ForwardCache {
    Tensor3 input;
    Tensor3 stem_pre;
    std::vector<ResidualCtx> block_ctx;
    std::vector<MaxPoolCtx> pool_ctx;
    std::vector<Tensor3> block_out;  // post-pool output of each block
    std::vector<double> flat;
    std::vector<double> hidden_pre;
    std::vector<double> hidden_act;
    std::vector<double> logits;
};

inline void check_input_shape(const CnnModel& model, const Tensor3& image) {
    if (image.channels() != model.arch.input_channels || image.height() != model.arch.input_height ||
        image.width() != model.arch.input_width)
        throw ShapeError("cnn forward: image is " + std::to_string(image.channels()) + "x" +
                         std::to_string(image.height()) + "x" + std::to_string(image.width()) + ", model expects " +
                         std::to_string(model.arch.input_channels) + "x" + std::to_string(model.arch.input_height) +
                         "x" + std::to_string(model.arch.input_width));
}

inline std::vector<double> forward(const CnnModel& model, const Tensor3& image, ForwardCache* cache = nullptr) {
    check_input_shape(model, image);
    Tensor3 stem_pre = conv_layer_forward(image, model.stem);
    Tensor3 t = relu(stem_pre);
    if (cache) {
        cache->input = image;
        cache->stem_pre = stem_pre;
        cache->block_ctx.assign(model.blocks.size(), {});
        cache->pool_ctx.assign(model.blocks.size(), {});
        cache->block_out.assign(model.blocks.size(), {});
    }
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
        t = residual_block_forward(t, model.blocks[b], cache ? &cache->block_ctx[b] : nullptr);
        if (model.arch.blocks[b].pool_after) t = max_pool2d(t, cache ? &cache->pool_ctx[b] : nullptr);
        if (cache) cache->block_out[b] = t;
    }
    std::vector<double> flat = flatten(t);
    std::vector<double> hidden_pre = model.hidden.forward(flat);
    std::vector<double> hidden_act = hidden_pre;
    for (double& v : hidden_act)
        if (v < 0.0) v = 0.0;
    std::vector<double> logits = model.out.forward(hidden_act);
    if (cache) {
        cache->flat = std::move(flat);
        cache->hidden_pre = std::move(hidden_pre);
        cache->hidden_act = std::move(hidden_act);
        cache->logits = logits;
    }
    return logits;
}

struct DenseGrad {
    Matrix d_weights;
    std::vector<double> d_biases;
};

struct CnnGrad {
    ConvLayerGrad stem;
    std::vector<ResidualGrad> blocks;
    DenseGrad hidden;
    DenseGrad out;
};

// Backpropagation from a logit gradient through the whole network,
// accumulating parameter gradients into `grad`.
inline void backward(const CnnModel& model, const ForwardCache& cache, const std::vector<double>& d_logits,
                     CnnGrad& grad) {
    if (cache.logits.empty()) throw StateError("cnn backward: forward pass was not recorded");
    if (grad.blocks.empty()) {
        grad.blocks.assign(model.blocks.size(), {});
        grad.hidden.d_weights = Matrix(model.hidden.weights.rows(), model.hidden.weights.cols(), 0.0);
        grad.hidden.d_biases.assign(model.hidden.biases.size(), 0.0);
        grad.out.d_weights = Matrix(model.out.weights.rows(), model.out.weights.cols(), 0.0);
        grad.out.d_biases.assign(model.out.biases.size(), 0.0);
    }

    // output dense
    std::vector<double> d_hidden_act(static_cast<std::size_t>(model.out.in_size()), 0.0);
    for (int r = 0; r < model.out.out_size(); ++r) {
        const double g = d_logits[static_cast<std::size_t>(r)];
        grad.out.d_biases[static_cast<std::size_t>(r)] += g;
        double* dw = grad.out.d_weights.row(r);
        const double* w = model.out.weights.row(r);
        for (int c = 0; c < model.out.in_size(); ++c) {
            dw[c] += g * cache.hidden_act[static_cast<std::size_t>(c)];
            d_hidden_act[static_cast<std::size_t>(c)] += g * w[c];
        }
    }
    // hidden relu gate
    for (std::size_t i = 0; i < d_hidden_act.size(); ++i)
        if (cache.hidden_pre[i] <= 0.0) d_hidden_act[i] = 0.0;
    // hidden dense
    std::vector<double> d_flat(static_cast<std::size_t>(model.hidden.in_size()), 0.0);
    for (int r = 0; r < model.hidden.out_size(); ++r) {
        const double g = d_hidden_act[static_cast<std::size_t>(r)];
        grad.hidden.d_biases[static_cast<std::size_t>(r)] += g;
        double* dw = grad.hidden.d_weights.row(r);
        const double* w = model.hidden.weights.row(r);
        if (g != 0.0) {
            for (int c = 0; c < model.hidden.in_size(); ++c) {
                dw[c] += g * cache.flat[static_cast<std::size_t>(c)];
                d_flat[static_cast<std::size_t>(c)] += g * w[c];
            }
        }
    }

    const Tensor3& last = cache.block_out.back();
    Tensor3 d_t = reshape(d_flat, last.channels(), last.height(), last.width());
    for (int b = static_cast<int>(model.blocks.size()) - 1; b >= 0; --b) {
        if (model.arch.blocks[static_cast<std::size_t>(b)].pool_after)
            d_t = max_pool2d_backward(cache.pool_ctx[static_cast<std::size_t>(b)], d_t);
        d_t = residual_block_backward(model.blocks[static_cast<std::size_t>(b)],
                                      cache.block_ctx[static_cast<std::size_t>(b)], d_t,
                                      grad.blocks[static_cast<std::size_t>(b)]);
    }
    d_t = relu_backward(cache.stem_pre, d_t);
    conv_layer_backward(cache.input, model.stem, d_t, grad.stem);
}

namespace detail {

// Parameter traversal in declaration order; the same order defines the
// checkpoint layout and the gradient flattening.
template <typename Fn>
void for_each_conv_param(ConvLayer& layer, Fn&& fn) {
    for (int i = 0; i < layer.out_maps(); ++i)
        for (int j = 0; j < layer.in_maps(); ++j)
            for (double& w : layer.filter(i, j).weights()) fn(w, true);
    for (double& b : layer.biases()) fn(b, false);
}

template <typename Fn>
void for_each_param(CnnModel& model, Fn&& fn) {
    for_each_conv_param(model.stem, fn);
    for (auto& block : model.blocks) {
        for_each_conv_param(block.conv_a(), fn);
        for_each_conv_param(block.conv_b(), fn);
        if (block.projection()) for_each_conv_param(*block.projection(), fn);
    }
    for (double& w : model.hidden.weights.data()) fn(w, true);
    for (double& b : model.hidden.biases) fn(b, false);
    for (double& w : model.out.weights.data()) fn(w, true);
    for (double& b : model.out.biases) fn(b, false);
}

template <typename Fn>
void for_each_grad(CnnGrad& grad, Fn&& fn) {
    for (auto& f : grad.stem.d_filters)
        for (double& w : f.weights()) fn(w);
    for (double& b : grad.stem.d_biases) fn(b);
    auto conv_grad = [&fn](ConvLayerGrad& g) {
        for (auto& f : g.d_filters)
            for (double& w : f.weights()) fn(w);
        for (double& b : g.d_biases) fn(b);
    };
    for (auto& bg : grad.blocks) {
        conv_grad(bg.conv_a);
        conv_grad(bg.conv_b);
        if (!bg.projection.d_filters.empty()) conv_grad(bg.projection);
    }
    for (double& w : grad.hidden.d_weights.data()) fn(w);
    for (double& b : grad.hidden.d_biases) fn(b);
    for (double& w : grad.out.d_weights.data()) fn(w);
    for (double& b : grad.out.d_biases) fn(b);
}

}  // namespace detail

inline std::vector<double> get_params(const CnnModel& model) {
    std::vector<double> out;
    out.reserve(model.param_count());
    detail::for_each_param(const_cast<CnnModel&>(model), [&out](double& v, bool) { out.push_back(v); });
    return out;
}

inline void set_params(CnnModel& model, const std::vector<double>& params) {
    if (params.size() != model.param_count()) throw ShapeError("set_params: parameter count mismatch");
    std::size_t i = 0;
    detail::for_each_param(model, [&params, &i](double& v, bool) { v = params[i++]; });
}

inline std::vector<double> flatten_grad(const CnnModel& model, const CnnGrad& grad) {
    std::vector<double> out;
    out.reserve(model.param_count());
    detail::for_each_grad(const_cast<CnnGrad&>(grad), [&out](double& v) { out.push_back(v); });
    if (out.size() != model.param_count()) throw ShapeError("flatten_grad: gradient/parameter layout mismatch");
    return out;
}

inline std::pair<double, CnnGrad> loss_and_grad(const CnnModel& model, const Tensor3& image, int label) {
    ForwardCache cache;
    forward(model, image, &cache);
    auto [loss, d_logits] = softmax_cross_entropy(cache.logits, label);
    CnnGrad grad;
    backward(model, cache, d_logits, grad);
    return {loss, std::move(grad)};
}

struct TrainConfig {
    double learning_rate = 0.05;
    double momentum = 0.9;
    int epochs = 10;
    int batch_size = 16;
    std::uint64_t seed = 1;
    double l2 = 1e-4;

    void validate() const {
        if (learning_rate < 0.0) throw std::invalid_argument("TrainConfig: learning_rate must be >= 0");
        if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("TrainConfig: momentum must be in [0,1)");
        if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (l2 < 0.0) throw std::invalid_argument("TrainConfig: l2 must be >= 0");
    }
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_f1 = 0.0;
};

struct TrainResult {
    CnnModel model;
    std::vector<EpochStats> history;
    int best_epoch = 0;
    double best_val_f1 = 0.0;
};

inline std::vector<int> predict(const CnnModel& model, const Dataset& data) {
    std::vector<int> out;
    out.reserve(data.images.size());
    for (const auto& img : data.images) {
        const std::vector<double> logits = forward(model, img);
        int best = 0;
        for (int c = 1; c < static_cast<int>(logits.size()); ++c)
            if (logits[static_cast<std::size_t>(c)] > logits[static_cast<std::size_t>(best)]) best = c;
        out.push_back(best);
    }
    return out;
}

// Mini-batch SGD with momentum and L2 on the weights (biases excluded).
// Model selection by validation macro-F1, ties resolved to the earliest
// epoch. Fully deterministic given cfg.seed.
inline TrainResult train(CnnModel model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.images.empty() || val_set.images.empty())
        throw std::invalid_argument("cnn train: empty dataset");
    train_set.validate();
    val_set.validate();
    for (const auto& img : train_set.images) check_input_shape(model, img);

    // Epoch shuffling uses its own generator so initialization and batching
    // stay independently reproducible.
    Rng shuffle_rng(derive_seed(cfg.seed, 0xBA7C));

    std::vector<double*> params;
    std::vector<char> is_weight;
    detail::for_each_param(model, [&](double& v, bool w) {
        params.push_back(&v);
        is_weight.push_back(w ? 1 : 0);
    });
    std::vector<double> velocity(params.size(), 0.0);

    TrainResult result;
    result.best_val_f1 = -1.0;

    std::vector<int> order(train_set.images.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t pos = 0;
        while (pos < order.size()) {
            const std::size_t end = std::min(pos + static_cast<std::size_t>(cfg.batch_size), order.size());
            CnnGrad batch_grad;
            for (std::size_t k = pos; k < end; ++k) {
                const int idx = order[k];
                ForwardCache cache;
                forward(model, train_set.images[static_cast<std::size_t>(idx)], &cache);
                auto [loss, d_logits] =
                    softmax_cross_entropy(cache.logits, train_set.labels[static_cast<std::size_t>(idx)]);
                loss_sum += loss;
                backward(model, cache, d_logits, batch_grad);
            }
            const double inv_n = 1.0 / static_cast<double>(end - pos);
            std::vector<double> g = flatten_grad(model, batch_grad);
            for (std::size_t i = 0; i < params.size(); ++i) {
                double gi = g[i] * inv_n;
                if (is_weight[i]) gi += cfg.l2 * (*params[i]);
                velocity[i] = cfg.momentum * velocity[i] - cfg.learning_rate * gi;
                *params[i] += velocity[i];
            }
            pos = end;
        }

        const std::vector<int> val_pred = predict(model, val_set);
        const double val_f1 = f1_macro(val_set.labels, val_pred);
        result.history.push_back({epoch, loss_sum / static_cast<double>(order.size()), val_f1});
        if (val_f1 > result.best_val_f1) {
            result.best_val_f1 = val_f1;
            result.best_epoch = epoch;
            result.model = model;
        }
    }
    if (result.best_epoch == 0) result.model = model;  // unreachable with epochs >= 1
    return result;
}

// ---- checkpoint io ----------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw ParseError("checkpoint: truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw ParseError("checkpoint: truncated parameter data");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'Q', 'L', 'F', 'B', 'N', 'E', 'T', '1'};

// Versioned binary layout: magic, arch fields, then all parameters as
// little-endian 64-bit floats in declaration order.
inline void save_checkpoint(const CnnModel& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write(kCheckpointMagic, 8);
    detail::write_u32(os, 1);  // format version
    detail::write_u32(os, static_cast<std::uint32_t>(model.arch.input_channels));
    detail::write_u32(os, static_cast<std::uint32_t>(model.arch.input_height));
    detail::write_u32(os, static_cast<std::uint32_t>(model.arch.input_width));
    detail::write_u32(os, static_cast<std::uint32_t>(model.arch.stem_maps));
    detail::write_u32(os, static_cast<std::uint32_t>(model.arch.dense_hidden));
    detail::write_u32(os, static_cast<std::uint32_t>(model.arch.classes));
    detail::write_u32(os, static_cast<std::uint32_t>(model.arch.kernel_half));
    detail::write_u32(os, static_cast<std::uint32_t>(model.arch.blocks.size()));
    for (const auto& b : model.arch.blocks) {
        detail::write_u32(os, static_cast<std::uint32_t>(b.maps));
        detail::write_u32(os, b.pool_after ? 1u : 0u);
    }
    const std::vector<double> params = get_params(model);
    detail::write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (double v : params) detail::write_f64(os, v);
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline CnnModel load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw ParseError("load_checkpoint: bad magic in " + path);
    const std::uint32_t version = detail::read_u32(is);
    if (version != 1) throw ParseError("load_checkpoint: unsupported version " + std::to_string(version));
    ArchSpec arch;
    arch.input_channels = static_cast<int>(detail::read_u32(is));
    arch.input_height = static_cast<int>(detail::read_u32(is));
    arch.input_width = static_cast<int>(detail::read_u32(is));
    arch.stem_maps = static_cast<int>(detail::read_u32(is));
    arch.dense_hidden = static_cast<int>(detail::read_u32(is));
    arch.classes = static_cast<int>(detail::read_u32(is));
    arch.kernel_half = static_cast<int>(detail::read_u32(is));
    const std::uint32_t n_blocks = detail::read_u32(is);
    arch.blocks.clear();
    for (std::uint32_t b = 0; b < n_blocks; ++b) {
        BlockSpec spec;
        spec.maps = static_cast<int>(detail::read_u32(is));
        spec.pool_after = detail::read_u32(is) != 0;
        arch.blocks.push_back(spec);
    }
    CnnModel model = build_model(arch, 0);
    const std::uint32_t n_params = detail::read_u32(is);
    if (n_params != model.param_count()) throw ParseError("load_checkpoint: parameter count mismatch in " + path);
    std::vector<double> params(n_params);
    for (auto& v : params) v = detail::read_f64(is);
    set_params(model, params);
    return model;
}

}  // namespace qlfb
