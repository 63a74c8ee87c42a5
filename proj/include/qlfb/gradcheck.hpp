#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "qlfb/cnn.hpp"

namespace qlfb {

// Finite-difference verification of the full analytic gradient.
//
// Two measures keep the oracle below the 1e-5 tolerance it enforces:
//  - the reference losses are evaluated in compensated (double-double)
//    arithmetic, since a plain double central difference at eps = 1e-5 has
//    a cancellation floor above the tolerance for parameters with
//    near-zero gradients;
//  - the relu gate pattern (and pool argmax pattern) of both perturbed
//    evaluations is compared against the unperturbed one, and the step is
//    shrunk while a gate flips inside the difference window. A central
//    difference across an activation kink measures the average of two
//    slopes, not the derivative the analytic pass computes.
//
// Evaluations are cached at stage granularity (stem / each block / head)
// and inside each block (conv_a activation, conv_b output, shortcut), so a
// perturbation only recomputes what it can affect. The numbers equal a full
// recomputation because upstream values do not depend on the perturbed
// parameter.

namespace gcdetail {

// Compensated tensor, hi/lo planes stored separately so the accumulation
// loops vectorize.
struct DDTensor {
    int c = 0, h = 0, w = 0;
    std::vector<double> hi;
    std::vector<double> lo;

    std::size_t size() const { return hi.size(); }
    std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }
    std::size_t index(int cc, int yy, int xx) const { return (static_cast<std::size_t>(cc) * h + yy) * w + xx; }

    void assign(int cc, int hh, int ww) {
        c = cc;
        h = hh;
        w = ww;
        hi.assign(static_cast<std::size_t>(cc) * hh * ww, 0.0);
        lo.assign(hi.size(), 0.0);
    }
};

inline DDTensor from_tensor(const Tensor3& t) {
    DDTensor o;
    o.assign(t.channels(), t.height(), t.width());
    auto vals = t.values();
    for (std::size_t i = 0; i < o.hi.size(); ++i) o.hi[i] = vals[i];
    return o;
}

// Gate decisions are folded into an FNV hash; two evaluations with the same
// hash follow the same smooth branch of the piecewise function.
struct GateHash {
    std::uint64_t h = 0xcbf29ce484222325ull;
    void feed(std::uint64_t bit) {
        h ^= bit + 0x9e;
        h *= 0x100000001b3ull;
    }
};

// out += k * in over one row, error-free products via FMA and running
// two-sum compensation. Renormalization is deferred; the lo channel stays
// far below 1 ulp of hi for the few hundred terms a convolution sums.
inline void dd_axpy_row(double* __restrict out_hi, double* __restrict out_lo, const double* __restrict in_hi,
                        const double* __restrict in_lo, double k, int n) {
    for (int s = 0; s < n; ++s) {
        const double p = k * in_hi[s];
        const double e = std::fma(k, in_hi[s], -p) + k * in_lo[s];
        const double s1 = out_hi[s] + p;
        const double bb = s1 - out_hi[s];
        const double err = (out_hi[s] - (s1 - bb)) + (p - bb);
        out_lo[s] += e + err;
        out_hi[s] = s1;
    }
}

inline void dd_add_row(double* __restrict out_hi, double* __restrict out_lo, const double* __restrict in_hi,
                       const double* __restrict in_lo, std::size_t n) {
    for (std::size_t s = 0; s < n; ++s) {
        const double s1 = out_hi[s] + in_hi[s];
        const double bb = s1 - out_hi[s];
        const double err = (out_hi[s] - (s1 - bb)) + (in_hi[s] - bb);
        out_lo[s] += err + in_lo[s];
        out_hi[s] = s1;
    }
}

inline DDTensor conv_forward(const ConvLayer& layer, const DDTensor& x) {
    const int hh = layer.half_h(), hw = layer.half_w();
    const int ph = x.h + 2 * hh, pw = x.w + 2 * hw;
    std::vector<double> pad_hi(static_cast<std::size_t>(x.c) * ph * pw, 0.0);
    std::vector<double> pad_lo(pad_hi.size(), 0.0);
    for (int m = 0; m < x.c; ++m)
        for (int r = 0; r < x.h; ++r) {
            const std::size_t src = (static_cast<std::size_t>(m) * x.h + r) * x.w;
            const std::size_t dst = (static_cast<std::size_t>(m) * ph + r + hh) * pw + hw;
            for (int s = 0; s < x.w; ++s) {
                pad_hi[dst + static_cast<std::size_t>(s)] = x.hi[src + static_cast<std::size_t>(s)];
                pad_lo[dst + static_cast<std::size_t>(s)] = x.lo[src + static_cast<std::size_t>(s)];
            }
        }

    DDTensor y;
    y.assign(layer.out_maps(), x.h, x.w);
    const int kh = 2 * hh + 1, kw = 2 * hw + 1;
    for (int i = 0; i < layer.out_maps(); ++i) {
        double* out_hi = y.hi.data() + static_cast<std::size_t>(i) * y.plane_size();
        double* out_lo = y.lo.data() + static_cast<std::size_t>(i) * y.plane_size();
        const double bias = layer.biases()[static_cast<std::size_t>(i)];
        for (std::size_t k = 0; k < y.plane_size(); ++k) out_hi[k] = bias;
        for (int j = 0; j < layer.in_maps(); ++j) {
            const Filter& f = layer.filter(i, j);
            const std::size_t jbase = static_cast<std::size_t>(j) * ph * pw;
            for (int r = 0; r < x.h; ++r) {
                double* orow_hi = out_hi + static_cast<std::size_t>(r) * x.w;
                double* orow_lo = out_lo + static_cast<std::size_t>(r) * x.w;
                for (int u = 0; u < kh; ++u) {
                    const std::size_t prow = jbase + static_cast<std::size_t>(r + u) * pw;
                    for (int v = 0; v < kw; ++v) {
                        const double k = f.weights()[static_cast<std::size_t>(u) * kw + v];
                        if (k == 0.0) continue;
                        dd_axpy_row(orow_hi, orow_lo, pad_hi.data() + prow + v, pad_lo.data() + prow + v, k, x.w);
                    }
                }
            }
        }
    }
    return y;
}

inline void relu_inplace(DDTensor& x, GateHash& gates) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        const bool on = x.hi[i] > 0.0 || (x.hi[i] == 0.0 && x.lo[i] > 0.0);
        gates.feed(on ? 1 : 0);
        if (!on) {
            x.hi[i] = 0.0;
            x.lo[i] = 0.0;
        }
    }
}

inline DDTensor pool(const DDTensor& x, GateHash& gates) {
    DDTensor y;
    y.assign(x.c, x.h / 2, x.w / 2);
    std::size_t o = 0;
    for (int c = 0; c < x.c; ++c)
        for (int r = 0; r < y.h; ++r)
            for (int s = 0; s < y.w; ++s, ++o) {
                std::size_t best = x.index(c, 2 * r, 2 * s);
                int arg = 0;
                for (int u = 0; u < 2; ++u)
                    for (int v = 0; v < 2; ++v) {
                        const std::size_t idx = x.index(c, 2 * r + u, 2 * s + v);
                        if (x.hi[idx] > x.hi[best] || (x.hi[idx] == x.hi[best] && x.lo[idx] > x.lo[best])) {
                            best = idx;
                            arg = 2 * u + v;
                        }
                    }
                y.hi[o] = x.hi[best];
                y.lo[o] = x.lo[best];
                gates.feed(static_cast<std::uint64_t>(arg));
            }
    return y;
}

// Final logits are only a handful of values; extended precision exp/log is
// cheap and accurate there.
inline long double ce_loss(const std::vector<double>& logit_hi, const std::vector<double>& logit_lo, int label) {
    long double m = static_cast<long double>(logit_hi[0]) + logit_lo[0];
    for (std::size_t i = 0; i < logit_hi.size(); ++i)
        m = std::max(m, static_cast<long double>(logit_hi[i]) + logit_lo[i]);
    long double sum = 0.0L;
    for (std::size_t i = 0; i < logit_hi.size(); ++i)
        sum += expl(static_cast<long double>(logit_hi[i]) + logit_lo[i] - m);
    return logl(sum) + m -
           (static_cast<long double>(logit_hi[static_cast<std::size_t>(label)]) +
            logit_lo[static_cast<std::size_t>(label)]);
}

struct DDVec {
    std::vector<double> hi;
    std::vector<double> lo;
};

inline DDVec dense_forward(const DenseLayer& layer, const std::vector<double>& x_hi,
                           const std::vector<double>& x_lo) {
    DDVec y;
    y.hi.resize(static_cast<std::size_t>(layer.out_size()));
    y.lo.resize(y.hi.size());
    for (int r = 0; r < layer.out_size(); ++r) {
        double acc_hi = layer.biases[static_cast<std::size_t>(r)];
        double acc_lo = 0.0;
        const double* w = layer.weights.row(r);
        for (int c = 0; c < layer.in_size(); ++c) {
            const std::size_t ci = static_cast<std::size_t>(c);
            const double p = w[c] * x_hi[ci];
            const double e = std::fma(w[c], x_hi[ci], -p) + w[c] * x_lo[ci];
            const double s1 = acc_hi + p;
            const double bb = s1 - acc_hi;
            acc_lo += (acc_hi - (s1 - bb)) + (p - bb) + e;
            acc_hi = s1;
        }
        y.hi[static_cast<std::size_t>(r)] = acc_hi;
        y.lo[static_cast<std::size_t>(r)] = acc_lo;
    }
    return y;
}

}  // namespace gcdetail

inline double grad_check(CnnModel& model, const Tensor3& image, int label, double epsilon = 1e-5) {
    using namespace gcdetail;
    if (!(epsilon > 0.0)) throw std::invalid_argument("grad_check: epsilon must be positive");
    check_input_shape(model, image);
    const int n_blocks = static_cast<int>(model.blocks.size());
    const int head_stage = n_blocks + 1;

    // Which part of a block a parameter lives in.
    enum class Part { Stem, ConvA, ConvB, Proj, Head };

    // Unperturbed stage inputs plus per-block internals.
    std::vector<DDTensor> stage_input(static_cast<std::size_t>(n_blocks) + 2);
    std::vector<DDTensor> a_act(static_cast<std::size_t>(n_blocks));     // relu(conv_a(x))
    std::vector<DDTensor> b_out(static_cast<std::size_t>(n_blocks));     // conv_b(a_act)
    std::vector<DDTensor> shortcut(static_cast<std::size_t>(n_blocks));  // identity or projection
    stage_input[0] = from_tensor(image);
    {
        GateHash g;
        DDTensor t = conv_forward(model.stem, stage_input[0]);
        relu_inplace(t, g);
        stage_input[1] = std::move(t);
    }
    for (int b = 0; b < n_blocks; ++b) {
        const std::size_t bi = static_cast<std::size_t>(b);
        const ResidualBlock& block = model.blocks[bi];
        GateHash g;
        DDTensor a = conv_forward(block.conv_a(), stage_input[bi + 1]);
        relu_inplace(a, g);
        b_out[bi] = conv_forward(block.conv_b(), a);
        shortcut[bi] = block.projection() ? conv_forward(*block.projection(), stage_input[bi + 1])
                                          : stage_input[bi + 1];
        a_act[bi] = std::move(a);
        DDTensor t = b_out[bi];
        dd_add_row(t.hi.data(), t.lo.data(), shortcut[bi].hi.data(), shortcut[bi].lo.data(), t.size());
        relu_inplace(t, g);
        if (model.arch.blocks[bi].pool_after) t = pool(t, g);
        stage_input[bi + 2] = std::move(t);
    }

    // Head caches for closed-form single-parameter updates.
    const DDTensor& head_in = stage_input[static_cast<std::size_t>(head_stage)];
    const DDVec hidden_pre = dense_forward(model.hidden, head_in.hi, head_in.lo);

    auto head_loss = [&](int hidden_row, double hidden_delta, int logit_row, double logit_delta, GateHash& gates) {
        std::vector<double> act_hi(hidden_pre.hi), act_lo(hidden_pre.lo);
        if (hidden_row >= 0) act_hi[static_cast<std::size_t>(hidden_row)] += hidden_delta;
        for (std::size_t i = 0; i < act_hi.size(); ++i) {
            const bool on = act_hi[i] > 0.0 || (act_hi[i] == 0.0 && act_lo[i] > 0.0);
            gates.feed(on ? 1 : 0);
            if (!on) {
                act_hi[i] = 0.0;
                act_lo[i] = 0.0;
            }
        }
        DDVec logits = dense_forward(model.out, act_hi, act_lo);
        if (logit_row >= 0) logits.hi[static_cast<std::size_t>(logit_row)] += logit_delta;
        return ce_loss(logits.hi, logits.lo, label);
    };

    // Runs the network from the point a perturbed parameter first matters.
    auto loss_from = [&](Part part, int block_idx, GateHash& gates) {
        DDTensor t;
        int resume = 0;  // index of the next whole block to run
        switch (part) {
            case Part::Stem: {
                t = conv_forward(model.stem, stage_input[0]);
                relu_inplace(t, gates);
                resume = 0;
                break;
            }
            case Part::ConvA: {
                t = stage_input[static_cast<std::size_t>(block_idx) + 1];
                resume = block_idx;
                break;
            }
            case Part::ConvB: {
                const std::size_t bi = static_cast<std::size_t>(block_idx);
                t = conv_forward(model.blocks[bi].conv_b(), a_act[bi]);
                dd_add_row(t.hi.data(), t.lo.data(), shortcut[bi].hi.data(), shortcut[bi].lo.data(), t.size());
                relu_inplace(t, gates);
                if (model.arch.blocks[bi].pool_after) t = pool(t, gates);
                resume = block_idx + 1;
                break;
            }
            case Part::Proj: {
                const std::size_t bi = static_cast<std::size_t>(block_idx);
                t = conv_forward(*model.blocks[bi].projection(), stage_input[bi + 1]);
                dd_add_row(t.hi.data(), t.lo.data(), b_out[bi].hi.data(), b_out[bi].lo.data(), t.size());
                relu_inplace(t, gates);
                if (model.arch.blocks[bi].pool_after) t = pool(t, gates);
                resume = block_idx + 1;
                break;
            }
            case Part::Head:
                return head_loss(-1, 0.0, -1, 0.0, gates);
        }
        for (int b = resume; b < n_blocks; ++b) {
            const std::size_t bi = static_cast<std::size_t>(b);
            const ResidualBlock& block = model.blocks[bi];
            DDTensor a = conv_forward(block.conv_a(), t);
            relu_inplace(a, gates);
            DDTensor sum = conv_forward(block.conv_b(), a);
            if (block.projection()) {
                const DDTensor p = conv_forward(*block.projection(), t);
                dd_add_row(sum.hi.data(), sum.lo.data(), p.hi.data(), p.lo.data(), sum.size());
            } else {
                dd_add_row(sum.hi.data(), sum.lo.data(), t.hi.data(), t.lo.data(), sum.size());
            }
            relu_inplace(sum, gates);
            if (model.arch.blocks[bi].pool_after) sum = pool(sum, gates);
            t = std::move(sum);
        }
        const DDVec hidden = dense_forward(model.hidden, t.hi, t.lo);
        std::vector<double> act_hi(hidden.hi), act_lo(hidden.lo);
        for (std::size_t i = 0; i < act_hi.size(); ++i) {
            const bool on = act_hi[i] > 0.0 || (act_hi[i] == 0.0 && act_lo[i] > 0.0);
            gates.feed(on ? 1 : 0);
            if (!on) {
                act_hi[i] = 0.0;
                act_lo[i] = 0.0;
            }
        }
        const DDVec logits = dense_forward(model.out, act_hi, act_lo);
        return ce_loss(logits.hi, logits.lo, label);
    };

    auto [loss0, grad] = loss_and_grad(model, image, label);
    (void)loss0;
    const std::vector<double> analytic = flatten_grad(model, grad);

    struct ParamRef {
        double* p = nullptr;
        Part part = Part::Stem;
        int block = -1;
        int head_hidden_row = -1;
        double head_flat = 0.0;
        int head_logit_row = -1;
        double head_act = 0.0;
    };
    std::vector<ParamRef> refs;
    refs.reserve(model.param_count());
    detail::for_each_conv_param(model.stem, [&](double& v, bool) { refs.push_back({&v, Part::Stem, -1}); });
    for (int b = 0; b < n_blocks; ++b) {
        auto add = [&](ConvLayer& l, Part part) {
            detail::for_each_conv_param(l, [&](double& v, bool) { refs.push_back({&v, part, b}); });
        };
        add(model.blocks[static_cast<std::size_t>(b)].conv_a(), Part::ConvA);
        add(model.blocks[static_cast<std::size_t>(b)].conv_b(), Part::ConvB);
        if (model.blocks[static_cast<std::size_t>(b)].projection())
            add(*model.blocks[static_cast<std::size_t>(b)].projection(), Part::Proj);
    }
    std::vector<double> hidden_act_hi(hidden_pre.hi);
    for (std::size_t i = 0; i < hidden_act_hi.size(); ++i)
        if (!(hidden_pre.hi[i] > 0.0 || (hidden_pre.hi[i] == 0.0 && hidden_pre.lo[i] > 0.0))) hidden_act_hi[i] = 0.0;
    for (int r = 0; r < model.hidden.out_size(); ++r)
        for (int c = 0; c < model.hidden.in_size(); ++c) {
            ParamRef ref{&model.hidden.weights.row(r)[c], Part::Head, -1};
            ref.head_hidden_row = r;
            ref.head_flat = head_in.hi[static_cast<std::size_t>(c)];
            refs.push_back(ref);
        }
    for (int r = 0; r < model.hidden.out_size(); ++r) {
        ParamRef ref{&model.hidden.biases[static_cast<std::size_t>(r)], Part::Head, -1};
        ref.head_hidden_row = r;
        ref.head_flat = 1.0;
        refs.push_back(ref);
    }
    for (int r = 0; r < model.out.out_size(); ++r)
        for (int c = 0; c < model.out.in_size(); ++c) {
            ParamRef ref{&model.out.weights.row(r)[c], Part::Head, -1};
            ref.head_logit_row = r;
            ref.head_act = hidden_act_hi[static_cast<std::size_t>(c)];
            refs.push_back(ref);
        }
    for (int r = 0; r < model.out.out_size(); ++r) {
        ParamRef ref{&model.out.biases[static_cast<std::size_t>(r)], Part::Head, -1};
        ref.head_logit_row = r;
        ref.head_act = 1.0;
        refs.push_back(ref);
    }
    if (refs.size() != analytic.size()) throw ShapeError("grad_check: parameter enumeration mismatch");

    // Reference gate hashes of the unperturbed network per start point.
    auto hash_of = [&](Part part, int block_idx) {
        GateHash g;
        loss_from(part, block_idx, g);
        return g.h;
    };
    std::uint64_t stem_hash = hash_of(Part::Stem, -1);
    std::vector<std::uint64_t> a_hash(static_cast<std::size_t>(n_blocks)), b_hash(static_cast<std::size_t>(n_blocks)),
        p_hash(static_cast<std::size_t>(n_blocks));
    for (int b = 0; b < n_blocks; ++b) {
        a_hash[static_cast<std::size_t>(b)] = hash_of(Part::ConvA, b);
        b_hash[static_cast<std::size_t>(b)] = hash_of(Part::ConvB, b);
        if (model.blocks[static_cast<std::size_t>(b)].projection())
            p_hash[static_cast<std::size_t>(b)] = hash_of(Part::Proj, b);
    }
    const std::uint64_t head_hash = hash_of(Part::Head, -1);

    auto center_hash = [&](const ParamRef& ref) {
        switch (ref.part) {
            case Part::Stem: return stem_hash;
            case Part::ConvA: return a_hash[static_cast<std::size_t>(ref.block)];
            case Part::ConvB: return b_hash[static_cast<std::size_t>(ref.block)];
            case Part::Proj: return p_hash[static_cast<std::size_t>(ref.block)];
            case Part::Head: return head_hash;
        }
        return stem_hash;
    };

    double worst = 0.0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const ParamRef& ref = refs[i];
        const std::uint64_t want = center_hash(ref);
        long double fd = 0.0L;
        double step = epsilon;
        for (int attempt = 0;; ++attempt) {
            long double up, dn;
            GateHash gu, gd;
            if (ref.part == Part::Head) {
                if (ref.head_hidden_row >= 0) {
                    up = head_loss(ref.head_hidden_row, step * ref.head_flat, -1, 0.0, gu);
                    dn = head_loss(ref.head_hidden_row, -step * ref.head_flat, -1, 0.0, gd);
                } else {
                    up = head_loss(-1, 0.0, ref.head_logit_row, step * ref.head_act, gu);
                    dn = head_loss(-1, 0.0, ref.head_logit_row, -step * ref.head_act, gd);
                }
            } else {
                const double saved = *ref.p;
                *ref.p = saved + step;
                up = loss_from(ref.part, ref.block, gu);
                *ref.p = saved - step;
                dn = loss_from(ref.part, ref.block, gd);
                *ref.p = saved;
            }
            fd = (up - dn) / (2.0L * static_cast<long double>(step));
            if ((gu.h == want && gd.h == want) || attempt >= 6) break;
            step *= 0.25;  // a gate flipped inside the window; retry closer in
        }
        const double err = std::abs(analytic[i] - static_cast<double>(fd)) / (std::abs(analytic[i]) + 1e-8);
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace qlfb
