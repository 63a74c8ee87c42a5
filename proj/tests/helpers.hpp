#pragma once

#include <vector>

#include "qlfb/conv.hpp"
#include "qlfb/rng.hpp"
#include "qlfb/tensor.hpp"

namespace qlfb::testing {

// Independent reference for the discrete convolution: the literal quadruple
// loop over (r, s, u, v) with explicit bounds checks standing in for zero
// padding. Kept free of any shared code path with convolve2d.
inline Tensor3 conv_oracle(const Tensor3& plane, const Filter& f) {
    const int h = plane.height(), w = plane.width();
    Tensor3 out(1, h, w, 0.0);
    for (int r = 0; r < h; ++r) {
        for (int s = 0; s < w; ++s) {
            double acc = 0.0;
            for (int u = -f.half_h(); u <= f.half_h(); ++u) {
                for (int v = -f.half_w(); v <= f.half_w(); ++v) {
                    const int y = r + u, x = s + v;
                    if (y < 0 || y >= h || x < 0 || x >= w) continue;
                    acc += f.at(u, v) * plane.at(0, y, x);
                }
            }
            out.at(0, r, s) = acc;
        }
    }
    return out;
}

inline Tensor3 random_tensor(Rng& rng, int c, int h, int w, double lo = -1.0, double hi = 1.0) {
    Tensor3 t(c, h, w);
    for (double& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

inline Filter random_filter(Rng& rng, int half_h, int half_w, double lo = -1.0, double hi = 1.0) {
    Filter f(half_h, half_w);
    for (double& v : f.weights()) v = rng.uniform(lo, hi);
    return f;
}

inline double max_abs_diff(const Tensor3& a, const Tensor3& b) {
    double m = 0.0;
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) m = std::max(m, std::abs(av[i] - bv[i]));
    return m;
}

}  // namespace qlfb::testing
