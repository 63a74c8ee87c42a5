#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "qlfb/common.hpp"

namespace qlfb {

// Channel-major dense 3D array. One contiguous plane per channel so the
// convolution inner loops stream over rows.
class Tensor3 {
public:
    Tensor3() = default;

    Tensor3(int channels, int height, int width, double fill = 0.0)
        : channels_(channels), height_(height), width_(width) {
        if (channels < 1 || height < 1 || width < 1)
            throw std::invalid_argument("Tensor3: all dimensions must be >= 1, got " +
                                        std::to_string(channels) + "x" + std::to_string(height) + "x" +
                                        std::to_string(width));
        data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
    }

    static Tensor3 from_data(int channels, int height, int width, std::vector<double> values) {
        Tensor3 t(channels, height, width);
        if (values.size() != t.data_.size())
            throw ShapeError("Tensor3::from_data: value count does not match dimensions");
        t.data_ = std::move(values);
        return t;
    }

    int channels() const { return channels_; }
    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return data_.size(); }
    std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }

    double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
    double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

    double* plane(int c) { return data_.data() + static_cast<std::size_t>(c) * plane_size(); }
    const double* plane(int c) const { return data_.data() + static_cast<std::size_t>(c) * plane_size(); }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    bool same_shape(const Tensor3& o) const {
        return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return is_finite(v); });
    }

private:
    std::size_t index(int c, int y, int x) const {
        return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
    }

    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

// Row-major 2D array for flattened feature vectors.
class Matrix {
public:
    Matrix() = default;

    Matrix(int rows, int cols, double fill = 0.0) : rows_(rows), cols_(cols) {
        if (rows < 0 || cols < 0) throw std::invalid_argument("Matrix: negative dimension");
        data_.assign(static_cast<std::size_t>(rows) * cols, fill);
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }

    double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

    double* row(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
    const double* row(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }

    std::span<const double> row_span(int r) const { return {row(r), static_cast<std::size_t>(cols_)}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

enum class Channel : int { Red = 0, Green = 1, Blue = 2 };

// Ordered subset of {R, G, B}; order is fixed as (R, G, B) restricted to the
// subset, so {G, R} is not representable by design.
class ChannelMask {
public:
    ChannelMask(bool red, bool green, bool blue) {
        if (red) selection_.push_back(Channel::Red);
        if (green) selection_.push_back(Channel::Green);
        if (blue) selection_.push_back(Channel::Blue);
        if (selection_.empty()) throw std::invalid_argument("ChannelMask: selection must be non-empty");
    }

    static ChannelMask rgb() { return {true, true, true}; }
    static ChannelMask rg() { return {true, true, false}; }
    static ChannelMask r() { return {true, false, false}; }

    // Accepts "r", "rg", "rgb" (and any R/G/B combination in canonical order).
    static ChannelMask parse(const std::string& s) {
        bool r = false, g = false, b = false;
        std::string last;
        for (char ch : s) {
            switch (ch) {
                case 'r': case 'R':
                    if (r || g || b) throw std::invalid_argument("ChannelMask: channels out of order in '" + s + "'");
                    r = true; break;
                case 'g': case 'G':
                    if (g || b) throw std::invalid_argument("ChannelMask: channels out of order in '" + s + "'");
                    g = true; break;
                case 'b': case 'B':
                    if (b) throw std::invalid_argument("ChannelMask: duplicate channel in '" + s + "'");
                    b = true; break;
                default:
                    throw std::invalid_argument("ChannelMask: unknown channel '" + std::string(1, ch) + "'");
            }
        }
        if (!r && !g && !b) throw std::invalid_argument("ChannelMask: empty mask string");
        return {r, g, b};
    }

    const std::vector<Channel>& selection() const { return selection_; }
    int count() const { return static_cast<int>(selection_.size()); }

    std::string name() const {
        std::string out;
        for (Channel c : selection_) out += "rgb"[static_cast<int>(c)];
        return out;
    }

    bool operator==(const ChannelMask& o) const { return selection_ == o.selection_; }

private:
    std::vector<Channel> selection_;
};

inline Tensor3 tensor_new(int channels, int height, int width, double fill) {
    return Tensor3(channels, height, width, fill);
}

// Copies the selected planes, keeping (R, G, B) order.
inline Tensor3 channel_select(const Tensor3& image, const ChannelMask& mask) {
    if (image.channels() != 3)
        throw ShapeError("channel_select: expected a 3-channel image, got " + std::to_string(image.channels()));
    Tensor3 out(mask.count(), image.height(), image.width());
    int dst = 0;
    for (Channel c : mask.selection()) {
        const double* src = image.plane(static_cast<int>(c));
        std::copy(src, src + image.plane_size(), out.plane(dst++));
    }
    return out;
}

// Raw intensities in [0, max_raw] to the unit interval.
inline Tensor3 normalize(const Tensor3& image, double max_raw = 255.0) {
    if (!(max_raw > 0.0)) throw std::invalid_argument("normalize: max_raw must be positive");
    Tensor3 out = image;
    for (double& v : out.values()) {
        if (!(v >= 0.0 && v <= max_raw))
            throw std::range_error("normalize: raw value " + std::to_string(v) + " outside [0, " +
                                   std::to_string(max_raw) + "]");
        v /= max_raw;
    }
    return out;
}

// Channel-major row vector; round-trips with reshape.
inline std::vector<double> flatten(const Tensor3& image) {
    return {image.values().begin(), image.values().end()};
}

inline Tensor3 reshape(const std::vector<double>& flat, int channels, int height, int width) {
    return Tensor3::from_data(channels, height, width, flat);
}

}  // namespace qlfb
