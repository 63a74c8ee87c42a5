#pragma once

#include <string>
#include <vector>

#include "qlfb/tensor.hpp"

namespace qlfb {

// The three label schemes. RFPP3 is the 3-class plaque-percentage task;
// RFMQH5 and MSLP4 are the 5- and 4-class proxies.
enum class LabelScheme { RFPP3, RFMQH5, MSLP4 };

inline int scheme_classes(LabelScheme s) {
    switch (s) {
        case LabelScheme::RFPP3: return 3;
        case LabelScheme::RFMQH5: return 5;
        case LabelScheme::MSLP4: return 4;
    }
    return 0;
}

inline std::string scheme_name(LabelScheme s) {
    switch (s) {
        case LabelScheme::RFPP3: return "rfpp3";
        case LabelScheme::RFMQH5: return "rfmqh5";
        case LabelScheme::MSLP4: return "mslp4";
    }
    return "?";
}

inline LabelScheme parse_scheme(const std::string& name) {
    if (name == "rfpp3") return LabelScheme::RFPP3;
    if (name == "rfmqh5") return LabelScheme::RFMQH5;
    if (name == "mslp4") return LabelScheme::MSLP4;
    throw std::invalid_argument("unknown label scheme '" + name + "'");
}

// Images with integer class labels. ground_truth_fractions keeps the
// generator's realized plaque fraction per image (empty for loaded data
// without fractions).
struct Dataset {
    std::vector<Tensor3> images;
    std::vector<int> labels;
    LabelScheme scheme = LabelScheme::RFPP3;
    std::vector<double> ground_truth_fractions;

    int size() const { return static_cast<int>(images.size()); }

    void validate() const {
        if (images.size() != labels.size())
            throw ConsistencyError("Dataset: image/label count mismatch (" + std::to_string(images.size()) + " vs " +
                                   std::to_string(labels.size()) + ")");
        if (!ground_truth_fractions.empty() && ground_truth_fractions.size() != images.size())
            throw ConsistencyError("Dataset: fraction count mismatch");
        const int k = scheme_classes(scheme);
        for (int l : labels)
            if (l < 0 || l >= k) throw ConsistencyError("Dataset: label " + std::to_string(l) + " out of range");
        for (std::size_t i = 1; i < images.size(); ++i)
            if (!images[i].same_shape(images[0])) throw ConsistencyError("Dataset: images differ in resolution");
    }

    Dataset subset(const std::vector<int>& indices) const {
        Dataset out;
        out.scheme = scheme;
        out.images.reserve(indices.size());
        out.labels.reserve(indices.size());
        for (int i : indices) {
            out.images.push_back(images[static_cast<std::size_t>(i)]);
            out.labels.push_back(labels[static_cast<std::size_t>(i)]);
            if (!ground_truth_fractions.empty())
                out.ground_truth_fractions.push_back(ground_truth_fractions[static_cast<std::size_t>(i)]);
        }
        return out;
    }

    Dataset select_channels(const ChannelMask& mask) const {
        Dataset out;
        out.scheme = scheme;
        out.labels = labels;
        out.ground_truth_fractions = ground_truth_fractions;
        out.images.reserve(images.size());
        for (const auto& img : images) out.images.push_back(channel_select(img, mask));
        return out;
    }
};

// Flattened pixel matrix for the shallow models, one image per row.
inline Matrix dataset_to_matrix(const Dataset& ds) {
    if (ds.images.empty()) return {};
    const auto& first = ds.images.front();
    const int d = static_cast<int>(first.size());
    Matrix X(ds.size(), d);
    for (int i = 0; i < ds.size(); ++i) {
        const auto vals = ds.images[static_cast<std::size_t>(i)].values();
        std::copy(vals.begin(), vals.end(), X.row(i));
    }
    return X;
}

}  // namespace qlfb
