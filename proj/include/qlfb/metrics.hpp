#pragma once

#include <algorithm>
#include <map>
#include <vector>

#include "qlfb/common.hpp"

namespace qlfb {

enum class F1Average { Macro, Micro, Weighted };

namespace detail {

struct ClassCounts {
    long tp = 0, fp = 0, fn = 0;
};

inline std::map<int, ClassCounts> confusion_counts(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
    if (y_true.size() != y_pred.size()) throw ShapeError("f1: label vectors differ in length");
    if (y_true.empty()) throw ShapeError("f1: empty label vectors");
    std::map<int, ClassCounts> counts;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        if (y_true[i] == y_pred[i]) {
            counts[y_true[i]].tp++;
        } else {
            counts[y_true[i]].fn++;
            counts[y_pred[i]].fp++;
        }
    }
    return counts;
}

inline double f1_from_counts(const ClassCounts& c) {
    const double p = (c.tp + c.fp == 0) ? 0.0 : static_cast<double>(c.tp) / (c.tp + c.fp);
    const double r = (c.tp + c.fn == 0) ? 0.0 : static_cast<double>(c.tp) / (c.tp + c.fn);
    return (p + r == 0.0) ? 0.0 : 2.0 * p * r / (p + r);
}

}  // namespace detail

// F1 = 2PR/(P+R) with P = TP/(TP+FP), R = TP/(TP+FN); 0/0 ratios are 0.
inline double f1_per_class(const std::vector<int>& y_true, const std::vector<int>& y_pred, int cls) {
    const auto counts = detail::confusion_counts(y_true, y_pred);
    const auto it = counts.find(cls);
    if (it == counts.end()) return 0.0;
    return detail::f1_from_counts(it->second);
}

// Averaged over the classes present in y_true; classes that occur only in
// y_pred are excluded from the average.
inline double f1_score(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                       F1Average average = F1Average::Macro) {
    const auto counts = detail::confusion_counts(y_true, y_pred);
    if (average == F1Average::Micro) {
        long tp = 0, fp = 0, fn = 0;
        for (const auto& [cls, c] : counts) {
            tp += c.tp;
            fp += c.fp;
            fn += c.fn;
        }
        return detail::f1_from_counts({tp, fp, fn});
    }
    double sum = 0.0;
    double weight_sum = 0.0;
    for (const auto& [cls, c] : counts) {
        const long support = c.tp + c.fn;
        if (support == 0) continue;  // class never appears in y_true
        const double w = (average == F1Average::Weighted) ? static_cast<double>(support) : 1.0;
        sum += w * detail::f1_from_counts(c);
        weight_sum += w;
    }
    return weight_sum == 0.0 ? 0.0 : sum / weight_sum;
}

inline double f1_macro(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
    return f1_score(y_true, y_pred, F1Average::Macro);
}

inline double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

// Sample standard deviation (n-1 denominator).
inline double sample_std(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean_of(xs);
    double acc = 0.0;
    for (double x : xs) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

}  // namespace qlfb
