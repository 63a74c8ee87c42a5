#pragma once

#include <array>
#include <map>
#include <numeric>
#include <vector>

#include "qlfb/common.hpp"
#include "qlfb/rng.hpp"

namespace qlfb {

struct SplitPlan {
    int shuffle_index = 0;
    std::uint64_t seed = 0;
    std::vector<int> train_idx;
    std::vector<int> val_idx;
    std::vector<int> test_idx;
};

inline std::uint64_t plan_hash(const SplitPlan& plan) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](const std::vector<int>& v) {
        const std::uint64_t n = v.size();
        h = fnv1a64(&n, sizeof(n), h);
        h = fnv1a64(v.data(), v.size() * sizeof(int), h);
    };
    mix(plan.train_idx);
    mix(plan.val_idx);
    mix(plan.test_idx);
    return h;
}

namespace detail {

// Per-class apportionment of n_c samples over the three parts: floors first,
// then the leftover 0..2 samples go to the parts with the largest fractional
// remainders. Every count lands within 1 of the exact fractional target.
inline std::array<int, 3> apportion_class(int n_c, const std::array<double, 3>& fractions) {
    std::array<double, 3> exact{};
    std::array<int, 3> count{};
    int assigned = 0;
    for (int p = 0; p < 3; ++p) {
        exact[p] = fractions[p] * n_c;
        count[p] = static_cast<int>(exact[p]);
        assigned += count[p];
    }
    int leftover = n_c - assigned;
    std::array<int, 3> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double fa = exact[a] - static_cast<int>(exact[a]);
        const double fb = exact[b] - static_cast<int>(exact[b]);
        if (fa != fb) return fa > fb;
        return a < b;
    });
    for (int i = 0; i < leftover; ++i) count[order[static_cast<std::size_t>(i)]]++;
    return count;
}

}  // namespace detail

// Stratified shuffled 3-way split. Guarantees: parts disjoint, union covers
// all indices, each part's total within 1 of fraction*N, and each class's
// count in each part within 1 of fraction*n_class. Deterministic per seed.
inline SplitPlan stratified_shuffle_split(const std::vector<int>& labels,
                                          std::array<double, 3> fractions = {0.8, 0.1, 0.1},
                                          std::uint64_t seed = 0, int shuffle_index = 0) {
    const double fsum = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(fsum - 1.0) > 1e-9) throw std::invalid_argument("stratified_shuffle_split: fractions must sum to 1");
    if (labels.empty()) throw std::invalid_argument("stratified_shuffle_split: empty label vector");

    std::map<int, std::vector<int>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int>(i));
    for (const auto& [cls, idx] : by_class)
        if (idx.size() < 3)
            throw std::invalid_argument("stratified_shuffle_split: class " + std::to_string(cls) + " has only " +
                                        std::to_string(idx.size()) + " samples (need >= 3)");

    const int n = static_cast<int>(labels.size());
    const int n_classes = static_cast<int>(by_class.size());

    std::vector<std::array<int, 3>> counts;   // per class, per part
    std::vector<std::array<double, 3>> exact; // fractional targets
    std::vector<int> class_sizes;
    counts.reserve(by_class.size());
    for (const auto& [cls, idx] : by_class) {
        const int n_c = static_cast<int>(idx.size());
        counts.push_back(detail::apportion_class(n_c, fractions));
        exact.push_back({fractions[0] * n_c, fractions[1] * n_c, fractions[2] * n_c});
        class_sizes.push_back(n_c);
    }

    // Per-class rounding can leave a part's global total more than 1 off.
    // Repair by moving single samples between parts inside one class, always
    // keeping every per-class count within 1 of its exact target.
    auto part_total = [&](int p) {
        int s = 0;
        for (const auto& c : counts) s += c[p];
        return s;
    };
    const int guard_limit = 10 * n + 100;
    for (int iter = 0; iter < guard_limit; ++iter) {
        std::array<double, 3> dev{};
        int worst = 0;
        for (int p = 0; p < 3; ++p) {
            dev[p] = part_total(p) - fractions[p] * n;
            if (std::abs(dev[p]) > std::abs(dev[worst])) worst = p;
        }
        if (std::abs(dev[worst]) <= 1.0 + 1e-9) break;

        const bool overfull = dev[worst] > 0;
        const int src_or_dst = worst;
        // Direct move between the two extreme parts when some class allows it.
        int other = 0;
        for (int p = 1; p < 3; ++p)
            if ((overfull && dev[p] < dev[other]) || (!overfull && dev[p] > dev[other])) other = p;
        const int from = overfull ? src_or_dst : other;
        const int to = overfull ? other : src_or_dst;

        int chosen = -1;
        for (int c = 0; c < n_classes; ++c) {
            if (counts[static_cast<std::size_t>(c)][from] >= exact[static_cast<std::size_t>(c)][from] - 1e-9 &&
                counts[static_cast<std::size_t>(c)][to] <= exact[static_cast<std::size_t>(c)][to] + 1e-9 &&
                counts[static_cast<std::size_t>(c)][from] > 0) {
                chosen = c;
                break;
            }
        }
        if (chosen >= 0) {
            counts[static_cast<std::size_t>(chosen)][from]--;
            counts[static_cast<std::size_t>(chosen)][to]++;
            continue;
        }
        // Fallback: one-sided move for the worst part, taking the partner
        // part that the donor/receiver class itself is off-balance in.
        bool moved = false;
        for (int c = 0; c < n_classes && !moved; ++c) {
            auto& cc = counts[static_cast<std::size_t>(c)];
            const auto& ce = exact[static_cast<std::size_t>(c)];
            if (overfull && cc[from] > ce[from] + 1e-9) {
                for (int p = 0; p < 3; ++p)
                    if (p != from && cc[p] < ce[p] - 1e-9) {
                        cc[from]--;
                        cc[p]++;
                        moved = true;
                        break;
                    }
            } else if (!overfull && cc[to] < ce[to] - 1e-9) {
                for (int p = 0; p < 3; ++p)
                    if (p != to && cc[p] > ce[p] + 1e-9) {
                        cc[p]--;
                        cc[to]++;
                        moved = true;
                        break;
                    }
            }
        }
        if (!moved) throw StateError("stratified_shuffle_split: could not balance part sizes");
    }

    SplitPlan plan;
    plan.shuffle_index = shuffle_index;
    plan.seed = seed;
    Rng rng(seed);
    int c = 0;
    for (auto& [cls, idx] : by_class) {
        rng.shuffle(idx);
        const auto& cc = counts[static_cast<std::size_t>(c++)];
        int pos = 0;
        for (int k = 0; k < cc[0]; ++k) plan.train_idx.push_back(idx[static_cast<std::size_t>(pos++)]);
        for (int k = 0; k < cc[1]; ++k) plan.val_idx.push_back(idx[static_cast<std::size_t>(pos++)]);
        for (int k = 0; k < cc[2]; ++k) plan.test_idx.push_back(idx[static_cast<std::size_t>(pos++)]);
    }
    std::sort(plan.train_idx.begin(), plan.train_idx.end());
    std::sort(plan.val_idx.begin(), plan.val_idx.end());
    std::sort(plan.test_idx.begin(), plan.test_idx.end());
    return plan;
}

// The ten fixed shuffles shared by every model and channel composition.
inline std::vector<SplitPlan> make_split_plans(const std::vector<int>& labels, int n_shuffles,
                                               std::uint64_t base_seed,
                                               std::array<double, 3> fractions = {0.8, 0.1, 0.1}) {
    std::vector<SplitPlan> plans;
    plans.reserve(static_cast<std::size_t>(n_shuffles));
    for (int s = 0; s < n_shuffles; ++s)
        plans.push_back(stratified_shuffle_split(labels, fractions, derive_seed(base_seed, 0x5f17, s), s));
    return plans;
}

}  // namespace qlfb
