#pragma once

// Independent reference implementations shared by the unit and acceptance
// suites. They favour obviousness over speed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <vector>

#include "advxai/explain.hpp"
#include "advxai/metrics.hpp"

namespace advxai::oracle {

inline std::set<std::size_t> selected(const BinaryMask& m) {
    std::set<std::size_t> s;
    for (std::size_t i = 0; i < m.values.size(); ++i)
        if (m.values[i]) s.insert(i);
    return s;
}

struct Counts {
    std::size_t intersection = 0;
    std::size_t union_size = 0;
    std::size_t mismatch = 0;
};

/// Set algebra over the selected pixel indices.
inline Counts count_pixels(const BinaryMask& a, const BinaryMask& b) {
    const auto sa = selected(a), sb = selected(b);
    std::vector<std::size_t> inter, uni, sym;
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
    std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(uni));
    std::set_symmetric_difference(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(sym));
    return {inter.size(), uni.size(), sym.size()};
}

inline BinaryMask random_mask(int h, int w, double p, Rng& rng) {
    BinaryMask m{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w), 0), 0, false};
    for (auto& v : m.values) {
        v = rng.uniform() < p ? 1 : 0;
        m.selected_count += v;
    }
    return m;
}

/// Top-k selection by a stable sort on descending score, so equal scores
/// keep ascending index order.
inline std::vector<std::uint8_t> top_k(const std::vector<float>& s, std::size_t k) {
    std::vector<std::size_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    std::vector<std::uint8_t> out(s.size(), 0);
    for (std::size_t i = 0; i < k; ++i) out[idx[i]] = 1;
    return out;
}

/// Map with scores drawn from a few coarse levels so ties are common; one
/// level gives an all-tied map.
inline std::vector<float> coarse_scores(std::size_t n, int levels, Rng& rng) {
    std::vector<float> s(n);
    for (auto& v : s) v = static_cast<float>(rng.below(static_cast<std::uint64_t>(levels))) / 8.0f;
    return s;
}

/// Average ranks, ties sharing the mean rank.
inline std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j);
        i = j + 1;
    }
    return r;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    const auto ra = ranks(a), rb = ranks(b);
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / static_cast<double>(ra.size());
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / static_cast<double>(rb.size());
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

struct LimeTrial {
    std::vector<double> weights;
    LimeResult result;
    double rho = 0.0;
};

/// LIME against a model that is exactly affine in the segment keep
/// indicators. Pixels take two values far from the image mean, so a segment
/// counts as kept when any of its pixels still shows its original value.
inline LimeTrial lime_affine_trial(std::uint64_t seed, int size, ExplainerConfig cfg) {
    Rng rng(seed);
    Image im(size, size);
    for (auto& v : im.pixels) v = rng.coin() ? 0.1f : 0.9f;
    const auto seg = grid_superpixels(size, size, cfg.grid);
    const auto segments = static_cast<std::size_t>(cfg.grid * cfg.grid);
    LimeTrial t;
    t.weights.resize(segments);
    for (auto& v : t.weights) v = rng.uniform(-0.05, 0.05);
    const double bias = 0.3;
    ProbabilityFn model = [&](std::span<const Image> batch) {
        std::vector<double> out;
        for (const auto& b : batch) {
            std::vector<bool> kept(segments, false);
            for (std::size_t p = 0; p < seg.size(); ++p)
                if (b.pixels[p * 3] == im.pixels[p * 3]) kept[static_cast<std::size_t>(seg[p])] = true;
            double v = bias;
            for (std::size_t j = 0; j < segments; ++j) v += kept[j] ? t.weights[j] : 0.0;
            out.push_back(v);
        }
        return out;
    };
    cfg.method = ExplainMethod::lime;
    cfg.seed = rng.next_u64();
    t.result = lime_explain(model, im, cfg);
    t.rho = spearman(t.result.coefficients, t.weights);
    return t;
}

}  // namespace advxai::oracle
