#pragma once

// Top-fraction binarization of explanation maps and mask comparison by IoU
// and RMSE. Metrics are fractions in [0,1].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "advxai/explain.hpp"
#include "advxai/image.hpp"
#include "advxai/rng.hpp"

namespace advxai {

struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> values;
    std::size_t selected_count = 0;
    bool tied = false;  // set when the source map was constant

    std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

inline BinaryMask to_binary_mask(const GroundTruthMask& m) {
    BinaryMask b{m.height, m.width, std::vector<std::uint8_t>(m.values.size()), 0, false};
    for (std::size_t i = 0; i < m.values.size(); ++i) {
        b.values[i] = m.values[i] ? 1 : 0;
        b.selected_count += b.values[i];
    }
    return b;
}

/// Number of pixels kept by the top-fraction rule: round(fraction * n) with
/// halves rounded up.
inline std::size_t top_count(double fraction, std::size_t pixels) {
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(pixels) + 0.5));
}

/// Keeps the k = round(fraction * H * W) highest-scoring pixels; equal scores
/// are ordered by ascending row-major index.
inline BinaryMask binarize_top_fraction(const ExplanationMap& map, double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("binarize: fraction must lie in (0,1)");
    const std::size_t n = map.scores.size();
    if (n != static_cast<std::size_t>(map.height) * static_cast<std::size_t>(map.width) || n == 0) {
        throw std::invalid_argument("binarize: map size does not match its dimensions");
    }
    for (const float v : map.scores)
        if (!std::isfinite(v)) throw std::invalid_argument("binarize: non-finite score");
    const std::size_t k = top_count(fraction, n);
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    auto before = [&](std::uint32_t a, std::uint32_t b) {
        return map.scores[a] != map.scores[b] ? map.scores[a] > map.scores[b] : a < b;
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);
    BinaryMask m{map.height, map.width, std::vector<std::uint8_t>(n, 0), k, false};
    for (std::size_t i = 0; i < k; ++i) m.values[order[i]] = 1;
    const auto [lo, hi] = std::minmax_element(map.scores.begin(), map.scores.end());
    m.tied = *lo == *hi;
    return m;
}

namespace detail {

inline void require_same_size(const BinaryMask& a, const BinaryMask& b, const char* what) {
    if (a.height != b.height || a.width != b.width || a.values.size() != b.values.size()) {
        throw std::invalid_argument(std::string(what) + ": mask sizes differ (" + std::to_string(a.height) + "x" +
                                    std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                                    std::to_string(b.width) + ")");
    }
}

}  // namespace detail

/// |Y and Yhat| / |Y or Yhat|; two empty masks are rejected.
inline double iou(const BinaryMask& y, const BinaryMask& yhat) {
    detail::require_same_size(y, yhat, "iou");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < y.values.size(); ++i) {
        inter += (y.values[i] && yhat.values[i]) ? 1 : 0;
        uni += (y.values[i] || yhat.values[i]) ? 1 : 0;
    }
    if (uni == 0) throw std::invalid_argument("iou: both masks are empty");
    return static_cast<double>(inter) / static_cast<double>(uni);
}

/// sqrt(mean squared per-pixel difference); for binary masks this is the
/// square root of the mismatch fraction.
inline double rmse(const BinaryMask& y, const BinaryMask& yhat) {
    detail::require_same_size(y, yhat, "rmse");
    std::size_t diff = 0;
    for (std::size_t i = 0; i < y.values.size(); ++i) diff += (y.values[i] != yhat.values[i]) ? 1 : 0;
    return std::sqrt(static_cast<double>(diff) / static_cast<double>(y.values.size()));
}

/// RMSE between a binary mask and continuous scores in [0,1].
inline double rmse_continuous(const BinaryMask& y, const ExplanationMap& map) {
    if (y.height != map.height || y.width != map.width) throw std::invalid_argument("rmse: mask/map sizes differ");
    double s = 0.0;
    for (std::size_t i = 0; i < y.values.size(); ++i) {
        const double d = static_cast<double>(y.values[i]) - static_cast<double>(map.scores[i]);
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(y.values.size()));
}

enum class RmseMode { binary, continuous };

inline std::string rmse_mode_name(RmseMode m) { return m == RmseMode::binary ? "binary" : "continuous"; }

inline RmseMode parse_rmse_mode(const std::string& s) {
    if (s == "binary") return RmseMode::binary;
    if (s == "continuous") return RmseMode::continuous;
    throw std::invalid_argument("metrics: unknown rmse mode '" + s + "' (expected binary or continuous)");
}

struct MetricResult {
    double iou = 0.0;
    double rmse = 0.0;
};

inline MetricResult score(const GroundTruthMask& groundtruth, const ExplanationMap& map, double fraction,
                          RmseMode mode = RmseMode::binary) {
    if (groundtruth.height != map.height || groundtruth.width != map.width) {
        throw std::invalid_argument("score: ground truth is " + std::to_string(groundtruth.height) + "x" +
                                    std::to_string(groundtruth.width) + ", map is " + std::to_string(map.height) +
                                    "x" + std::to_string(map.width));
    }
    const BinaryMask y = to_binary_mask(groundtruth);
    const BinaryMask yhat = binarize_top_fraction(map, fraction);
    MetricResult r;
    r.iou = iou(y, yhat);
    r.rmse = mode == RmseMode::binary ? rmse(y, yhat) : rmse_continuous(y, map);
    return r;
}

/// Uniformly random mask with exactly round(fraction * H * W) pixels set.
inline BinaryMask random_top_fraction_mask(int height, int width, double fraction, Rng& rng) {
    const std::size_t n = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(idx);
    const std::size_t k = top_count(fraction, n);
    BinaryMask m{height, width, std::vector<std::uint8_t>(n, 0), k, false};
    for (std::size_t i = 0; i < k; ++i) m.values[idx[i]] = 1;
    return m;
}

}  // namespace advxai
