#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "advxai/metrics.hpp"
#include "oracles.hpp"

using namespace advxai;

namespace {

BinaryMask mask_of(int h, int w, const std::set<int>& on) {
    BinaryMask m{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w), 0), on.size(), false};
    for (int i : on) m.values[static_cast<std::size_t>(i)] = 1;
    return m;
}

ExplanationMap map_of(int h, int w, std::vector<float> s) { return ExplanationMap{h, w, std::move(s), false}; }

double log_choose(int n, int k) { return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0); }

}  // namespace

TEST(Metrics, HandExamples) {
    const auto y = mask_of(2, 2, {0, 1}), yhat = mask_of(2, 2, {1, 2});
    EXPECT_DOUBLE_EQ(iou(y, yhat), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(rmse(y, yhat), std::sqrt(0.5));
    const auto comp = mask_of(2, 2, {2, 3});
    EXPECT_DOUBLE_EQ(iou(y, comp), 0.0);
    EXPECT_DOUBLE_EQ(rmse(y, comp), 1.0);
    EXPECT_DOUBLE_EQ(iou(y, y), 1.0);
    EXPECT_DOUBLE_EQ(rmse(y, y), 0.0);
}

TEST(Metrics, RejectsEmptyUnionAndSizeMismatch) {
    EXPECT_THROW(iou(mask_of(2, 2, {}), mask_of(2, 2, {})), std::invalid_argument);
    EXPECT_THROW(iou(mask_of(2, 2, {0}), mask_of(2, 3, {0})), std::invalid_argument);
    EXPECT_THROW(rmse(mask_of(2, 2, {0}), mask_of(3, 2, {0})), std::invalid_argument);
}

TEST(Metrics, BruteForceOracleOnRandomPairs) {
    Rng rng(1);
    for (int trial = 0; trial < 1000; ++trial) {
        const int h = 1 + static_cast<int>(rng.below(12)), w = 1 + static_cast<int>(rng.below(12));
        const auto y = oracle::random_mask(h, w, rng.uniform(), rng);
        const auto yhat = oracle::random_mask(h, w, rng.uniform(), rng);
        const auto c = oracle::count_pixels(y, yhat);
        if (c.union_size == 0) {
            EXPECT_THROW(iou(y, yhat), std::invalid_argument);
        } else {
            const double v = iou(y, yhat);
            EXPECT_EQ(v, static_cast<double>(c.intersection) / static_cast<double>(c.union_size));
            EXPECT_EQ(v, iou(yhat, y));
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
        const double r = rmse(y, yhat);
        EXPECT_EQ(r, std::sqrt(static_cast<double>(c.mismatch) / (h * w)));
        EXPECT_EQ(r, rmse(yhat, y));
        EXPECT_EQ(std::llround(r * r * h * w), static_cast<long long>(c.mismatch));
    }
}

TEST(Metrics, TopCountRounding) {
    EXPECT_EQ(top_count(0.15, 64 * 64), 614u);
    EXPECT_EQ(top_count(0.5, 3), 2u);
    EXPECT_EQ(top_count(0.15, 10), 2u);
    EXPECT_EQ(top_count(0.25, 4), 1u);
}

TEST(Metrics, BinarizeMatchesStableSortOracle) {
    Rng rng(2);
    for (int trial = 0; trial < 1000; ++trial) {
        const int h = 2 + static_cast<int>(rng.below(10)), w = 2 + static_cast<int>(rng.below(10));
        const int levels = trial % 4 == 0 ? 1 : 1 + static_cast<int>(rng.below(6));
        const auto s = oracle::coarse_scores(static_cast<std::size_t>(h * w), levels, rng);
        const double f = rng.uniform(0.05, 0.95);
        const auto m = binarize_top_fraction(map_of(h, w, s), f);
        const std::size_t k = top_count(f, s.size());
        EXPECT_EQ(m.selected_count, k);
        EXPECT_EQ(static_cast<std::size_t>(std::count(m.values.begin(), m.values.end(), 1)), k);
        EXPECT_EQ(m.values, oracle::top_k(s, k));
        EXPECT_EQ(m.tied, std::all_of(s.begin(), s.end(), [&](float v) { return v == s[0]; }));
    }
}

TEST(Metrics, AllTiedMapSelectsLeadingPixels) {
    const auto m = binarize_top_fraction(map_of(2, 5, std::vector<float>(10, 0.0f)), 0.3);
    EXPECT_TRUE(m.tied);
    EXPECT_EQ(m.values, (std::vector<std::uint8_t>{1, 1, 1, 0, 0, 0, 0, 0, 0, 0}));
}

TEST(Metrics, BinarizeRejectsBadInput) {
    EXPECT_THROW(binarize_top_fraction(map_of(1, 2, {0.1f, 0.2f}), 0.0), std::invalid_argument);
    EXPECT_THROW(binarize_top_fraction(map_of(1, 2, {0.1f, 0.2f}), 1.0), std::invalid_argument);
    EXPECT_THROW(binarize_top_fraction(map_of(1, 2, {0.1f, NAN}), 0.5), std::invalid_argument);
    EXPECT_THROW(binarize_top_fraction(map_of(2, 2, {0.1f, 0.2f}), 0.5), std::invalid_argument);
}

TEST(Metrics, InvariantUnderIncreasingTransforms) {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<float> s(64), t(64);
        for (std::size_t i = 0; i < s.size(); ++i) {
            const float k = static_cast<float>(rng.below(40));
            s[i] = k;
            t[i] = k * k + 7.0f;  // exact in float for small integers
        }
        GroundTruthMask gt(8, 8);
        for (auto& v : gt.values) v = rng.coin() ? 1 : 0;
        gt.values[0] = 1;
        const auto a = score(gt, map_of(8, 8, s), 0.15), b = score(gt, map_of(8, 8, t), 0.15);
        EXPECT_EQ(a.iou, b.iou);
        EXPECT_EQ(a.rmse, b.rmse);
    }
}

TEST(Metrics, MoreOverlapNeverLowersIou) {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const auto y = oracle::random_mask(6, 6, 0.4, rng);
        auto yhat = oracle::random_mask(6, 6, 0.3, rng);
        // Swap one selected pixel outside y for one unselected pixel inside y.
        int out = -1, in = -1;
        for (int i = 0; i < 36; ++i) {
            if (yhat.values[i] && !y.values[i]) out = i;
            if (!yhat.values[i] && y.values[i]) in = i;
        }
        if (out < 0 || in < 0) continue;
        const double before = iou(y, yhat), rbefore = rmse(y, yhat);
        yhat.values[out] = 0;
        yhat.values[in] = 1;
        EXPECT_GT(iou(y, yhat), before);
        EXPECT_LT(rmse(y, yhat), rbefore);
    }
}

TEST(Metrics, ScoreModes) {
    GroundTruthMask gt(2, 2);
    gt.values = {1, 0, 0, 0};
    const auto map = map_of(2, 2, {1.0f, 0.5f, 0.0f, 0.0f});
    const auto b = score(gt, map, 0.25);
    EXPECT_DOUBLE_EQ(b.iou, 1.0);
    EXPECT_DOUBLE_EQ(b.rmse, 0.0);
    const auto c = score(gt, map, 0.25, RmseMode::continuous);
    EXPECT_DOUBLE_EQ(c.rmse, std::sqrt(0.25 / 4.0));
    EXPECT_EQ(parse_rmse_mode(rmse_mode_name(RmseMode::continuous)), RmseMode::continuous);
    EXPECT_THROW(parse_rmse_mode("l2"), std::invalid_argument);
    EXPECT_THROW(score(GroundTruthMask(3, 3), map, 0.25), std::invalid_argument);
}

TEST(Metrics, RandomBaselineMatchesHypergeometricExpectation) {
    // Ground truth of m pixels against k random pixels out of n: the overlap
    // is hypergeometric and E[IoU] = sum_i P(i) * i / (m + k - i).
    const int n = 32 * 32, m = 200;
    const std::size_t k = top_count(0.15, n);
    double expected = 0.0;
    for (int i = 0; i <= static_cast<int>(k) && i <= m; ++i) {
        const double lp = log_choose(m, i) + log_choose(n - m, static_cast<int>(k) - i) - log_choose(n, static_cast<int>(k));
        expected += std::exp(lp) * i / (m + static_cast<double>(k) - i);
    }
    std::set<int> on;
    for (int i = 0; i < m; ++i) on.insert(i * 5);
    const auto y = mask_of(32, 32, on);
    Rng rng(5);
    double total = 0.0;
    const int trials = 2000;
    for (int t = 0; t < trials; ++t) {
        const auto r = random_top_fraction_mask(32, 32, 0.15, rng);
        ASSERT_EQ(r.selected_count, k);
        total += iou(y, r);
    }
    EXPECT_NEAR(total / trials, expected, 0.02);
}
