#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "advxai/rng.hpp"
#include "advxai/tape.hpp"

using namespace advxai;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

using Build = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

/// Compares reverse-mode gradients of sum(op(inputs) * R) for a fixed random
/// R against central differences, input by input.
void expect_gradients_match(const Build& build, const std::vector<Tensor<double>>& inputs, double tol = 1e-7) {
    Rng rng(99);
    Shape out_shape;
    {
        Tape<double> t;
        std::vector<Var> vars;
        for (const auto& x : inputs) vars.push_back(t.leaf(x, false));
        out_shape = t.value(build(t, vars)).shape();
    }
    const Tensor<double> r = random_tensor(out_shape, rng);
    auto loss_of = [&](const std::vector<Tensor<double>>& xs, std::vector<Var>* vars_out, Tape<double>& t) {
        std::vector<Var> vars;
        for (const auto& x : xs) vars.push_back(t.leaf(x, true));
        const Var out = build(t, vars);
        const Var loss = sum(t, mul(t, out, t.leaf(r)));
        if (vars_out) *vars_out = vars;
        return loss;
    };
    Tape<double> tape;
    std::vector<Var> vars;
    const Var loss = loss_of(inputs, &vars, tape);
    tape.backward(loss);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto f = [&](const Tensor<double>& xi) {
            auto xs = inputs;
            xs[i] = xi;
            Tape<double> t;
            return t.value(loss_of(xs, nullptr, t))[0];
        };
        const auto fd = finite_difference_gradient(f, inputs[i], 1e-6);
        const auto& g = tape.grad(vars[i]);
        for (std::size_t k = 0; k < fd.size(); ++k) {
            EXPECT_NEAR(g[k], fd[k], tol * std::max(1.0, std::abs(fd[k]))) << "input " << i << " element " << k;
        }
    }
}

/// Direct 7-loop cross-correlation with zero padding.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& k, const Tensor<double>& b, std::size_t stride,
                          std::size_t pad) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t f = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
    Tensor<double> out({n, f, oh, ow});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < f; ++o)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xx = 0; xx < ow; ++xx) {
                    double s = b[o];
                    for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t dy = 0; dy < kh; ++dy)
                            for (std::size_t dx = 0; dx < kw; ++dx) {
                                const long iy = static_cast<long>(y * stride + dy) - static_cast<long>(pad);
                                const long ix = static_cast<long>(xx * stride + dx) - static_cast<long>(pad);
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                                s += x.at(i, ch, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                                     k.at(o, ch, dy, dx);
                            }
                    out.at(i, o, y, xx) = s;
                }
    return out;
}

}  // namespace

struct ConvCase {
    std::size_t n, c, h, w, f, k, stride, pad;
};

class ConvForward : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvForward, MatchesNaiveLoops) {
    const auto p = GetParam();
    Rng rng(p.h * 31 + p.k);
    const auto x = random_tensor({p.n, p.c, p.h, p.w}, rng);
    const auto k = random_tensor({p.f, p.c, p.k, p.k}, rng);
    const auto b = random_tensor({p.f}, rng);
    Tape<double> t;
    const Var out = conv2d(t, t.leaf(x), t.leaf(k), t.leaf(b), p.stride, p.pad);
    const auto expect = naive_conv(x, k, b, p.stride, p.pad);
    ASSERT_EQ(t.value(out).shape(), expect.shape());
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(t.value(out)[i], expect[i], 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvForward,
                         ::testing::Values(ConvCase{1, 1, 5, 5, 1, 3, 1, 0}, ConvCase{2, 3, 6, 7, 4, 3, 1, 1},
                                           ConvCase{1, 2, 8, 8, 3, 3, 2, 1}, ConvCase{2, 2, 5, 6, 2, 5, 1, 2},
                                           ConvCase{1, 3, 7, 7, 2, 1, 1, 0}, ConvCase{1, 1, 9, 9, 2, 4, 3, 0}));

TEST(TapeGradients, Conv2d) {
    Rng rng(1);
    for (const auto& [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 1}, {2, 1}, {1, 0}}) {
        expect_gradients_match(
            [&](Tape<double>& t, const std::vector<Var>& v) { return conv2d(t, v[0], v[1], v[2], stride, pad); },
            {random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)});
    }
}

TEST(TapeGradients, ReluAwayFromKink) {
    Rng rng(2);
    auto x = random_tensor({2, 3, 4, 4}, rng);
    for (auto& v : x.data())
        if (std::abs(v) < 0.05) v = 0.3;
    expect_gradients_match([](Tape<double>& t, const std::vector<Var>& v) { return relu(t, v[0]); }, {x});
}

TEST(TapeGradients, MaxPoolWithDistinctValues) {
    Rng rng(3);
    auto x = random_tensor({1, 2, 6, 6}, rng);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += 0.01 * static_cast<double>(i);  // no near-ties
    expect_gradients_match([](Tape<double>& t, const std::vector<Var>& v) { return max_pool2d(t, v[0], 2, 2); }, {x});
    expect_gradients_match([](Tape<double>& t, const std::vector<Var>& v) { return max_pool2d(t, v[0], 3, 2); }, {x});
}

TEST(TapeGradients, PoolingFlattenDense) {
    Rng rng(4);
    expect_gradients_match([](Tape<double>& t, const std::vector<Var>& v) { return global_avg_pool(t, v[0]); },
                           {random_tensor({2, 3, 4, 5}, rng)});
    expect_gradients_match([](Tape<double>& t, const std::vector<Var>& v) { return flatten(t, v[0]); },
                           {random_tensor({2, 3, 2, 2}, rng)});
    expect_gradients_match([](Tape<double>& t, const std::vector<Var>& v) { return dense(t, v[0], v[1], v[2]); },
                           {random_tensor({3, 5}, rng), random_tensor({5, 4}, rng), random_tensor({4}, rng)});
}

TEST(TapeGradients, LossesAndElementwise) {
    Rng rng(5);
    const std::vector<int> labels = {2, 0, 3};
    expect_gradients_match(
        [&](Tape<double>& t, const std::vector<Var>& v) { return softmax_cross_entropy(t, v[0], labels); },
        {random_tensor({3, 4}, rng, -3, 3)});
    expect_gradients_match([&](Tape<double>& t, const std::vector<Var>& v) { return pick(t, v[0], labels); },
                           {random_tensor({3, 4}, rng)});
    expect_gradients_match([](Tape<double>& t, const std::vector<Var>& v) { return add(t, v[0], v[1]); },
                           {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
    expect_gradients_match([](Tape<double>& t, const std::vector<Var>& v) { return mul(t, v[0], v[1]); },
                           {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
    expect_gradients_match([](Tape<double>& t, const std::vector<Var>& v) { return shift(t, v[0], 0.25); },
                           {random_tensor({4}, rng)});
    expect_gradients_match([](Tape<double>& t, const std::vector<Var>& v) { return scale(t, v[0], -1.5); },
                           {random_tensor({4}, rng)});
}

TEST(TapeGradients, ReusedNodeAccumulates) {
    Tape<double> t;
    const Var x = t.leaf(Tensor<double>({3}, std::vector<double>{1, 2, 3}), true);
    const Var y = sum(t, mul(t, x, x));  // sum x^2
    t.backward(y);
    EXPECT_EQ(t.grad(x).values(), (std::vector<double>{2, 4, 6}));
}

TEST(Tape, ReluGradientAtZeroIsZero) {
    Tape<double> t;
    const Var x = t.leaf(Tensor<double>({3}, std::vector<double>{-1, 0, 2}), true);
    t.backward(sum(t, relu(t, x)));
    EXPECT_EQ(t.grad(x).values(), (std::vector<double>{0, 0, 1}));
}

TEST(Tape, MaxPoolTiesRouteToFirstElement) {
    Tape<double> t;
    const Var x = t.leaf(Tensor<double>({1, 1, 2, 2}, 5.0), true);
    t.backward(sum(t, max_pool2d(t, x, 2, 2)));
    EXPECT_EQ(t.grad(x).values(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Tape, SoftmaxCrossEntropyIsStableForLargeLogits) {
    Tape<double> t;
    const Var z = t.leaf(Tensor<double>({1, 3}, std::vector<double>{1000, 1001, 999}), true);
    const int label[] = {0};
    const Var loss = softmax_cross_entropy(t, z, std::span<const int>(label));
    const double lse = 1001 + std::log(std::exp(-1.0) + 1.0 + std::exp(-2.0));
    EXPECT_NEAR(t.value(loss)[0], lse - 1000, 1e-12);
    t.backward(loss);
    EXPECT_TRUE(t.grad(z).all_finite());
}

TEST(Tape, SoftmaxRowsSumToOne) {
    Rng rng(6);
    const auto p = softmax_rows(random_tensor({4, 5}, rng, -50, 50));
    for (std::size_t r = 0; r < 4; ++r) {
        double s = 0;
        for (std::size_t j = 0; j < 5; ++j) s += p[r * 5 + j];
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Tape, RejectsBadLabels) {
    Tape<double> t;
    const Var z = t.leaf(Tensor<double>({2, 3}), true);
    const int bad[] = {0, 3};
    EXPECT_THROW(softmax_cross_entropy(t, z, std::span<const int>(bad)), std::invalid_argument);
    const int short_labels[] = {0};
    EXPECT_THROW(softmax_cross_entropy(t, z, std::span<const int>(short_labels)), std::invalid_argument);
}

TEST(Tape, BackwardContract) {
    Tape<double> t;
    const Var x = t.leaf(Tensor<double>({2}, 1.0), true);
    const Var y = scale(t, x, 2.0);
    EXPECT_THROW(t.backward(y), std::invalid_argument);  // not a scalar
    const Var s = sum(t, y);
    t.backward(s);
    EXPECT_TRUE(t.consumed());
    EXPECT_THROW(t.backward(s), std::logic_error);
    EXPECT_THROW(t.leaf(Tensor<double>({1})), std::logic_error);
}

TEST(Tape, NoGradientForConstants) {
    Tape<double> t;
    const Var c = t.leaf(Tensor<double>({2}, 3.0), false);
    const Var x = t.leaf(Tensor<double>({2}, 1.0), true);
    const Var s = sum(t, mul(t, c, x));
    EXPECT_FALSE(t.requires_grad(c));
    EXPECT_TRUE(t.requires_grad(s));
    t.backward(s);
    EXPECT_FALSE(t.has_grad(c));
    EXPECT_THROW(t.grad(c), std::logic_error);
    EXPECT_EQ(t.grad(x).values(), (std::vector<double>{3, 3}));
}

TEST(Tape, ConvShapeErrorsNameTheDimension) {
    Tape<double> t;
    const Var x = t.leaf(Tensor<double>({1, 3, 5, 5}));
    const Var k = t.leaf(Tensor<double>({2, 2, 3, 3}));
    const Var b = t.leaf(Tensor<double>({2}));
    try {
        conv2d(t, x, k, b, 1, 1);
        FAIL() << "expected a channel mismatch";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos);
    }
    const Var big = t.leaf(Tensor<double>({2, 3, 9, 9}));
    EXPECT_THROW(conv2d(t, x, big, b, 1, 0), std::invalid_argument);
    EXPECT_THROW(conv2d(t, x, t.leaf(Tensor<double>({2, 3, 3, 3})), b, 0, 0), std::invalid_argument);
}

TEST(Tape, FiniteDifferenceRejectsNonPositiveStep) {
    auto f = [](const Tensor<double>& x) { return x[0]; };
    EXPECT_THROW(finite_difference_gradient(f, Tensor<double>({1}), 0.0), std::invalid_argument);
}
