#include <gtest/gtest.h>

#include <cmath>

#include "advxai/attacks.hpp"

using namespace advxai;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.input_size = 16;
    c.conv_blocks = {{4, 3, 1}, {6, 3, 1}};
    c.dense_units = 8;
    c.num_classes = 3;
    return c;
}

Image random_image(int size, Rng& rng) {
    Image im(size, size);
    for (auto& v : im.pixels) v = static_cast<float>(rng.uniform());
    return im;
}

template <typename T>
double loss_at(const Model<T>& m, const Image& im, int label) {
    return -std::log(predict(m, im).probabilities[static_cast<std::size_t>(label)]);
}

}  // namespace

TEST(Attacks, ParseMethodNames) {
    for (auto m : {AttackMethod::none, AttackMethod::fgsm, AttackMethod::bim})
        EXPECT_EQ(parse_attack_method(attack_method_name(m)), m);
    EXPECT_THROW(parse_attack_method("pgd"), std::invalid_argument);
}

TEST(Attacks, ConfigValidation) {
    AttackConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_DOUBLE_EQ(c.step(), 0.0025);
    c.alpha = 0.05;
    EXPECT_THROW(c.validate(), std::invalid_argument);  // alpha above epsilon
    c = AttackConfig{};
    c.iterations = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = AttackConfig{};
    c.epsilon = 1.5;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = AttackConfig{};
    c.clip_min = 1.0f;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Attacks, SignOfZeroIsZero) {
    EXPECT_EQ(sign_of(0.0), 0.0f);
    EXPECT_EQ(sign_of(-0.0), 0.0f);
    EXPECT_EQ(sign_of(1e-300), 1.0f);
    EXPECT_EQ(sign_of(-3.0), -1.0f);
}

TEST(Attacks, InputGradientMatchesFiniteDifferences) {
    const auto m = build_model<double>(tiny_config(), 4);
    Rng rng(9);
    const Image im = random_image(16, rng);
    const auto g = loss_input_gradient(m, im, 1);
    // Perturb in double through a tensor copy so the probe is not quantized to float.
    const double h = 1e-5;
    for (int probe = 0; probe < 12; ++probe) {
        const int y = static_cast<int>(rng.below(16)), x = static_cast<int>(rng.below(16)),
                  c = static_cast<int>(rng.below(3));
        auto t = image_to_tensor<double>(im);
        auto loss_of = [&](double delta) {
            auto u = t;
            u.at(0, c, y, x) += delta;
            auto fp = forward(m, u);
            return -std::log(make_prediction(fp.tape.value(fp.logits), 0).probabilities[1]);
        };
        const double fd = (loss_of(h) - loss_of(-h)) / (2 * h);
        EXPECT_NEAR(g.at(0, c, y, x), fd, 1e-6 + 1e-4 * std::abs(fd));
    }
}

TEST(Attacks, ZeroEpsilonIsIdentity) {
    const auto m = build_model<float>(tiny_config(), 2);
    Rng rng(3);
    const Image im = random_image(16, rng);
    EXPECT_EQ(fgsm(m, im, 0, 0.0), im);
    AttackConfig c;
    c.epsilon = 0.0;
    EXPECT_EQ(run_attack(m, im, 0, AttackMethod::none, c), im);
}

TEST(Attacks, FgsmStepsByExactlyEpsilonOrClips) {
    const auto m = build_model<float>(tiny_config(), 2);
    Rng rng(4);
    const Image im = random_image(16, rng);
    const auto g = loss_input_gradient(m, im, 2);
    const Image adv = fgsm(m, im, 2, 0.025);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            for (int c = 0; c < 3; ++c) {
                const float s = sign_of(g.at(0, c, y, x));
                const float want = std::clamp(im.at(y, x, c) + 0.025f * s, 0.0f, 1.0f);
                EXPECT_EQ(adv.at(y, x, c), want);
            }
}

TEST(Attacks, StaysInsideEpsilonBall) {
    const auto m = build_model<float>(tiny_config(), 6);
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const Image im = random_image(16, rng);
        const int label = static_cast<int>(rng.below(3));
        for (double eps : {0.01, 0.025, 0.1}) {
            AttackConfig c;
            c.epsilon = eps;
            c.iterations = 7;
            const Image f = fgsm(m, im, label, eps);
            const Image b = bim(m, im, label, c);
            EXPECT_TRUE(within_epsilon_ball(im, f, eps));
            EXPECT_TRUE(within_epsilon_ball(im, b, eps));
            EXPECT_LE(linf_distance(im, b), eps + 1e-6);
        }
    }
}

TEST(Attacks, SingleStepBimEqualsFgsm) {
    const auto m = build_model<float>(tiny_config(), 7);
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        const Image im = random_image(16, rng);
        AttackConfig c;
        c.epsilon = 0.025;
        c.iterations = 1;
        c.alpha = 0.025;
        EXPECT_EQ(bim(m, im, trial % 3, c), fgsm(m, im, trial % 3, 0.025));
    }
}

TEST(Attacks, FgsmRaisesLossForSmallEpsilon) {
    const auto m = build_model<double>(tiny_config(), 10);
    Rng rng(12);
    int raised = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Image im = random_image(16, rng);
        for (auto& v : im.pixels) v = 0.25f + 0.5f * v;  // keep clear of the clip bounds
        raised += loss_at(m, fgsm(m, im, trial % 3, 1e-3), trial % 3) > loss_at(m, im, trial % 3) ? 1 : 0;
    }
    EXPECT_EQ(raised, 20);
}

TEST(Attacks, RejectsBadInputs) {
    const auto m = build_model<float>(tiny_config(), 2);
    Rng rng(1);
    Image im = random_image(16, rng);
    EXPECT_THROW(fgsm(m, im, 3, 0.01), std::invalid_argument);
    EXPECT_THROW(fgsm(m, im, 0, -0.01), std::invalid_argument);
    EXPECT_THROW(fgsm(m, random_image(12, rng), 0, 0.01), std::invalid_argument);
    im.pixels[0] = 1.5f;
    EXPECT_THROW(fgsm(m, im, 0, 0.01), std::invalid_argument);
}

TEST(Attacks, BatchRecordsFailuresAndContinues) {
    const auto m = build_model<float>(tiny_config(), 2);
    Rng rng(2);
    std::vector<Sample> samples(3);
    for (int i = 0; i < 3; ++i) {
        samples[i].id = "s" + std::to_string(i);
        samples[i].image = random_image(16, rng);
        samples[i].label = i;
    }
    samples[1].label = 7;
    const auto out = attack_batch(m, std::span<const Sample>(samples), AttackMethod::fgsm, AttackConfig{});
    ASSERT_EQ(out.size(), 3u);
    EXPECT_TRUE(out[0].ok());
    EXPECT_FALSE(out[1].ok());
    EXPECT_FALSE(out[1].adversarial.has_value());
    EXPECT_NE(out[1].error.find("label 7"), std::string::npos);
    EXPECT_TRUE(out[2].ok());
    EXPECT_EQ(count_failures(std::span<const AttackOutcome>(out)), 1u);
    const auto none = attack_batch(m, std::span<const Sample>(samples), AttackMethod::none, AttackConfig{});
    EXPECT_EQ(*none[0].adversarial, samples[0].image);
    EXPECT_EQ(none[0].attacked, none[0].clean);
    EXPECT_THROW(attack_batch(m, std::span<const Sample>(), AttackMethod::fgsm, AttackConfig{}),
                 std::invalid_argument);
}
