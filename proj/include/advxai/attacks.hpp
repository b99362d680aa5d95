#pragma once

// Non-targeted FGSM and BIM attacks driven by the input gradient of the
// cross-entropy loss at the true label.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "advxai/dataset.hpp"
#include "advxai/image.hpp"
#include "advxai/model.hpp"

namespace advxai {

enum class AttackMethod { none, fgsm, bim };

inline std::string attack_method_name(AttackMethod m) {
    switch (m) {
        case AttackMethod::none:
            return "none";
        case AttackMethod::fgsm:
            return "fgsm";
        case AttackMethod::bim:
            return "bim";
    }
    return "?";
}

inline AttackMethod parse_attack_method(const std::string& s) {
    if (s == "none") return AttackMethod::none;
    if (s == "fgsm") return AttackMethod::fgsm;
    if (s == "bim") return AttackMethod::bim;
    throw std::invalid_argument("attack: unknown method '" + s + "' (expected none, fgsm or bim)");
}

struct AttackConfig {
    double epsilon = 0.025;  // L-inf budget as a fraction of the [0,1] range
    double alpha = 0.0;      // BIM step; 0 selects epsilon / iterations
    int iterations = 10;     // BIM only
    float clip_min = 0.0f;
    float clip_max = 1.0f;

    double step() const { return alpha > 0.0 ? alpha : (iterations > 0 ? epsilon / iterations : 0.0); }

    void validate() const {
        if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("attack: epsilon must lie in [0,1]");
        if (iterations < 1) throw std::invalid_argument("attack: iterations must be positive");
        if (alpha < 0.0) throw std::invalid_argument("attack: alpha must be non-negative");
        const double a = step();
        if (a > epsilon || (epsilon > 0.0 && !(a > 0.0))) {
            throw std::invalid_argument("attack: step alpha must satisfy 0 < alpha <= epsilon");
        }
        if (!(clip_min < clip_max)) throw std::invalid_argument("attack: clip_min must be below clip_max");
    }
};

inline float sign_of(double g) { return g > 0.0 ? 1.0f : (g < 0.0 ? -1.0f : 0.0f); }

/// Gradient of the cross-entropy loss at `label` with respect to the input
/// pixels, as an [1,3,H,W] tensor.
template <typename T>
Tensor<T> loss_input_gradient(const Model<T>& model, const Image& image, int label) {
    check_image(model, image);
    if (label < 0 || label >= model.config().num_classes) {
        throw std::invalid_argument("attack: label " + std::to_string(label) + " outside [0," +
                                    std::to_string(model.config().num_classes) + ")");
    }
    auto fp = forward(model, image_to_tensor<T>(image), true, false);
    const int labels[] = {label};
    const Var loss = softmax_cross_entropy(fp.tape, fp.logits, std::span<const int>(labels));
    fp.tape.backward(loss);
    Tensor<T> g = fp.tape.grad(fp.input);
    if (!g.all_finite()) {
        throw std::runtime_error("attack: non-finite input gradient (loss " + std::to_string(fp.tape.value(loss)[0]) +
                                 ")");
    }
    return g;
}

namespace detail {

inline void check_attack_input(const Image& image) {
    if (!image.in_unit_range()) throw std::invalid_argument("attack: input image has pixels outside [0,1]");
}

}  // namespace detail

/// x_adv = clamp(x + epsilon * sign(grad_x J(x, y)), 0, 1), sign(0) = 0.
template <typename T>
Image fgsm(const Model<T>& model, const Image& image, int true_label, double epsilon,
           float clip_min = 0.0f, float clip_max = 1.0f) {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("attack: epsilon must lie in [0,1]");
    detail::check_attack_input(image);
    const Tensor<T> g = loss_input_gradient(model, image, true_label);
    const auto eps = static_cast<float>(epsilon);
    Image adv = image;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const float s = sign_of(static_cast<double>(g.at(0, c, y, x)));
                adv.at(y, x, c) = std::clamp(image.at(y, x, c) + eps * s, clip_min, clip_max);
            }
    return adv;
}

/// Iterated FGSM with step alpha; after every step each pixel is clipped to
/// [max(clip_min, x - eps), min(clip_max, x + eps)].
template <typename T>
Image bim(const Model<T>& model, const Image& image, int true_label, const AttackConfig& config) {
    config.validate();
    detail::check_attack_input(image);
    const auto eps = static_cast<float>(config.epsilon);
    const auto alpha = static_cast<float>(config.step());
    std::vector<float> lower(image.pixels.size()), upper(image.pixels.size());
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
        lower[i] = std::max(config.clip_min, image.pixels[i] - eps);
        upper[i] = std::min(config.clip_max, image.pixels[i] + eps);
    }
    Image adv = image;
    for (int it = 0; it < config.iterations; ++it) {
        const Tensor<T> g = loss_input_gradient(model, adv, true_label);
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x)
                for (int c = 0; c < 3; ++c) {
                    const std::size_t i = (static_cast<std::size_t>(y) * image.width + x) * 3 + c;
                    const float s = sign_of(static_cast<double>(g.at(0, c, y, x)));
                    adv.pixels[i] = std::min(std::max(adv.pixels[i] + alpha * s, lower[i]), upper[i]);
                }
    }
    return adv;
}

template <typename T>
Image run_attack(const Model<T>& model, const Image& image, int true_label, AttackMethod method,
                 const AttackConfig& config) {
    switch (method) {
        case AttackMethod::none:
            return image;
        case AttackMethod::fgsm:
            return fgsm(model, image, true_label, config.epsilon, config.clip_min, config.clip_max);
        case AttackMethod::bim:
            return bim(model, image, true_label, config);
    }
    throw std::invalid_argument("attack: unknown method");
}

/// Largest |adv - orig| over all pixels and channels, evaluated in double.
inline double linf_distance(const Image& a, const Image& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i])));
    return m;
}

/// True if every pixel of `adv` lies in [0,1] and within epsilon of `orig`,
/// allowing one float ulp of the larger operand for the rounding of x +- eps.
inline bool within_epsilon_ball(const Image& orig, const Image& adv, double epsilon) {
    if (orig.pixels.size() != adv.pixels.size()) return false;
    for (std::size_t i = 0; i < orig.pixels.size(); ++i) {
        const float a = adv.pixels[i], o = orig.pixels[i];
        if (!(a >= 0.0f && a <= 1.0f)) return false;
        const float big = std::max(std::abs(a), std::abs(o));
        const double ulp = static_cast<double>(std::nextafter(big, 2.0f) - big);
        if (std::abs(static_cast<double>(a) - static_cast<double>(o)) > epsilon + ulp) return false;
    }
    return true;
}

struct AttackOutcome {
    std::string id;
    std::optional<Image> adversarial;
    Prediction clean;
    Prediction attacked;
    std::string error;  // non-empty when the sample failed

    bool ok() const { return error.empty(); }
};

/// Attacks every sample against its true label. Per-sample failures are
/// recorded in the outcome and do not stop the batch.
template <typename T>
std::vector<AttackOutcome> attack_batch(const Model<T>& model, std::span<const Sample> samples, AttackMethod method,
                                        const AttackConfig& config) {
    if (samples.empty()) throw std::invalid_argument("attack_batch: no samples");
    if (method != AttackMethod::none) config.validate();
    std::vector<AttackOutcome> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        AttackOutcome o;
        o.id = s.id;
        try {
            o.clean = predict(model, s.image);
            o.adversarial = run_attack(model, s.image, s.label, method, config);
            o.attacked = method == AttackMethod::none ? o.clean : predict(model, *o.adversarial);
        } catch (const std::exception& e) {
            o.adversarial.reset();
            o.error = e.what();
        }
        out.push_back(std::move(o));
    }
    return out;
}

inline std::size_t count_failures(std::span<const AttackOutcome> outcomes) {
    return static_cast<std::size_t>(
        std::count_if(outcomes.begin(), outcomes.end(), [](const AttackOutcome& o) { return !o.ok(); }));
}

}  // namespace advxai
