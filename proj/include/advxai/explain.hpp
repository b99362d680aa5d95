#pragma once

// Per-pixel explanation maps: vanilla gradient saliency, GradCAM, SmoothGrad
// and LIME over a regular superpixel grid.
//
// All maps are normalized by their maximum so scores lie in [0,1] with the
// largest score exactly 1. A map with no positive score is returned all-zero
// and flagged degenerate.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "advxai/image.hpp"
#include "advxai/model.hpp"
#include "advxai/rng.hpp"

namespace advxai {

struct ExplanationMap {
    int height = 0;
    int width = 0;
    std::vector<float> scores;
    bool degenerate = false;

    float at(int y, int x) const { return scores[static_cast<std::size_t>(y) * width + x]; }

    friend bool operator==(const ExplanationMap&, const ExplanationMap&) = default;
};

enum class ExplainMethod { vanilla, gradcam, smoothgrad, lime };

inline std::string explain_method_name(ExplainMethod m) {
    switch (m) {
        case ExplainMethod::vanilla:
            return "vanilla";
        case ExplainMethod::gradcam:
            return "gradcam";
        case ExplainMethod::smoothgrad:
            return "smoothgrad";
        case ExplainMethod::lime:
            return "lime";
    }
    return "?";
}

inline ExplainMethod parse_explain_method(const std::string& s) {
    if (s == "vanilla") return ExplainMethod::vanilla;
    if (s == "gradcam") return ExplainMethod::gradcam;
    if (s == "smoothgrad") return ExplainMethod::smoothgrad;
    if (s == "lime") return ExplainMethod::lime;
    throw std::invalid_argument("explain: unknown method '" + s + "' (expected vanilla, gradcam, smoothgrad or lime)");
}

struct ExplainerConfig {
    ExplainMethod method = ExplainMethod::vanilla;
    std::string target_layer;  // gradcam; empty selects the last conv layer
    double noise_sigma = 0.15;  // smoothgrad
    int sample_count = 25;      // smoothgrad
    int grid = 8;               // lime
    int num_samples = 256;      // lime
    double kernel_width = 0.25;
    double ridge_lambda = 1e-3;
    std::string mask_fill = "image_mean";
    std::uint64_t seed = 0;

    void validate() const {
        if (sample_count < 1) throw std::invalid_argument("explain: sample_count must be at least 1");
        if (!(noise_sigma >= 0.0)) throw std::invalid_argument("explain: noise_sigma must be non-negative");
        if (grid < 2) throw std::invalid_argument("explain: grid must be at least 2");
        if (num_samples < 1) throw std::invalid_argument("explain: num_samples must be at least 1");
        if (!(kernel_width > 0.0)) throw std::invalid_argument("explain: kernel_width must be positive");
        if (!(ridge_lambda >= 0.0)) throw std::invalid_argument("explain: ridge_lambda must be non-negative");
        if (mask_fill != "image_mean") throw std::invalid_argument("explain: unsupported mask_fill '" + mask_fill + "'");
    }
};

/// Divides by the maximum; no positive value gives an all-zero degenerate map.
inline ExplanationMap normalize_by_max(int height, int width, std::span<const double> raw) {
    ExplanationMap m{height, width, std::vector<float>(raw.size(), 0.0f), false};
    double peak = 0.0;
    for (const double v : raw) {
        if (!std::isfinite(v)) throw std::runtime_error("explain: non-finite relevance score");
        peak = std::max(peak, v);
    }
    if (!(peak > 0.0)) {
        m.degenerate = true;
        return m;
    }
    for (std::size_t i = 0; i < raw.size(); ++i) m.scores[i] = static_cast<float>(std::max(raw[i], 0.0) / peak);
    return m;
}

/// Unnormalized saliency of each image: for every pixel, the max over
/// channels of |d logit[class] / d pixel|.
template <typename T>
std::vector<std::vector<double>> raw_saliency(const Model<T>& model, std::span<const Image> images, int class_index) {
    if (class_index < 0 || class_index >= model.config().num_classes) {
        throw std::invalid_argument("explain: class " + std::to_string(class_index) + " outside [0," +
                                    std::to_string(model.config().num_classes) + ")");
    }
    for (const auto& im : images) check_image(model, im);
    auto fp = forward(model, images_to_tensor<T>(images), true, false);
    const std::vector<int> classes(images.size(), class_index);
    const Var score = pick(fp.tape, fp.logits, std::span<const int>(classes));
    fp.tape.backward(score);
    const Tensor<T>& g = fp.tape.grad(fp.input);
    if (!g.all_finite()) throw std::runtime_error("explain: non-finite input gradient");
    const int h = images[0].height, w = images[0].width;
    std::vector<std::vector<double>> out(images.size(), std::vector<double>(static_cast<std::size_t>(h * w)));
    for (std::size_t n = 0; n < images.size(); ++n)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double m = 0.0;
                for (std::size_t c = 0; c < 3; ++c) m = std::max(m, std::abs(static_cast<double>(g.at(n, c, y, x))));
                out[n][static_cast<std::size_t>(y * w + x)] = m;
            }
    return out;
}

template <typename T>
ExplanationMap vanilla_saliency(const Model<T>& model, const Image& image, int class_index) {
    const auto raw = raw_saliency(model, std::span<const Image>(&image, 1), class_index);
    return normalize_by_max(image.height, image.width, raw[0]);
}

/// Bilinear resize with pixel-center alignment:
/// src = (dst + 0.5) * (src_size / dst_size) - 0.5, clamped to the grid.
inline std::vector<double> bilinear_upsample(std::span<const double> src, int sh, int sw, int dh, int dw) {
    std::vector<double> out(static_cast<std::size_t>(dh * dw));
    auto coord = [](int d, int s_size, int d_size, int& i0, int& i1, double& t) {
        double s = (d + 0.5) * (static_cast<double>(s_size) / d_size) - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(s_size - 1));
        i0 = static_cast<int>(std::floor(s));
        i1 = std::min(i0 + 1, s_size - 1);
        t = s - i0;
    };
    for (int y = 0; y < dh; ++y) {
        int y0, y1;
        double ty;
        coord(y, sh, dh, y0, y1, ty);
        for (int x = 0; x < dw; ++x) {
            int x0, x1;
            double tx;
            coord(x, sw, dw, x0, x1, tx);
            auto at = [&](int yy, int xx) { return src[static_cast<std::size_t>(yy * sw + xx)]; };
            const double top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
            const double bot = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
            out[static_cast<std::size_t>(y * dw + x)] = top * (1.0 - ty) + bot * ty;
        }
    }
    return out;
}

/// GradCAM heatmap from feature maps A [C,h,w] and class-score gradients
/// dA [C,h,w]: relu(sum_c mean(dA_c) * A_c), upsampled to height x width and
/// normalized by its max.
inline ExplanationMap gradcam_from_features(std::span<const double> features, std::span<const double> grads,
                                            int channels, int fh, int fw, int height, int width) {
    const auto area = static_cast<std::size_t>(fh * fw);
    if (features.size() != area * static_cast<std::size_t>(channels) || grads.size() != features.size()) {
        throw std::invalid_argument("gradcam: feature/gradient size mismatch");
    }
    std::vector<double> cam(area, 0.0);
    for (std::size_t c = 0; c < static_cast<std::size_t>(channels); ++c) {
        double wgt = 0.0;
        for (std::size_t i = 0; i < area; ++i) wgt += grads[c * area + i];
        wgt /= static_cast<double>(area);
        for (std::size_t i = 0; i < area; ++i) cam[i] += wgt * features[c * area + i];
    }
    for (auto& v : cam) v = std::max(v, 0.0);
    const auto up = bilinear_upsample(cam, fh, fw, height, width);
    return normalize_by_max(height, width, up);
}

template <typename T>
ExplanationMap gradcam(const Model<T>& model, const Image& image, int class_index, const std::string& target_layer = {}) {
    const std::string layer = target_layer.empty() ? model.last_conv_layer() : target_layer;
    if (class_index < 0 || class_index >= model.config().num_classes) {
        throw std::invalid_argument("explain: class " + std::to_string(class_index) + " outside [0," +
                                    std::to_string(model.config().num_classes) + ")");
    }
    auto ff = forward_with_features(model, image, layer);
    auto& tape = ff.pass.tape;
    const int classes[] = {class_index};
    tape.backward(pick(tape, ff.pass.logits, std::span<const int>(classes)));
    const Tensor<T>& a = tape.value(ff.features);
    const Tensor<T>& g = tape.grad(ff.features);
    if (!g.all_finite()) throw std::runtime_error("gradcam: non-finite feature gradient");
    std::vector<double> av(a.size()), gv(g.size());
    std::transform(a.data().begin(), a.data().end(), av.begin(), [](T v) { return static_cast<double>(v); });
    std::transform(g.data().begin(), g.data().end(), gv.begin(), [](T v) { return static_cast<double>(v); });
    return gradcam_from_features(av, gv, static_cast<int>(a.dim(1)), static_cast<int>(a.dim(2)),
                                 static_cast<int>(a.dim(3)), image.height, image.width);
}

/// Mean of the unnormalized saliency over `sample_count` copies of the image
/// with seeded N(0, sigma^2) noise per pixel-channel (clamped to [0,1]),
/// normalized by its max.
template <typename T>
ExplanationMap smoothgrad(const Model<T>& model, const Image& image, int class_index, double noise_sigma,
                          int sample_count, std::uint64_t seed, int chunk = 25) {
    if (sample_count < 1) throw std::invalid_argument("smoothgrad: sample_count must be at least 1");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("smoothgrad: noise_sigma must be non-negative");
    Rng rng(seed);
    const auto sigma = static_cast<float>(noise_sigma);
    std::vector<double> total(image.pixel_count(), 0.0);
    for (int start = 0; start < sample_count; start += chunk) {
        const int count = std::min(chunk, sample_count - start);
        std::vector<Image> noisy(static_cast<std::size_t>(count), image);
        for (auto& im : noisy)
            for (auto& v : im.pixels) v = std::clamp(v + sigma * static_cast<float>(rng.normal()), 0.0f, 1.0f);
        const auto raw = raw_saliency(model, std::span<const Image>(noisy), class_index);
        for (const auto& r : raw)
            for (std::size_t i = 0; i < total.size(); ++i) total[i] += r[i];
    }
    for (auto& v : total) v /= static_cast<double>(sample_count);
    return normalize_by_max(image.height, image.width, total);
}

/// grid x grid rectangular segments, row-major ids; the last row and column
/// of segments absorb the remainder pixels.
inline std::vector<int> grid_superpixels(int height, int width, int grid) {
    if (grid < 2) throw std::invalid_argument("grid_superpixels: grid must be at least 2");
    if (grid > std::min(height, width)) throw std::invalid_argument("grid_superpixels: grid exceeds image size");
    const int sh = height / grid, sw = width / grid;
    std::vector<int> seg(static_cast<std::size_t>(height * width));
    for (int y = 0; y < height; ++y) {
        const int r = std::min(y / sh, grid - 1);
        for (int x = 0; x < width; ++x) {
            const int c = std::min(x / sw, grid - 1);
            seg[static_cast<std::size_t>(y * width + x)] = r * grid + c;
        }
    }
    return seg;
}

/// Batch probability oracle: P(class | image) for each image.
using ProbabilityFn = std::function<std::vector<double>(std::span<const Image>)>;

struct LimeResult {
    ExplanationMap map;
    std::vector<double> coefficients;  // one per segment
    double intercept = 0.0;
    double fit_at_original = 0.0;       // surrogate value at the all-kept vector
    double original_probability = 0.0;  // oracle value on the unperturbed image
};

/// Solves the symmetric system A x = b by Gaussian elimination with partial
/// pivoting. Returns false if a pivot vanishes relative to the matrix scale.
inline bool solve_linear(std::vector<double> a, std::vector<double> b, std::size_t n, std::vector<double>& x) {
    double scale = 0.0;
    for (const double v : a) scale = std::max(scale, std::abs(v));
    if (scale == 0.0) return false;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
        if (std::abs(a[piv * n + col]) <= 1e-12 * scale) return false;
        if (piv != col) {
            for (std::size_t k = 0; k < n; ++k) std::swap(a[col * n + k], a[piv * n + k]);
            std::swap(b[col], b[piv]);
        }
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r * n + col] / a[col * n + col];
            if (f == 0.0) continue;
            for (std::size_t k = col; k < n; ++k) a[r * n + k] -= f * a[col * n + k];
            b[r] -= f * b[col];
        }
    }
    x.assign(n, 0.0);
    for (std::size_t r = n; r-- > 0;) {
        double s = b[r];
        for (std::size_t k = r + 1; k < n; ++k) s -= a[r * n + k] * x[k];
        x[r] = s / a[r * n + r];
    }
    return true;
}

/// LIME over grid superpixels.
///
/// Sample 0 keeps every segment; the others keep each segment with
/// probability 1/2. Dropped segments are filled with the image's mean color.
/// Samples are weighted by exp(-d^2 / kernel_width^2), d = dropped / total,
/// and a ridge regression (unpenalized intercept) of the class probability
/// on the keep indicators gives one coefficient per segment.
inline LimeResult lime_explain(const ProbabilityFn& probability, const Image& image, const ExplainerConfig& cfg) {
    cfg.validate();
    const auto seg = grid_superpixels(image.height, image.width, cfg.grid);
    const auto segments = static_cast<std::size_t>(cfg.grid * cfg.grid);
    const auto samples = static_cast<std::size_t>(cfg.num_samples);

    std::array<double, 3> mean{};
    for (std::size_t i = 0; i < image.pixel_count(); ++i)
        for (std::size_t c = 0; c < 3; ++c) mean[c] += image.pixels[i * 3 + c];
    std::array<float, 3> fill{};
    for (std::size_t c = 0; c < 3; ++c) fill[c] = static_cast<float>(mean[c] / static_cast<double>(image.pixel_count()));

    Rng rng(cfg.seed);
    std::vector<std::uint8_t> keep(samples * segments, 1);
    for (std::size_t s = 1; s < samples; ++s)
        for (std::size_t j = 0; j < segments; ++j) keep[s * segments + j] = rng.coin() ? 1 : 0;

    std::vector<double> target;
    target.reserve(samples);
    constexpr std::size_t kChunk = 64;
    for (std::size_t start = 0; start < samples; start += kChunk) {
        const std::size_t count = std::min(kChunk, samples - start);
        std::vector<Image> batch(count, image);
        for (std::size_t b = 0; b < count; ++b) {
            const std::uint8_t* k = keep.data() + (start + b) * segments;
            Image& im = batch[b];
            for (std::size_t p = 0; p < seg.size(); ++p) {
                if (k[static_cast<std::size_t>(seg[p])]) continue;
                for (std::size_t c = 0; c < 3; ++c) im.pixels[p * 3 + c] = fill[c];
            }
        }
        const auto probs = probability(std::span<const Image>(batch));
        if (probs.size() != count) throw std::runtime_error("lime: probability oracle returned wrong batch size");
        target.insert(target.end(), probs.begin(), probs.end());
    }

    // Normal equations over [1, keep_1 .. keep_S].
    const std::size_t dim = segments + 1;
    std::vector<double> ata(dim * dim, 0.0), atb(dim, 0.0), row(dim);
    const double kw2 = cfg.kernel_width * cfg.kernel_width;
    for (std::size_t s = 0; s < samples; ++s) {
        row[0] = 1.0;
        std::size_t dropped = 0;
        for (std::size_t j = 0; j < segments; ++j) {
            row[j + 1] = keep[s * segments + j];
            dropped += keep[s * segments + j] ? 0 : 1;
        }
        const double d = static_cast<double>(dropped) / static_cast<double>(segments);
        const double w = std::exp(-d * d / kw2);
        for (std::size_t a = 0; a < dim; ++a) {
            if (row[a] == 0.0) continue;
            atb[a] += w * row[a] * target[s];
            for (std::size_t b = 0; b < dim; ++b) ata[a * dim + b] += w * row[a] * row[b];
        }
    }
    for (std::size_t j = 1; j < dim; ++j) ata[j * dim + j] += cfg.ridge_lambda;

    std::vector<double> beta;
    if (!solve_linear(ata, atb, dim, beta)) {
        throw std::runtime_error("lime: weighted least-squares system is singular; use a positive ridge_lambda");
    }

    LimeResult r;
    r.intercept = beta[0];
    r.coefficients.assign(beta.begin() + 1, beta.end());
    r.fit_at_original = r.intercept;
    for (const double c : r.coefficients) r.fit_at_original += c;
    r.original_probability = target[0];
    std::vector<double> raw(seg.size());
    for (std::size_t p = 0; p < seg.size(); ++p) raw[p] = std::max(r.coefficients[static_cast<std::size_t>(seg[p])], 0.0);
    r.map = normalize_by_max(image.height, image.width, raw);
    return r;
}

template <typename T>
ProbabilityFn class_probability(const Model<T>& model, int class_index) {
    if (class_index < 0 || class_index >= model.config().num_classes) {
        throw std::invalid_argument("explain: class " + std::to_string(class_index) + " outside [0," +
                                    std::to_string(model.config().num_classes) + ")");
    }
    return [&model, class_index](std::span<const Image> images) {
        std::vector<double> out;
        for (const auto& p : predict_batch(model, images)) out.push_back(p.probabilities[static_cast<std::size_t>(class_index)]);
        return out;
    };
}

template <typename T>
LimeResult lime_explain(const Model<T>& model, const Image& image, int class_index, const ExplainerConfig& cfg) {
    return lime_explain(class_probability(model, class_index), image, cfg);
}

/// Dispatches to the configured explainer.
template <typename T>
ExplanationMap explain(const Model<T>& model, const Image& image, int class_index, const ExplainerConfig& cfg) {
    cfg.validate();
    switch (cfg.method) {
        case ExplainMethod::vanilla:
            return vanilla_saliency(model, image, class_index);
        case ExplainMethod::gradcam:
            return gradcam(model, image, class_index, cfg.target_layer);
        case ExplainMethod::smoothgrad:
            return smoothgrad(model, image, class_index, cfg.noise_sigma, cfg.sample_count, cfg.seed);
        case ExplainMethod::lime:
            return lime_explain(model, image, class_index, cfg).map;
    }
    throw std::invalid_argument("explain: unknown method");
}

}  // namespace advxai
