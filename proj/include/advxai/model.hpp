#pragma once

// Small convolutional classifier: a constant input shift, a stack of
// conv -> relu -> max-pool blocks, a flatten or global-average-pool head, an
// optional hidden dense layer and a linear logits layer.
//
// Every conv block output (after relu, before pooling) is exposed under the
// name "conv<i>" (1-based) so GradCAM can target it.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "advxai/container.hpp"
#include "advxai/image.hpp"
#include "advxai/rng.hpp"
#include "advxai/tape.hpp"
#include "advxai/tensor.hpp"

namespace advxai {

struct ConvBlock {
    int filters = 16;
    int kernel = 3;
    int stride = 1;

    friend bool operator==(const ConvBlock&, const ConvBlock&) = default;
};

struct ModelConfig {
    int input_size = 64;
    int channels = 3;
    std::vector<ConvBlock> conv_blocks = {{16, 3, 1}, {32, 3, 1}, {64, 3, 1}};
    int pool_window = 2;
    bool global_pool = true;     // average-pool the last block instead of flattening it
    int dense_units = 64;        // 0 disables the hidden dense layer
    int num_classes = 8;
    double input_offset = -0.5;  // added to every pixel before the first conv

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

    /// Padding of a conv block: kernel / 2 ("same" for odd kernels at stride 1).
    static int padding(const ConvBlock& b) { return b.kernel / 2; }

    /// Spatial extent after each block (conv then pool). Throws naming the
    /// first block whose output would collapse below one pixel.
    std::vector<int> spatial_walk() const {
        if (input_size < 1) throw std::invalid_argument("model config: input_size must be positive");
        if (channels < 1) throw std::invalid_argument("model config: channels must be positive");
        if (num_classes < 2) throw std::invalid_argument("model config: num_classes must be at least 2");
        if (dense_units < 0) throw std::invalid_argument("model config: dense_units must be non-negative");
        if (pool_window < 1) throw std::invalid_argument("model config: pool_window must be positive");
        if (conv_blocks.empty()) throw std::invalid_argument("model config: at least one conv block required");
        std::vector<int> extents;
        int s = input_size;
        for (std::size_t i = 0; i < conv_blocks.size(); ++i) {
            const ConvBlock& b = conv_blocks[i];
            if (b.filters < 1 || b.kernel < 1 || b.stride < 1) {
                throw std::invalid_argument("model config: conv block " + std::to_string(i) +
                                            " needs positive filters, kernel and stride");
            }
            const int padded = s + 2 * padding(b);
            if (padded < b.kernel) {
                throw std::invalid_argument("model config: spatial collapse at conv block " + std::to_string(i) +
                                            " (extent " + std::to_string(s) + " < kernel " + std::to_string(b.kernel) +
                                            ")");
            }
            s = (padded - b.kernel) / b.stride + 1;
            if (s < pool_window) {
                throw std::invalid_argument("model config: spatial collapse at conv block " + std::to_string(i) +
                                            " (extent " + std::to_string(s) + " < pool window " +
                                            std::to_string(pool_window) + ")");
            }
            s = (s - pool_window) / pool_window + 1;
            extents.push_back(s);
        }
        return extents;
    }

    void validate() const { (void)spatial_walk(); }

    /// Spatial extent of the named conv layer's feature maps (before pooling).
    int feature_extent(std::size_t block) const {
        int s = input_size;
        for (std::size_t i = 0; i <= block; ++i) {
            const ConvBlock& b = conv_blocks[i];
            s = (s + 2 * padding(b) - b.kernel) / b.stride + 1;
            if (i < block) s = (s - pool_window) / pool_window + 1;
        }
        return s;
    }
};

inline void to_json(nlohmann::json& j, const ConvBlock& b) { j = nlohmann::json::array({b.filters, b.kernel, b.stride}); }
inline void from_json(const nlohmann::json& j, ConvBlock& b) {
    if (!j.is_array() || j.size() != 3) throw std::invalid_argument("conv block must be [filters, kernel, stride]");
    b = {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}
inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"input_size", c.input_size},   {"channels", c.channels},       {"conv_blocks", c.conv_blocks},
         {"pool_window", c.pool_window}, {"global_pool", c.global_pool}, {"dense_units", c.dense_units},
         {"num_classes", c.num_classes}, {"input_offset", c.input_offset}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    static const std::vector<std::string> known = {"input_size",  "channels",    "conv_blocks", "pool_window",
                                                   "global_pool", "dense_units", "num_classes", "input_offset"};
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw std::invalid_argument("model config: unknown key '" + key + "'");
        }
    }
    c.input_size = j.value("input_size", c.input_size);
    c.channels = j.value("channels", c.channels);
    if (j.contains("conv_blocks")) c.conv_blocks = j.at("conv_blocks").get<std::vector<ConvBlock>>();
    c.pool_window = j.value("pool_window", c.pool_window);
    c.global_pool = j.value("global_pool", c.global_pool);
    c.dense_units = j.value("dense_units", c.dense_units);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.input_offset = j.value("input_offset", c.input_offset);
}

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
};

template <typename T>
class Model {
   public:
    Model() = default;
    Model(ModelConfig config, std::vector<Parameter<T>> params) : config_(std::move(config)), params_(std::move(params)) {
        config_.validate();
        const auto expected = parameter_layout(config_);
        if (expected.size() != params_.size()) {
            throw std::invalid_argument("model: expected " + std::to_string(expected.size()) + " parameter arrays, got " +
                                        std::to_string(params_.size()));
        }
        for (std::size_t i = 0; i < expected.size(); ++i) {
            if (params_[i].name != expected[i].first || params_[i].value.shape() != expected[i].second) {
                throw std::invalid_argument("model: parameter " + std::to_string(i) + " is '" + params_[i].name + "' " +
                                            shape_string(params_[i].value.shape()) + ", expected '" +
                                            expected[i].first + "' " + shape_string(expected[i].second));
            }
        }
    }

    /// Ordered (name, shape) list of every parameter array for a config.
    static std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& cfg) {
        const auto extents = cfg.spatial_walk();
        std::vector<std::pair<std::string, Shape>> out;
        std::size_t c_in = static_cast<std::size_t>(cfg.channels);
        for (std::size_t i = 0; i < cfg.conv_blocks.size(); ++i) {
            const auto& b = cfg.conv_blocks[i];
            const std::string n = "conv" + std::to_string(i + 1);
            const auto f = static_cast<std::size_t>(b.filters), k = static_cast<std::size_t>(b.kernel);
            out.push_back({n + ".weight", {f, c_in, k, k}});
            out.push_back({n + ".bias", {f}});
            c_in = f;
        }
        const auto e = static_cast<std::size_t>(extents.back());
        std::size_t width = cfg.global_pool ? c_in : c_in * e * e;
        if (cfg.dense_units > 0) {
            const auto u = static_cast<std::size_t>(cfg.dense_units);
            out.push_back({"dense1.weight", {width, u}});
            out.push_back({"dense1.bias", {u}});
            width = u;
        }
        const auto k = static_cast<std::size_t>(cfg.num_classes);
        out.push_back({"logits.weight", {width, k}});
        out.push_back({"logits.bias", {k}});
        return out;
    }

    const ModelConfig& config() const { return config_; }
    std::span<const Parameter<T>> parameters() const { return params_; }
    std::span<Parameter<T>> parameters() { return params_; }

    const Tensor<T>& parameter(const std::string& name) const { return const_cast<Model*>(this)->parameter(name); }
    Tensor<T>& parameter(const std::string& name) {
        for (auto& p : params_)
            if (p.name == name) return p.value;
        throw std::out_of_range("model: no parameter named '" + name + "'");
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    std::vector<std::string> layer_names() const {
        std::vector<std::string> names;
        for (std::size_t i = 0; i < config_.conv_blocks.size(); ++i) names.push_back("conv" + std::to_string(i + 1));
        return names;
    }

    std::string last_conv_layer() const { return "conv" + std::to_string(config_.conv_blocks.size()); }

    /// Index of a conv layer name; throws listing the valid names.
    std::size_t layer_index(const std::string& name) const {
        const auto names = layer_names();
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return i;
        std::string valid;
        for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
        throw std::invalid_argument("model: unknown layer '" + name + "'; valid layers: " + valid);
    }

    bool all_finite() const {
        return std::all_of(params_.begin(), params_.end(), [](const auto& p) { return p.value.all_finite(); });
    }

    template <typename U>
    Model<U> cast() const {
        std::vector<Parameter<U>> out;
        for (const auto& p : params_) out.push_back({p.name, p.value.template cast<U>()});
        return Model<U>(config_, std::move(out));
    }

    friend bool operator==(const Model& a, const Model& b) {
        if (!(a.config_ == b.config_) || a.params_.size() != b.params_.size()) return false;
        for (std::size_t i = 0; i < a.params_.size(); ++i)
            if (a.params_[i].name != b.params_[i].name || !(a.params_[i].value == b.params_[i].value)) return false;
        return true;
    }

   private:
    ModelConfig config_;
    std::vector<Parameter<T>> params_;
};

using FloatModel = Model<float>;

/// Seeded uniform initialization scaled by fan-in: U(-sqrt(6/fan_in), +) for
/// relu layers, U(-sqrt(3/fan_in), +) for the logits layer, zero biases.
template <typename T = float>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Parameter<T>> params;
    for (auto& [name, shape] : Model<T>::parameter_layout(config)) {
        Tensor<T> t(shape);
        if (name.ends_with(".weight")) {
            const std::size_t fan_in = shape.size() == 4 ? shape[1] * shape[2] * shape[3] : shape[0];
            const double gain = name.starts_with("logits") ? 3.0 : 6.0;
            const double bound = std::sqrt(gain / static_cast<double>(fan_in));
            for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
        }
        params.push_back({name, std::move(t)});
    }
    return Model<T>(config, std::move(params));
}

/// One recorded forward pass.
template <typename T>
struct ForwardPass {
    Tape<T> tape;
    Var input;
    std::vector<Var> params;
    std::vector<Var> features;  // one per conv block, post-relu
    Var logits;
};

template <typename T>
ForwardPass<T> forward(const Model<T>& model, Tensor<T> input, bool input_grad = false, bool param_grad = false) {
    const ModelConfig& cfg = model.config();
    const auto sz = static_cast<std::size_t>(cfg.input_size);
    if (input.rank() != 4 || input.dim(1) != static_cast<std::size_t>(cfg.channels) || input.dim(2) != sz ||
        input.dim(3) != sz) {
        throw std::invalid_argument("model: input shape " + shape_string(input.shape()) + " does not match [N," +
                                    std::to_string(cfg.channels) + "," + std::to_string(sz) + "," +
                                    std::to_string(sz) + "]");
    }
    ForwardPass<T> fp;
    Tape<T>& tape = fp.tape;
    fp.input = tape.leaf(std::move(input), input_grad);
    for (const auto& p : model.parameters()) fp.params.push_back(tape.leaf(p.value, param_grad));

    const auto pool = static_cast<std::size_t>(cfg.pool_window);
    Var h = cfg.input_offset != 0.0 ? shift(tape, fp.input, static_cast<T>(cfg.input_offset)) : fp.input;
    std::size_t pi = 0;
    for (const auto& b : cfg.conv_blocks) {
        h = conv2d(tape, h, fp.params[pi], fp.params[pi + 1], static_cast<std::size_t>(b.stride),
                   static_cast<std::size_t>(ModelConfig::padding(b)));
        h = relu(tape, h);
        fp.features.push_back(h);
        h = max_pool2d(tape, h, pool, pool);
        pi += 2;
    }
    h = cfg.global_pool ? global_avg_pool(tape, h) : flatten(tape, h);
    if (cfg.dense_units > 0) {
        h = relu(tape, dense(tape, h, fp.params[pi], fp.params[pi + 1]));
        pi += 2;
    }
    fp.logits = dense(tape, h, fp.params[pi], fp.params[pi + 1]);
    return fp;
}

struct Prediction {
    int predicted_class = 0;
    std::vector<double> logits;
    std::vector<double> probabilities;

    friend bool operator==(const Prediction&, const Prediction&) = default;
};

/// argmax with ties to the lowest index.
template <typename V>
int argmax(std::span<const V> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return static_cast<int>(best);
}

template <typename T>
Prediction make_prediction(const Tensor<T>& logits, std::size_t row) {
    const std::size_t k = logits.dim(1);
    Prediction p;
    p.logits.resize(k);
    for (std::size_t j = 0; j < k; ++j) p.logits[j] = static_cast<double>(logits[row * k + j]);
    const double m = *std::max_element(p.logits.begin(), p.logits.end());
    double s = 0.0;
    p.probabilities.resize(k);
    for (std::size_t j = 0; j < k; ++j) s += (p.probabilities[j] = std::exp(p.logits[j] - m));
    for (auto& v : p.probabilities) v /= s;
    p.predicted_class = argmax(std::span<const double>(p.logits));
    return p;
}

template <typename T>
void check_image(const Model<T>& model, const Image& image) {
    const int s = model.config().input_size;
    if (image.height != s || image.width != s) {
        throw std::invalid_argument("model: image is " + std::to_string(image.height) + "x" +
                                    std::to_string(image.width) + ", model expects " + std::to_string(s) + "x" +
                                    std::to_string(s));
    }
}

template <typename T>
Prediction predict(const Model<T>& model, const Image& image) {
    check_image(model, image);
    auto fp = forward(model, image_to_tensor<T>(image));
    return make_prediction(fp.tape.value(fp.logits), 0);
}

/// Predictions for many images, evaluated in chunks. Rows are independent, so
/// results do not depend on the chunk size.
template <typename T>
std::vector<Prediction> predict_batch(const Model<T>& model, std::span<const Image> images, std::size_t chunk = 64) {
    std::vector<Prediction> out;
    out.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += chunk) {
        const auto part = images.subspan(start, std::min(chunk, images.size() - start));
        for (const auto& im : part) check_image(model, im);
        auto fp = forward(model, images_to_tensor<T>(part));
        for (std::size_t r = 0; r < part.size(); ++r) out.push_back(make_prediction(fp.tape.value(fp.logits), r));
    }
    return out;
}

/// Fraction of predictions equal to their label.
inline double accuracy(std::span<const int> predicted, std::span<const int> labels) {
    if (predicted.empty()) throw std::invalid_argument("accuracy: empty split");
    if (predicted.size() != labels.size()) throw std::invalid_argument("accuracy: length mismatch");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) hit += predicted[i] == labels[i] ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(predicted.size());
}

template <typename T>
double top1_accuracy(const Model<T>& model, std::span<const Image> images, std::span<const int> labels) {
    if (images.empty()) throw std::invalid_argument("top1_accuracy: empty split");
    std::vector<int> pred;
    for (const auto& p : predict_batch(model, images)) pred.push_back(p.predicted_class);
    return accuracy(pred, labels);
}

/// Forward pass that keeps the tape so gradients of any class score with
/// respect to the named feature maps and the input can be taken.
template <typename T>
struct FeatureForward {
    Prediction prediction;
    ForwardPass<T> pass;
    Var features;
};

template <typename T>
FeatureForward<T> forward_with_features(const Model<T>& model, const Image& image, const std::string& layer_name) {
    const std::size_t idx = model.layer_index(layer_name);
    check_image(model, image);
    FeatureForward<T> out{{}, forward(model, image_to_tensor<T>(image), true, false), {}};
    out.features = out.pass.features[idx];
    out.prediction = make_prediction(out.pass.tape.value(out.pass.logits), 0);
    return out;
}

// ---------------------------------------------------------------------------
// Training

enum class LrSchedule { constant, cosine };

inline std::string lr_schedule_name(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "cosine"; }

inline LrSchedule parse_lr_schedule(const std::string& s) {
    if (s == "constant") return LrSchedule::constant;
    if (s == "cosine") return LrSchedule::cosine;
    throw std::invalid_argument("train: unknown lr_schedule '" + s + "' (expected constant or cosine)");
}

struct TrainOptions {
    int epochs = 20;
    double learning_rate = 0.15;
    int batch_size = 8;
    LrSchedule lr_schedule = LrSchedule::cosine;
    std::uint64_t seed = 0;

    /// Step size used throughout epoch `epoch` (0-based). Cosine decays from
    /// learning_rate at the first epoch towards 0 after the last.
    double rate_at(int epoch) const {
        if (lr_schedule == LrSchedule::constant) return learning_rate;
        return learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / epochs));
    }
};

struct EpochStats {
    int epoch = 0;
    double mean_loss = 0.0;
    double train_accuracy = 0.0;
};

template <typename T>
struct TrainResult {
    Model<T> model;
    std::vector<EpochStats> trace;
};

/// Minibatch SGD on softmax cross-entropy. Each epoch visits the samples in a
/// fresh seeded permutation.
template <typename T>
TrainResult<T> train(Model<T> model, std::span<const Image> images, std::span<const int> labels,
                     const TrainOptions& opt, const std::function<void(const EpochStats&)>& on_epoch = {}) {
    if (images.empty()) throw std::invalid_argument("train: empty dataset");
    if (images.size() != labels.size()) throw std::invalid_argument("train: images/labels length mismatch");
    if (opt.batch_size < 1) throw std::invalid_argument("train: batch_size must be positive");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= model.config().num_classes) {
            throw std::invalid_argument("train: label " + std::to_string(labels[i]) + " of sample " +
                                        std::to_string(i) + " outside [0," +
                                        std::to_string(model.config().num_classes) + ")");
        }
        check_image(model, images[i]);
    }

    Rng rng(opt.seed);
    std::vector<std::size_t> order(images.size());
    TrainResult<T> result{std::move(model), {}};
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        const T lr = static_cast<T>(opt.rate_at(epoch));
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t hits = 0;
        int batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size), ++batch_index) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
            std::vector<Image> batch;
            std::vector<int> batch_labels;
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(images[order[i]]);
                batch_labels.push_back(labels[order[i]]);
            }
            auto fp = forward(result.model, images_to_tensor<T>(batch), false, true);
            const Var loss = softmax_cross_entropy(fp.tape, fp.logits, std::span<const int>(batch_labels));
            const T loss_value = fp.tape.value(loss)[0];
            if (!std::isfinite(loss_value)) {
                throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                         std::to_string(batch_index));
            }
            const Tensor<T>& z = fp.tape.value(fp.logits);
            for (std::size_t r = 0; r < batch.size(); ++r)
                hits += make_prediction(z, r).predicted_class == batch_labels[r] ? 1 : 0;
            loss_sum += static_cast<double>(loss_value) * static_cast<double>(batch.size());
            fp.tape.backward(loss);
            auto params = result.model.parameters();
            for (std::size_t p = 0; p < params.size(); ++p) {
                const Tensor<T>& g = fp.tape.grad(fp.params[p]);
                auto dst = params[p].value.data();
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= lr * g[i];
            }
        }
        EpochStats st{epoch + 1, loss_sum / static_cast<double>(order.size()),
                      static_cast<double>(hits) / static_cast<double>(order.size())};
        result.trace.push_back(st);
        if (on_epoch) on_epoch(st);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Weight container

inline void save_weights(const Model<float>& model, const std::filesystem::path& path) {
    Container c;
    c.kind = "model_weights";
    c.meta["config"] = model.config();
    c.meta["parameter_count"] = model.parameter_count();
    for (const auto& p : model.parameters()) c.arrays.push_back({p.name, p.value});
    write_container(path, c);
}

/// Loads weights saved for `config`; any disagreement in names, shapes or
/// counts is rejected with the failing field.
inline Model<float> load_weights(const ModelConfig& config, const std::filesystem::path& path) {
    const Container c = read_container(path);
    if (c.kind != "model_weights") throw ContainerError("kind", "expected model_weights, got '" + c.kind + "'");
    if (c.meta.contains("config")) {
        const auto stored = c.meta.at("config").get<ModelConfig>();
        if (!(stored == config)) throw ContainerError("config", "stored model config differs from the requested one");
    }
    const auto layout = Model<float>::parameter_layout(config);
    if (c.arrays.size() != layout.size()) {
        throw ContainerError("arrays", "expected " + std::to_string(layout.size()) + " arrays, found " +
                                           std::to_string(c.arrays.size()));
    }
    std::vector<Parameter<float>> params;
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (c.arrays[i].name != layout[i].first) {
            throw ContainerError("arrays[" + std::to_string(i) + "].name",
                                 "expected '" + layout[i].first + "', found '" + c.arrays[i].name + "'");
        }
        if (c.arrays[i].values.shape() != layout[i].second) {
            throw ContainerError("arrays[" + std::to_string(i) + "].shape",
                                 "expected " + shape_string(layout[i].second) + " for '" + layout[i].first + "'");
        }
        params.push_back({c.arrays[i].name, c.arrays[i].values});
    }
    Model<float> m(config, std::move(params));
    if (!m.all_finite()) throw ContainerError("values", "non-finite parameter");
    return m;
}

/// Model config echoed in a weight container.
inline ModelConfig read_weights_config(const std::filesystem::path& path) {
    const Container c = read_container(path);
    if (!c.meta.contains("config")) throw ContainerError("config", "missing from weight container");
    return c.meta.at("config").get<ModelConfig>();
}

}  // namespace advxai
