#pragma once

// Benchmark pipeline: data -> train -> attack -> explain -> evaluate -> report.
//
// Every stage reads its inputs from, and writes its outputs to, the run's
// output directory, so stages can be run one at a time or all together with
// identical results. Float artifacts (adversarial images, explanation maps,
// weights) are stored losslessly in float containers; PNGs are for viewing.
//
// Sub-seeds are derived from master_seed with mix_seed:
//   dataset      mix_seed(master, "dataset")
//   weight init  mix_seed(master, "init")
//   SGD order    mix_seed(master, "train")
//   explainer    mix_seed(master, "explain/<method>", sample_id)
// The explainer seed does not depend on the attack condition, so clean and
// attacked images of a sample see the same noise and perturbation draws.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "advxai/attacks.hpp"
#include "advxai/container.hpp"
#include "advxai/dataset.hpp"
#include "advxai/explain.hpp"
#include "advxai/metrics.hpp"
#include "advxai/model.hpp"

namespace advxai {

inline constexpr int kRunSchemaVersion = 1;
inline constexpr const char* kToolVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Configuration

struct ConditionSpec {
    AttackMethod method = AttackMethod::none;
    AttackConfig attack;

    friend bool operator==(const ConditionSpec& a, const ConditionSpec& b) {
        return a.method == b.method && a.attack.epsilon == b.attack.epsilon && a.attack.alpha == b.attack.alpha &&
               a.attack.iterations == b.attack.iterations;
    }
};

struct DatasetSpec {
    std::string manifest;  // empty: generate the synthetic benchmark
    SyntheticOptions synthetic;
};

struct RunConfig {
    DatasetSpec dataset;
    ModelConfig model;
    TrainOptions training;
    std::string weights;  // optional pre-trained weights; skips training
    std::vector<ConditionSpec> conditions;
    std::vector<ExplainerConfig> explainers;
    double top_fraction = 0.15;
    RmseMode rmse_mode = RmseMode::binary;
    int eval_limit = 100;    // first N test samples; 0 evaluates the whole split
    int overlay_limit = 8;   // samples per (condition, explainer) rendered as overlays
    std::uint64_t master_seed = 0;
    std::string output_dir = "run";

    void validate() const;
};

/// Short percentage label for epsilon, e.g. 0.025 -> "2.5".
inline std::string epsilon_label(double epsilon) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", epsilon * 100.0);
    return buf;
}

/// Stable identifier used in file names and CSV files.
inline std::string condition_slug(const ConditionSpec& c) {
    if (c.method == AttackMethod::none) return "none";
    return attack_method_name(c.method) + "_" + epsilon_label(c.attack.epsilon);
}

/// Table label: "Without Attack", "FGSM-2.5%", "BIM-2.5%".
inline std::string condition_display_name(const std::string& slug) {
    if (slug == "none") return "Without Attack";
    const auto us = slug.find('_');
    std::string method = slug.substr(0, us);
    std::transform(method.begin(), method.end(), method.begin(), [](unsigned char ch) { return std::toupper(ch); });
    return us == std::string::npos ? method : method + "-" + slug.substr(us + 1) + "%";
}

inline std::vector<ConditionSpec> default_conditions() {
    ConditionSpec none, f, b;
    f.method = AttackMethod::fgsm;
    b.method = AttackMethod::bim;
    b.attack.iterations = 10;
    b.attack.alpha = b.attack.epsilon / 10.0;
    return {none, f, b};
}

inline std::vector<ExplainerConfig> default_explainers() {
    std::vector<ExplainerConfig> out;
    for (auto m : {ExplainMethod::vanilla, ExplainMethod::gradcam, ExplainMethod::smoothgrad, ExplainMethod::lime}) {
        ExplainerConfig e;
        e.method = m;
        out.push_back(e);
    }
    return out;
}

inline RunConfig default_run_config() {
    RunConfig c;
    c.conditions = default_conditions();
    c.explainers = default_explainers();
    return c;
}

inline void RunConfig::validate() const {
    if (conditions.empty()) throw std::invalid_argument("config: no conditions");
    std::set<std::string> slugs;
    bool baseline = false;
    for (const auto& c : conditions) {
        if (c.method == AttackMethod::none) baseline = true;
        else c.attack.validate();
        if (!slugs.insert(condition_slug(c)).second) {
            throw std::invalid_argument("config: duplicate condition '" + condition_slug(c) + "'");
        }
    }
    if (!baseline) throw std::invalid_argument("config: the 'none' baseline condition is required");
    if (explainers.empty()) throw std::invalid_argument("config: no explainers");
    std::set<ExplainMethod> methods;
    for (const auto& e : explainers) {
        e.validate();
        if (!methods.insert(e.method).second) {
            throw std::invalid_argument("config: duplicate explainer '" + explain_method_name(e.method) + "'");
        }
    }
    if (!(top_fraction > 0.0 && top_fraction < 1.0)) throw std::invalid_argument("config: top_fraction must lie in (0,1)");
    if (eval_limit < 0) throw std::invalid_argument("config: eval_limit must be non-negative");
    if (overlay_limit < 0) throw std::invalid_argument("config: overlay_limit must be non-negative");
    if (output_dir.empty()) throw std::invalid_argument("config: output_dir is empty");
    if (training.epochs < 1) throw std::invalid_argument("config: training.epochs must be positive");
    if (!(training.learning_rate > 0.0)) throw std::invalid_argument("config: training.learning_rate must be positive");
    if (training.batch_size < 1) throw std::invalid_argument("config: training.batch_size must be positive");
    model.validate();
    if (dataset.manifest.empty()) {
        if (dataset.synthetic.image_size != model.input_size) {
            throw std::invalid_argument("config: dataset.image_size " + std::to_string(dataset.synthetic.image_size) +
                                        " differs from model.input_size " + std::to_string(model.input_size));
        }
        if (dataset.synthetic.num_classes != model.num_classes) {
            throw std::invalid_argument("config: dataset.num_classes differs from model.num_classes");
        }
    }
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> known,
                                const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
    for (const auto& [key, _] : j.items()) {
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
            throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
        }
    }
}

template <typename V>
void read_key(const nlohmann::json& j, const char* key, V& out) {
    if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace detail

inline nlohmann::json to_json(const RenderStyle& s) {
    return {{"bg_low", s.bg_low},
            {"bg_high", s.bg_high},
            {"fg_low", s.fg_low},
            {"fg_high", s.fg_high},
            {"coarse_texture", s.coarse_texture},
            {"fine_texture", s.fine_texture},
            {"shape_texture", s.shape_texture},
            {"grain", s.grain}};
}

inline nlohmann::json to_json(const ConditionSpec& c) {
    nlohmann::json j = {{"method", attack_method_name(c.method)}};
    if (c.method != AttackMethod::none) j["epsilon"] = c.attack.epsilon;
    if (c.method == AttackMethod::bim) {
        j["iterations"] = c.attack.iterations;
        j["alpha"] = c.attack.step();
    }
    return j;
}

inline nlohmann::json to_json(const ExplainerConfig& e) {
    nlohmann::json j = {{"method", explain_method_name(e.method)}};
    switch (e.method) {
        case ExplainMethod::vanilla:
            break;
        case ExplainMethod::gradcam:
            j["target_layer"] = e.target_layer;
            break;
        case ExplainMethod::smoothgrad:
            j["noise_sigma"] = e.noise_sigma;
            j["sample_count"] = e.sample_count;
            break;
        case ExplainMethod::lime:
            j["grid"] = e.grid;
            j["num_samples"] = e.num_samples;
            j["kernel_width"] = e.kernel_width;
            j["ridge_lambda"] = e.ridge_lambda;
            j["mask_fill"] = e.mask_fill;
            break;
    }
    return j;
}

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j;
    j["schema_version"] = kRunSchemaVersion;
    j["dataset"] = {{"manifest", c.dataset.manifest},
                    {"num_classes", c.dataset.synthetic.num_classes},
                    {"per_class", c.dataset.synthetic.per_class},
                    {"image_size", c.dataset.synthetic.image_size},
                    {"style", to_json(c.dataset.synthetic.style)}};
    j["model"] = c.model;
    j["training"] = {{"epochs", c.training.epochs},
                     {"learning_rate", c.training.learning_rate},
                     {"batch_size", c.training.batch_size},
                     {"lr_schedule", lr_schedule_name(c.training.lr_schedule)}};
    j["weights"] = c.weights;
    j["conditions"] = nlohmann::json::array();
    for (const auto& x : c.conditions) j["conditions"].push_back(to_json(x));
    j["explainers"] = nlohmann::json::array();
    for (const auto& x : c.explainers) j["explainers"].push_back(to_json(x));
    j["top_fraction"] = c.top_fraction;
    j["rmse_mode"] = rmse_mode_name(c.rmse_mode);
    j["eval_limit"] = c.eval_limit;
    j["overlay_limit"] = c.overlay_limit;
    j["master_seed"] = c.master_seed;
    j["output_dir"] = c.output_dir;
    return j;
}

/// Parses a run config. Missing keys keep their defaults; unknown keys and a
/// schema_version other than the supported one are rejected.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c = default_run_config();
    try {
        detail::reject_unknown_keys(j,
                                    {"schema_version", "dataset", "model", "training", "weights", "conditions",
                                     "explainers", "top_fraction", "rmse_mode", "eval_limit", "overlay_limit",
                                     "master_seed", "output_dir"},
                                    "config");
        if (!j.contains("schema_version")) throw std::invalid_argument("config: schema_version is required");
        if (j.at("schema_version").get<int>() != kRunSchemaVersion) {
            throw std::invalid_argument("config: unsupported schema_version " + j.at("schema_version").dump() +
                                        " (expected " + std::to_string(kRunSchemaVersion) + ")");
        }
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            detail::reject_unknown_keys(d, {"manifest", "num_classes", "per_class", "image_size", "style"}, "dataset");
            detail::read_key(d, "manifest", c.dataset.manifest);
            detail::read_key(d, "num_classes", c.dataset.synthetic.num_classes);
            detail::read_key(d, "per_class", c.dataset.synthetic.per_class);
            detail::read_key(d, "image_size", c.dataset.synthetic.image_size);
            if (d.contains("style")) {
                const auto& s = d.at("style");
                detail::reject_unknown_keys(s,
                                            {"bg_low", "bg_high", "fg_low", "fg_high", "coarse_texture",
                                             "fine_texture", "shape_texture", "grain"},
                                            "dataset.style");
                auto& st = c.dataset.synthetic.style;
                detail::read_key(s, "bg_low", st.bg_low);
                detail::read_key(s, "bg_high", st.bg_high);
                detail::read_key(s, "fg_low", st.fg_low);
                detail::read_key(s, "fg_high", st.fg_high);
                detail::read_key(s, "coarse_texture", st.coarse_texture);
                detail::read_key(s, "fine_texture", st.fine_texture);
                detail::read_key(s, "shape_texture", st.shape_texture);
                detail::read_key(s, "grain", st.grain);
            }
        }
        if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
        if (j.contains("training")) {
            const auto& t = j.at("training");
            detail::reject_unknown_keys(t, {"epochs", "learning_rate", "batch_size", "lr_schedule"}, "training");
            detail::read_key(t, "epochs", c.training.epochs);
            detail::read_key(t, "learning_rate", c.training.learning_rate);
            detail::read_key(t, "batch_size", c.training.batch_size);
            if (t.contains("lr_schedule")) c.training.lr_schedule = parse_lr_schedule(t.at("lr_schedule").get<std::string>());
        }
        detail::read_key(j, "weights", c.weights);
        if (j.contains("conditions")) {
            c.conditions.clear();
            for (const auto& x : j.at("conditions")) {
                detail::reject_unknown_keys(x, {"method", "epsilon", "iterations", "alpha"}, "conditions[]");
                ConditionSpec s;
                s.method = parse_attack_method(x.at("method").get<std::string>());
                detail::read_key(x, "epsilon", s.attack.epsilon);
                detail::read_key(x, "iterations", s.attack.iterations);
                detail::read_key(x, "alpha", s.attack.alpha);
                if (s.method == AttackMethod::none) s.attack.epsilon = 0.0;
                c.conditions.push_back(s);
            }
        }
        if (j.contains("explainers")) {
            c.explainers.clear();
            for (const auto& x : j.at("explainers")) {
                detail::reject_unknown_keys(x,
                                            {"method", "target_layer", "noise_sigma", "sample_count", "grid",
                                             "num_samples", "kernel_width", "ridge_lambda", "mask_fill"},
                                            "explainers[]");
                ExplainerConfig e;
                e.method = parse_explain_method(x.at("method").get<std::string>());
                detail::read_key(x, "target_layer", e.target_layer);
                detail::read_key(x, "noise_sigma", e.noise_sigma);
                detail::read_key(x, "sample_count", e.sample_count);
                detail::read_key(x, "grid", e.grid);
                detail::read_key(x, "num_samples", e.num_samples);
                detail::read_key(x, "kernel_width", e.kernel_width);
                detail::read_key(x, "ridge_lambda", e.ridge_lambda);
                detail::read_key(x, "mask_fill", e.mask_fill);
                c.explainers.push_back(e);
            }
        }
        detail::read_key(j, "top_fraction", c.top_fraction);
        if (j.contains("rmse_mode")) c.rmse_mode = parse_rmse_mode(j.at("rmse_mode").get<std::string>());
        detail::read_key(j, "eval_limit", c.eval_limit);
        detail::read_key(j, "overlay_limit", c.overlay_limit);
        detail::read_key(j, "master_seed", c.master_seed);
        detail::read_key(j, "output_dir", c.output_dir);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config: " + path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

struct DerivedSeeds {
    std::uint64_t dataset, init, train;
};

inline DerivedSeeds derive_seeds(std::uint64_t master) {
    return {mix_seed(master, "dataset"), mix_seed(master, "init"), mix_seed(master, "train")};
}

inline std::uint64_t explainer_seed(std::uint64_t master, ExplainMethod method, const std::string& sample_id) {
    return mix_seed(master, "explain/" + explain_method_name(method), sample_id);
}

// ---------------------------------------------------------------------------
// Errors, records and formatting

/// Failure of a pipeline stage, naming the stage and (if any) the sample.
class PipelineError : public std::runtime_error {
   public:
    PipelineError(std::string stage, std::string sample, const std::string& message)
        : std::runtime_error("stage '" + stage + "'" + (sample.empty() ? "" : " sample '" + sample + "'") + ": " +
                             message),
          stage_(std::move(stage)),
          sample_(std::move(sample)) {}
    const std::string& stage() const { return stage_; }
    const std::string& sample() const { return sample_; }

   private:
    std::string stage_, sample_;
};

struct EvaluationRecord {
    std::string sample_id;
    std::string condition;
    std::string explainer;
    int true_label = 0;
    int clean_prediction = 0;
    int prediction = 0;
    double iou = 0.0;
    double rmse = 0.0;
    bool degenerate = false;

    friend bool operator==(const EvaluationRecord&, const EvaluationRecord&) = default;
};

struct FailureRecord {
    std::string stage;
    std::string sample_id;
    std::string condition;
    std::string explainer;
    std::string message;
};

using Logger = std::function<void(const std::string&)>;

/// Round-trip decimal text for a double.
inline std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// fraction * 100 rounded half away from zero to two decimals. Rounding is
/// applied to the decimal expansion (printed to nine places), so 0.34665
/// gives "34.67" even though its binary value is slightly below.
inline std::string format_percent(double fraction) {
    if (!std::isfinite(fraction)) return "n/a";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9f", std::abs(fraction) * 100.0);
    std::string s = buf;
    const auto dot = s.find('.');
    std::string digits = s.substr(0, dot) + s.substr(dot + 1, 2);
    if (s[dot + 3] >= '5') {
        int i = static_cast<int>(digits.size()) - 1;
        while (i >= 0 && digits[static_cast<std::size_t>(i)] == '9') digits[static_cast<std::size_t>(i--)] = '0';
        if (i < 0) digits.insert(digits.begin(), '1');
        else ++digits[static_cast<std::size_t>(i)];
    }
    std::string out = digits.substr(0, digits.size() - 2) + "." + digits.substr(digits.size() - 2);
    const bool zero = std::all_of(digits.begin(), digits.end(), [](char ch) { return ch == '0'; });
    return (fraction < 0.0 && !zero ? "-" : "") + out;
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (const char ch : s) {
        if (ch == '"') out += '"';
        out += ch == '\n' ? ' ' : ch;
    }
    return out + "\"";
}

inline constexpr std::string_view kRecordsHeader =
    "sample_id,condition,explainer,true_label,clean_prediction,prediction,iou,rmse,degenerate";

inline void write_records(const std::filesystem::path& path, std::span<const EvaluationRecord> records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << kRecordsHeader << '\n';
    for (const auto& r : records) {
        out << r.sample_id << ',' << r.condition << ',' << r.explainer << ',' << r.true_label << ','
            << r.clean_prediction << ',' << r.prediction << ',' << format_real(r.iou) << ',' << format_real(r.rmse)
            << ',' << (r.degenerate ? 1 : 0) << '\n';
    }
}

inline std::vector<EvaluationRecord> read_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || detail::strip_cr(line) != kRecordsHeader) {
        throw std::runtime_error(path.string() + ": unexpected header");
    }
    std::vector<EvaluationRecord> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        const auto c = detail::split_csv_line(line);
        if (c.size() != 9) throw std::runtime_error(path.string() + ": line " + std::to_string(line_no) + " malformed");
        out.push_back({c[0], c[1], c[2], std::stoi(c[3]), std::stoi(c[4]), std::stoi(c[5]), std::stod(c[6]),
                       std::stod(c[7]), c[8] == "1"});
    }
    return out;
}

inline void write_failures(const std::filesystem::path& path, std::span<const FailureRecord> failures) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "stage,sample_id,condition,explainer,message\n";
    for (const auto& f : failures) {
        out << f.stage << ',' << f.sample_id << ',' << f.condition << ',' << f.explainer << ','
            << csv_escape(f.message) << '\n';
    }
}

inline std::vector<FailureRecord> read_failures(const std::filesystem::path& path) {
    std::vector<FailureRecord> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        // The message is last and may contain commas; split the first four.
        std::vector<std::string> cells;
        std::size_t pos = 0;
        for (int i = 0; i < 4; ++i) {
            const auto comma = line.find(',', pos);
            if (comma == std::string::npos) throw std::runtime_error(path.string() + ": malformed failure line");
            cells.push_back(line.substr(pos, comma - pos));
            pos = comma + 1;
        }
        std::string msg = line.substr(pos);
        if (msg.size() >= 2 && msg.front() == '"' && msg.back() == '"') {
            msg = msg.substr(1, msg.size() - 2);
            for (std::size_t i = msg.find("\"\""); i != std::string::npos; i = msg.find("\"\"", i + 1)) msg.erase(i, 1);
        }
        out.push_back({cells[0], cells[1], cells[2], cells[3], msg});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation

struct ReportRow {
    std::string condition;
    std::string explainer;
    double mean_iou = 0.0;
    double mean_rmse = 0.0;
    double accuracy = 0.0;  // of the condition
    std::size_t n = 0;
};

struct ConditionAccuracy {
    std::string condition;
    double accuracy = 0.0;
    std::size_t n = 0;
};

struct ConditionDelta {
    std::string explainer;
    std::string condition;
    double delta_iou = 0.0;
    double delta_rmse = 0.0;
    double delta_accuracy = 0.0;
};

struct BenchmarkReport {
    std::vector<ReportRow> rows;
    std::vector<ReportRow> correct_only_rows;
    std::vector<ConditionAccuracy> accuracy;
    std::vector<ConditionDelta> deltas;
    std::vector<std::string> conditions;  // in table order
    std::vector<std::string> explainers;
    nlohmann::json config = nlohmann::json::object();
    std::uint64_t master_seed = 0;
    std::string version = kToolVersion;
    std::string rmse_mode = "binary";
    double top_fraction = 0.15;
    std::size_t failures = 0;

    const ReportRow& row(const std::string& condition, const std::string& explainer) const {
        for (const auto& r : rows)
            if (r.condition == condition && r.explainer == explainer) return r;
        throw std::out_of_range("report: no row for " + condition + "/" + explainer);
    }
    double accuracy_of(const std::string& condition) const {
        for (const auto& a : accuracy)
            if (a.condition == condition) return a.accuracy;
        throw std::out_of_range("report: no condition " + condition);
    }
};

namespace detail {

inline void push_unique(std::vector<std::string>& v, const std::string& s) {
    if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
}

/// Per-condition accuracy over distinct samples.
inline std::vector<ConditionAccuracy> condition_accuracy(std::span<const EvaluationRecord> records,
                                                         const std::vector<std::string>& conditions) {
    std::vector<ConditionAccuracy> out;
    for (const auto& c : conditions) {
        std::set<std::string> seen;
        std::size_t hit = 0;
        for (const auto& r : records) {
            if (r.condition != c || !seen.insert(r.sample_id).second) continue;
            hit += r.prediction == r.true_label ? 1 : 0;
        }
        out.push_back({c, seen.empty() ? std::nan("") : static_cast<double>(hit) / static_cast<double>(seen.size()),
                       seen.size()});
    }
    return out;
}

inline std::vector<ReportRow> mean_rows(std::span<const EvaluationRecord> records,
                                        const std::vector<std::string>& conditions,
                                        const std::vector<std::string>& explainers,
                                        const std::vector<ConditionAccuracy>& acc, bool correct_only) {
    std::vector<ReportRow> rows;
    for (std::size_t ci = 0; ci < conditions.size(); ++ci)
        for (const auto& e : explainers) {
            ReportRow row{conditions[ci], e, 0.0, 0.0, acc[ci].accuracy, 0};
            for (const auto& r : records) {
                if (r.condition != conditions[ci] || r.explainer != e) continue;
                if (correct_only && r.prediction != r.true_label) continue;
                row.mean_iou += r.iou;
                row.mean_rmse += r.rmse;
                ++row.n;
            }
            if (row.n == 0) {
                row.mean_iou = row.mean_rmse = std::nan("");
            } else {
                row.mean_iou /= static_cast<double>(row.n);
                row.mean_rmse /= static_cast<double>(row.n);
            }
            rows.push_back(row);
        }
    return rows;
}

}  // namespace detail

/// Per (explainer, attacked condition): mean IoU, mean RMSE and accuracy
/// minus those of the baseline condition.
inline std::vector<ConditionDelta> compare_conditions(std::span<const EvaluationRecord> records,
                                                      const std::string& baseline = "none") {
    std::vector<std::string> conditions, explainers;
    for (const auto& r : records) {
        detail::push_unique(conditions, r.condition);
        detail::push_unique(explainers, r.explainer);
    }
    if (std::find(conditions.begin(), conditions.end(), baseline) == conditions.end()) {
        throw std::invalid_argument("compare_conditions: baseline condition '" + baseline + "' has no records");
    }
    const auto acc = detail::condition_accuracy(records, conditions);
    const auto rows = detail::mean_rows(records, conditions, explainers, acc, false);
    auto find = [&](const std::string& c, const std::string& e) -> const ReportRow& {
        return *std::find_if(rows.begin(), rows.end(),
                             [&](const ReportRow& r) { return r.condition == c && r.explainer == e; });
    };
    std::vector<ConditionDelta> out;
    for (const auto& e : explainers) {
        const ReportRow& base = find(baseline, e);
        for (const auto& c : conditions) {
            if (c == baseline) continue;
            const ReportRow& r = find(c, e);
            out.push_back({e, c, r.mean_iou - base.mean_iou, r.mean_rmse - base.mean_rmse, r.accuracy - base.accuracy});
        }
    }
    return out;
}

/// Builds the report from records. Table order follows `conditions` and
/// `explainers` when given, otherwise first appearance in the records.
inline BenchmarkReport aggregate(std::span<const EvaluationRecord> records, std::vector<std::string> conditions = {},
                                 std::vector<std::string> explainers = {}) {
    for (const auto& r : records) {
        detail::push_unique(conditions, r.condition);
        detail::push_unique(explainers, r.explainer);
    }
    BenchmarkReport rep;
    rep.conditions = conditions;
    rep.explainers = explainers;
    rep.accuracy = detail::condition_accuracy(records, conditions);
    rep.rows = detail::mean_rows(records, conditions, explainers, rep.accuracy, false);
    rep.correct_only_rows = detail::mean_rows(records, conditions, explainers, rep.accuracy, true);
    if (std::find(conditions.begin(), conditions.end(), "none") != conditions.end()) {
        rep.deltas = compare_conditions(records, "none");
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Report output

enum class ReportFormat { csv, markdown };

inline ReportFormat parse_report_format(const std::string& s) {
    if (s == "csv") return ReportFormat::csv;
    if (s == "markdown" || s == "md") return ReportFormat::markdown;
    throw std::invalid_argument("report: unknown format '" + s + "' (expected csv or markdown)");
}

inline constexpr std::string_view kReportHeader = "condition,explainer,mean_iou,mean_rmse,accuracy,n";

inline std::string report_csv(const BenchmarkReport& rep) {
    std::ostringstream out;
    out << kReportHeader << '\n';
    for (const auto& r : rep.rows) {
        out << r.condition << ',' << r.explainer << ',' << format_real(r.mean_iou) << ',' << format_real(r.mean_rmse)
            << ',' << format_real(r.accuracy) << ',' << r.n << '\n';
    }
    return out.str();
}

/// Largest |delta IoU| and |delta RMSE| treated as "no significant change".
inline constexpr double kStabilityBand = 0.05;

inline std::string report_markdown(const BenchmarkReport& rep) {
    std::ostringstream out;
    auto table = [&](const std::vector<ReportRow>& rows, bool use_iou) {
        out << "| Condition |";
        for (const auto& e : rep.explainers) out << ' ' << e << " |";
        out << "\n|---|";
        for (std::size_t i = 0; i < rep.explainers.size(); ++i) out << "---:|";
        out << '\n';
        for (const auto& c : rep.conditions) {
            out << "| " << condition_display_name(c) << " |";
            for (const auto& e : rep.explainers) {
                for (const auto& r : rows)
                    if (r.condition == c && r.explainer == e) out << ' ' << format_percent(use_iou ? r.mean_iou : r.mean_rmse) << " |";
            }
            out << '\n';
        }
    };

    out << "# Explanation robustness benchmark\n\n";
    out << "Metrics compare the top " << format_percent(rep.top_fraction)
        << "% of each explanation map with the ground-truth mask. Values are percentages.\n\n";
    out << "## Top-1 accuracy\n\n| Condition | Accuracy (%) | Samples |\n|---|---:|---:|\n";
    for (const auto& a : rep.accuracy)
        out << "| " << condition_display_name(a.condition) << " | " << format_percent(a.accuracy) << " | " << a.n
            << " |\n";
    out << "\n## IoU with ground truth (%)\n\n";
    table(rep.rows, true);
    out << "\n## RMSE with ground truth (%)\n\nRMSE mode: " << rep.rmse_mode
        << (rep.rmse_mode == "binary" ? " (binarized explanation vs. mask)" : " (continuous map vs. mask)") << ".\n\n";
    table(rep.rows, false);

    out << "\n## Appendix A: change under attack\n\n";
    out << "Differences from Without Attack in percentage points. Band: pass when |dIoU| and |dRMSE| are at most "
        << format_percent(kStabilityBand) << ".\n\n";
    out << "| Explainer | Condition | dIoU | dRMSE | dAccuracy | Band |\n|---|---|---:|---:|---:|---|\n";
    for (const auto& d : rep.deltas) {
        const bool pass = std::abs(d.delta_iou) <= kStabilityBand && std::abs(d.delta_rmse) <= kStabilityBand;
        out << "| " << d.explainer << " | " << condition_display_name(d.condition) << " | "
            << format_percent(d.delta_iou) << " | " << format_percent(d.delta_rmse) << " | "
            << format_percent(d.delta_accuracy) << " | " << (pass ? "pass" : "warn") << " |\n";
    }
    out << "\n## Appendix B: correctly classified samples only\n\nIoU (%):\n\n";
    table(rep.correct_only_rows, true);
    out << "\nRMSE (%):\n\n";
    table(rep.correct_only_rows, false);
    out << "\nSamples per cell:\n\n| Condition |";
    for (const auto& e : rep.explainers) out << ' ' << e << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < rep.explainers.size(); ++i) out << "---:|";
    out << '\n';
    for (const auto& c : rep.conditions) {
        out << "| " << condition_display_name(c) << " |";
        for (const auto& r : rep.correct_only_rows)
            if (r.condition == c) out << ' ' << r.n << " |";
        out << '\n';
    }

    out << "\n## Notes\n\n";
    out << "- Adversarial and explanation PNGs are 8-bit renderings for viewing; metrics use the float32 values "
           "stored in the .advx containers.\n";
    out << "- Failed (sample, condition, explainer) cells: " << rep.failures << " (see failures.csv).\n";
    out << "- master_seed " << rep.master_seed << ", version " << rep.version << ".\n";
    return out.str();
}

inline void emit_report(const BenchmarkReport& rep, const std::filesystem::path& dir, ReportFormat format) {
    std::filesystem::create_directories(dir);
    const bool csv = format == ReportFormat::csv;
    const auto path = dir / (csv ? "report.csv" : "report.md");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << (csv ? report_csv(rep) : report_markdown(rep));
}

// ---------------------------------------------------------------------------
// Overlays

/// Heat colormap: piecewise linear through blue (0), cyan (1/3), yellow (2/3)
/// and red (1).
inline std::array<float, 3> heat_color(float s) {
    s = std::clamp(s, 0.0f, 1.0f);
    if (s <= 1.0f / 3.0f) return {0.0f, 3.0f * s, 1.0f};
    if (s <= 2.0f / 3.0f) {
        const float t = 3.0f * s - 1.0f;
        return {t, 1.0f, 1.0f - t};
    }
    const float t = 3.0f * s - 2.0f;
    return {1.0f, 1.0f - t, 0.0f};
}

/// out = (1 - a) * image + a * heat_color(s) with a = s / 2: zero scores leave
/// the pixel untouched, a score of 1 gives a 50/50 blend with red.
inline Image overlay_heat(const Image& image, const ExplanationMap& map) {
    if (image.height != map.height || image.width != map.width) {
        throw std::invalid_argument("overlay: image and map sizes differ");
    }
    Image out = image;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            const float s = std::clamp(map.at(y, x), 0.0f, 1.0f);
            const float a = 0.5f * s;
            const auto col = heat_color(s);
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = (1.0f - a) * image.at(y, x, c) + a * col[static_cast<std::size_t>(c)];
        }
    return out;
}

/// Selected pixels are tinted red at 35%; selected pixels on the region
/// boundary (4-neighbourhood or image edge) are drawn solid yellow.
inline Image overlay_mask(const Image& image, const BinaryMask& mask) {
    if (image.height != mask.height || image.width != mask.width) {
        throw std::invalid_argument("overlay: image and mask sizes differ");
    }
    Image out = image;
    auto sel = [&](int y, int x) {
        return y >= 0 && x >= 0 && y < mask.height && x < mask.width && mask.at(y, x) != 0;
    };
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            if (!sel(y, x)) continue;
            const bool edge = !sel(y - 1, x) || !sel(y + 1, x) || !sel(y, x - 1) || !sel(y, x + 1);
            for (int c = 0; c < 3; ++c) {
                const float tint = c == 0 ? 1.0f : 0.0f;
                const float contour = c == 2 ? 0.0f : 1.0f;
                out.at(y, x, c) = edge ? contour : 0.65f * image.at(y, x, c) + 0.35f * tint;
            }
        }
    return out;
}

inline void render_overlay(const Image& image, const ExplanationMap& map, const std::filesystem::path& out_path) {
    write_png(out_path, overlay_heat(image, map));
}

inline void render_overlay(const Image& image, const BinaryMask& mask, const std::filesystem::path& out_path) {
    write_png(out_path, overlay_mask(image, mask));
}

// ---------------------------------------------------------------------------
// Stages

namespace detail {

inline Tensor<float> image_array(const Image& im) {
    return Tensor<float>({static_cast<std::size_t>(im.height), static_cast<std::size_t>(im.width), 3}, im.pixels);
}

inline Image array_image(const Tensor<float>& t) {
    if (t.rank() != 3 || t.dim(2) != 3) throw std::runtime_error("expected an [H,W,3] image array");
    Image im(static_cast<int>(t.dim(0)), static_cast<int>(t.dim(1)));
    im.pixels = t.values();
    return im;
}

inline void log(const Logger& logger, const std::string& msg) {
    if (logger) logger(msg);
}

}  // namespace detail

struct RunPaths {
    std::filesystem::path root;

    std::filesystem::path manifest() const { return root / "manifest.csv"; }
    std::filesystem::path weights() const { return root / "model.weights"; }
    std::filesystem::path attack_container(const std::string& cond) const { return root / "attacks" / (cond + ".advx"); }
    std::filesystem::path attack_png(const std::string& cond, const std::string& id) const {
        return root / "attacks" / cond / (id + ".png");
    }
    std::filesystem::path explanation_container(const std::string& cond, const std::string& method) const {
        return root / "explanations" / cond / (method + ".advx");
    }
    std::filesystem::path explanation_png(const std::string& cond, const std::string& method,
                                          const std::string& id) const {
        return root / "explanations" / cond / method / (id + ".png");
    }
    std::filesystem::path records() const { return root / "records.csv"; }
    std::filesystem::path failures() const { return root / "failures.csv"; }
};

/// Writes run.json, the resolved configuration with derived seeds.
inline void write_run_json(const RunConfig& cfg) {
    const RunPaths paths{cfg.output_dir};
    std::filesystem::create_directories(paths.root);
    nlohmann::json j = to_json(cfg);
    const auto seeds = derive_seeds(cfg.master_seed);
    j["derived_seeds"] = {{"dataset", seeds.dataset}, {"init", seeds.init}, {"train", seeds.train}};
    j["version"] = kToolVersion;
    std::ofstream out(paths.root / "run.json", std::ios::trunc);
    out << j.dump(2) << '\n';
}

/// Generates (or copies) the dataset and writes manifest.csv in the run directory.
inline DatasetManifest stage_data(const RunConfig& cfg, const Logger& logger = {}) {
    cfg.validate();
    write_run_json(cfg);
    const RunPaths paths{cfg.output_dir};
    try {
        if (cfg.dataset.manifest.empty()) {
            SyntheticOptions opt = cfg.dataset.synthetic;
            opt.seed = derive_seeds(cfg.master_seed).dataset;
            detail::log(logger, "data: rendering " + std::to_string(opt.num_classes * opt.per_class) + " images");
            return generate_synthetic_dataset(opt, paths.root);
        }
        DatasetManifest src = load_manifest(cfg.dataset.manifest);
        DatasetManifest m = src;
        m.root = paths.root;
        for (auto& e : m.entries) {
            e.image_path = std::filesystem::absolute(src.root / e.image_path).string();
            e.mask_path = std::filesystem::absolute(src.root / e.mask_path).string();
        }
        write_manifest(m);
        detail::log(logger, "data: using " + std::to_string(m.entries.size()) + " samples from " + cfg.dataset.manifest);
        return m;
    } catch (const std::exception& e) {
        throw PipelineError("data", "", e.what());
    }
}

inline DatasetManifest run_manifest(const RunConfig& cfg) {
    const RunPaths paths{cfg.output_dir};
    if (!std::filesystem::exists(paths.manifest())) {
        throw PipelineError("data", "", "missing " + paths.manifest().string() + "; run gen-data first");
    }
    return load_manifest(paths.manifest());
}

/// The evaluated test samples: the first eval_limit of the test split.
inline std::vector<Sample> evaluation_samples(const RunConfig& cfg, const DatasetManifest& m) {
    std::vector<Sample> out;
    for (const auto& e : m.entries) {
        if (e.split != Split::test) continue;
        if (cfg.eval_limit > 0 && out.size() >= static_cast<std::size_t>(cfg.eval_limit)) break;
        try {
            out.push_back(load_sample(m, e));
        } catch (const std::exception& ex) {
            throw PipelineError("data", e.id, ex.what());
        }
    }
    if (out.empty()) throw PipelineError("data", "", "test split is empty");
    return out;
}

struct TrainSummary {
    std::vector<EpochStats> trace;
    double test_accuracy = 0.0;
    std::size_t test_count = 0;
};

/// Trains (or loads) the model, writes model.weights and train_log.csv, and
/// reports held-out accuracy over the whole test split.
inline TrainSummary stage_train(const RunConfig& cfg, const Logger& logger = {}) {
    const RunPaths paths{cfg.output_dir};
    const DatasetManifest m = run_manifest(cfg);
    TrainSummary summary;
    Model<float> model = build_model<float>(cfg.model, derive_seeds(cfg.master_seed).init);
    std::vector<Sample> train_set, test_set;
    try {
        train_set = split(m, Split::train);
        test_set = split(m, Split::test);
    } catch (const std::exception& e) {
        throw PipelineError("data", "", e.what());
    }
    try {
        if (!cfg.weights.empty()) {
            model = load_weights(cfg.model, cfg.weights);
            detail::log(logger, "train: loaded weights from " + cfg.weights);
        } else {
            std::vector<Image> images;
            std::vector<int> labels;
            for (const auto& s : train_set) {
                images.push_back(s.image);
                labels.push_back(s.label);
            }
            TrainOptions opt = cfg.training;
            opt.seed = derive_seeds(cfg.master_seed).train;
            auto result = train(std::move(model), images, labels, opt, [&](const EpochStats& s) {
                char buf[128];
                std::snprintf(buf, sizeof buf, "train: epoch %d loss %.4f accuracy %.4f", s.epoch, s.mean_loss,
                              s.train_accuracy);
                detail::log(logger, buf);
            });
            model = std::move(result.model);
            summary.trace = std::move(result.trace);
        }
        save_weights(model, paths.weights());
    } catch (const PipelineError&) {
        throw;
    } catch (const std::exception& e) {
        throw PipelineError("train", "", e.what());
    }
    std::vector<Image> images;
    std::vector<int> labels;
    for (const auto& s : test_set) {
        images.push_back(s.image);
        labels.push_back(s.label);
    }
    summary.test_accuracy = top1_accuracy(model, images, labels);
    summary.test_count = test_set.size();
    std::ofstream log_csv(paths.root / "train_log.csv", std::ios::trunc);
    log_csv << "epoch,mean_loss,train_accuracy\n";
    for (const auto& s : summary.trace)
        log_csv << s.epoch << ',' << format_real(s.mean_loss) << ',' << format_real(s.train_accuracy) << '\n';
    nlohmann::json tj = {{"test_accuracy", summary.test_accuracy}, {"test_count", summary.test_count}};
    std::ofstream(paths.root / "training.json", std::ios::trunc) << tj.dump(2) << '\n';
    detail::log(logger, "train: held-out accuracy " + format_percent(summary.test_accuracy) + "% on " +
                            std::to_string(summary.test_count) + " images");
    return summary;
}

inline Model<float> run_model(const RunConfig& cfg) {
    const RunPaths paths{cfg.output_dir};
    if (!std::filesystem::exists(paths.weights())) {
        throw PipelineError("train", "", "missing " + paths.weights().string() + "; run train first");
    }
    try {
        return load_weights(cfg.model, paths.weights());
    } catch (const std::exception& e) {
        throw PipelineError("train", "", e.what());
    }
}

/// Produces the image set of every condition. The "none" condition stores
/// the dataset images unchanged.
inline void stage_attack(const RunConfig& cfg, const Logger& logger = {}) {
    const RunPaths paths{cfg.output_dir};
    const Model<float> model = run_model(cfg);
    const auto samples = evaluation_samples(cfg, run_manifest(cfg));
    std::vector<FailureRecord> failures;
    std::ofstream pred(paths.root / "predictions.csv", std::ios::trunc);
    pred << "condition,sample_id,true_label,clean_prediction,prediction,linf\n";
    std::vector<int> clean(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) clean[i] = predict(model, samples[i].image).predicted_class;
    for (const auto& cond : cfg.conditions) {
        const std::string slug = condition_slug(cond);
        Container box;
        box.kind = "adversarial_images";
        box.meta = {{"condition", slug}, {"attack", to_json(cond)}};
        std::size_t hit = 0, done = 0;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const Sample& s = samples[i];
            try {
                const Image adv = run_attack(model, s.image, s.label, cond.method, cond.attack);
                if (cond.method != AttackMethod::none && !within_epsilon_ball(s.image, adv, cond.attack.epsilon)) {
                    throw std::runtime_error("adversarial image leaves the epsilon ball");
                }
                const int p = predict(model, adv).predicted_class;
                box.arrays.push_back({s.id, detail::image_array(adv)});
                if (cond.method != AttackMethod::none) write_png(paths.attack_png(slug, s.id), adv);
                pred << slug << ',' << s.id << ',' << s.label << ',' << clean[i] << ',' << p << ','
                     << format_real(linf_distance(s.image, adv)) << '\n';
                hit += p == s.label ? 1 : 0;
                ++done;
            } catch (const std::exception& e) {
                failures.push_back({"attack", s.id, slug, "", e.what()});
            }
        }
        write_container(paths.attack_container(slug), box);
        detail::log(logger, "attack: " + condition_display_name(slug) + " accuracy " +
                                format_percent(done ? static_cast<double>(hit) / static_cast<double>(done) : 0.0) +
                                "% on " + std::to_string(done) + " images");
    }
    std::filesystem::create_directories(paths.root / "attacks");
    write_failures(paths.root / "attacks" / "failures.csv", failures);
}

namespace detail {

inline std::map<std::string, Image> load_condition_images(const RunPaths& paths, const std::string& slug) {
    const auto file = paths.attack_container(slug);
    if (!std::filesystem::exists(file)) {
        throw PipelineError("attack", "", "missing " + file.string() + "; run attack first");
    }
    std::map<std::string, Image> out;
    for (const auto& a : read_container(file).arrays) out.emplace(a.name, array_image(a.values));
    return out;
}

}  // namespace detail

/// Explains the predicted class of every condition image with every
/// explainer. A sample whose attack failed is logged once per explainer.
inline void stage_explain(const RunConfig& cfg, const Logger& logger = {}) {
    const RunPaths paths{cfg.output_dir};
    const Model<float> model = run_model(cfg);
    const auto samples = evaluation_samples(cfg, run_manifest(cfg));
    std::vector<FailureRecord> failures;
    for (const auto& cond : cfg.conditions) {
        const std::string slug = condition_slug(cond);
        const auto images = detail::load_condition_images(paths, slug);
        for (const auto& ex : cfg.explainers) {
            const std::string method = explain_method_name(ex.method);
            Container box;
            box.kind = "explanations";
            box.meta = {{"condition", slug}, {"explainer", to_json(ex)}, {"degenerate", nlohmann::json::object()},
                        {"explained_class", nlohmann::json::object()}};
            for (const auto& s : samples) {
                const auto it = images.find(s.id);
                if (it == images.end()) {
                    failures.push_back({"explain", s.id, slug, method, "no image (attack failed)"});
                    continue;
                }
                try {
                    ExplainerConfig ec = ex;
                    ec.seed = explainer_seed(cfg.master_seed, ex.method, s.id);
                    const int cls = predict(model, it->second).predicted_class;
                    const ExplanationMap map = explain(model, it->second, cls, ec);
                    box.arrays.push_back({s.id, Tensor<float>({static_cast<std::size_t>(map.height),
                                                               static_cast<std::size_t>(map.width)},
                                                              map.scores)});
                    box.meta["degenerate"][s.id] = map.degenerate;
                    box.meta["explained_class"][s.id] = cls;
                    write_gray_png(paths.explanation_png(slug, method, s.id), map.height, map.width, map.scores);
                } catch (const std::exception& e) {
                    failures.push_back({"explain", s.id, slug, method, e.what()});
                }
            }
            write_container(paths.explanation_container(slug, method), box);
            detail::log(logger, "explain: " + condition_display_name(slug) + " / " + method + " done");
        }
    }
    std::filesystem::create_directories(paths.root / "explanations");
    write_failures(paths.root / "explanations" / "failures.csv", failures);
}

/// Scores every stored explanation against its ground-truth mask and writes
/// records.csv and failures.csv. Every (sample, condition, explainer) cell
/// ends up in exactly one of the two.
inline std::vector<EvaluationRecord> stage_evaluate(const RunConfig& cfg, const Logger& logger = {}) {
    const RunPaths paths{cfg.output_dir};
    const Model<float> model = run_model(cfg);
    const auto samples = evaluation_samples(cfg, run_manifest(cfg));
    std::vector<FailureRecord> failures = read_failures(paths.root / "explanations" / "failures.csv");
    std::vector<EvaluationRecord> records;
    std::map<std::string, int> clean;
    for (const auto& s : samples) clean[s.id] = predict(model, s.image).predicted_class;
    for (const auto& cond : cfg.conditions) {
        const std::string slug = condition_slug(cond);
        const auto images = detail::load_condition_images(paths, slug);
        std::map<std::string, int> predicted;
        for (const auto& [id, im] : images) predicted[id] = predict(model, im).predicted_class;
        for (const auto& ex : cfg.explainers) {
            const std::string method = explain_method_name(ex.method);
            const auto file = paths.explanation_container(slug, method);
            if (!std::filesystem::exists(file)) {
                throw PipelineError("explain", "", "missing " + file.string() + "; run explain first");
            }
            const Container box = read_container(file);
            std::map<std::string, const NamedArray*> maps;
            for (const auto& a : box.arrays) maps.emplace(a.name, &a);
            for (const auto& s : samples) {
                const auto it = maps.find(s.id);
                if (it == maps.end()) continue;  // already logged by the explain stage
                try {
                    const Tensor<float>& t = it->second->values;
                    ExplanationMap map{static_cast<int>(t.dim(0)), static_cast<int>(t.dim(1)), t.values(),
                                       box.meta.at("degenerate").at(s.id).get<bool>()};
                    const MetricResult m = score(s.mask, map, cfg.top_fraction, cfg.rmse_mode);
                    if (!std::isfinite(m.iou) || !std::isfinite(m.rmse)) throw std::runtime_error("non-finite metric");
                    records.push_back({s.id, slug, method, s.label, clean.at(s.id), predicted.at(s.id), m.iou, m.rmse,
                                       map.degenerate});
                } catch (const std::exception& e) {
                    failures.push_back({"evaluate", s.id, slug, method, e.what()});
                }
            }
        }
    }
    write_records(paths.records(), records);
    write_failures(paths.failures(), failures);
    detail::log(logger, "evaluate: " + std::to_string(records.size()) + " records, " +
                            std::to_string(failures.size()) + " failures");
    return records;
}

inline std::vector<std::string> condition_slugs(const RunConfig& cfg) {
    std::vector<std::string> out;
    for (const auto& c : cfg.conditions) out.push_back(condition_slug(c));
    return out;
}

inline std::vector<std::string> explainer_names(const RunConfig& cfg) {
    std::vector<std::string> out;
    for (const auto& e : cfg.explainers) out.push_back(explain_method_name(e.method));
    return out;
}

/// Aggregates records.csv into report.csv and report.md and renders overlays
/// for the first overlay_limit samples.
inline BenchmarkReport stage_report(const RunConfig& cfg, const Logger& logger = {}) {
    const RunPaths paths{cfg.output_dir};
    if (!std::filesystem::exists(paths.records())) {
        throw PipelineError("report", "", "missing " + paths.records().string() + "; run evaluate first");
    }
    const auto records = read_records(paths.records());
    BenchmarkReport rep = aggregate(records, condition_slugs(cfg), explainer_names(cfg));
    rep.config = to_json(cfg);
    rep.master_seed = cfg.master_seed;
    rep.rmse_mode = rmse_mode_name(cfg.rmse_mode);
    rep.top_fraction = cfg.top_fraction;
    rep.failures = read_failures(paths.failures()).size();
    emit_report(rep, paths.root, ReportFormat::csv);
    emit_report(rep, paths.root, ReportFormat::markdown);

    if (cfg.overlay_limit > 0) {
        auto samples = evaluation_samples(cfg, run_manifest(cfg));
        samples.resize(std::min(samples.size(), static_cast<std::size_t>(cfg.overlay_limit)));
        for (const auto& slug : rep.conditions) {
            const auto images = detail::load_condition_images(paths, slug);
            for (const auto& method : rep.explainers) {
                const Container box = read_container(paths.explanation_container(slug, method));
                for (const auto& s : samples) {
                    const auto im = images.find(s.id);
                    const auto arr = std::find_if(box.arrays.begin(), box.arrays.end(),
                                                  [&](const NamedArray& a) { return a.name == s.id; });
                    if (im == images.end() || arr == box.arrays.end()) continue;
                    const ExplanationMap map{im->second.height, im->second.width, arr->values.values(), false};
                    const auto dir = paths.root / "overlays" / slug / method;
                    render_overlay(im->second, map, dir / (s.id + "_heat.png"));
                    render_overlay(im->second, binarize_top_fraction(map, cfg.top_fraction), dir / (s.id + "_top.png"));
                }
            }
            for (const auto& s : samples) {
                const auto im = images.find(s.id);
                if (im != images.end())
                    render_overlay(im->second, to_binary_mask(s.mask), paths.root / "overlays" / slug / (s.id + "_truth.png"));
            }
        }
    }
    detail::log(logger, "report: wrote report.csv and report.md to " + paths.root.string());
    return rep;
}

struct PipelineResult {
    TrainSummary training;
    std::vector<EvaluationRecord> records;
    BenchmarkReport report;
};

/// Runs every stage in order.
inline PipelineResult run_pipeline(const RunConfig& cfg, const Logger& logger = {}) {
    PipelineResult r;
    stage_data(cfg, logger);
    r.training = stage_train(cfg, logger);
    stage_attack(cfg, logger);
    stage_explain(cfg, logger);
    r.records = stage_evaluate(cfg, logger);
    r.report = stage_report(cfg, logger);
    return r;
}

}  // namespace advxai
