#pragma once

// Synthetic shapes-on-texture dataset and the CSV manifest used for both
// generated and externally supplied image/mask pairs.
//
// Each class is one filled shape family rasterized without anti-aliasing
// (pixel-center inside test), so the ground-truth mask is exactly the
// shape footprint.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "advxai/image.hpp"
#include "advxai/rng.hpp"

namespace advxai {

enum class ShapeFamily { circle, square, triangle, cross, ring, diamond, x_cross, frame, half_disk, ellipse };

inline constexpr std::array<std::string_view, 10> kShapeFamilyNames = {
    "circle", "square", "triangle", "cross", "ring", "diamond", "x_cross", "frame", "half_disk", "ellipse"};

inline constexpr double kMinForeground = 0.05;
inline constexpr double kMaxForeground = 0.40;

/// Placement of one shape: center (cx, cy) and radius, all in pixels.
struct ShapeDraw {
    ShapeFamily family = ShapeFamily::circle;
    double cx = 0.0;
    double cy = 0.0;
    double radius = 1.0;
};

/// True if the normalized offset (u, v) lies inside the unit-radius family.
inline bool shape_contains(ShapeFamily family, double u, double v) {
    const double au = std::abs(u), av = std::abs(v);
    switch (family) {
        case ShapeFamily::circle:
            return u * u + v * v <= 1.0;
        case ShapeFamily::square:
            return au <= 0.85 && av <= 0.85;
        case ShapeFamily::triangle:
            return v <= 0.8 && au <= (v + 1.0) / 1.8;
        case ShapeFamily::cross:
            return (au <= 0.3 && av <= 1.0) || (av <= 0.3 && au <= 1.0);
        case ShapeFamily::ring: {
            const double r2 = u * u + v * v;
            return r2 <= 1.0 && r2 >= 0.55 * 0.55;
        }
        case ShapeFamily::diamond:
            return au + av <= 1.0;
        case ShapeFamily::x_cross: {
            const double a = std::abs(u + v) * std::numbers::sqrt2 / 2.0;
            const double b = std::abs(v - u) * std::numbers::sqrt2 / 2.0;
            return (a <= 0.3 && b <= 1.0) || (b <= 0.3 && a <= 1.0);
        }
        case ShapeFamily::frame: {
            const double m = std::max(au, av);
            return m <= 0.9 && m > 0.55;
        }
        case ShapeFamily::half_disk:
            return u * u + v * v <= 1.0 && v <= 0.0;
        case ShapeFamily::ellipse:
            return u * u + 4.0 * v * v <= 1.0;
    }
    return false;
}

/// Exact footprint of a draw on an H x W grid.
inline GroundTruthMask rasterize(const ShapeDraw& d, int height, int width) {
    GroundTruthMask m(height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double u = (x + 0.5 - d.cx) / d.radius;
            const double v = (y + 0.5 - d.cy) / d.radius;
            m.at(y, x) = shape_contains(d.family, u, v) ? 1 : 0;
        }
    }
    return m;
}

struct Sample {
    Image image;
    GroundTruthMask mask;
    int label = 0;
    std::string id;
};

enum class Split { train, test };

inline std::string_view split_name(Split s) { return s == Split::train ? "train" : "test"; }

inline Split parse_split(std::string_view tag) {
    if (tag == "train") return Split::train;
    if (tag == "test") return Split::test;
    throw std::invalid_argument("dataset: unknown split tag '" + std::string(tag) + "' (expected train or test)");
}

struct ManifestEntry {
    std::string id;
    std::string image_path;  // relative to the manifest directory
    std::string mask_path;
    int label = 0;
    Split split = Split::train;
};

struct DatasetManifest {
    std::filesystem::path root;  // directory holding manifest.csv
    std::vector<ManifestEntry> entries;
    std::vector<std::string> class_names;
};

/// A generated sample together with the draw that produced it.
struct SyntheticSample {
    Sample sample;
    ShapeDraw draw;
    Split split = Split::train;
};

/// Color and texture ranges used by the renderer. The shape is always drawn
/// brighter than the background when fg_low >= bg_high.
struct RenderStyle {
    double bg_low = 0.15, bg_high = 0.45;
    double fg_low = 0.50, fg_high = 0.80;
    double coarse_texture = 0.16;  // amplitude of cell-8 value noise
    double fine_texture = 0.08;    // amplitude of cell-3 value noise
    double shape_texture = 0.5;    // fraction of the texture kept inside the shape
    double grain = 0.04;           // per-pixel, per-channel uniform noise

    friend bool operator==(const RenderStyle&, const RenderStyle&) = default;
};

struct SyntheticOptions {
    RenderStyle style;
    int num_classes = 8;
    int per_class = 100;
    int image_size = 64;
    std::uint64_t seed = 0;
};

namespace detail {

/// Value noise: random lattice values every `cell` pixels, smoothstep-bilinear
/// interpolation in between. Returns H*W values in [0,1].
inline std::vector<double> value_noise(Rng& rng, int size, int cell) {
    const int n = size / cell + 2;
    std::vector<double> lattice(static_cast<std::size_t>(n * n));
    for (auto& v : lattice) v = rng.uniform();
    std::vector<double> out(static_cast<std::size_t>(size * size));
    auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
    for (int y = 0; y < size; ++y) {
        const double fy = (y + 0.5) / cell;
        const int y0 = static_cast<int>(fy);
        const double ty = smooth(fy - y0);
        for (int x = 0; x < size; ++x) {
            const double fx = (x + 0.5) / cell;
            const int x0 = static_cast<int>(fx);
            const double tx = smooth(fx - x0);
            auto at = [&](int yy, int xx) { return lattice[static_cast<std::size_t>(yy * n + xx)]; };
            const double top = at(y0, x0) * (1 - tx) + at(y0, x0 + 1) * tx;
            const double bot = at(y0 + 1, x0) * (1 - tx) + at(y0 + 1, x0 + 1) * tx;
            out[static_cast<std::size_t>(y * size + x)] = top * (1 - ty) + bot * ty;
        }
    }
    return out;
}

inline float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace detail

/// Renders one sample of class `label`. Retries the placement until the
/// foreground fraction lands in [0.05, 0.40]; gives up after 100 draws.
inline SyntheticSample render_synthetic_sample(int label, int size, std::uint64_t seed, std::string id,
                                              const RenderStyle& style = {}) {
    Rng rng(seed);
    const auto family = static_cast<ShapeFamily>(label);
    ShapeDraw draw{family, 0, 0, 1};
    GroundTruthMask mask;
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
        draw.radius = rng.uniform(0.16, 0.34) * size;
        draw.cx = rng.uniform(draw.radius, size - draw.radius);
        draw.cy = rng.uniform(draw.radius, size - draw.radius);
        mask = rasterize(draw, size, size);
        const double f = mask.foreground_fraction();
        ok = f >= kMinForeground && f <= kMaxForeground;
    }
    if (!ok) throw std::runtime_error("dataset: sample " + id + " violates the foreground bounds after 100 draws");

    std::array<double, 3> base{}, color{};
    for (auto& c : base) c = rng.uniform(style.bg_low, style.bg_high);
    for (auto& c : color) c = rng.uniform(style.fg_low, style.fg_high);

    const std::vector<double> coarse = detail::value_noise(rng, size, 8);
    const std::vector<double> fine = detail::value_noise(rng, size, 3);
    Image image(size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const auto p = static_cast<std::size_t>(y * size + x);
            const double texture = style.coarse_texture * (coarse[p] - 0.5) + style.fine_texture * (fine[p] - 0.5);
            const bool fg = mask.at(y, x) != 0;
            for (int c = 0; c < 3; ++c) {
                const double grain = style.grain * (rng.uniform() - 0.5);
                const double v = fg ? color[c] + style.shape_texture * texture + grain : base[c] + texture + grain;
                image.at(y, x, c) = detail::clamp01(v);
            }
        }
    }
    return {Sample{std::move(image), std::move(mask), label, std::move(id)}, draw, Split::train};
}

/// Generates K * per_class samples in memory. Sample i has label i mod K and
/// id "s%05d"; split tags are assigned 80/20 by a seeded shuffle.
inline std::vector<SyntheticSample> synthesize_samples(const SyntheticOptions& opt) {
    if (opt.num_classes < 2) throw std::invalid_argument("dataset: need at least 2 classes");
    if (opt.num_classes > static_cast<int>(kShapeFamilyNames.size())) {
        throw std::invalid_argument("dataset: " + std::to_string(opt.num_classes) + " classes requested but only " +
                                    std::to_string(kShapeFamilyNames.size()) + " shape families exist");
    }
    if (opt.image_size < 32) throw std::invalid_argument("dataset: image_size must be at least 32");
    if (opt.per_class < 1) throw std::invalid_argument("dataset: per_class must be positive");

    const int total = opt.num_classes * opt.per_class;
    std::vector<SyntheticSample> out;
    out.reserve(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "s%05d", i);
        out.push_back(render_synthetic_sample(i % opt.num_classes, opt.image_size, mix_seed(opt.seed, "sample", id), id,
                                                  opt.style));
    }
    std::vector<std::size_t> order(out.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(mix_seed(opt.seed, "split"));
    rng.shuffle(order);
    const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(total)));
    for (std::size_t r = 0; r < order.size(); ++r) out[order[r]].split = r < n_train ? Split::train : Split::test;
    return out;
}

// ---------------------------------------------------------------------------
// Manifest I/O

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    std::istringstream is(line);
    while (std::getline(is, cur, ',')) cells.push_back(cur);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

inline std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

}  // namespace detail

inline constexpr std::string_view kManifestHeader = "id,image_path,mask_path,label,split";

inline void write_manifest(const DatasetManifest& m) {
    std::filesystem::create_directories(m.root);
    std::ofstream out(m.root / "manifest.csv", std::ios::trunc);
    if (!out) throw std::runtime_error("dataset: cannot write " + (m.root / "manifest.csv").string());
    out << kManifestHeader << '\n';
    for (const auto& e : m.entries)
        out << e.id << ',' << e.image_path << ',' << e.mask_path << ',' << e.label << ',' << split_name(e.split) << '\n';
    std::ofstream classes(m.root / "classes.txt", std::ios::trunc);
    for (const auto& c : m.class_names) classes << c << '\n';
}

/// Reads manifest.csv (path to the file or its directory). Class names come
/// from an optional classes.txt beside it, otherwise "class<k>".
inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    const auto file = std::filesystem::is_directory(path) ? path / "manifest.csv" : path;
    std::ifstream in(file);
    if (!in) throw std::runtime_error("dataset: cannot open manifest " + file.string());
    DatasetManifest m;
    m.root = file.parent_path();
    std::string line;
    if (!std::getline(in, line) || detail::strip_cr(line) != kManifestHeader) {
        throw std::runtime_error("dataset: manifest " + file.string() + " must start with header '" +
                                 std::string(kManifestHeader) + "'");
    }
    int max_label = -1;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != 5) {
            throw std::runtime_error("dataset: manifest line " + std::to_string(line_no) + " has " +
                                     std::to_string(cells.size()) + " fields, expected 5");
        }
        ManifestEntry e{cells[0], cells[1], cells[2], 0, parse_split(cells[4])};
        try {
            e.label = std::stoi(cells[3]);
        } catch (const std::exception&) {
            throw std::runtime_error("dataset: sample " + e.id + " has non-integer label '" + cells[3] + "'");
        }
        if (e.label < 0) throw std::runtime_error("dataset: sample " + e.id + " has negative label");
        max_label = std::max(max_label, e.label);
        m.entries.push_back(std::move(e));
    }
    if (m.entries.empty()) throw std::runtime_error("dataset: manifest " + file.string() + " has no entries");
    std::vector<bool> seen(static_cast<std::size_t>(max_label + 1), false);
    for (const auto& e : m.entries) seen[static_cast<std::size_t>(e.label)] = true;
    for (std::size_t k = 0; k < seen.size(); ++k) {
        if (!seen[k]) throw std::runtime_error("dataset: labels are not dense, class " + std::to_string(k) + " unused");
    }

    std::ifstream classes(m.root / "classes.txt");
    std::string name;
    while (classes && std::getline(classes, name)) {
        name = detail::strip_cr(name);
        if (!name.empty()) m.class_names.push_back(name);
    }
    if (m.class_names.size() != seen.size()) {
        m.class_names.clear();
        for (std::size_t k = 0; k < seen.size(); ++k) m.class_names.push_back("class" + std::to_string(k));
    }
    return m;
}

inline Sample load_sample(const DatasetManifest& m, const ManifestEntry& e) {
    Sample s;
    s.id = e.id;
    s.label = e.label;
    try {
        s.image = read_png_image(m.root / e.image_path);
        s.mask = read_mask_png(m.root / e.mask_path);
    } catch (const std::exception& ex) {
        throw std::runtime_error("dataset: sample " + e.id + ": " + ex.what());
    }
    if (s.image.height != s.mask.height || s.image.width != s.mask.width) {
        throw std::runtime_error("dataset: sample " + e.id + " image is " + std::to_string(s.image.width) + "x" +
                                 std::to_string(s.image.height) + " but mask is " + std::to_string(s.mask.width) +
                                 "x" + std::to_string(s.mask.height));
    }
    return s;
}

/// Samples carrying `tag`, in manifest order.
inline std::vector<Sample> split(const DatasetManifest& m, Split tag) {
    std::vector<Sample> out;
    for (const auto& e : m.entries)
        if (e.split == tag) out.push_back(load_sample(m, e));
    return out;
}

inline std::vector<Sample> split(const DatasetManifest& m, std::string_view tag) { return split(m, parse_split(tag)); }

/// Writes images, masks, manifest.csv, classes.txt and draws.csv (the stored
/// placement of every shape) under out_dir.
inline DatasetManifest generate_synthetic_dataset(const SyntheticOptions& opt, const std::filesystem::path& out_dir) {
    const auto samples = synthesize_samples(opt);
    DatasetManifest m;
    m.root = out_dir;
    for (int k = 0; k < opt.num_classes; ++k) m.class_names.emplace_back(kShapeFamilyNames[static_cast<std::size_t>(k)]);
    std::filesystem::create_directories(out_dir);
    std::ofstream draws(out_dir / "draws.csv", std::ios::trunc);
    draws << "id,family,cx,cy,radius\n";
    draws.precision(17);
    for (const auto& s : samples) {
        ManifestEntry e{s.sample.id, "data/images/" + s.sample.id + ".png", "data/masks/" + s.sample.id + ".png",
                        s.sample.label, s.split};
        write_png(out_dir / e.image_path, s.sample.image);
        write_mask_png(out_dir / e.mask_path, s.sample.mask);
        draws << s.sample.id << ',' << kShapeFamilyNames[static_cast<std::size_t>(s.draw.family)] << ',' << s.draw.cx
              << ',' << s.draw.cy << ',' << s.draw.radius << '\n';
        m.entries.push_back(std::move(e));
    }
    write_manifest(m);
    return m;
}

/// Reads draws.csv written by generate_synthetic_dataset.
inline std::vector<std::pair<std::string, ShapeDraw>> load_draws(const std::filesystem::path& dir) {
    std::ifstream in(dir / "draws.csv");
    if (!in) throw std::runtime_error("dataset: cannot open " + (dir / "draws.csv").string());
    std::string line;
    std::getline(in, line);
    std::vector<std::pair<std::string, ShapeDraw>> out;
    while (std::getline(in, line)) {
        const auto cells = detail::split_csv_line(detail::strip_cr(line));
        if (cells.size() != 5) continue;
        ShapeDraw d;
        bool found = false;
        for (std::size_t f = 0; f < kShapeFamilyNames.size(); ++f) {
            if (kShapeFamilyNames[f] == cells[1]) {
                d.family = static_cast<ShapeFamily>(f);
                found = true;
            }
        }
        if (!found) throw std::runtime_error("dataset: unknown shape family '" + cells[1] + "'");
        d.cx = std::stod(cells[2]);
        d.cy = std::stod(cells[3]);
        d.radius = std::stod(cells[4]);
        out.emplace_back(cells[0], d);
    }
    return out;
}

}  // namespace advxai
