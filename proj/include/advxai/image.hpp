#pragma once

// Images, masks and their 8-bit PNG encodings.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "advxai/tensor.hpp"

namespace advxai {

/// H x W x 3 floats in [0,1], stored interleaved (HWC).
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int h, int w, float fill = 0.0f)
        : height(h), width(w), pixels(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3, fill) {}

    float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }

    bool in_unit_range() const {
        return std::all_of(pixels.begin(), pixels.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
    }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Binary H x W mask, 1 marks the pixels responsible for the class.
struct GroundTruthMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> values;

    GroundTruthMask() = default;
    GroundTruthMask(int h, int w)
        : height(h), width(w), values(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0) {}

    std::uint8_t& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
    std::size_t pixel_count() const { return values.size(); }

    std::size_t foreground() const {
        return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
    }
    double foreground_fraction() const {
        return values.empty() ? 0.0 : static_cast<double>(foreground()) / static_cast<double>(values.size());
    }

    friend bool operator==(const GroundTruthMask&, const GroundTruthMask&) = default;
};

/// Packs images into an [N,3,H,W] tensor.
template <typename T>
Tensor<T> images_to_tensor(std::span<const Image> images) {
    if (images.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
    const int h = images[0].height, w = images[0].width;
    Tensor<T> out({images.size(), 3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
    for (std::size_t n = 0; n < images.size(); ++n) {
        const Image& im = images[n];
        if (im.height != h || im.width != w) {
            throw std::invalid_argument("images_to_tensor: image " + std::to_string(n) + " is " +
                                        std::to_string(im.height) + "x" + std::to_string(im.width) + ", expected " +
                                        std::to_string(h) + "x" + std::to_string(w));
        }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c) out.at(n, c, y, x) = static_cast<T>(im.at(y, x, c));
    }
    return out;
}

template <typename T>
Tensor<T> image_to_tensor(const Image& image) {
    return images_to_tensor<T>(std::span<const Image>(&image, 1));
}

/// Per-pixel value of an [1,3,H,W] gradient-shaped tensor back in HWC order.
template <typename T>
Image tensor_to_image(const Tensor<T>& t, std::size_t n = 0) {
    Image im(static_cast<int>(t.dim(2)), static_cast<int>(t.dim(3)));
    for (int y = 0; y < im.height; ++y)
        for (int x = 0; x < im.width; ++x)
            for (int c = 0; c < 3; ++c) im.at(y, x, c) = static_cast<float>(t.at(n, c, y, x));
    return im;
}

inline std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// ---------------------------------------------------------------------------
// PNG

namespace detail {

struct PngRaster {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> bytes;
};

inline void write_png_raw(const std::filesystem::path& path, const PngRaster& r) {
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(r.width);
    img.height = static_cast<png_uint_32>(r.height);
    img.format = r.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, r.bytes.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw std::runtime_error("png: cannot write " + path.string() + ": " + msg);
    }
}

inline PngRaster read_png_raw(const std::filesystem::path& path, int channels) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw std::runtime_error("png: cannot decode " + path.string() + ": " + msg);
    }
    img.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    PngRaster r;
    r.width = static_cast<int>(img.width);
    r.height = static_cast<int>(img.height);
    r.channels = channels;
    r.bytes.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, r.bytes.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw std::runtime_error("png: cannot decode " + path.string() + ": " + msg);
    }
    return r;
}

}  // namespace detail

/// 8-bit RGB PNG, round(v * 255).
inline void write_png(const std::filesystem::path& path, const Image& image) {
    detail::PngRaster r{image.width, image.height, 3, {}};
    r.bytes.resize(image.pixels.size());
    std::transform(image.pixels.begin(), image.pixels.end(), r.bytes.begin(), to_byte);
    detail::write_png_raw(path, r);
}

/// Decodes any PNG to RGB with v / 255.
inline Image read_png_image(const std::filesystem::path& path) {
    const detail::PngRaster r = detail::read_png_raw(path, 3);
    Image im(r.height, r.width);
    std::transform(r.bytes.begin(), r.bytes.end(), im.pixels.begin(),
                   [](std::uint8_t b) { return static_cast<float>(b) / 255.0f; });
    return im;
}

/// Grayscale PNG, foreground 255.
inline void write_mask_png(const std::filesystem::path& path, const GroundTruthMask& mask) {
    detail::PngRaster r{mask.width, mask.height, 1, {}};
    r.bytes.resize(mask.values.size());
    std::transform(mask.values.begin(), mask.values.end(), r.bytes.begin(),
                   [](std::uint8_t v) { return static_cast<std::uint8_t>(v ? 255 : 0); });
    detail::write_png_raw(path, r);
}

/// Grayscale decode, values >= 128 become 1.
inline GroundTruthMask read_mask_png(const std::filesystem::path& path) {
    const detail::PngRaster r = detail::read_png_raw(path, 1);
    GroundTruthMask m(r.height, r.width);
    std::transform(r.bytes.begin(), r.bytes.end(), m.values.begin(),
                   [](std::uint8_t b) { return static_cast<std::uint8_t>(b >= 128 ? 1 : 0); });
    return m;
}

/// Grayscale PNG of scores in [0,1], round(score * 255).
inline void write_gray_png(const std::filesystem::path& path, int height, int width, std::span<const float> scores) {
    detail::PngRaster r{width, height, 1, {}};
    r.bytes.resize(scores.size());
    std::transform(scores.begin(), scores.end(), r.bytes.begin(), to_byte);
    detail::write_png_raw(path, r);
}

}  // namespace advxai
