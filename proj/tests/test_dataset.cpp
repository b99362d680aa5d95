#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "advxai/dataset.hpp"

using namespace advxai;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("advxai_test_dataset_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

SyntheticOptions small_options() {
    SyntheticOptions o;
    o.num_classes = 3;
    o.per_class = 4;
    o.image_size = 32;
    o.seed = 5;
    return o;
}

void write_text(const std::filesystem::path& p, const std::string& s) { std::ofstream(p, std::ios::trunc) << s; }

}  // namespace

TEST(Shapes, CentersAreInsideAndCornersOutside) {
    for (std::size_t f = 0; f < kShapeFamilyNames.size(); ++f) {
        const auto fam = static_cast<ShapeFamily>(f);
        EXPECT_FALSE(shape_contains(fam, 0.99, 0.99)) << kShapeFamilyNames[f];
        EXPECT_FALSE(shape_contains(fam, 1.5, 0.0)) << kShapeFamilyNames[f];
        const GroundTruthMask m = rasterize({fam, 32.0, 32.0, 20.0}, 64, 64);
        EXPECT_GT(m.foreground(), 0u) << kShapeFamilyNames[f];
        EXPECT_LT(m.foreground(), 64u * 64u) << kShapeFamilyNames[f];
    }
    // Hollow families leave their centre empty.
    EXPECT_FALSE(shape_contains(ShapeFamily::ring, 0.0, 0.0));
    EXPECT_FALSE(shape_contains(ShapeFamily::frame, 0.0, 0.0));
    EXPECT_TRUE(shape_contains(ShapeFamily::circle, 0.0, 0.0));
}

TEST(Shapes, FamiliesAreDistinct) {
    std::set<std::vector<std::uint8_t>> footprints;
    for (std::size_t f = 0; f < kShapeFamilyNames.size(); ++f)
        footprints.insert(rasterize({static_cast<ShapeFamily>(f), 32.0, 32.0, 20.0}, 64, 64).values);
    EXPECT_EQ(footprints.size(), kShapeFamilyNames.size());
}

TEST(Synthetic, DefaultBenchmarkCountsAndBounds) {
    const auto samples = synthesize_samples(SyntheticOptions{});
    ASSERT_EQ(samples.size(), 800u);
    std::size_t train = 0;
    std::set<std::string> ids;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        EXPECT_EQ(s.sample.label, static_cast<int>(i % 8));
        EXPECT_EQ(static_cast<int>(s.draw.family), s.sample.label);
        const double f = s.sample.mask.foreground_fraction();
        EXPECT_GE(f, kMinForeground);
        EXPECT_LE(f, kMaxForeground);
        EXPECT_TRUE(s.sample.image.in_unit_range());
        EXPECT_EQ(s.sample.image.height, 64);
        ids.insert(s.sample.id);
        train += s.split == Split::train ? 1 : 0;
    }
    EXPECT_EQ(ids.size(), 800u);
    EXPECT_EQ(train, 640u);
}

TEST(Synthetic, MaskEqualsRasterizedDraw) {
    for (const auto& s : synthesize_samples(small_options())) {
        const GroundTruthMask again = rasterize(s.draw, s.sample.mask.height, s.sample.mask.width);
        EXPECT_EQ(again.values, s.sample.mask.values) << s.sample.id;
    }
}

TEST(Synthetic, SeededAndDeterministic) {
    const auto a = synthesize_samples(small_options()), b = synthesize_samples(small_options());
    auto other = small_options();
    other.seed = 6;
    const auto c = synthesize_samples(other);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].sample.image, b[i].sample.image);
        EXPECT_EQ(a[i].sample.mask.values, b[i].sample.mask.values);
        EXPECT_EQ(a[i].split, b[i].split);
    }
    EXPECT_FALSE(a[0].sample.image == c[0].sample.image);
}

TEST(Synthetic, RejectsImpossibleRequests) {
    auto o = small_options();
    o.num_classes = 11;
    EXPECT_THROW(synthesize_samples(o), std::invalid_argument);
    o.num_classes = 1;
    EXPECT_THROW(synthesize_samples(o), std::invalid_argument);
    o = small_options();
    o.image_size = 8;
    EXPECT_THROW(synthesize_samples(o), std::invalid_argument);
}

TEST(Synthetic, WriteLoadRoundTripWithinQuantization) {
    const auto dir = temp_dir("roundtrip");
    const auto opt = small_options();
    const auto mem = synthesize_samples(opt);
    const auto manifest = generate_synthetic_dataset(opt, dir);
    const auto loaded = load_manifest(dir / "manifest.csv");
    ASSERT_EQ(loaded.entries.size(), mem.size());
    EXPECT_EQ(loaded.class_names, (std::vector<std::string>{"circle", "square", "triangle"}));
    for (std::size_t i = 0; i < mem.size(); ++i) {
        const Sample s = load_sample(loaded, loaded.entries[i]);
        EXPECT_EQ(s.id, mem[i].sample.id);
        EXPECT_EQ(s.label, mem[i].sample.label);
        EXPECT_EQ(loaded.entries[i].split, mem[i].split);
        EXPECT_EQ(s.mask.values, mem[i].sample.mask.values);
        for (std::size_t k = 0; k < s.image.pixels.size(); ++k)
            ASSERT_LE(std::abs(s.image.pixels[k] - mem[i].sample.image.pixels[k]), 0.5f / 255.0f + 1e-6f);
    }
    const auto draws = load_draws(dir);
    ASSERT_EQ(draws.size(), mem.size());
    for (std::size_t i = 0; i < mem.size(); ++i) {
        EXPECT_EQ(rasterize(draws[i].second, 32, 32).values, mem[i].sample.mask.values);
    }
}

TEST(Manifest, SplitsPartitionTheManifest) {
    const auto dir = temp_dir("splits");
    const auto m = generate_synthetic_dataset(small_options(), dir);
    const auto tr = split(m, Split::train), te = split(m, "test");
    EXPECT_EQ(tr.size() + te.size(), m.entries.size());
    std::set<std::string> ids;
    for (const auto& s : tr) ids.insert(s.id);
    for (const auto& s : te) EXPECT_EQ(ids.count(s.id), 0u);
    EXPECT_THROW(split(m, "validation"), std::invalid_argument);
}

TEST(Manifest, RejectsMalformedFiles) {
    const auto dir = temp_dir("malformed");
    generate_synthetic_dataset(small_options(), dir);
    const auto good = dir / "manifest.csv";
    std::ifstream in(good);
    std::string header, first;
    std::getline(in, header);
    std::getline(in, first);

    const auto bad = dir / "bad.csv";
    write_text(bad, "id,path,label\n");
    EXPECT_THROW(load_manifest(bad), std::runtime_error);
    write_text(bad, header + "\ns1,a.png,b.png,0\n");
    EXPECT_THROW(load_manifest(bad), std::runtime_error);
    write_text(bad, header + "\n" + "s1,a.png,b.png,1,train\n");
    EXPECT_THROW(load_manifest(bad), std::runtime_error);  // label 0 unused
    write_text(bad, header + "\n" + "s1,a.png,b.png,0,holdout\n");
    EXPECT_THROW(load_manifest(bad), std::invalid_argument);
}

TEST(Manifest, SizeMismatchNamesTheSample) {
    const auto dir = temp_dir("mismatch");
    const auto m = generate_synthetic_dataset(small_options(), dir);
    GroundTruthMask small(16, 16);
    small.values[0] = 1;
    write_mask_png(dir / m.entries[2].mask_path, small);
    try {
        load_sample(m, m.entries[2]);
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find(m.entries[2].id), std::string::npos);
    }
    std::filesystem::remove(dir / m.entries[3].image_path);
    EXPECT_THROW(load_sample(m, m.entries[3]), std::runtime_error);
}

TEST(Manifest, MaskPngIsBinarized) {
    const auto dir = temp_dir("maskpng");
    GroundTruthMask m(4, 4);
    m.values[5] = 1;
    m.values[6] = 1;
    write_mask_png(dir / "m.png", m);
    const auto back = read_mask_png(dir / "m.png");
    EXPECT_EQ(back.values, m.values);
}
