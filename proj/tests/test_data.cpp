#include <gtest/gtest.h>

#include <set>

#include "mrdis/data.hpp"
#include "support/fixtures.hpp"

using namespace mrdis;

namespace {

SceneGenSpec small_spec(std::uint64_t seed = 3) {
    SceneGenSpec s;
    s.num_classes = 5;
    s.images_per_class = 6;
    s.val_per_class = 3;
    s.test_per_class = 2;
    s.resolution = 16;
    s.ambiguous_pairs = {{0, 1, 0.1}};
    s.seed = seed;
    return s;
}

std::string error_code(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return "";
}

Dataset single_image(const std::vector<std::uint8_t>& hwc, std::size_t n) {
    Dataset d;
    d.header = {0, static_cast<std::uint16_t>(n), static_cast<std::uint16_t>(n), 3, 1, 0};
    d.append(0, hwc);
    return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// Generator

TEST(Generate, SameSeedGivesIdenticalBytes) {
    const auto a = generate(small_spec()), b = generate(small_spec());
    EXPECT_EQ(serialize_dataset(a.train), serialize_dataset(b.train));
    EXPECT_EQ(serialize_dataset(a.val), serialize_dataset(b.val));
    EXPECT_EQ(serialize_dataset(a.test), serialize_dataset(b.test));
    const auto c = generate(small_spec(4));
    EXPECT_NE(a.train.pixels, c.train.pixels);
}

TEST(Generate, ThreadCountDoesNotChangeOutput) {
    const auto one = [] {
        ::setenv("MRDIS_THREADS", "1", 1);
        auto d = generate(small_spec());
        ::unsetenv("MRDIS_THREADS");
        return d;
    }();
    ::setenv("MRDIS_THREADS", "4", 1);
    const auto many = generate(small_spec());
    ::unsetenv("MRDIS_THREADS");
    EXPECT_EQ(one.train, many.train);
    EXPECT_EQ(one.test, many.test);
}

TEST(Generate, CountsAndClassBalance) {
    const auto spec = small_spec();
    const auto d = generate(spec);
    EXPECT_EQ(d.train.size(), 30u);
    EXPECT_EQ(d.val.size(), 15u);
    EXPECT_EQ(d.test.size(), 10u);
    for (const auto* split : {&d.train, &d.val, &d.test}) {
        EXPECT_EQ(split->header.image_count, split->size());
        EXPECT_EQ(split->header.num_classes, 5u);
        EXPECT_EQ(split->resolution(), 16u);
        EXPECT_NO_THROW(validate(*split));
    }
    for (std::uint16_t c = 0; c < 5; ++c)
        EXPECT_EQ(std::count(d.train.labels.begin(), d.train.labels.end(), c), 6);
    auto skewed = spec;
    skewed.imbalance = 0.5;
    skewed.images_per_class = 8;
    const auto s = generate(skewed);
    // keep fraction 1 - 0.5 c / 4: 8, 7, 6, 5, 4
    for (std::uint16_t c = 0; c < 5; ++c)
        EXPECT_EQ(std::count(s.train.labels.begin(), s.train.labels.end(), c), 8 - c);
}

TEST(Generate, SplitsAreDisjoint) {
    auto spec = small_spec();
    spec.images_per_class = 20;
    spec.val_per_class = 10;
    spec.test_per_class = 10;
    const auto d = generate(spec);
    std::set<std::vector<std::uint8_t>> seen;
    std::size_t total = 0;
    for (const auto* split : {&d.train, &d.val, &d.test})
        for (std::size_t i = 0; i < split->size(); ++i) {
            const auto r = split->raw(i);
            seen.emplace(r.begin(), r.end());
            ++total;
        }
    EXPECT_EQ(seen.size(), total);
    EXPECT_EQ(total, 5u * 40u);
}

TEST(Generate, NoVariationMeansIdenticalImagesAndPerfectCentroids) {
    auto spec = small_spec();
    spec.num_classes = 6;
    spec.ambiguous_pairs = {{0, 1, 1.0}, {2, 3, 1.0}};
    spec.intra_class_variation = 0;
    spec.resolution = 24;
    const auto d = generate(spec);
    for (std::size_t i = 0; i < d.train.size(); ++i)
        for (std::size_t j = 0; j < d.val.size(); ++j)
            if (d.train.labels[i] == d.val.labels[j]) {
                const auto a = d.train.raw(i), b = d.val.raw(j);
                EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
            }
    const auto c = fixtures::nearest_centroid_confusion(d.train, d.val);
    for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(c[k * 6 + k], 1.0) << "class " << k;
}

TEST(Generate, PlantedPairIsTheMostConfusedUnderCentroids) {
    SceneGenSpec spec;
    spec.num_classes = 6;
    spec.images_per_class = 40;
    spec.val_per_class = 40;
    spec.test_per_class = 0;
    spec.resolution = 16;
    spec.ambiguous_pairs = {{0, 1, 0.05}};
    spec.seed = 11;
    const auto d = generate(spec);
    const auto c = fixtures::nearest_centroid_confusion(d.train, d.val);
    const double paired = c[0 * 6 + 1] + c[1 * 6 + 0];
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = i + 1; j < 6; ++j) {
            if (i == 0 && j == 1) continue;
            EXPECT_GT(paired, c[i * 6 + j] + c[j * 6 + i]) << i << "," << j;
            EXPECT_GT(std::max(c[1], c[6]), std::max(c[i * 6 + j], c[j * 6 + i])) << i << "," << j;
        }
}

TEST(Generate, NoClassIndexArtifacts) {
    // Over many seeds every class index draws from the same recipe distribution,
    // so per-class mean brightness agrees across indices.
    const std::size_t classes = 6, seeds = 300;
    std::vector<double> sum(classes, 0.0), sq(classes, 0.0);
    for (std::uint64_t seed = 0; seed < seeds; ++seed) {
        SceneGenSpec spec;
        spec.num_classes = classes;
        spec.images_per_class = 1;
        spec.val_per_class = spec.test_per_class = 0;
        spec.resolution = 8;
        spec.ambiguous_pairs = {};
        spec.seed = seed;
        const auto d = generate(spec).train;
        for (std::size_t i = 0; i < d.size(); ++i) {
            const auto r = d.raw(i);
            double m = 0;
            for (auto b : r) m += b;
            m /= static_cast<double>(r.size()) * 255.0;
            sum[d.labels[i]] += m;
            sq[d.labels[i]] += m * m;
        }
    }
    double all = 0, var = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        all += sum[c];
        var += sq[c];
    }
    const double n = static_cast<double>(seeds * classes);
    const double mean = all / n, sd = std::sqrt(var / n - mean * mean);
    const double se = sd / std::sqrt(static_cast<double>(seeds));
    for (std::size_t c = 0; c < classes; ++c)
        EXPECT_NEAR(sum[c] / static_cast<double>(seeds), mean, 4.5 * se) << "class " << c;
}

TEST(Generate, Errors) {
    auto s = small_spec();
    s.resolution = 4;
    EXPECT_EQ(error_code([&] { generate(s); }), "bad_spec");
    s = small_spec();
    s.ambiguous_pairs = {{0, 1, 0.1}, {1, 2, 0.1}};
    EXPECT_EQ(error_code([&] { generate(s); }), "bad_spec");
    s.ambiguous_pairs = {{0, 9, 0.1}};
    EXPECT_EQ(error_code([&] { generate(s); }), "bad_spec");
    s.ambiguous_pairs = {{0, 1, 0.0}};
    EXPECT_EQ(error_code([&] { generate(s); }), "bad_spec");
    s = small_spec();
    s.intra_class_variation = 1.5;
    EXPECT_EQ(error_code([&] { generate(s); }), "bad_spec");
}

// ---------------------------------------------------------------------------
// Format and loading

TEST(DatasetFile, RoundTripIsExactOnTheByteGrid) {
    const auto d = generate(small_spec()).val;
    const auto dir = fixtures::scratch_dir("dataset");
    write_dataset(dir / "a.mrsd", d);
    const auto back = read_dataset(dir / "a.mrsd");
    EXPECT_EQ(back, d);
    write_dataset(dir / "b.mrsd", back);
    EXPECT_EQ(read_file(dir / "a.mrsd"), read_file(dir / "b.mrsd"));
    for (std::size_t i = 0; i < back.size(); ++i) {
        const auto img = back.image<double>(i);
        const auto raw = back.raw(i);
        EXPECT_EQ(to_bytes(img), std::vector<std::uint8_t>(raw.begin(), raw.end()));
        const std::size_t n = back.resolution();
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x)
                for (std::size_t k = 0; k < 3; ++k)
                    ASSERT_EQ(img[(k * n + y) * n + x], raw[(y * n + x) * 3 + k] / 255.0);
    }
}

TEST(DatasetFile, HeaderLayout) {
    const auto d = generate(small_spec()).test;
    const auto bytes = serialize_dataset(d);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MRSD");
    const std::size_t header = 4 + 4 + 4 + 2 + 2 + 1 + 2 + 8;
    EXPECT_EQ(bytes.size(), header + d.size() * (2 + 16 * 16 * 3));
    EXPECT_EQ(bytes[4], 1);  // version, little endian
    EXPECT_EQ(bytes[8], d.size());
}

TEST(DatasetFile, Errors) {
    const auto bytes = serialize_dataset(generate(small_spec()).test);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 5);
    EXPECT_EQ(error_code([&] { deserialize_dataset(truncated); }), "truncated");
    auto header_only = bytes;
    header_only.resize(10);
    EXPECT_EQ(error_code([&] { deserialize_dataset(header_only); }), "truncated");
    auto magic = bytes;
    magic[0] = 'X';
    EXPECT_EQ(error_code([&] { deserialize_dataset(magic); }), "bad_magic");
    auto version = bytes;
    version[4] = 7;
    EXPECT_EQ(error_code([&] { deserialize_dataset(version); }), "bad_version");
    auto label = bytes;
    label[4 + 4 + 4 + 2 + 2 + 1 + 2 + 8] = 0xff;  // first record label
    EXPECT_EQ(error_code([&] { deserialize_dataset(label); }), "bad_dataset");
    EXPECT_EQ(error_code([] { read_dataset("/nonexistent/x.mrsd"); }), "io");
}

TEST(EpochOrder, FileOrderWithoutShuffle) {
    const auto o = epoch_order(5, false, 1, 3);
    EXPECT_EQ(o, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(EpochOrder, ShuffleIsDeterministicAndVariesByEpoch) {
    EXPECT_EQ(epoch_order(200, true, 9, 1), epoch_order(200, true, 9, 1));
    std::set<std::vector<std::size_t>> seen;
    for (std::size_t e = 0; e < 100; ++e) {
        auto o = epoch_order(50, true, 9, e);
        auto sorted = o;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < 50; ++i) ASSERT_EQ(sorted[i], i);
        seen.insert(std::move(o));
    }
    EXPECT_EQ(seen.size(), 100u);
    EXPECT_NE(epoch_order(50, true, 9, 0), epoch_order(50, true, 10, 0));
}

// ---------------------------------------------------------------------------
// Resampling

TEST(Resample, SameSizeIsIdentity) {
    const auto d = generate(small_spec()).val;
    EXPECT_EQ(serialize_dataset(resample(d, 16)), serialize_dataset(d));
}

TEST(Resample, ConstantStaysConstant) {
    for (std::size_t target : {1u, 5u, 8u, 11u, 16u}) {
        const auto d = resample(single_image(std::vector<std::uint8_t>(16 * 16 * 3, 77), 16), target);
        EXPECT_EQ(d.resolution(), target);
        for (auto b : d.pixels) EXPECT_EQ(b, 77);
    }
}

TEST(Resample, CheckerboardHalvesToMidGray) {
    std::vector<std::uint8_t> px(48 * 48 * 3);
    for (std::size_t y = 0; y < 48; ++y)
        for (std::size_t x = 0; x < 48; ++x)
            for (std::size_t k = 0; k < 3; ++k) px[(y * 48 + x) * 3 + k] = (x + y) % 2 ? 255 : 0;
    const auto d = resample(single_image(px, 48), 24);
    // Each output pixel is the mean of one aligned 2x2 block: 127.5 rounds to 128.
    for (auto b : d.pixels) EXPECT_EQ(b, 128);
}

TEST(Resample, KeepsLabelsAndHeader) {
    const auto d = generate(small_spec()).train;
    const auto r = resample(d, 9);
    EXPECT_EQ(r.labels, d.labels);
    EXPECT_EQ(r.header.image_count, d.header.image_count);
    EXPECT_EQ(r.header.num_classes, d.header.num_classes);
    EXPECT_EQ(r.header.seed, d.header.seed);
    EXPECT_EQ(r.resolution(), 9u);
    EXPECT_EQ(r.header.width, 9u);
    EXPECT_NO_THROW(validate(r));
}

TEST(Resample, RefusesUpsampling) {
    const auto d = generate(small_spec()).test;
    EXPECT_EQ(error_code([&] { resample(d, 17); }), "upsampling");
}
