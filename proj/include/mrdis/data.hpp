#ifndef MRDIS_DATA_HPP
#define MRDIS_DATA_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "mrdis/image.hpp"
#include "mrdis/tensor.hpp"

namespace mrdis {

// MRSD layout: "MRSD", u32 version, u32 image count, u16 height, u16 width,
// u8 channels, u16 class count, u64 seed, then per record a u16 label
// followed by H*W*C bytes in HWC order.
inline constexpr std::uint32_t kDatasetVersion = 1;

struct DatasetHeader {
    std::uint32_t image_count = 0;
    std::uint16_t height = 0;
    std::uint16_t width = 0;
    std::uint8_t channels = 3;
    std::uint16_t num_classes = 0;
    std::uint64_t seed = 0;

    friend bool operator==(const DatasetHeader&, const DatasetHeader&) = default;
};

/// Labelled u8 images in memory.
struct Dataset {
    DatasetHeader header;
    std::vector<std::uint16_t> labels;
    std::vector<std::uint8_t> pixels;  // image_count * H * W * C, HWC per record

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t resolution() const noexcept { return header.height; }
    std::size_t record_bytes() const noexcept {
        return std::size_t{header.height} * header.width * header.channels;
    }

    std::span<const std::uint8_t> raw(std::size_t i) const {
        return std::span<const std::uint8_t>(pixels).subspan(i * record_bytes(), record_bytes());
    }

    /// CHW image with values in [0, 1].
    template <typename T>
    Tensor<T> image(std::size_t i) const {
        const std::size_t h = header.height, w = header.width, c = header.channels;
        Tensor<T> img({c, h, w});
        const auto px = raw(i);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t k = 0; k < c; ++k)
                    img[(k * h + y) * w + x] = static_cast<T>(px[(y * w + x) * c + k]) / T(255);
        return img;
    }

    void append(std::uint16_t label, std::span<const std::uint8_t> record) {
        require(record.size() == record_bytes(), "shape_mismatch", "record size mismatch");
        labels.push_back(label);
        pixels.insert(pixels.end(), record.begin(), record.end());
        header.image_count = static_cast<std::uint32_t>(labels.size());
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline void validate(const Dataset& d) {
    require(d.header.height == d.header.width, "bad_dataset", "images must be square");
    require(d.header.height > 0 && d.header.channels > 0, "bad_dataset", "empty image geometry");
    require(d.labels.size() == d.header.image_count, "bad_dataset", "label count differs from header");
    require(d.pixels.size() == d.size() * d.record_bytes(), "bad_dataset", "pixel buffer size mismatch");
    for (auto l : d.labels)
        require(l < d.header.num_classes, "bad_dataset", "label " + std::to_string(l) + " outside the class range");
}

/// Quantizes a [0,1] CHW image to HWC bytes (round to nearest).
template <typename T>
std::vector<std::uint8_t> to_bytes(const Tensor<T>& img) {
    const std::size_t c = img.extent(0), h = img.extent(1), w = img.extent(2);
    std::vector<std::uint8_t> out(c * h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t k = 0; k < c; ++k) {
                const double v = std::clamp(static_cast<double>(img[(k * h + y) * w + x]), 0.0, 1.0);
                out[(y * w + x) * c + k] = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
    return out;
}

inline std::vector<std::uint8_t> serialize_dataset(const Dataset& d) {
    validate(d);
    ByteWriter w;
    w.put_magic("MRSD");
    w.put<std::uint32_t>(kDatasetVersion);
    w.put<std::uint32_t>(d.header.image_count);
    w.put<std::uint16_t>(d.header.height);
    w.put<std::uint16_t>(d.header.width);
    w.put<std::uint8_t>(d.header.channels);
    w.put<std::uint16_t>(d.header.num_classes);
    w.put<std::uint64_t>(d.header.seed);
    for (std::size_t i = 0; i < d.size(); ++i) {
        w.put<std::uint16_t>(d.labels[i]);
        w.put_bytes(d.raw(i));
    }
    return std::move(w).take();
}

inline Dataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "dataset");
    r.expect_magic("MRSD");
    const auto version = r.get<std::uint32_t>();
    require(version == kDatasetVersion, "bad_version", "unsupported dataset version " + std::to_string(version));
    Dataset d;
    d.header.image_count = r.get<std::uint32_t>();
    d.header.height = r.get<std::uint16_t>();
    d.header.width = r.get<std::uint16_t>();
    d.header.channels = r.get<std::uint8_t>();
    d.header.num_classes = r.get<std::uint16_t>();
    d.header.seed = r.get<std::uint64_t>();
    require(d.header.height == d.header.width, "bad_dataset", "images must be square");
    const std::size_t rec = d.record_bytes();
    require(r.remaining() == std::size_t{d.header.image_count} * (rec + 2), "truncated",
            "dataset: record section does not match the header");
    d.labels.reserve(d.header.image_count);
    d.pixels.reserve(std::size_t{d.header.image_count} * rec);
    for (std::uint32_t i = 0; i < d.header.image_count; ++i) {
        d.labels.push_back(r.get<std::uint16_t>());
        auto px = r.get_bytes(rec);
        d.pixels.insert(d.pixels.end(), px.begin(), px.end());
    }
    validate(d);
    return d;
}

inline void write_dataset(const std::filesystem::path& path, const Dataset& d) {
    write_file_atomic(path, serialize_dataset(d));
}

inline Dataset read_dataset(const std::filesystem::path& path) { return deserialize_dataset(read_file(path)); }

/// Per-epoch visiting order. Epoch 0 without shuffling is file order; with
/// shuffling the permutation is seeded by (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t count, bool shuffle, std::uint64_t seed, std::size_t epoch) {
    if (!shuffle) {
        std::vector<std::size_t> order(count);
        std::iota(order.begin(), order.end(), std::size_t{0});
        return order;
    }
    Rng rng(derive_seed(seed, 0x5f1e, epoch));
    return permutation(count, rng);
}

/// Bilinear downsampling of every image to `target` pixels. Upsampling is
/// refused: finer data has to be generated at its native size.
inline Dataset resample(const Dataset& src, std::size_t target) {
    validate(src);
    require(target >= 1, "shape_mismatch", "target resolution must be positive");
    require(target <= src.resolution(), "upsampling",
            "refusing to upsample from " + std::to_string(src.resolution()) + " to " + std::to_string(target));
    if (target == src.resolution()) return src;
    Dataset out;
    out.header = src.header;
    out.header.height = out.header.width = static_cast<std::uint16_t>(target);
    out.header.image_count = 0;
    std::vector<std::vector<std::uint8_t>> records(src.size());
    parallel_for(src.size(), [&](std::size_t i) {
        records[i] = to_bytes(resize_bilinear(src.image<double>(i), target, target));
    });
    for (std::size_t i = 0; i < src.size(); ++i) out.append(src.labels[i], records[i]);
    return out;
}

/// Keeps the images whose label satisfies `keep`, relabelled by `map`.
template <typename Keep, typename Map>
Dataset filter_relabel(const Dataset& src, std::size_t num_classes, Keep keep, Map map) {
    Dataset out;
    out.header = src.header;
    out.header.num_classes = static_cast<std::uint16_t>(num_classes);
    out.header.image_count = 0;
    for (std::size_t i = 0; i < src.size(); ++i)
        if (keep(src.labels[i])) out.append(static_cast<std::uint16_t>(map(src.labels[i])), src.raw(i));
    validate(out);
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

struct AmbiguousPair {
    std::size_t first = 0;
    std::size_t second = 0;
    double separation = 0.1;  // (0, 1]; small means nearly indistinguishable

    friend bool operator==(const AmbiguousPair&, const AmbiguousPair&) = default;
};

struct SceneGenSpec {
    std::size_t num_classes = 10;
    std::size_t images_per_class = 500;  // training images per class
    std::size_t val_per_class = 100;
    std::size_t test_per_class = 100;
    std::size_t resolution = 48;
    std::vector<AmbiguousPair> ambiguous_pairs{{0, 1, 0.1}, {2, 3, 0.1}};
    double intra_class_variation = 0.5;
    double imbalance = 0.0;  // class c keeps (1 - imbalance * c / (K - 1)) of its training images
    std::uint64_t seed = 0;
};

inline void validate(const SceneGenSpec& s) {
    require(s.num_classes >= 2 && s.num_classes <= 65535, "bad_spec", "need between 2 and 65535 classes");
    require(s.images_per_class >= 1, "bad_spec", "need at least one training image per class");
    require(s.resolution >= 8 && s.resolution <= 65535, "bad_spec",
            "resolution " + std::to_string(s.resolution) + " is too small for object placement (minimum 8)");
    require(s.intra_class_variation >= 0 && s.intra_class_variation <= 1, "bad_spec",
            "intra_class_variation must be in [0,1]");
    require(s.imbalance >= 0 && s.imbalance < 1, "bad_spec", "imbalance must be in [0,1)");
    std::vector<bool> used(s.num_classes, false);
    for (const auto& p : s.ambiguous_pairs) {
        require(p.first < s.num_classes && p.second < s.num_classes && p.first != p.second, "bad_spec",
                "ambiguous pair outside the class range");
        require(p.separation > 0 && p.separation <= 1, "bad_spec", "pair separation must be in (0,1]");
        require(!used[p.first] && !used[p.second], "bad_spec", "ambiguous pairs must be disjoint");
        used[p.first] = used[p.second] = true;
    }
}

enum class Shape2D : std::uint8_t { disc, square, triangle, ring, bar };

struct SceneObject {
    Shape2D shape = Shape2D::disc;
    std::array<double, 3> color{};
    double cx = 0.5, cy = 0.5;  // fractions of N
    double size = 0.2;          // radius as a fraction of N
};

/// Parametric description of one class: a two-colour background gradient and
/// 2-4 coloured objects.
struct SceneRecipe {
    std::array<double, 3> top{}, bottom{};
    double angle = 0;
    std::vector<SceneObject> objects;
};

namespace detail {

inline std::array<double, 3> random_color(Rng& rng) {
    return {uniform01(rng), uniform01(rng), uniform01(rng)};
}

inline SceneRecipe random_recipe(Rng& rng) {
    SceneRecipe r;
    r.top = random_color(rng);
    r.bottom = random_color(rng);
    r.angle = uniform(rng, 0, 2 * std::numbers::pi);
    const std::size_t count = 2 + uniform_index(rng, 3);
    for (std::size_t i = 0; i < count; ++i) {
        SceneObject o;
        o.shape = static_cast<Shape2D>(uniform_index(rng, 5));
        o.color = random_color(rng);
        o.cx = uniform(rng, 0.25, 0.75);
        o.cy = uniform(rng, 0.25, 0.75);
        o.size = uniform(rng, 0.12, 0.24);
        r.objects.push_back(o);
    }
    return r;
}

inline bool inside(const SceneObject& o, double x, double y) {
    const double dx = x - o.cx, dy = y - o.cy;
    switch (o.shape) {
        case Shape2D::disc: return dx * dx + dy * dy <= o.size * o.size;
        case Shape2D::square: return std::abs(dx) <= o.size * 0.8 && std::abs(dy) <= o.size * 0.8;
        case Shape2D::triangle: {
            // Upward triangle with apex at cy - size and base at cy + size.
            if (dy < -o.size || dy > o.size) return false;
            const double half = o.size * (dy + o.size) / (2 * o.size);
            return std::abs(dx) <= half;
        }
        case Shape2D::ring: {
            const double r2 = dx * dx + dy * dy;
            return r2 <= o.size * o.size && r2 >= 0.36 * o.size * o.size;
        }
        case Shape2D::bar: return std::abs(dx) <= o.size && std::abs(dy) <= o.size * 0.3;
    }
    return false;
}

inline double jitter(Rng& rng, double amount) { return amount == 0 ? 0.0 : uniform(rng, -amount, amount); }

/// Renders one instance of `recipe`; `variation` scales every jitter and the
/// pixel noise, so variation 0 yields the same pixels for every instance.
inline Tensor<double> render(const SceneRecipe& recipe, std::size_t n, double variation, Rng& rng) {
    SceneRecipe r = recipe;
    for (auto& c : r.top) c = std::clamp(c + jitter(rng, 0.15 * variation), 0.0, 1.0);
    for (auto& c : r.bottom) c = std::clamp(c + jitter(rng, 0.15 * variation), 0.0, 1.0);
    r.angle += jitter(rng, 0.5 * variation);
    for (auto& o : r.objects) {
        o.cx += jitter(rng, 0.12 * variation);
        o.cy += jitter(rng, 0.12 * variation);
        o.size *= 1 + jitter(rng, 0.25 * variation);
        for (auto& c : o.color) c = std::clamp(c + jitter(rng, 0.1 * variation), 0.0, 1.0);
    }
    const double noise = 0.04 * variation;
    const double ca = std::cos(r.angle), sa = std::sin(r.angle);
    Tensor<double> img({3, n, n});
    for (std::size_t py = 0; py < n; ++py)
        for (std::size_t px = 0; px < n; ++px) {
            const double x = (static_cast<double>(px) + 0.5) / static_cast<double>(n);
            const double y = (static_cast<double>(py) + 0.5) / static_cast<double>(n);
            const double t = std::clamp(0.5 + (x - 0.5) * ca + (y - 0.5) * sa, 0.0, 1.0);
            std::array<double, 3> color;
            for (int k = 0; k < 3; ++k) color[k] = r.top[k] * (1 - t) + r.bottom[k] * t;
            for (const auto& o : r.objects)
                if (inside(o, x, y)) color = o.color;
            for (std::size_t k = 0; k < 3; ++k)
                img[(k * n + py) * n + px] = std::clamp(color[k] + jitter(rng, noise), 0.0, 1.0);
        }
    return img;
}

}  // namespace detail

/// Class recipes for a spec. Unpaired classes get independent recipes; the
/// second member of an ambiguous pair copies the first and moves the colour of
/// its first object toward an unrelated colour by `separation`.
inline std::vector<SceneRecipe> scene_recipes(const SceneGenSpec& spec) {
    validate(spec);
    std::vector<SceneRecipe> recipes;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        Rng rng(derive_seed(spec.seed, 0xc1a55, c));
        recipes.push_back(detail::random_recipe(rng));
    }
    for (const auto& p : spec.ambiguous_pairs) {
        Rng rng(derive_seed(spec.seed, 0xa3b1, p.second));
        SceneRecipe twin = recipes[p.first];
        const auto target = detail::random_color(rng);
        for (int k = 0; k < 3; ++k)
            twin.objects[0].color[k] += p.separation * (target[k] - twin.objects[0].color[k]);
        recipes[p.second] = twin;
    }
    return recipes;
}

struct DatasetSplits {
    Dataset train, val, test;
};

/// Deterministic synthetic dataset. Image i of class c in split s is drawn
/// from its own generator seeded by (seed, c, s, i); records are written
/// round-robin over classes.
inline DatasetSplits generate(const SceneGenSpec& spec) {
    validate(spec);
    const auto recipes = scene_recipes(spec);
    const std::size_t n = spec.resolution;
    auto make_split = [&](std::size_t split, auto per_class) {
        struct Job {
            std::size_t cls, index;
        };
        std::vector<Job> jobs;
        std::size_t most = 0;
        for (std::size_t c = 0; c < spec.num_classes; ++c) most = std::max(most, per_class(c));
        for (std::size_t i = 0; i < most; ++i)
            for (std::size_t c = 0; c < spec.num_classes; ++c)
                if (i < per_class(c)) jobs.push_back({c, i});
        std::vector<std::vector<std::uint8_t>> records(jobs.size());
        parallel_for(jobs.size(), [&](std::size_t j) {
            Rng rng(derive_seed(spec.seed, jobs[j].cls, split, jobs[j].index));
            records[j] = to_bytes(detail::render(recipes[jobs[j].cls], n, spec.intra_class_variation, rng));
        });
        Dataset d;
        d.header = {0, static_cast<std::uint16_t>(n), static_cast<std::uint16_t>(n), 3,
                    static_cast<std::uint16_t>(spec.num_classes), spec.seed};
        for (std::size_t j = 0; j < jobs.size(); ++j) d.append(static_cast<std::uint16_t>(jobs[j].cls), records[j]);
        return d;
    };
    const double k = static_cast<double>(spec.num_classes - 1);
    DatasetSplits out;
    out.train = make_split(0, [&](std::size_t c) {
        const double keep = 1.0 - spec.imbalance * static_cast<double>(c) / k;
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(keep * static_cast<double>(spec.images_per_class))));
    });
    out.val = make_split(1, [&](std::size_t) { return spec.val_per_class; });
    out.test = make_split(2, [&](std::size_t) { return spec.test_per_class; });
    return out;
}

}  // namespace mrdis

#endif
