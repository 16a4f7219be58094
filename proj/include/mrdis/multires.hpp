#ifndef MRDIS_MULTIRES_HPP
#define MRDIS_MULTIRES_HPP

#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "mrdis/checkpoint.hpp"
#include "mrdis/image.hpp"
#include "mrdis/network.hpp"

namespace mrdis {

/// Training crop side lengths as fractions of the stored size N.
inline const std::vector<double> kDefaultCropScales{1.0, 0.875, 0.75, 0.625, 0.5};

/// Crop fed to the network: M = round(0.875 N).
inline std::size_t crop_size_for(std::size_t stored_size) {
    return static_cast<std::size_t>(std::lround(0.875 * static_cast<double>(stored_size)));
}

struct ResolutionSpec {
    std::size_t stored_size = 0;
    std::size_t crop_size = 0;
    std::vector<double> crop_scales = kDefaultCropScales;
    NetworkSpec network;
};

inline void validate(const ResolutionSpec& r) {
    require(r.stored_size > 0, "bad_spec", "stored size must be positive");
    require(r.crop_size == crop_size_for(r.stored_size), "bad_spec",
            "crop size must be round(0.875 N) = " + std::to_string(crop_size_for(r.stored_size)));
    require(!r.crop_scales.empty(), "bad_spec", "crop scale set is empty");
    for (double f : r.crop_scales) {
        const auto side = std::lround(f * static_cast<double>(r.stored_size));
        require(f > 0 && side >= 1 && side <= static_cast<long>(r.stored_size), "bad_spec",
                "crop scale " + std::to_string(f) + " does not fit in N");
    }
    require(r.network.input_size == r.crop_size, "bad_spec", "network input size must equal the crop size");
}

/// Channel widths of the desk-scale networks.
struct NetworkWidths {
    std::size_t stem = 8;
    std::size_t body = 16;
};

/// Desk-scale network for one stored resolution. Every variant reaches a 7x7
/// map before global pooling; 48 and 64 append three unpadded 3x3
/// convolutions (13 -> 11 -> 9 -> 7) on top of the shared stem.
inline NetworkSpec standard_network(std::size_t stored_size, std::size_t num_classes, std::size_t aux_outputs = 0,
                                    NetworkWidths widths = {}) {
    const std::size_t m = crop_size_for(stored_size);
    const std::size_t a = widths.stem, b = widths.body;
    NetworkSpec spec;
    spec.input_size = m;
    spec.num_outputs = num_classes;
    spec.aux_outputs = aux_outputs;
    auto& L = spec.layers;
    auto conv_block = [&](std::size_t in, std::size_t out, std::size_t pad) {
        L.push_back(LayerSpec::conv2d(in, out, 3, 1, pad, false));
        L.push_back(LayerSpec::batchnorm(out));
        L.push_back(LayerSpec::relu());
    };
    auto extra_convs = [&] {
        for (int i = 0; i < 3; ++i) conv_block(b, b, 0);
    };
    switch (stored_size) {
        case 16:  // 14 -> 7
            spec.name = "coarse-16";
            conv_block(3, a, 1);
            L.push_back(LayerSpec::maxpool2d(2, 2));
            conv_block(a, b, 1);
            break;
        case 32:  // 28 -> 14 -> 7
            spec.name = "coarse-32";
            conv_block(3, a, 1);
            L.push_back(LayerSpec::maxpool2d(2, 2));
            conv_block(a, b, 1);
            L.push_back(LayerSpec::maxpool2d(2, 2));
            break;
        case 48:  // 42 -> 14 -> 13 -> 7
            spec.name = "fine-48";
            conv_block(3, a, 1);
            L.push_back(LayerSpec::maxpool2d(3, 3));
            conv_block(a, b, 1);
            L.push_back(LayerSpec::maxpool2d(2, 1));
            extra_convs();
            break;
        case 64:  // 56 -> 28 -> 14 -> 13 -> 7
            spec.name = "fine-64";
            conv_block(3, a, 1);
            L.push_back(LayerSpec::maxpool2d(2, 2));
            conv_block(a, b, 1);
            L.push_back(LayerSpec::maxpool2d(2, 2));
            L.push_back(LayerSpec::maxpool2d(2, 1));
            extra_convs();
            break;
        default:
            throw Error("bad_spec", "no standard network for stored size " + std::to_string(stored_size) +
                                        " (supported: 16, 32, 48, 64)");
    }
    L.push_back(LayerSpec::globalavgpool());
    L.push_back(LayerSpec::dense(b, num_classes));
    L.push_back(LayerSpec::softmax());
    validate(spec);
    return spec;
}

inline ResolutionSpec standard_resolution(std::size_t stored_size, std::size_t num_classes, std::size_t aux_outputs = 0,
                                          NetworkWidths widths = {}) {
    ResolutionSpec r{stored_size, crop_size_for(stored_size), kDefaultCropScales,
                     standard_network(stored_size, num_classes, aux_outputs, widths)};
    validate(r);
    return r;
}

inline nlohmann::json to_json(const ResolutionSpec& r) {
    return {{"stored_size", r.stored_size}, {"crop_size", r.crop_size}, {"crop_scales", r.crop_scales}};
}

/// Restores a ResolutionSpec from checkpoint metadata plus its network.
inline ResolutionSpec resolution_from_json(const nlohmann::json& j, NetworkSpec network) {
    try {
        ResolutionSpec r{j.at("stored_size"), j.at("crop_size"), j.at("crop_scales").get<std::vector<double>>(),
                         std::move(network)};
        validate(r);
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw Error("bad_checkpoint", std::string("resolution metadata: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Cropping

enum class Anchor : std::uint8_t { top_left, top_right, bottom_left, bottom_right, center };

inline constexpr std::array<Anchor, 5> kAnchors{Anchor::top_left, Anchor::top_right, Anchor::bottom_left,
                                                Anchor::bottom_right, Anchor::center};

/// Top-left corner of a w x h window placed at `anchor` inside an n x n image.
inline std::pair<std::size_t, std::size_t> anchor_origin(Anchor anchor, std::size_t n, std::size_t w, std::size_t h) {
    switch (anchor) {
        case Anchor::top_left: return {0, 0};
        case Anchor::top_right: return {n - w, 0};
        case Anchor::bottom_left: return {0, n - h};
        case Anchor::bottom_right: return {n - w, n - h};
        case Anchor::center: return {(n - w) / 2, (n - h) / 2};
    }
    return {0, 0};
}

/// The random choices behind one training crop.
struct CropDraw {
    std::size_t width = 0;
    std::size_t height = 0;
    Anchor anchor = Anchor::center;
    bool flip = false;
};

inline CropDraw draw_crop(const ResolutionSpec& res, Rng& rng) {
    auto side = [&] {
        const double f = res.crop_scales[uniform_index(rng, res.crop_scales.size())];
        return static_cast<std::size_t>(std::lround(f * static_cast<double>(res.stored_size)));
    };
    CropDraw d;
    d.width = side();
    d.height = side();
    d.anchor = kAnchors[uniform_index(rng, kAnchors.size())];
    d.flip = uniform01(rng) < 0.5;
    return d;
}

template <typename T>
Tensor<T> apply_crop(const Tensor<T>& image, std::size_t out_size, const CropDraw& d) {
    const std::size_t n = image.extent(1);
    const auto [x0, y0] = anchor_origin(d.anchor, n, d.width, d.height);
    Tensor<T> out = resize_bilinear(crop(image, x0, y0, d.width, d.height), out_size, out_size);
    return d.flip ? hflip(out) : out;
}

/// Scale-jittered training crop: independent w and h from the crop scale set,
/// one of five fixed anchors, bilinear resize to M x M, flip with p = 1/2.
template <typename T>
Tensor<T> train_crop(const Tensor<T>& image, const ResolutionSpec& res, Rng& rng, CropDraw* drawn = nullptr) {
    require_image(image, "training image");
    require(image.extent(1) == res.stored_size && image.extent(2) == res.stored_size, "shape_mismatch",
            "training image must be " + std::to_string(res.stored_size) + "x" + std::to_string(res.stored_size));
    for (double f : res.crop_scales)
        require(std::lround(f * static_cast<double>(res.stored_size)) >= 1, "shape_mismatch",
                "stored size too small for the crop scale set");
    const CropDraw d = draw_crop(res, rng);
    if (drawn) *drawn = d;
    return apply_crop(image, res.crop_size, d);
}

/// Ten M x M test crops in the order TL, TR, BL, BR, C, then the horizontal
/// flips of those five in the same order.
template <typename T>
std::vector<Tensor<T>> ten_crop(const Tensor<T>& image, std::size_t crop_size) {
    require_image(image, "test image");
    const std::size_t n = image.extent(1);
    require(image.extent(2) == n, "shape_mismatch", "test image must be square");
    require(crop_size >= 1 && crop_size <= n, "shape_mismatch",
            "crop size " + std::to_string(crop_size) + " exceeds image size " + std::to_string(n));
    std::vector<Tensor<T>> crops;
    crops.reserve(10);
    for (auto a : kAnchors) {
        const auto [x0, y0] = anchor_origin(a, n, crop_size, crop_size);
        crops.push_back(crop(image, x0, y0, crop_size, crop_size));
    }
    for (std::size_t i = 0; i < 5; ++i) crops.push_back(hflip(crops[i]));
    return crops;
}

template <typename T>
Tensor<T> center_crop(const Tensor<T>& image, std::size_t crop_size) {
    const std::size_t n = image.extent(1);
    require(crop_size <= n, "shape_mismatch", "center crop larger than image");
    const auto [x0, y0] = anchor_origin(Anchor::center, n, crop_size, crop_size);
    return crop(image, x0, y0, crop_size, crop_size);
}

/// Brings a stored image to the resolution's N by bilinear resampling.
template <typename T>
Tensor<T> to_stored_size(const Tensor<T>& image, std::size_t stored_size) {
    if (image.extent(1) == stored_size && image.extent(2) == stored_size) return image;
    return resize_bilinear(image, stored_size, stored_size);
}

/// Mean of rows of a probability batch, accumulated in row order.
template <typename T>
std::vector<double> mean_rows(const Tensor<T>& probs) {
    const std::size_t n = probs.extent(0), k = probs.extent(1);
    std::vector<double> mean(k, 0.0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t j = 0; j < k; ++j) mean[j] += static_cast<double>(probs[b * k + j]);
    for (auto& v : mean) v /= static_cast<double>(n);
    return mean;
}

/// Ten-crop prediction: arithmetic mean of the softmax outputs over the ten
/// crops of `image` (stored at the network's resolution N).
template <typename T>
std::vector<double> predict(const Network<T>& net, const ResolutionSpec& res, const Tensor<T>& image) {
    require(net.spec().input_size == res.crop_size, "spec_mismatch", "checkpoint input size differs from crop size");
    const auto crops = ten_crop(to_stored_size(image, res.stored_size), res.crop_size);
    return mean_rows(net.predict(stack(crops)));
}

/// Weighted arithmetic mean of score vectors; equal weights when `weights`
/// is empty.
inline std::vector<double> fuse(const std::vector<std::vector<double>>& scores, std::vector<double> weights = {}) {
    require(!scores.empty(), "shape_mismatch", "nothing to fuse");
    const std::size_t k = scores.front().size();
    if (weights.empty()) weights.assign(scores.size(), 1.0 / static_cast<double>(scores.size()));
    require(weights.size() == scores.size(), "shape_mismatch", "one fusion weight per score vector required");
    double total = 0;
    for (double w : weights) {
        require(w >= 0 && std::isfinite(w), "bad_weight", "fusion weights must be non-negative");
        total += w;
    }
    require(std::abs(total - 1.0) <= 1e-9, "bad_weight", "fusion weights must sum to 1");
    std::vector<double> out(k, 0.0);
    for (std::size_t m = 0; m < scores.size(); ++m) {
        require(scores[m].size() == k, "shape_mismatch", "score vectors differ in length");
        for (std::size_t j = 0; j < k; ++j) out[j] += weights[m] * scores[m][j];
    }
    return out;
}

/// Member networks at several resolutions over one label space, fused by a
/// weighted arithmetic mean of their ten-crop predictions.
template <typename T>
struct MultiResModel {
    struct Member {
        ResolutionSpec resolution;
        Network<T> network;
    };
    std::vector<Member> members;
    std::vector<double> fusion_weights;  // empty means equal

    void validate() const {
        require(!members.empty(), "bad_spec", "multi-resolution model has no members");
        const auto k = members.front().network.spec().num_outputs;
        const auto extent = pre_pool_extent(members.front().network.spec());
        for (const auto& m : members) {
            require(m.network.spec().num_outputs == k, "spec_mismatch", "members disagree on the label space");
            require(pre_pool_extent(m.network.spec()) == extent, "spec_mismatch",
                    "members disagree on the pre-pooling extent");
        }
        if (!fusion_weights.empty())
            require(fusion_weights.size() == members.size(), "bad_weight", "one fusion weight per member required");
    }

    std::vector<double> predict(const Tensor<T>& image) const {
        validate();
        std::vector<std::vector<double>> scores;
        for (const auto& m : members) scores.push_back(mrdis::predict(m.network, m.resolution, image));
        return fuse(scores, fusion_weights);
    }
};

}  // namespace mrdis

#endif
