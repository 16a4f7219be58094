#ifndef MRDIS_SOFTLABEL_HPP
#define MRDIS_SOFTLABEL_HPP

#include <filesystem>
#include <vector>

#include "mrdis/data.hpp"
#include "mrdis/multires.hpp"

namespace mrdis {

// MRSL layout: "MRSL", u32 version, 32-byte knowledge checkpoint fingerprint,
// u32 image count, u32 K2, then count * K2 little-endian f64 values.
inline constexpr std::uint32_t kSoftLabelVersion = 1;

/// Per-image probability vectors produced by a knowledge network.
struct SoftLabelSet {
    Digest knowledge_fingerprint{};
    std::size_t k2 = 0;
    std::vector<double> values;  // row-major [count, k2]

    std::size_t size() const noexcept { return k2 == 0 ? 0 : values.size() / k2; }
    std::span<const double> row(std::size_t i) const { return std::span<const double>(values).subspan(i * k2, k2); }

    friend bool operator==(const SoftLabelSet&, const SoftLabelSet&) = default;
};

inline void validate(const SoftLabelSet& s) {
    require(s.k2 > 0 && s.values.size() % s.k2 == 0, "bad_soft_labels", "soft label matrix has the wrong size");
    for (std::size_t i = 0; i < s.size(); ++i) {
        double sum = 0;
        for (double v : s.row(i)) {
            require(v >= 0 && std::isfinite(v), "bad_soft_labels", "soft labels must be non-negative and finite");
            sum += v;
        }
        require(std::abs(sum - 1.0) <= 1e-6, "bad_soft_labels",
                "soft label " + std::to_string(i) + " sums to " + std::to_string(sum));
    }
}

inline std::vector<std::uint8_t> serialize_soft_labels(const SoftLabelSet& s) {
    validate(s);
    ByteWriter w;
    w.put_magic("MRSL");
    w.put<std::uint32_t>(kSoftLabelVersion);
    w.put_bytes(s.knowledge_fingerprint);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.k2));
    for (double v : s.values) w.put<double>(v);
    return std::move(w).take();
}

inline SoftLabelSet deserialize_soft_labels(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "soft label file");
    r.expect_magic("MRSL");
    const auto version = r.get<std::uint32_t>();
    require(version == kSoftLabelVersion, "bad_version", "unsupported soft label version " + std::to_string(version));
    SoftLabelSet s;
    auto fp = r.get_bytes(32);
    std::copy(fp.begin(), fp.end(), s.knowledge_fingerprint.begin());
    const std::size_t count = r.get<std::uint32_t>();
    s.k2 = r.get<std::uint32_t>();
    require(r.remaining() == count * s.k2 * sizeof(double), "truncated", "soft label file: value section mismatch");
    s.values.resize(count * s.k2);
    for (auto& v : s.values) v = r.get<double>();
    validate(s);
    return s;
}

inline void write_soft_labels(const std::filesystem::path& path, const SoftLabelSet& s) {
    write_file_atomic(path, serialize_soft_labels(s));
}

/// Loads a cached set, refusing one produced by a different knowledge network.
inline SoftLabelSet read_soft_labels(const std::filesystem::path& path, const Digest* expected_fingerprint = nullptr) {
    auto s = deserialize_soft_labels(read_file(path));
    if (expected_fingerprint)
        require(s.knowledge_fingerprint == *expected_fingerprint, "fingerprint_mismatch",
                "soft labels in " + path.string() + " were produced by checkpoint " + to_hex(s.knowledge_fingerprint) +
                    ", expected " + to_hex(*expected_fingerprint));
    return s;
}

/// A knowledge network with the resolution it was trained at.
template <typename T>
struct KnowledgeModel {
    Network<T> network;
    ResolutionSpec resolution;
    Digest fingerprint{};
};

/// Knowledge network's eval-mode softmax on each image's center crop (or the
/// ten-crop mean when `ten_crop_targets` is set). Images are resampled to the
/// knowledge network's stored size first.
template <typename T>
SoftLabelSet generate_soft_labels(const KnowledgeModel<T>& knowledge, const Dataset& data,
                                  bool ten_crop_targets = false) {
    validate(data);
    const auto& res = knowledge.resolution;
    SoftLabelSet out;
    out.knowledge_fingerprint = knowledge.fingerprint;
    out.k2 = knowledge.network.spec().num_outputs;
    out.values.assign(data.size() * out.k2, 0.0);
    parallel_for(data.size(), [&](std::size_t i) {
        const Tensor<T> img = to_stored_size(data.image<T>(i), res.stored_size);
        std::vector<double> probs;
        if (ten_crop_targets) {
            probs = predict(knowledge.network, res, img);
        } else {
            probs = mean_rows(knowledge.network.predict(stack(std::vector<Tensor<T>>{center_crop(img, res.crop_size)})));
        }
        std::copy(probs.begin(), probs.end(), out.values.begin() + static_cast<std::ptrdiff_t>(i * out.k2));
    });
    validate(out);
    return out;
}

}  // namespace mrdis

#endif
