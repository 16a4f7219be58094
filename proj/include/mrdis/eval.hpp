#ifndef MRDIS_EVAL_HPP
#define MRDIS_EVAL_HPP

#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrdis/confusion.hpp"
#include "mrdis/data.hpp"
#include "mrdis/multires.hpp"

namespace mrdis {

// MRSC layout: "MRSC", u32 version, 32-byte model fingerprint, 32-byte
// dataset fingerprint, u32 resolution tag, u32 count, u32 K1, count u32 image
// ids, then count * K1 little-endian f64 scores.
inline constexpr std::uint32_t kScoreDumpVersion = 1;

/// Per-image class probabilities saved for offline evaluation and fusion.
struct ScoreDump {
    Digest model_fingerprint{};
    Digest dataset_fingerprint{};
    std::uint32_t resolution = 0;  // stored size N; 0 for a fusion of mixed resolutions
    std::size_t k = 0;
    std::vector<std::uint32_t> image_ids;
    std::vector<double> values;  // row-major [count, k]

    std::size_t size() const noexcept { return image_ids.size(); }
    std::span<const double> row(std::size_t i) const { return std::span<const double>(values).subspan(i * k, k); }

    friend bool operator==(const ScoreDump&, const ScoreDump&) = default;
};

inline void validate(const ScoreDump& d) {
    require(d.k > 0 && d.values.size() == d.size() * d.k, "bad_scores", "score matrix has the wrong size");
    for (std::size_t i = 0; i < d.size(); ++i) {
        double sum = 0;
        for (double v : d.row(i)) {
            require(std::isfinite(v) && v >= 0, "bad_scores", "scores must be non-negative and finite");
            sum += v;
        }
        require(std::abs(sum - 1.0) <= 1e-6, "bad_scores", "score row " + std::to_string(i) + " does not sum to 1");
    }
}

inline std::vector<std::uint8_t> serialize_scores(const ScoreDump& d) {
    validate(d);
    ByteWriter w;
    w.put_magic("MRSC");
    w.put<std::uint32_t>(kScoreDumpVersion);
    w.put_bytes(d.model_fingerprint);
    w.put_bytes(d.dataset_fingerprint);
    w.put<std::uint32_t>(d.resolution);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(d.size()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(d.k));
    for (auto id : d.image_ids) w.put<std::uint32_t>(id);
    for (double v : d.values) w.put<double>(v);
    return std::move(w).take();
}

inline ScoreDump deserialize_scores(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "score dump");
    r.expect_magic("MRSC");
    const auto version = r.get<std::uint32_t>();
    require(version == kScoreDumpVersion, "bad_version", "unsupported score dump version " + std::to_string(version));
    ScoreDump d;
    auto take_digest = [&](Digest& out) {
        auto b = r.get_bytes(32);
        std::copy(b.begin(), b.end(), out.begin());
    };
    take_digest(d.model_fingerprint);
    take_digest(d.dataset_fingerprint);
    d.resolution = r.get<std::uint32_t>();
    const std::size_t count = r.get<std::uint32_t>();
    d.k = r.get<std::uint32_t>();
    require(r.remaining() == count * (4 + d.k * sizeof(double)), "truncated", "score dump: body size mismatch");
    d.image_ids.resize(count);
    for (auto& id : d.image_ids) id = r.get<std::uint32_t>();
    d.values.resize(count * d.k);
    for (auto& v : d.values) v = r.get<double>();
    validate(d);
    return d;
}

inline void write_scores(const std::filesystem::path& path, const ScoreDump& d) {
    write_file_atomic(path, serialize_scores(d));
}

inline ScoreDump read_scores(const std::filesystem::path& path) { return deserialize_scores(read_file(path)); }

/// Ten-crop scores of every image in `data` (resampled to the network's
/// stored size as needed).
template <typename T>
ScoreDump score_dataset(const Network<T>& net, const ResolutionSpec& res, const Dataset& data,
                        const Digest& model_fingerprint, const Digest& dataset_fingerprint) {
    ScoreDump d;
    d.model_fingerprint = model_fingerprint;
    d.dataset_fingerprint = dataset_fingerprint;
    d.resolution = static_cast<std::uint32_t>(res.stored_size);
    d.k = net.spec().num_outputs;
    d.image_ids.resize(data.size());
    d.values.assign(data.size() * d.k, 0.0);
    parallel_for(data.size(), [&](std::size_t i) {
        d.image_ids[i] = static_cast<std::uint32_t>(i);
        const auto p = predict(net, res, data.image<T>(i));
        std::copy(p.begin(), p.end(), d.values.begin() + static_cast<std::ptrdiff_t>(i * d.k));
    });
    return d;
}

/// Weighted mean of dumps over the same images. Fusing a single dump returns
/// it unchanged; otherwise the model fingerprint is the hash of the members'
/// fingerprints and weights.
inline ScoreDump fuse_dumps(const std::vector<ScoreDump>& dumps, std::vector<double> weights = {}) {
    require(!dumps.empty(), "shape_mismatch", "nothing to fuse");
    if (weights.empty()) weights.assign(dumps.size(), 1.0 / static_cast<double>(dumps.size()));
    require(weights.size() == dumps.size(), "bad_weight", "one fusion weight per dump required");
    const ScoreDump& first = dumps.front();
    for (const auto& d : dumps) {
        require(d.dataset_fingerprint == first.dataset_fingerprint, "fingerprint_mismatch",
                "score dumps were computed on different datasets");
        require(d.image_ids == first.image_ids, "shape_mismatch", "score dumps cover different images");
        require(d.k == first.k, "shape_mismatch", "score dumps have different class counts");
    }
    ScoreDump out = first;
    for (std::size_t i = 0; i < first.size(); ++i) {
        std::vector<std::vector<double>> rows;
        for (const auto& d : dumps) rows.emplace_back(d.row(i).begin(), d.row(i).end());
        const auto fused = fuse(rows, weights);
        std::copy(fused.begin(), fused.end(), out.values.begin() + static_cast<std::ptrdiff_t>(i * out.k));
    }
    if (dumps.size() > 1) {
        ByteWriter w;
        for (std::size_t m = 0; m < dumps.size(); ++m) {
            w.put_bytes(dumps[m].model_fingerprint);
            w.put<double>(weights[m]);
            if (dumps[m].resolution != first.resolution) out.resolution = 0;
        }
        out.model_fingerprint = sha256(w.bytes());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics

/// Rank of the true class: number of classes scored strictly higher, or equal
/// with a lower index. The label is inside the top k iff rank < k.
inline std::size_t label_rank(std::span<const double> scores, std::size_t label) {
    std::size_t rank = 0;
    for (std::size_t j = 0; j < scores.size(); ++j)
        if (scores[j] > scores[label] || (scores[j] == scores[label] && j < label)) ++rank;
    return rank;
}

/// Index of the highest score, lowest index on ties.
inline std::size_t argmax(std::span<const double> scores) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < scores.size(); ++j)
        if (scores[j] > scores[best]) best = j;
    return best;
}

/// Fraction of rows whose label is outside the k highest scores (ties by
/// ascending class index).
inline double top_k_error(std::span<const double> scores, std::size_t num_classes, std::span<const std::size_t> labels,
                          std::size_t k) {
    require(k >= 1, "bad_k", "k must be at least 1");
    require(k <= num_classes, "bad_k", "k = " + std::to_string(k) + " exceeds the class count");
    require(scores.size() == labels.size() * num_classes, "shape_mismatch", "one score row per label required");
    require(!labels.empty(), "empty_input", "no images to score");
    std::size_t errors = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] < num_classes, "index_out_of_range", "label outside the score vector");
        errors += label_rank(scores.subspan(i * num_classes, num_classes), labels[i]) >= k;
    }
    return static_cast<double>(errors) / static_cast<double>(labels.size());
}

struct EvalReport {
    std::size_t n_images = 0;
    std::size_t num_classes = 0;
    std::size_t top5_k = 5;  // min(5, K)
    double top1_error = 0;
    double top5_error = 0;
    std::vector<double> per_class_accuracy;  // top-1, NaN-free: classes without images report 0
    std::vector<std::size_t> per_class_support;
    std::string model_fingerprint;
    std::string dataset_fingerprint;
    std::string partition_fingerprint;  // empty when no partition was applied
};

inline nlohmann::json to_json(const EvalReport& r) {
    return {{"n_images", r.n_images},
            {"num_classes", r.num_classes},
            {"top1_error", r.top1_error},
            {"top5_error", r.top5_error},
            {"top5_k", r.top5_k},
            {"per_class_accuracy", r.per_class_accuracy},
            {"per_class_support", r.per_class_support},
            {"fingerprints",
             {{"model", r.model_fingerprint}, {"dataset", r.dataset_fingerprint}, {"partition", r.partition_fingerprint}}}};
}

inline std::string to_text(const EvalReport& r) {
    std::ostringstream os;
    char buf[128];
    std::snprintf(buf, sizeof buf, "images        %zu\nclasses       %zu\n", r.n_images, r.num_classes);
    os << buf;
    std::snprintf(buf, sizeof buf, "top-1 error   %.2f%%\ntop-%zu error   %.2f%%\n", 100 * r.top1_error, r.top5_k,
                  100 * r.top5_error);
    os << buf;
    os << "per-class top-1 accuracy\n";
    for (std::size_t c = 0; c < r.per_class_accuracy.size(); ++c) {
        std::snprintf(buf, sizeof buf, "  %4zu  %6.2f%%  (n=%zu)\n", c, 100 * r.per_class_accuracy[c],
                      r.per_class_support[c]);
        os << buf;
    }
    os << "model     " << r.model_fingerprint << "\n";
    os << "dataset   " << r.dataset_fingerprint << "\n";
    if (!r.partition_fingerprint.empty()) os << "partition " << r.partition_fingerprint << "\n";
    return os.str();
}

/// Scores a dump against the dataset labels. With a partition the dump holds
/// super-category scores, which are redistributed to the original classes
/// before scoring.
inline EvalReport evaluate(const ScoreDump& dump, std::span<const std::uint16_t> labels, std::size_t num_classes,
                           const Digest& dataset_fingerprint, const Partition* partition = nullptr,
                           const Digest* partition_fingerprint = nullptr) {
    validate(dump);
    require(dump.dataset_fingerprint == dataset_fingerprint, "fingerprint_mismatch",
            "score dump was computed on dataset " + to_hex(dump.dataset_fingerprint) + ", not " +
                to_hex(dataset_fingerprint));
    std::vector<double> scores;
    if (partition) {
        require(partition->num_original == num_classes, "shape_mismatch", "partition does not cover the dataset labels");
        require(dump.k == partition->groups.size(), "shape_mismatch", "dump is not over the partition's super categories");
        for (std::size_t i = 0; i < dump.size(); ++i) {
            const auto r = redistribute(dump.row(i), *partition);
            scores.insert(scores.end(), r.begin(), r.end());
        }
    } else {
        require(dump.k == num_classes, "shape_mismatch", "dump class count differs from the dataset");
        scores = dump.values;
    }
    std::vector<std::size_t> y;
    y.reserve(dump.size());
    for (auto id : dump.image_ids) {
        require(id < labels.size(), "index_out_of_range", "score dump references an image outside the dataset");
        y.push_back(labels[id]);
    }
    EvalReport r;
    r.n_images = y.size();
    r.num_classes = num_classes;
    r.top5_k = std::min<std::size_t>(5, num_classes);
    r.top1_error = top_k_error(scores, num_classes, y, 1);
    r.top5_error = top_k_error(scores, num_classes, y, r.top5_k);
    r.per_class_accuracy.assign(num_classes, 0.0);
    r.per_class_support.assign(num_classes, 0);
    std::span<const double> all(scores);
    for (std::size_t i = 0; i < y.size(); ++i) {
        ++r.per_class_support[y[i]];
        if (argmax(all.subspan(i * num_classes, num_classes)) == y[i]) r.per_class_accuracy[y[i]] += 1;
    }
    for (std::size_t c = 0; c < num_classes; ++c)
        if (r.per_class_support[c]) r.per_class_accuracy[c] /= static_cast<double>(r.per_class_support[c]);
    r.model_fingerprint = to_hex(dump.model_fingerprint);
    r.dataset_fingerprint = to_hex(dataset_fingerprint);
    if (partition_fingerprint) r.partition_fingerprint = to_hex(*partition_fingerprint);
    return r;
}

}  // namespace mrdis

#endif
