#ifndef MRDIS_PIPELINE_HPP
#define MRDIS_PIPELINE_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mrdis/checkpoint.hpp"
#include "mrdis/config.hpp"
#include "mrdis/confusion.hpp"
#include "mrdis/eval.hpp"
#include "mrdis/trainer.hpp"

// File-level steps of the pipeline. Each reads its inputs from disk, writes
// its artifacts atomically and returns what it wrote.

namespace mrdis {

namespace fs = std::filesystem;

inline fs::path model_path(const fs::path& out, std::size_t n) { return out / ("model_" + std::to_string(n) + ".mrck"); }
inline fs::path train_log_path(const fs::path& out, std::size_t n) {
    return out / ("train_log_" + std::to_string(n) + ".csv");
}

struct GenDataOutput {
    fs::path train, val, test;
};

inline GenDataOutput gen_data(const SceneGenSpec& spec, const fs::path& out) {
    const auto splits = generate(spec);
    GenDataOutput o{out / "train.mrsd", out / "val.mrsd", out / "test.mrsd"};
    write_dataset(o.train, splits.train);
    write_dataset(o.val, splits.val);
    write_dataset(o.test, splits.test);
    return o;
}

/// A dataset file together with its fingerprint.
struct LoadedDataset {
    Dataset data;
    Digest fingerprint{};
};

inline LoadedDataset load_dataset(const fs::path& path) {
    require(!path.empty(), "missing_file", "no dataset path given");
    const auto bytes = read_file(path);
    return {deserialize_dataset(bytes), sha256(bytes)};
}

template <typename T>
ResolutionSpec checkpoint_resolution(const Checkpoint<T>& ck) {
    require(ck.meta.contains("resolution"), "bad_checkpoint", "checkpoint has no resolution metadata");
    return resolution_from_json(ck.meta.at("resolution"), ck.network.spec());
}

/// Partition fingerprint recorded in a checkpoint; empty for original labels.
template <typename T>
std::string checkpoint_partition(const Checkpoint<T>& ck) {
    return ck.meta.value("partition", std::string());
}

struct TrainOutput {
    fs::path checkpoint;
    fs::path log;
    Digest fingerprint{};
    std::vector<TrainLogRow> rows;
};

/// Soft labels of `knowledge` on `data`, cached at `cache`. A cached set is
/// reused only when it was produced by the same knowledge checkpoint.
template <typename T>
SoftLabelSet cached_soft_labels(const Checkpoint<T>& knowledge, const Dataset& data, const fs::path& cache,
                                bool ten_crop_targets) {
    if (fs::exists(cache)) {
        auto s = read_soft_labels(cache, &knowledge.fingerprint);
        require(s.size() == data.size(), "shape_mismatch", "cached soft labels in " + cache.string() +
                                                                " cover a different number of images");
        return s;
    }
    const KnowledgeModel<T> km{knowledge.network, checkpoint_resolution(knowledge), knowledge.fingerprint};
    auto s = generate_soft_labels(km, data, ten_crop_targets);
    write_soft_labels(cache, s);
    return s;
}

/// Trains the network for stored size `n`. With `distill` the configured
/// knowledge checkpoint supplies soft labels for the auxiliary head.
template <typename T>
TrainOutput train_resolution(const RunConfig& cfg, std::size_t n, bool distill,
                             const std::function<void(const TrainLogRow&)>& on_step = {}) {
    validate(cfg);
    const auto src = load_dataset(cfg.train_data);
    const Dataset data = resample(src.data, n);
    const std::size_t k_orig = src.data.header.num_classes;

    std::vector<std::size_t> labels(data.labels.begin(), data.labels.end());
    std::size_t k1 = k_orig;
    std::string partition_fp;
    if (!cfg.partition.empty()) {
        const auto p = read_partition(cfg.partition);
        require(p.num_original == k_orig, "shape_mismatch", "partition does not cover the dataset's classes");
        labels = relabel(labels, p);
        k1 = p.groups.size();
        partition_fp = to_hex(file_fingerprint(cfg.partition));
    }

    std::optional<Checkpoint<T>> knowledge;
    SoftLabelSet soft;
    if (distill) {
        require(!cfg.knowledge.empty(), "bad_config", "distillation needs a knowledge checkpoint");
        knowledge = load_checkpoint<T>(cfg.knowledge);
        soft = cached_soft_labels(*knowledge, src.data, fs::path(cfg.out) / "soft_labels.mrsl",
                                  cfg.ten_crop_soft_targets);
    }
    const std::size_t k2 = distill ? soft.k2 : 0;
    const auto res = standard_resolution(n, k1, k2, {cfg.stem_width, cfg.body_width});

    TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.learning_rate = cfg.learning_rate;
    tc.momentum = cfg.momentum;
    tc.lr_milestone_epochs = cfg.lr_milestones;
    tc.lr_decay = cfg.lr_decay;
    tc.lambda = distill ? cfg.lambda : 0.0;
    tc.soft_loss = cfg.soft_loss;
    tc.seed = cfg.seed;
    auto result = train<T>(res, data, labels, tc, distill ? &soft : nullptr, on_step);

    nlohmann::json meta{{"resolution", to_json(res)},
                        {"dataset", to_hex(src.fingerprint)},
                        {"partition", partition_fp},
                        {"seed", cfg.seed},
                        {"epochs", cfg.epochs},
                        {"lambda", tc.lambda},
                        {"soft_loss", to_string(cfg.soft_loss)},
                        {"knowledge", knowledge ? to_hex(knowledge->fingerprint) : std::string()}};
    TrainOutput o{model_path(cfg.out, n), train_log_path(cfg.out, n)};
    o.fingerprint = save_checkpoint(o.checkpoint, result.network, result.steps, meta);
    write_file_atomic(o.log, log_to_csv(result.log));
    o.rows = std::move(result.log);
    return o;
}

/// Ten-crop scores of a checkpoint on a dataset file.
template <typename T>
ScoreDump score_checkpoint(const fs::path& checkpoint, const fs::path& dataset) {
    const auto ck = load_checkpoint<T>(checkpoint);
    const auto res = checkpoint_resolution(ck);
    const auto src = load_dataset(dataset);
    return score_dataset(ck.network, res, resample(src.data, res.stored_size), ck.fingerprint, src.fingerprint);
}

/// Confusion matrix of a checkpoint's top-1 predictions on a labelled split.
template <typename T>
ConfusionMatrix confusion_for(const fs::path& checkpoint, const fs::path& dataset, const fs::path& out) {
    const auto dump = score_checkpoint<T>(checkpoint, dataset);
    const auto src = load_dataset(dataset);
    require(dump.k == src.data.header.num_classes, "shape_mismatch",
            "checkpoint predicts " + std::to_string(dump.k) + " classes, dataset has " +
                std::to_string(src.data.header.num_classes));
    std::vector<std::size_t> preds, labels;
    for (std::size_t i = 0; i < dump.size(); ++i) {
        preds.push_back(argmax(dump.row(i)));
        labels.push_back(src.data.labels[dump.image_ids[i]]);
    }
    auto c = confusion_matrix(preds, labels, dump.k);
    write_confusion(out, c);
    return c;
}

inline MergeResult merge_file(const fs::path& confusion, double tau, bool size_weighted, const fs::path& out) {
    const auto c = read_confusion(confusion);
    auto m = merge_categories(symmetrize(c), tau, {size_weighted});
    m.partition.source_confusion = confusion.string();
    write_partition(out, m.partition);
    return m;
}

struct EvalOutput {
    EvalReport report;
    fs::path json, text;
};

/// Evaluates a dump on a labelled split and writes report.json / report.txt
/// under `out` (with `stem` as file prefix).
inline EvalOutput report_scores(const ScoreDump& dump, const fs::path& dataset, const fs::path& partition,
                                const fs::path& out, const std::string& stem = "report") {
    const auto src = load_dataset(dataset);
    std::optional<Partition> p;
    Digest pfp{};
    if (!partition.empty()) {
        p = read_partition(partition);
        pfp = file_fingerprint(partition);
    }
    EvalOutput o{evaluate(dump, src.data.labels, src.data.header.num_classes, src.fingerprint, p ? &*p : nullptr,
                          p ? &pfp : nullptr),
                 out / (stem + ".json"), out / (stem + ".txt")};
    write_file_atomic(o.json, to_json(o.report).dump(2) + "\n");
    write_file_atomic(o.text, to_text(o.report));
    return o;
}

/// Scores a checkpoint, saves the dump and its report. A checkpoint trained
/// on a partition must be evaluated with that same partition.
template <typename T>
EvalOutput eval_checkpoint(const fs::path& checkpoint, const fs::path& dataset, const fs::path& partition,
                           const fs::path& out) {
    const auto ck = load_checkpoint<T>(checkpoint);
    const auto trained_on = checkpoint_partition(ck);
    if (!trained_on.empty()) {
        require(!partition.empty(), "bad_config", "checkpoint was trained on a partition; pass it with --partition");
        require(to_hex(file_fingerprint(partition)) == trained_on, "fingerprint_mismatch",
                "partition differs from the one the checkpoint was trained on");
    }
    const auto dump = score_checkpoint<T>(checkpoint, dataset);
    write_scores(out / "scores.mrsc", dump);
    return report_scores(dump, dataset, partition, out);
}

inline EvalOutput fuse_files(const std::vector<fs::path>& dumps, const std::vector<double>& weights,
                             const fs::path& dataset, const fs::path& partition, const fs::path& out) {
    std::vector<ScoreDump> loaded;
    for (const auto& p : dumps) loaded.push_back(read_scores(p));
    const auto fused = fuse_dumps(loaded, weights);
    write_scores(out / "fused.mrsc", fused);
    return report_scores(fused, dataset, partition, out, "fused_report");
}

}  // namespace mrdis

#endif
