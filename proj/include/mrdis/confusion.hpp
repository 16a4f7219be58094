#ifndef MRDIS_CONFUSION_HPP
#define MRDIS_CONFUSION_HPP

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrdis/core.hpp"

namespace mrdis {

/// Row-normalized confusion: entry (i, j) is the fraction of images of true
/// class i predicted as j. Classes without validation images keep an all-zero
/// row and are flagged in `zero_support`.
struct ConfusionMatrix {
    std::size_t n = 0;
    std::vector<double> values;
    std::vector<std::string> class_names;
    std::vector<bool> zero_support;

    double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// Symmetric class similarity.
struct SimilarityMatrix {
    std::size_t n = 0;
    std::vector<double> values;

    double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
    double& operator()(std::size_t i, std::size_t j) { return values[i * n + j]; }

    friend bool operator==(const SimilarityMatrix&, const SimilarityMatrix&) = default;
};

inline std::vector<std::string> default_class_names(std::size_t n) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i) names.push_back("class" + std::to_string(i));
    return names;
}

inline ConfusionMatrix confusion_matrix(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                                        std::size_t num_classes, std::vector<std::string> class_names = {}) {
    require(!labels.empty(), "empty_input", "confusion matrix needs at least one image");
    require(predictions.size() == labels.size(), "shape_mismatch", "prediction and label counts differ");
    require(num_classes > 0, "shape_mismatch", "class count must be positive");
    if (class_names.empty()) class_names = default_class_names(num_classes);
    require(class_names.size() == num_classes, "shape_mismatch", "one class name per class required");
    std::vector<std::size_t> counts(num_classes * num_classes, 0), support(num_classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] < num_classes && predictions[i] < num_classes, "index_out_of_range",
                "class index outside [0, " + std::to_string(num_classes) + ")");
        ++counts[labels[i] * num_classes + predictions[i]];
        ++support[labels[i]];
    }
    ConfusionMatrix c{num_classes, std::vector<double>(num_classes * num_classes, 0.0), std::move(class_names),
                      std::vector<bool>(num_classes, false)};
    for (std::size_t i = 0; i < num_classes; ++i) {
        if (support[i] == 0) {
            c.zero_support[i] = true;
            continue;
        }
        for (std::size_t j = 0; j < num_classes; ++j)
            c.values[i * num_classes + j] =
                static_cast<double>(counts[i * num_classes + j]) / static_cast<double>(support[i]);
    }
    return c;
}

/// (C + C^T) / 2, each pair computed once so the result is exactly symmetric.
/// Zero-support classes get zero similarity to every class.
inline SimilarityMatrix symmetrize(const ConfusionMatrix& c) {
    require(c.values.size() == c.n * c.n, "not_square", "confusion matrix is not square");
    SimilarityMatrix s{c.n, std::vector<double>(c.n * c.n, 0.0)};
    for (std::size_t i = 0; i < c.n; ++i)
        for (std::size_t j = i; j < c.n; ++j) {
            const bool skip = !c.zero_support.empty() && (c.zero_support[i] || c.zero_support[j]);
            const double v = skip ? 0.0 : 0.5 * (c(i, j) + c(j, i));
            s(i, j) = v;
            s(j, i) = v;
        }
    return s;
}

// ---------------------------------------------------------------------------
// Super-category merging

using Group = std::vector<std::size_t>;

/// Disjoint groups covering {0 .. num_original - 1}, in canonical order:
/// members ascending, groups ordered by their smallest member.
struct Partition {
    std::vector<Group> groups;
    double tau = 0;
    std::size_t num_original = 0;
    std::string source_confusion;

    friend bool operator==(const Partition&, const Partition&) = default;
};

inline void canonicalize(std::vector<Group>& groups) {
    for (auto& g : groups) std::sort(g.begin(), g.end());
    std::sort(groups.begin(), groups.end(), [](const Group& a, const Group& b) { return a.front() < b.front(); });
}

inline void validate(const Partition& p) {
    std::vector<int> seen(p.num_original, 0);
    for (const auto& g : p.groups) {
        require(!g.empty(), "bad_partition", "partition has an empty group");
        for (auto k : g) {
            require(k < p.num_original, "bad_partition", "group member " + std::to_string(k) + " out of range");
            require(seen[k]++ == 0, "bad_partition", "class " + std::to_string(k) + " appears twice");
        }
    }
    for (std::size_t k = 0; k < p.num_original; ++k)
        require(seen[k] == 1, "bad_partition", "class " + std::to_string(k) + " is not covered");
}

inline Partition identity_partition(std::size_t n) {
    Partition p;
    p.num_original = n;
    for (std::size_t i = 0; i < n; ++i) p.groups.push_back({i});
    return p;
}

/// One performed merge: the two groups joined and their similarity.
struct MergeStep {
    Group first;
    Group second;
    double similarity = 0;
};

struct MergeResult {
    Partition partition;
    std::vector<MergeStep> trace;
};

struct MergeOptions {
    /// Replace the unweighted row average with a group-size weighted one.
    bool size_weighted = false;
};

/// Greedy bottom-up merging. While the largest off-diagonal similarity
/// exceeds `tau`, the pair (i, j) attaining it is merged: rows and columns i
/// and j are removed and a row/column equal to (S_i + S_j) / 2 is appended at
/// the end. Ties go to the lexicographically smallest (i, j) in the current
/// matrix order.
inline MergeResult merge_categories(const SimilarityMatrix& s, double tau, MergeOptions options = {}) {
    const std::size_t n = s.n;
    require(s.values.size() == n * n, "not_square", "similarity matrix is not square");
    require(tau >= 0, "bad_config", "tau must be non-negative");
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            require(s(i, j) == s(j, i), "asymmetric", "similarity matrix is not symmetric");

    // Slot-indexed storage with room for every merged row; `order` lists the
    // live slots in current matrix order.
    const std::size_t cap = n == 0 ? 0 : 2 * n - 1;
    std::vector<double> m(cap * cap, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) m[i * cap + j] = s(i, j);
    std::vector<Group> groups(cap);
    for (std::size_t i = 0; i < n; ++i) groups[i] = {i};
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    MergeResult result;
    std::size_t next = n;
    while (order.size() > 1) {
        std::size_t bi = 0, bj = 0;
        double best = -1;
        for (std::size_t i = 0; i < order.size(); ++i)
            for (std::size_t j = i + 1; j < order.size(); ++j) {
                const double v = m[order[i] * cap + order[j]];
                if (v > best) {
                    best = v;
                    bi = i;
                    bj = j;
                }
            }
        if (!(best > tau)) break;
        const std::size_t a = order[bi], b = order[bj], slot = next++;
        result.trace.push_back({groups[a], groups[b], best});
        const double wa = options.size_weighted ? static_cast<double>(groups[a].size()) : 1.0;
        const double wb = options.size_weighted ? static_cast<double>(groups[b].size()) : 1.0;
        order.erase(order.begin() + static_cast<std::ptrdiff_t>(bj));
        order.erase(order.begin() + static_cast<std::ptrdiff_t>(bi));
        for (auto k : order) {
            const double v = options.size_weighted ? (wa * m[a * cap + k] + wb * m[b * cap + k]) / (wa + wb)
                                                   : 0.5 * (m[a * cap + k] + m[b * cap + k]);
            m[slot * cap + k] = v;
            m[k * cap + slot] = v;
        }
        m[slot * cap + slot] = 0.5 * (m[a * cap + a] + m[b * cap + b]);
        groups[slot] = groups[a];
        groups[slot].insert(groups[slot].end(), groups[b].begin(), groups[b].end());
        order.push_back(slot);
    }
    result.partition.tau = tau;
    result.partition.num_original = n;
    for (auto k : order) result.partition.groups.push_back(groups[k]);
    canonicalize(result.partition.groups);
    for (auto& step : result.trace) {
        std::sort(step.first.begin(), step.first.end());
        std::sort(step.second.begin(), step.second.end());
    }
    return result;
}

/// Original label -> super-category index (group position in the partition).
inline std::vector<std::size_t> label_map(const Partition& p) {
    validate(p);
    std::vector<std::size_t> map(p.num_original);
    for (std::size_t g = 0; g < p.groups.size(); ++g)
        for (auto k : p.groups[g]) map[k] = g;
    return map;
}

inline std::vector<std::size_t> relabel(std::span<const std::size_t> labels, const Partition& p) {
    const auto map = label_map(p);
    std::vector<std::size_t> out;
    out.reserve(labels.size());
    for (auto l : labels) {
        require(l < map.size(), "index_out_of_range", "label " + std::to_string(l) + " outside the partition");
        out.push_back(map[l]);
    }
    return out;
}

/// Spreads each super-category score evenly over its member classes.
inline std::vector<double> redistribute(std::span<const double> super_scores, const Partition& p) {
    validate(p);
    require(super_scores.size() == p.groups.size(), "shape_mismatch",
            "expected " + std::to_string(p.groups.size()) + " super-category scores, got " +
                std::to_string(super_scores.size()));
    std::vector<double> out(p.num_original, 0.0);
    for (std::size_t g = 0; g < p.groups.size(); ++g) {
        const double share = super_scores[g] / static_cast<double>(p.groups[g].size());
        for (auto k : p.groups[g]) out[k] = share;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Files

inline nlohmann::json to_json(const Partition& p) {
    return {{"tau", p.tau}, {"num_original", p.num_original}, {"groups", p.groups},
            {"source_confusion", p.source_confusion}};
}

inline Partition partition_from_json(const nlohmann::json& j) {
    Partition p;
    try {
        p.tau = j.at("tau");
        p.num_original = j.at("num_original");
        p.groups = j.at("groups").get<std::vector<Group>>();
        p.source_confusion = j.value("source_confusion", "");
    } catch (const nlohmann::json::exception& e) {
        throw Error("bad_partition", std::string("partition file: ") + e.what());
    }
    validate(p);
    return p;
}

inline void write_partition(const std::filesystem::path& path, const Partition& p) {
    write_file_atomic(path, to_json(p).dump(2) + "\n");
}

inline Partition read_partition(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return partition_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("bad_partition", path.string() + ": " + e.what());
    }
}

inline std::string confusion_to_csv(const ConfusionMatrix& c) {
    std::string out;
    for (std::size_t j = 0; j < c.n; ++j) {
        require(c.class_names[j].find_first_of(",\n\"") == std::string::npos, "bad_name",
                "class names may not contain commas, quotes or newlines");
        out += (j ? "," : "") + c.class_names[j];
    }
    out += '\n';
    for (std::size_t i = 0; i < c.n; ++i) {
        for (std::size_t j = 0; j < c.n; ++j) out += (j ? "," : "") + format_double(c(i, j));
        out += '\n';
    }
    return out;
}

inline ConfusionMatrix confusion_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    auto split = [](const std::string& s) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(s);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!s.empty() && s.back() == ',') cells.emplace_back();
        return cells;
    };
    require(static_cast<bool>(std::getline(in, line)), "bad_csv", "confusion CSV is empty");
    ConfusionMatrix c;
    c.class_names = split(line);
    c.n = c.class_names.size();
    c.values.reserve(c.n * c.n);
    for (std::size_t i = 0; i < c.n; ++i) {
        require(static_cast<bool>(std::getline(in, line)), "bad_csv", "confusion CSV has too few rows");
        const auto cells = split(line);
        require(cells.size() == c.n, "not_square", "confusion CSV row " + std::to_string(i) + " has wrong width");
        for (const auto& cell : cells) {
            double v = 0;
            const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            require(res.ec == std::errc{} && res.ptr == cell.data() + cell.size(), "bad_csv",
                    "cannot parse '" + cell + "'");
            require(v >= 0, "bad_csv", "confusion entries must be non-negative");
            c.values.push_back(v);
        }
    }
    while (std::getline(in, line)) require(line.empty(), "not_square", "confusion CSV has extra rows");
    c.zero_support.assign(c.n, false);
    for (std::size_t i = 0; i < c.n; ++i) {
        double sum = 0;
        for (std::size_t j = 0; j < c.n; ++j) sum += c(i, j);
        c.zero_support[i] = sum == 0;
    }
    return c;
}

inline void write_confusion(const std::filesystem::path& path, const ConfusionMatrix& c) {
    write_file_atomic(path, confusion_to_csv(c));
}

inline ConfusionMatrix read_confusion(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return confusion_from_csv(std::string(bytes.begin(), bytes.end()));
}

}  // namespace mrdis

#endif
