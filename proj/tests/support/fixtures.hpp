#ifndef MRDIS_TESTS_FIXTURES_HPP
#define MRDIS_TESTS_FIXTURES_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "mrdis/confusion.hpp"
#include "mrdis/data.hpp"
#include "oracles.hpp"

namespace fixtures {

template <typename T = double>
mrdis::Tensor<T> random_tensor(mrdis::Shape shape, mrdis::Rng& rng, double lo = -1, double hi = 1) {
    mrdis::Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(mrdis::uniform(rng, lo, hi));
    return t;
}

inline std::vector<double> random_distribution(std::size_t k, mrdis::Rng& rng) {
    std::vector<double> v(k);
    double s = 0;
    for (auto& x : v) s += (x = mrdis::uniform(rng, 0.01, 1.0));
    for (auto& x : v) x /= s;
    return v;
}

/// Random symmetric matrix with zero diagonal and entries in [0, 1).
inline mrdis::SimilarityMatrix random_similarity(std::size_t n, mrdis::Rng& rng, bool coarse_values = false) {
    mrdis::SimilarityMatrix s{n, std::vector<double>(n * n, 0.0)};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            // Coarse values force ties to exercise the tie-break.
            const double v = coarse_values ? static_cast<double>(mrdis::uniform_index(rng, 5)) / 4.0
                                           : mrdis::uniform01(rng);
            s(i, j) = s(j, i) = v;
        }
    return s;
}

inline std::vector<double> flat_pixels(const mrdis::Dataset& d, std::size_t i) {
    const auto raw = d.raw(i);
    return std::vector<double>(raw.begin(), raw.end());
}

/// Nearest-centroid confusion matrix: centroids from `train`, evaluated on
/// `val`.
inline std::vector<double> nearest_centroid_confusion(const mrdis::Dataset& train, const mrdis::Dataset& val) {
    const std::size_t k = train.header.num_classes;
    std::vector<std::vector<double>> xs;
    std::vector<std::size_t> ys;
    for (std::size_t i = 0; i < train.size(); ++i) {
        xs.push_back(flat_pixels(train, i));
        ys.push_back(train.labels[i]);
    }
    oracle::NearestCentroid nc;
    nc.fit(xs, ys, k);
    std::vector<std::size_t> preds, labels;
    for (std::size_t i = 0; i < val.size(); ++i) {
        preds.push_back(nc.predict(flat_pixels(val, i)));
        labels.push_back(val.labels[i]);
    }
    return oracle::confusion(preds, labels, k);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("mrdis_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace fixtures

#endif
