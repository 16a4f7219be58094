#ifndef MRDIS_TRAINER_HPP
#define MRDIS_TRAINER_HPP

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mrdis/data.hpp"
#include "mrdis/loss.hpp"
#include "mrdis/multires.hpp"
#include "mrdis/optim.hpp"
#include "mrdis/softlabel.hpp"

namespace mrdis {

struct TrainConfig {
    std::size_t epochs = 12;
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    double momentum = 0.9;
    /// Epochs at which the rate is multiplied by `lr_decay`. Empty selects
    /// 60% and 85% of the run.
    std::vector<std::size_t> lr_milestone_epochs;
    double lr_decay = 0.1;
    double lambda = 0.0;
    SoftLoss soft_loss = SoftLoss::standard;
    std::uint64_t seed = 0;
};

struct TrainLogRow {
    std::size_t epoch = 0;
    std::size_t iteration = 0;
    double hard = 0;
    double soft = 0;
    double lr = 0;
};

template <typename T>
struct TrainResult {
    Network<T> network;
    std::size_t steps = 0;
    std::vector<TrainLogRow> log;
};

inline std::vector<LrMilestone> lr_schedule(const TrainConfig& cfg, std::size_t iterations_per_epoch) {
    std::vector<std::size_t> epochs = cfg.lr_milestone_epochs;
    if (epochs.empty() && cfg.epochs >= 3) {
        epochs = {static_cast<std::size_t>(std::lround(0.6 * static_cast<double>(cfg.epochs))),
                  static_cast<std::size_t>(std::lround(0.85 * static_cast<double>(cfg.epochs)))};
        if (epochs[1] <= epochs[0]) epochs.pop_back();
    }
    std::vector<LrMilestone> out;
    for (auto e : epochs) out.push_back({e * iterations_per_epoch, cfg.lr_decay});
    return out;
}

inline std::string log_to_csv(const std::vector<TrainLogRow>& log) {
    std::string out = "epoch,iteration,hard,soft,lr\n";
    for (const auto& r : log)
        out += std::to_string(r.epoch) + "," + std::to_string(r.iteration) + "," + format_double(r.hard) + "," +
               format_double(r.soft) + "," + format_double(r.lr) + "\n";
    return out;
}

/// Per-epoch means of the two loss terms.
inline std::vector<std::pair<double, double>> epoch_means(const std::vector<TrainLogRow>& log) {
    std::vector<std::pair<double, double>> means;
    std::vector<std::size_t> counts;
    for (const auto& r : log) {
        if (r.epoch >= means.size()) {
            means.resize(r.epoch + 1);
            counts.resize(r.epoch + 1);
        }
        means[r.epoch].first += r.hard;
        means[r.epoch].second += r.soft;
        ++counts[r.epoch];
    }
    for (std::size_t e = 0; e < means.size(); ++e)
        if (counts[e]) {
            means[e].first /= static_cast<double>(counts[e]);
            means[e].second /= static_cast<double>(counts[e]);
        }
    return means;
}

/// Mini-batch SGD on scale-jittered crops. `data` must already be at the
/// resolution's stored size; `labels` may differ from the dataset labels
/// (super-category training). With `soft` and a network that has an
/// auxiliary head, the soft-label term is added with weight cfg.lambda.
template <typename T>
TrainResult<T> train(const ResolutionSpec& res, const Dataset& data, std::span<const std::size_t> labels,
                     const TrainConfig& cfg, const SoftLabelSet* soft = nullptr,
                     const std::function<void(const TrainLogRow&)>& on_step = {}) {
    validate(res);
    validate(data);
    require(data.resolution() == res.stored_size, "shape_mismatch",
            "training data is " + std::to_string(data.resolution()) + " px, expected " + std::to_string(res.stored_size));
    require(labels.size() == data.size(), "shape_mismatch", "one label per training image required");
    require(cfg.batch_size >= 2, "bad_config", "batch size must be at least 2 for batch statistics");
    require(data.size() >= cfg.batch_size, "bad_config", "fewer training images than one batch");
    require(cfg.lambda >= 0, "bad_config", "lambda must be non-negative");
    for (auto l : labels)
        require(l < res.network.num_outputs, "bad_label", "training label outside the network's label space");
    const bool use_soft = cfg.lambda > 0;
    if (use_soft) {
        require(soft != nullptr, "bad_config", "lambda > 0 needs soft labels");
        require(res.network.aux_outputs == soft->k2, "shape_mismatch", "auxiliary head size differs from K2");
        require(soft->size() == data.size(), "shape_mismatch", "one soft label per training image required");
    }

    TrainResult<T> result{Network<T>(res.network, derive_seed(cfg.seed, 0x1417))};
    auto& net = result.network;
    std::vector<Tensor<T>> images;
    images.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) images.push_back(data.image<T>(i));

    const std::size_t per_epoch = data.size() / cfg.batch_size;
    OptimizerState<T> opt;
    opt.learning_rate = cfg.learning_rate;
    opt.momentum = cfg.momentum;
    opt.schedule = lr_schedule(cfg, per_epoch);
    opt.validate();

    Rng aug(derive_seed(cfg.seed, 0xa06));
    std::vector<std::size_t> batch_labels(cfg.batch_size);
    std::vector<Tensor<T>> crops(cfg.batch_size);
    const std::size_t k2 = use_soft ? soft->k2 : 0;
    Tensor<T> targets;
    if (use_soft) targets = Tensor<T>({cfg.batch_size, k2});

    auto params = net.parameters();
    std::vector<Tensor<T>*> param_ptrs;
    for (auto& p : params) param_ptrs.push_back(p.second);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = epoch_order(data.size(), true, cfg.seed, epoch);
        for (std::size_t it = 0; it < per_epoch; ++it) {
            for (std::size_t b = 0; b < cfg.batch_size; ++b) {
                const std::size_t idx = order[it * cfg.batch_size + b];
                crops[b] = train_crop(images[idx], res, aug);
                batch_labels[b] = labels[idx];
                if (use_soft)
                    for (std::size_t k = 0; k < k2; ++k)
                        targets[b * k2 + k] = static_cast<T>(soft->row(idx)[k]);
            }
            const auto pass = net.run(stack(crops), Mode::train);
            auto loss = batch_multitask_loss(pass.logits, batch_labels, use_soft ? &pass.aux_logits : nullptr,
                                             use_soft ? &targets : nullptr, cfg.lambda, cfg.soft_loss);
            require(std::isfinite(loss.terms.total()), "non_finite", "training loss is not finite");
            auto grads = net.flatten(net.backward(pass, loss.grad_logits, use_soft ? &loss.grad_aux : nullptr));
            net.update_running_stats(pass);
            const TrainLogRow row{epoch, opt.step, loss.terms.hard, loss.terms.soft, opt.current_lr()};
            sgd_step<T>(param_ptrs, grads, opt);
            result.log.push_back(row);
            if (on_step) on_step(row);
        }
    }
    result.steps = opt.step;
    return result;
}

}  // namespace mrdis

#endif
