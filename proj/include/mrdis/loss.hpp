#ifndef MRDIS_LOSS_HPP
#define MRDIS_LOSS_HPP

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "mrdis/tensor.hpp"

namespace mrdis {

/// Orientation of the soft-label term. `standard` is the distillation
/// cross-entropy -sum f log q; `printed` is -sum q log f.
enum class SoftLoss { standard, printed };

inline const char* to_string(SoftLoss s) { return s == SoftLoss::standard ? "standard" : "printed"; }

inline SoftLoss soft_loss_from_string(const std::string& s) {
    if (s == "standard") return SoftLoss::standard;
    if (s == "printed") return SoftLoss::printed;
    throw Error("bad_config", "soft-loss must be 'printed' or 'standard', got '" + s + "'");
}

/// Floor applied to soft targets inside log f (printed orientation only).
inline constexpr double kSoftTargetFloor = 1e-12;

struct LossTerms {
    double hard = 0;  // -log p_y
    double soft = 0;  // lambda * soft cross-entropy
    double total() const { return hard + soft; }
};

template <typename T>
T log_sum_exp(std::span<const T> z) {
    const T m = *std::max_element(z.begin(), z.end());
    T s = T(0);
    for (T v : z) s += std::exp(v - m);
    return m + std::log(s);
}

/// Hard cross-entropy plus lambda-weighted soft cross-entropy for one image,
/// evaluated from logits. Writes gradients w.r.t. the main logits
/// (p - onehot(y)) and the auxiliary logits (lambda (q - f) in the standard
/// orientation). `aux_logits`/`target` may be empty when lambda is 0.
template <typename T>
LossTerms multitask_loss(std::span<const T> logits, std::size_t label, std::span<const T> aux_logits,
                         std::span<const T> target, double lambda, SoftLoss orientation, std::span<T> grad_logits,
                         std::span<T> grad_aux) {
    require(label < logits.size(), "bad_label", "label " + std::to_string(label) + " outside K1");
    require(lambda >= 0, "bad_config", "lambda must be non-negative");
    LossTerms terms;
    const T lse = log_sum_exp(logits);
    terms.hard = static_cast<double>(lse - logits[label]);
    for (std::size_t k = 0; k < logits.size(); ++k)
        grad_logits[k] = std::exp(logits[k] - lse) - (k == label ? T(1) : T(0));

    if (aux_logits.empty()) {
        require(lambda == 0, "bad_config", "soft-label term requested without an auxiliary head");
        return terms;
    }
    require(aux_logits.size() == target.size(), "shape_mismatch", "soft target length differs from K2");
    const T lse_aux = log_sum_exp(aux_logits);
    const T lam = static_cast<T>(lambda);
    if (orientation == SoftLoss::standard) {
        T ce = T(0);
        for (std::size_t k = 0; k < target.size(); ++k) ce -= target[k] * (aux_logits[k] - lse_aux);
        terms.soft = lambda * static_cast<double>(ce);
        for (std::size_t k = 0; k < target.size(); ++k)
            grad_aux[k] = lam * (std::exp(aux_logits[k] - lse_aux) - target[k]);
    } else {
        // -sum_k q_k log f_k; d/du_j = -q_j (log f_j - sum_k q_k log f_k).
        T expected = T(0), loss = T(0);
        for (std::size_t k = 0; k < target.size(); ++k) {
            const T q = std::exp(aux_logits[k] - lse_aux);
            const T lf = std::log(std::max(target[k], static_cast<T>(kSoftTargetFloor)));
            expected += q * lf;
            loss -= q * lf;
        }
        terms.soft = lambda * static_cast<double>(loss);
        for (std::size_t k = 0; k < target.size(); ++k) {
            const T q = std::exp(aux_logits[k] - lse_aux);
            const T lf = std::log(std::max(target[k], static_cast<T>(kSoftTargetFloor)));
            grad_aux[k] = -lam * q * (lf - expected);
        }
    }
    return terms;
}

/// Batch mean of multitask_loss. Gradients are scaled by 1/N to match.
template <typename T>
struct BatchLoss {
    LossTerms terms;
    Tensor<T> grad_logits;
    Tensor<T> grad_aux;  // empty without an auxiliary head
};

template <typename T>
BatchLoss<T> batch_multitask_loss(const Tensor<T>& logits, std::span<const std::size_t> labels,
                                  const Tensor<T>* aux_logits, const Tensor<T>* targets, double lambda,
                                  SoftLoss orientation) {
    const std::size_t n = logits.extent(0), k1 = logits.extent(1);
    require(labels.size() == n, "shape_mismatch", "label count differs from batch size");
    const bool soft = aux_logits != nullptr && !aux_logits->empty();
    if (soft) require(targets != nullptr && targets->shape() == aux_logits->shape(), "shape_mismatch",
                      "soft targets must match auxiliary logits");
    BatchLoss<T> out;
    out.grad_logits = Tensor<T>(logits.shape());
    const std::size_t k2 = soft ? aux_logits->extent(1) : 0;
    if (soft) out.grad_aux = Tensor<T>(aux_logits->shape());
    const T inv_n = T(1) / static_cast<T>(n);
    for (std::size_t b = 0; b < n; ++b) {
        std::span<const T> z(logits.data() + b * k1, k1);
        std::span<const T> u, f;
        std::span<T> gu;
        if (soft) {
            u = {aux_logits->data() + b * k2, k2};
            f = {targets->data() + b * k2, k2};
            gu = {out.grad_aux.data() + b * k2, k2};
        }
        std::span<T> gz(out.grad_logits.data() + b * k1, k1);
        const auto t = multitask_loss<T>(z, labels[b], u, f, soft ? lambda : 0.0, orientation, gz, gu);
        out.terms.hard += t.hard;
        out.terms.soft += t.soft;
        for (auto& v : gz) v *= inv_n;
        for (auto& v : gu) v *= inv_n;
    }
    out.terms.hard /= static_cast<double>(n);
    out.terms.soft /= static_cast<double>(n);
    return out;
}

}  // namespace mrdis

#endif
