#ifndef MRDIS_GRADCHECK_HPP
#define MRDIS_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mrdis/loss.hpp"
#include "mrdis/network.hpp"

namespace mrdis {

/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

struct TensorCheck {
    std::string name;
    double max_relative_error = 0;
    double max_abs_analytic = 0;
    double max_abs_numeric = 0;
    std::size_t probed = 0;
    std::size_t kinked = 0;  // probes that crossed a relu or maxpool switch; not compared
};

struct GradientReport {
    std::vector<TensorCheck> tensors;
    double tolerance = 1e-4;

    double max_relative_error() const {
        double m = 0;
        for (const auto& t : tensors) m = std::max(m, t.max_relative_error);
        return m;
    }
    std::size_t probed() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.probed;
        return n;
    }
    std::size_t kinked() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.kinked;
        return n;
    }
    bool passed() const { return max_relative_error() < tolerance; }
};

/// Which side of every relu and maxpool switch `x` falls on when fed to
/// `spec`: sign bits for relu, window argmax for maxpool, nothing otherwise.
template <typename T>
void append_switches(const LayerSpec& spec, const Tensor<T>& x, std::vector<std::size_t>& out) {
    if (spec.kind == LayerKind::relu) {
        for (std::size_t i = 0; i < x.size(); ++i) out.push_back(x[i] > T(0));
    } else if (spec.kind == LayerKind::maxpool2d) {
        const std::size_t planes = x.extent(0) * x.extent(1), h = x.extent(2), w = x.extent(3);
        const auto ho = output_shape(spec, x.shape())[2], wo = output_shape(spec, x.shape())[3];
        for (std::size_t pl = 0; pl < planes; ++pl) {
            const T* p = x.data() + pl * h * w;
            for (std::size_t oy = 0; oy < ho; ++oy)
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    std::size_t arg = (oy * spec.stride) * w + ox * spec.stride;
                    for (std::size_t ky = 0; ky < spec.kernel; ++ky)
                        for (std::size_t kx = 0; kx < spec.kernel; ++kx) {
                            const std::size_t i = (oy * spec.stride + ky) * w + ox * spec.stride + kx;
                            if (p[i] > p[arg]) arg = i;
                        }
                    out.push_back(arg);
                }
        }
    }
}

/// Fourth-order central differences of `loss` w.r.t. every entry of `x`,
/// compared against `analytic`. `x` is restored after each probe.
///
/// The two-point stencil carries ~1e-11 of roundoff plus truncation error in
/// a network loss, which is 1e-4 relative for the occasional 1e-7 gradient.
/// When `switches` is given, an entry whose probes change it straddles a
/// non-differentiable point and is counted in `kinked` instead of compared.
inline TensorCheck compare_with_finite_differences(const std::string& name, Tensor<double>& x,
                                                   const Tensor<double>& analytic,
                                                   const std::function<double()>& loss, double step = 3e-5,
                                                   const std::function<std::vector<std::size_t>()>& switches = {}) {
    TensorCheck check{name};
    const auto base = switches ? switches() : std::vector<std::size_t>{};
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        bool crossed = false;
        auto at = [&](double v) {
            x[i] = v;
            if (switches && !crossed) crossed = switches() != base;
            return loss();
        };
        const double d1 = at(saved + step) - at(saved - step);
        const double d2 = at(saved + 2 * step) - at(saved - 2 * step);
        x[i] = saved;
        ++check.probed;
        if (crossed) {
            ++check.kinked;
            continue;
        }
        const double numeric = (8 * d1 - d2) / (12 * step);
        check.max_relative_error = std::max(check.max_relative_error, relative_error(analytic[i], numeric));
        check.max_abs_analytic = std::max(check.max_abs_analytic, std::abs(analytic[i]));
        check.max_abs_numeric = std::max(check.max_abs_numeric, std::abs(numeric));
    }
    return check;
}

/// Checks one layer with the surrogate loss sum(upstream * forward(input)).
inline GradientReport check_layer_gradients(const LayerSpec& spec, Tensor<double> input,
                                            const Tensor<double>& upstream, Mode mode, LayerState<double> state,
                                            double step = 3e-5) {
    const auto grads = backward(spec, input, upstream, mode, state);
    auto loss = [&] {
        const auto y = forward(spec, input, mode, state);
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += upstream[i] * y[i];
        return s;
    };
    auto switches = [&] {
        std::vector<std::size_t> out;
        append_switches(spec, input, out);
        return out;
    };
    GradientReport report;
    report.tensors.push_back(compare_with_finite_differences("input", input, grads.input, loss, step, switches));
    if (spec.has_parameters()) {
        report.tensors.push_back(compare_with_finite_differences("weight", state.weight, grads.weight, loss, step));
        if (!state.bias.empty())
            report.tensors.push_back(compare_with_finite_differences("bias", state.bias, grads.bias, loss, step));
    }
    return report;
}

/// Whole-network check of the batch-mean multitask loss in train mode (batch
/// statistics, no running-stat updates). `soft_targets` may be null, in which
/// case only the hard cross-entropy is checked.
inline GradientReport gradient_check(Network<double> network, const Tensor<double>& input_batch,
                                     std::span<const std::size_t> labels, double tolerance,
                                     const Tensor<double>* soft_targets = nullptr, double lambda = 0.0,
                                     SoftLoss orientation = SoftLoss::standard, double step = 3e-5) {
    const bool soft = soft_targets != nullptr && network.has_aux();
    auto loss = [&] {
        const auto pass = network.run(input_batch, Mode::train);
        return batch_multitask_loss(pass.logits, labels, soft ? &pass.aux_logits : nullptr, soft_targets,
                                    soft ? lambda : 0.0, orientation)
            .terms.total();
    };
    auto switches = [&] {
        const auto pass = network.run(input_batch, Mode::train);
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < pass.inputs.size(); ++i) append_switches(network.spec().layers[i], pass.inputs[i], out);
        return out;
    };
    const auto pass = network.run(input_batch, Mode::train);
    auto bl = batch_multitask_loss(pass.logits, labels, soft ? &pass.aux_logits : nullptr, soft_targets,
                                   soft ? lambda : 0.0, orientation);
    auto grads = network.flatten(network.backward(pass, bl.grad_logits, soft ? &bl.grad_aux : nullptr));
    auto params = network.parameters();
    GradientReport report;
    report.tolerance = tolerance;
    for (std::size_t i = 0; i < params.size(); ++i)
        report.tensors.push_back(
            compare_with_finite_differences(params[i].first, *params[i].second, grads[i], loss, step, switches));
    return report;
}

}  // namespace mrdis

#endif
