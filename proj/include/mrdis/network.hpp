#ifndef MRDIS_NETWORK_HPP
#define MRDIS_NETWORK_HPP

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mrdis/layers.hpp"

namespace mrdis {

/// Declarative layer stack for one input resolution. The stack ends in
/// dense(K1) + softmax. When `aux_outputs` is non-zero a second dense +
/// softmax head over K2 classes branches from the input of the final dense
/// layer (the pooled features) and predicts soft labels.
struct NetworkSpec {
    std::string name;
    std::size_t input_size = 0;
    std::size_t channels = 3;
    std::size_t num_outputs = 0;
    std::size_t aux_outputs = 0;
    std::vector<LayerSpec> layers;

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Checks the stack end-to-end by shape inference.
inline void validate(const NetworkSpec& spec) {
    require(spec.input_size > 0 && spec.channels > 0, "bad_spec", "network input must be non-empty");
    require(spec.layers.size() >= 2, "bad_spec", "network needs at least dense + softmax");
    require(spec.layers.back().kind == LayerKind::softmax, "bad_spec", "final layer must be softmax");
    const auto& head = spec.layers[spec.layers.size() - 2];
    require(head.kind == LayerKind::dense && head.out_channels == spec.num_outputs, "bad_spec",
            "penultimate layer must be dense over num_outputs");
    Shape shape{1, spec.channels, spec.input_size, spec.input_size};
    for (const auto& layer : spec.layers) shape = output_shape(layer, shape);
    require(shape == Shape{1, spec.num_outputs}, "bad_spec", "network output shape " + shape_string(shape));
}

/// Spatial extent of the feature map entering global average pooling.
inline std::size_t pre_pool_extent(const NetworkSpec& spec) {
    Shape shape{1, spec.channels, spec.input_size, spec.input_size};
    for (const auto& layer : spec.layers) {
        if (layer.kind == LayerKind::globalavgpool) {
            require(shape[2] == shape[3], "bad_spec", "non-square pre-pool feature map");
            return shape[2];
        }
        shape = output_shape(layer, shape);
    }
    throw Error("bad_spec", "network has no globalavgpool layer");
}

inline std::size_t weighted_layer_count(const NetworkSpec& spec) {
    std::size_t n = 0;
    for (const auto& layer : spec.layers) n += layer.is_weighted();
    return n;
}

inline nlohmann::json to_json(const LayerSpec& s) {
    nlohmann::json j{{"kind", to_string(s.kind)}};
    switch (s.kind) {
        case LayerKind::conv2d:
            j.update({{"in", s.in_channels}, {"out", s.out_channels}, {"kernel", s.kernel},
                      {"stride", s.stride}, {"pad", s.pad}, {"bias", s.bias}});
            break;
        case LayerKind::batchnorm:
            j.update({{"channels", s.in_channels}, {"epsilon", s.epsilon}, {"momentum", s.momentum}});
            break;
        case LayerKind::maxpool2d: j.update({{"kernel", s.kernel}, {"stride", s.stride}}); break;
        case LayerKind::dense: j.update({{"in", s.in_channels}, {"out", s.out_channels}}); break;
        default: break;
    }
    return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
    try {
        const auto kind = layer_kind_from_string(j.at("kind").get<std::string>());
        switch (kind) {
            case LayerKind::conv2d:
                return LayerSpec::conv2d(j.at("in"), j.at("out"), j.at("kernel"), j.at("stride"), j.at("pad"),
                                         j.value("bias", true));
            case LayerKind::batchnorm:
                return LayerSpec::batchnorm(j.at("channels"), j.at("epsilon"), j.at("momentum"));
            case LayerKind::maxpool2d: return LayerSpec::maxpool2d(j.at("kernel"), j.at("stride"));
            case LayerKind::dense: return LayerSpec::dense(j.at("in"), j.at("out"));
            default: return LayerSpec{kind};
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error("bad_spec", std::string("layer spec: ") + e.what());
    }
}

inline nlohmann::json to_json(const NetworkSpec& spec) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : spec.layers) layers.push_back(to_json(l));
    return {{"name", spec.name},
            {"input_size", spec.input_size},
            {"channels", spec.channels},
            {"num_outputs", spec.num_outputs},
            {"aux_outputs", spec.aux_outputs},
            {"layers", layers}};
}

inline NetworkSpec network_spec_from_json(const nlohmann::json& j) {
    NetworkSpec spec;
    try {
        spec.name = j.at("name").get<std::string>();
        spec.input_size = j.at("input_size");
        spec.channels = j.at("channels");
        spec.num_outputs = j.at("num_outputs");
        spec.aux_outputs = j.value("aux_outputs", std::size_t{0});
        for (const auto& l : j.at("layers")) spec.layers.push_back(layer_from_json(l));
    } catch (const nlohmann::json::exception& e) {
        throw Error("bad_spec", std::string("network spec: ") + e.what());
    }
    validate(spec);
    return spec;
}

template <typename T>
class Network {
public:
    /// Activations of one forward pass, kept for the backward pass.
    struct Pass {
        Mode mode = Mode::eval;
        std::vector<Tensor<T>> inputs;  // inputs[i] is the input of layer i
        Tensor<T> logits;               // output of the final dense layer
        Tensor<T> aux_logits;           // empty without an auxiliary head
        const Tensor<T>& features() const { return inputs[inputs.size() - 1]; }
    };

    struct Grads {
        std::vector<LayerGrads<T>> layers;
        LayerGrads<T> aux;
    };

    Network() = default;

    /// Fresh weights from `seed`. The auxiliary head draws from a separate
    /// stream, so adding it does not change the main network's initialization.
    Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
        validate(spec_);
        Rng rng(seed);
        for (const auto& layer : spec_.layers) states_.push_back(init_state<T>(layer, rng));
        if (spec_.aux_outputs > 0) {
            Rng aux_rng(derive_seed(seed, 0xa0a0));
            aux_ = init_state<T>(aux_spec(), aux_rng);
        }
    }

    Network(NetworkSpec spec, std::vector<LayerState<T>> states, LayerState<T> aux)
        : spec_(std::move(spec)), states_(std::move(states)), aux_(std::move(aux)) {
        validate(spec_);
        require(states_.size() == spec_.layers.size(), "bad_checkpoint", "layer state count mismatch");
    }

    const NetworkSpec& spec() const noexcept { return spec_; }
    std::vector<LayerState<T>>& states() noexcept { return states_; }
    const std::vector<LayerState<T>>& states() const noexcept { return states_; }
    LayerState<T>& aux_state() noexcept { return aux_; }
    const LayerState<T>& aux_state() const noexcept { return aux_; }
    bool has_aux() const noexcept { return spec_.aux_outputs > 0; }

    LayerSpec aux_spec() const {
        const auto& head = spec_.layers[spec_.layers.size() - 2];
        return LayerSpec::dense(head.in_channels, spec_.aux_outputs);
    }

    /// Runs every layer except the final softmax. Pure.
    Pass run(const Tensor<T>& x, Mode mode) const {
        require_shape(x, {x.rank() == 4 ? x.extent(0) : 0, spec_.channels, spec_.input_size, spec_.input_size},
                      "network input");
        Pass pass;
        pass.mode = mode;
        const std::size_t n_body = spec_.layers.size() - 1;
        pass.inputs.reserve(n_body);
        Tensor<T> current = x;
        for (std::size_t i = 0; i < n_body; ++i) {
            Tensor<T> next = forward(spec_.layers[i], current, mode, states_[i]);
            pass.inputs.push_back(std::move(current));
            current = std::move(next);
        }
        pass.logits = std::move(current);
        if (has_aux()) pass.aux_logits = forward(aux_spec(), pass.features(), mode, aux_);
        if (mode == Mode::train) {
            require_finite(pass.logits, "logits");
            if (has_aux()) require_finite(pass.aux_logits, "auxiliary logits");
        }
        return pass;
    }

    /// Eval-mode class probabilities [N, K1].
    Tensor<T> predict(const Tensor<T>& x) const {
        return forward(spec_.layers.back(), run(x, Mode::eval).logits, Mode::eval, states_.back());
    }

    /// Eval-mode soft-label probabilities [N, K2].
    Tensor<T> predict_aux(const Tensor<T>& x) const {
        require(has_aux(), "bad_spec", "network has no auxiliary head");
        return forward(LayerSpec::softmax(), run(x, Mode::eval).aux_logits, Mode::eval, LayerState<T>{});
    }

    void update_running_stats(const Pass& pass) {
        for (std::size_t i = 0; i < pass.inputs.size(); ++i)
            mrdis::update_running_stats(spec_.layers[i], pass.inputs[i], states_[i]);
    }

    /// Back-propagates gradients w.r.t. the main logits and, optionally, the
    /// auxiliary logits. A null `daux` skips the auxiliary head entirely.
    Grads backward(const Pass& pass, const Tensor<T>& dlogits, const Tensor<T>* daux = nullptr) const {
        Grads g;
        const std::size_t n_body = pass.inputs.size();
        g.layers.resize(spec_.layers.size());
        Tensor<T> upstream = dlogits;
        for (std::size_t idx = n_body; idx-- > 0;) {
            g.layers[idx] = mrdis::backward(spec_.layers[idx], pass.inputs[idx], upstream, pass.mode, states_[idx]);
            if (idx + 1 == n_body && daux != nullptr && has_aux()) {
                g.aux = mrdis::backward(aux_spec(), pass.features(), *daux, pass.mode, aux_);
                auto& gin = g.layers[idx].input;
                for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += g.aux.input[i];
            }
            upstream = std::move(g.layers[idx].input);
        }
        if (has_aux() && g.aux.weight.empty()) {
            g.aux.weight = Tensor<T>(aux_.weight.shape());
            g.aux.bias = Tensor<T>(aux_.bias.shape());
        }
        return g;
    }

    /// Trainable tensors in a fixed order: per layer weight then bias, then the
    /// auxiliary head.
    std::vector<std::pair<std::string, Tensor<T>*>> parameters() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        for (std::size_t i = 0; i < states_.size(); ++i) {
            if (!spec_.layers[i].has_parameters()) continue;
            out.emplace_back("layer" + std::to_string(i) + ".weight", &states_[i].weight);
            if (!states_[i].bias.empty())
                out.emplace_back("layer" + std::to_string(i) + ".bias", &states_[i].bias);
        }
        if (has_aux()) {
            out.emplace_back("aux.weight", &aux_.weight);
            out.emplace_back("aux.bias", &aux_.bias);
        }
        return out;
    }

    /// Gradients aligned with parameters().
    std::vector<Tensor<T>> flatten(Grads&& g) const {
        std::vector<Tensor<T>> out;
        for (std::size_t i = 0; i < states_.size(); ++i) {
            if (!spec_.layers[i].has_parameters()) continue;
            out.push_back(std::move(g.layers[i].weight));
            if (!states_[i].bias.empty()) out.push_back(std::move(g.layers[i].bias));
        }
        if (has_aux()) {
            out.push_back(std::move(g.aux.weight));
            out.push_back(std::move(g.aux.bias));
        }
        return out;
    }

    friend bool operator==(const Network&, const Network&) = default;

private:
    NetworkSpec spec_;
    std::vector<LayerState<T>> states_;
    LayerState<T> aux_;
};

}  // namespace mrdis

#endif
