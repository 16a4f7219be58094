#ifndef MRDIS_LAYERS_HPP
#define MRDIS_LAYERS_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mrdis/tensor.hpp"

namespace mrdis {

enum class LayerKind { conv2d, batchnorm, relu, maxpool2d, globalavgpool, dense, softmax };

enum class Mode { train, eval };

inline const char* to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool2d: return "maxpool2d";
        case LayerKind::globalavgpool: return "globalavgpool";
        case LayerKind::dense: return "dense";
        case LayerKind::softmax: return "softmax";
    }
    return "?";
}

inline LayerKind layer_kind_from_string(const std::string& name) {
    for (auto k : {LayerKind::conv2d, LayerKind::batchnorm, LayerKind::relu, LayerKind::maxpool2d,
                   LayerKind::globalavgpool, LayerKind::dense, LayerKind::softmax})
        if (name == to_string(k)) return k;
    throw Error("bad_spec", "unknown layer kind '" + name + "'");
}

/// One entry of a network's layer stack. Field meaning depends on `kind`:
/// conv2d and dense use in/out channels (features for dense); batchnorm uses
/// `in_channels` as the normalized channel count; maxpool2d uses kernel and
/// stride.
struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::size_t pad = 0;
    double epsilon = 1e-5;
    double momentum = 0.9;
    bool bias = true;  // conv2d only; redundant in front of batchnorm

    static LayerSpec conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
                            std::size_t pad = 0, bool bias = true) {
        LayerSpec s{LayerKind::conv2d, in, out, kernel, stride, pad};
        s.bias = bias;
        return s;
    }
    static LayerSpec batchnorm(std::size_t channels, double epsilon = 1e-5, double momentum = 0.9) {
        LayerSpec s{LayerKind::batchnorm, channels, channels};
        s.epsilon = epsilon;
        s.momentum = momentum;
        return s;
    }
    static LayerSpec relu() { return {LayerKind::relu}; }
    static LayerSpec maxpool2d(std::size_t kernel, std::size_t stride) {
        return {LayerKind::maxpool2d, 0, 0, kernel, stride, 0};
    }
    static LayerSpec globalavgpool() { return {LayerKind::globalavgpool}; }
    static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::dense, in, out}; }
    static LayerSpec softmax() { return {LayerKind::softmax}; }

    bool has_parameters() const noexcept {
        return kind == LayerKind::conv2d || kind == LayerKind::dense || kind == LayerKind::batchnorm;
    }
    /// Counts toward network depth (conv2d and dense).
    bool is_weighted() const noexcept { return kind == LayerKind::conv2d || kind == LayerKind::dense; }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline void validate(const LayerSpec& s) {
    switch (s.kind) {
        case LayerKind::conv2d:
            require(s.in_channels > 0 && s.out_channels > 0 && s.kernel > 0, "bad_spec",
                    "conv2d needs positive channels and kernel");
            require(s.stride >= 1, "bad_spec", "conv2d stride must be >= 1");
            break;
        case LayerKind::batchnorm:
            require(s.in_channels > 0, "bad_spec", "batchnorm needs a channel count");
            require(s.epsilon > 0, "bad_spec", "batchnorm epsilon must be > 0");
            require(s.momentum >= 0 && s.momentum < 1, "bad_spec", "batchnorm momentum must be in [0,1)");
            break;
        case LayerKind::maxpool2d:
            require(s.kernel > 0 && s.stride >= 1, "bad_spec", "maxpool2d needs kernel > 0 and stride >= 1");
            break;
        case LayerKind::dense:
            require(s.in_channels > 0 && s.out_channels > 0, "bad_spec", "dense needs positive extents");
            break;
        default: break;
    }
}

/// floor((in + 2 pad - kernel) / stride) + 1, or 0 when the window does not fit.
inline std::size_t window_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
    if (in + 2 * pad < kernel) return 0;
    return (in + 2 * pad - kernel) / stride + 1;
}

/// Output shape of one layer for a batched input shape; throws on mismatch.
inline Shape output_shape(const LayerSpec& s, const Shape& in) {
    validate(s);
    auto fail = [&](const std::string& why) {
        throw Error("shape_mismatch", std::string(to_string(s.kind)) + ": " + why + " (input " +
                                          shape_string(in) + ")");
    };
    switch (s.kind) {
        case LayerKind::conv2d: {
            if (in.size() != 4 || in[1] != s.in_channels) fail("expected [N," + std::to_string(s.in_channels) + ",H,W]");
            const auto ho = window_extent(in[2], s.kernel, s.stride, s.pad);
            const auto wo = window_extent(in[3], s.kernel, s.stride, s.pad);
            if (ho < 1 || wo < 1) fail("output spatial extent below 1");
            return {in[0], s.out_channels, ho, wo};
        }
        case LayerKind::maxpool2d: {
            if (in.size() != 4) fail("expected rank 4");
            const auto ho = window_extent(in[2], s.kernel, s.stride, 0);
            const auto wo = window_extent(in[3], s.kernel, s.stride, 0);
            if (ho < 1 || wo < 1) fail("output spatial extent below 1");
            return {in[0], in[1], ho, wo};
        }
        case LayerKind::batchnorm:
            if ((in.size() != 2 && in.size() != 4) || in[1] != s.in_channels)
                fail("expected channel axis of " + std::to_string(s.in_channels));
            return in;
        case LayerKind::relu: return in;
        case LayerKind::globalavgpool:
            if (in.size() != 4) fail("expected rank 4");
            return {in[0], in[1]};
        case LayerKind::dense:
            if (in.size() != 2 || in[1] != s.in_channels) fail("expected [N," + std::to_string(s.in_channels) + "]");
            return {in[0], s.out_channels};
        case LayerKind::softmax:
            if (in.size() != 2) fail("expected rank 2");
            return in;
    }
    return in;
}

/// Parameters and buffers of one layer. For batchnorm `weight`/`bias` hold the
/// scale and shift; the running statistics are buffers, not trained.
template <typename T>
struct LayerState {
    Tensor<T> weight;
    Tensor<T> bias;
    Tensor<T> running_mean;
    Tensor<T> running_var;

    friend bool operator==(const LayerState&, const LayerState&) = default;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit BN scale.
template <typename T>
LayerState<T> init_state(const LayerSpec& s, Rng& rng) {
    validate(s);
    LayerState<T> st;
    auto uniform_fill = [&](Tensor<T>& w, std::size_t fan_in) {
        const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : w.values()) v = static_cast<T>(uniform(rng, -a, a));
    };
    switch (s.kind) {
        case LayerKind::conv2d:
            st.weight = Tensor<T>({s.out_channels, s.in_channels, s.kernel, s.kernel});
            uniform_fill(st.weight, s.in_channels * s.kernel * s.kernel);
            if (s.bias) st.bias = Tensor<T>({s.out_channels});
            break;
        case LayerKind::dense:
            st.weight = Tensor<T>({s.out_channels, s.in_channels});
            uniform_fill(st.weight, s.in_channels);
            st.bias = Tensor<T>({s.out_channels});
            break;
        case LayerKind::batchnorm:
            st.weight = Tensor<T>({s.in_channels}, T(1));
            st.bias = Tensor<T>({s.in_channels});
            st.running_mean = Tensor<T>({s.in_channels});
            st.running_var = Tensor<T>({s.in_channels}, T(1));
            break;
        default: break;
    }
    return st;
}

template <typename T>
struct LayerGrads {
    Tensor<T> input;
    Tensor<T> weight;  // empty for parameterless layers
    Tensor<T> bias;
};

namespace detail {

/// Unfolds one image [C,H,W] into columns [C*k*k][Ho*Wo]; padded taps are 0.
template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t h, std::size_t w, const LayerSpec& s,
            std::size_t ho, std::size_t wo, T* col) {
    const std::size_t k = s.kernel;
    const std::size_t plane = ho * wo;
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                T* row = col + ((c * k + ky) * k + kx) * plane;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s.stride + ky) -
                                              static_cast<std::ptrdiff_t>(s.pad);
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s.stride + kx) -
                                                  static_cast<std::ptrdiff_t>(s.pad);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                                            ix < static_cast<std::ptrdiff_t>(w);
                        row[oy * wo + ox] = inside ? image[(c * h + static_cast<std::size_t>(iy)) * w +
                                                           static_cast<std::size_t>(ix)]
                                                   : T(0);
                    }
                }
            }
}

template <typename T>
void col2im_add(const T* col, std::size_t channels, std::size_t h, std::size_t w, const LayerSpec& s,
                std::size_t ho, std::size_t wo, T* image) {
    const std::size_t k = s.kernel;
    const std::size_t plane = ho * wo;
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                const T* row = col + ((c * k + ky) * k + kx) * plane;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s.stride + ky) -
                                              static_cast<std::ptrdiff_t>(s.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s.stride + kx) -
                                                  static_cast<std::ptrdiff_t>(s.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        image[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] +=
                            row[oy * wo + ox];
                    }
                }
            }
}

template <typename T>
Tensor<T> conv2d_forward(const LayerSpec& s, const Tensor<T>& x, const LayerState<T>& st, const Shape& out_shape) {
    const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    const std::size_t ho = out_shape[2], wo = out_shape[3], plane = ho * wo;
    const std::size_t taps = c * s.kernel * s.kernel;
    Tensor<T> y(out_shape);
    std::vector<T> col(taps * plane);
    for (std::size_t b = 0; b < n; ++b) {
        im2col(x.data() + b * c * h * w, c, h, w, s, ho, wo, col.data());
        for (std::size_t oc = 0; oc < s.out_channels; ++oc) {
            T* out = y.data() + (b * s.out_channels + oc) * plane;
            const T* wrow = st.weight.data() + oc * taps;
            // Accumulate taps in (c, ky, kx) order, then add the bias.
            for (std::size_t t = 0; t < taps; ++t) {
                const T wv = wrow[t];
                const T* in = col.data() + t * plane;
                for (std::size_t p = 0; p < plane; ++p) out[p] += wv * in[p];
            }
            if (!s.bias) continue;
            const T bv = st.bias[oc];
            for (std::size_t p = 0; p < plane; ++p) out[p] += bv;
        }
    }
    return y;
}

template <typename T>
LayerGrads<T> conv2d_backward(const LayerSpec& s, const Tensor<T>& x, const Tensor<T>& dy, const LayerState<T>& st) {
    const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    const std::size_t ho = dy.extent(2), wo = dy.extent(3), plane = ho * wo;
    const std::size_t taps = c * s.kernel * s.kernel;
    LayerGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(st.weight.shape()),
                    s.bias ? Tensor<T>(st.bias.shape()) : Tensor<T>()};
    std::vector<T> col(taps * plane), col_t(plane * taps), dcol(taps * plane);
    for (std::size_t b = 0; b < n; ++b) {
        im2col(x.data() + b * c * h * w, c, h, w, s, ho, wo, col.data());
        for (std::size_t t = 0; t < taps; ++t)
            for (std::size_t p = 0; p < plane; ++p) col_t[p * taps + t] = col[t * plane + p];
        const T* dyb = dy.data() + b * s.out_channels * plane;
        for (std::size_t oc = 0; oc < s.out_channels; ++oc) {
            const T* go = dyb + oc * plane;
            T* gw = g.weight.data() + oc * taps;
            T gb = T(0);
            for (std::size_t p = 0; p < plane; ++p) {
                const T gv = go[p];
                gb += gv;
                const T* row = col_t.data() + p * taps;
                for (std::size_t t = 0; t < taps; ++t) gw[t] += gv * row[t];
            }
            if (s.bias) g.bias[oc] += gb;
        }
        std::fill(dcol.begin(), dcol.end(), T(0));
        for (std::size_t t = 0; t < taps; ++t) {
            T* dc = dcol.data() + t * plane;
            for (std::size_t oc = 0; oc < s.out_channels; ++oc) {
                const T wv = st.weight[oc * taps + t];
                const T* go = dyb + oc * plane;
                for (std::size_t p = 0; p < plane; ++p) dc[p] += wv * go[p];
            }
        }
        col2im_add(dcol.data(), c, h, w, s, ho, wo, g.input.data() + b * c * h * w);
    }
    return g;
}

/// Per-channel mean and biased variance over every axis except the channel.
template <typename T>
void channel_moments(const Tensor<T>& x, std::vector<T>& mean, std::vector<T>& var) {
    const std::size_t n = x.extent(0), ch = x.extent(1);
    const std::size_t inner = x.rank() == 4 ? x.extent(2) * x.extent(3) : 1;
    const T count = static_cast<T>(n * inner);
    mean.assign(ch, T(0));
    var.assign(ch, T(0));
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < ch; ++c) {
            const T* p = x.data() + (b * ch + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) mean[c] += p[i];
        }
    for (auto& m : mean) m /= count;
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < ch; ++c) {
            const T* p = x.data() + (b * ch + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                const T d = p[i] - mean[c];
                var[c] += d * d;
            }
        }
    for (auto& v : var) v /= count;
}

template <typename T>
Tensor<T> batchnorm_forward(const LayerSpec& s, const Tensor<T>& x, Mode mode, const LayerState<T>& st) {
    const std::size_t n = x.extent(0), ch = x.extent(1);
    const std::size_t inner = x.rank() == 4 ? x.extent(2) * x.extent(3) : 1;
    std::vector<T> mean, var;
    if (mode == Mode::train) {
        channel_moments(x, mean, var);
    } else {
        mean.assign(st.running_mean.values().begin(), st.running_mean.values().end());
        var.assign(st.running_var.values().begin(), st.running_var.values().end());
    }
    Tensor<T> y(x.shape());
    for (std::size_t c = 0; c < ch; ++c) {
        const T inv_std = T(1) / std::sqrt(var[c] + static_cast<T>(s.epsilon));
        const T gamma = st.weight[c], beta = st.bias[c];
        for (std::size_t b = 0; b < n; ++b) {
            const T* p = x.data() + (b * ch + c) * inner;
            T* q = y.data() + (b * ch + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) q[i] = gamma * ((p[i] - mean[c]) * inv_std) + beta;
        }
    }
    return y;
}

template <typename T>
LayerGrads<T> batchnorm_backward(const LayerSpec& s, const Tensor<T>& x, const Tensor<T>& dy, Mode mode,
                                 const LayerState<T>& st) {
    const std::size_t n = x.extent(0), ch = x.extent(1);
    const std::size_t inner = x.rank() == 4 ? x.extent(2) * x.extent(3) : 1;
    const T count = static_cast<T>(n * inner);
    std::vector<T> mean, var;
    if (mode == Mode::train) {
        channel_moments(x, mean, var);
    } else {
        mean.assign(st.running_mean.values().begin(), st.running_mean.values().end());
        var.assign(st.running_var.values().begin(), st.running_var.values().end());
    }
    LayerGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(st.weight.shape()), Tensor<T>(st.bias.shape())};
    for (std::size_t c = 0; c < ch; ++c) {
        const T inv_std = T(1) / std::sqrt(var[c] + static_cast<T>(s.epsilon));
        const T gamma = st.weight[c];
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (std::size_t b = 0; b < n; ++b) {
            const T* p = x.data() + (b * ch + c) * inner;
            const T* d = dy.data() + (b * ch + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                sum_dy += d[i];
                sum_dy_xhat += d[i] * ((p[i] - mean[c]) * inv_std);
            }
        }
        g.weight[c] = sum_dy_xhat;
        g.bias[c] = sum_dy;
        for (std::size_t b = 0; b < n; ++b) {
            const T* p = x.data() + (b * ch + c) * inner;
            const T* d = dy.data() + (b * ch + c) * inner;
            T* q = g.input.data() + (b * ch + c) * inner;
            if (mode == Mode::train) {
                // d/dx of gamma * xhat through the batch mean and variance.
                const T scale = gamma * inv_std / count;
                for (std::size_t i = 0; i < inner; ++i) {
                    const T xhat = (p[i] - mean[c]) * inv_std;
                    q[i] = scale * (count * d[i] - sum_dy - xhat * sum_dy_xhat);
                }
            } else {
                for (std::size_t i = 0; i < inner; ++i) q[i] = d[i] * gamma * inv_std;
            }
        }
    }
    return g;
}

template <typename T>
Tensor<T> maxpool_forward(const LayerSpec& s, const Tensor<T>& x, const Shape& out_shape) {
    const std::size_t n = x.extent(0), ch = x.extent(1), h = x.extent(2), w = x.extent(3);
    const std::size_t ho = out_shape[2], wo = out_shape[3];
    Tensor<T> y(out_shape);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < ch; ++c) {
            const T* p = x.data() + (b * ch + c) * h * w;
            T* q = y.data() + (b * ch + c) * ho * wo;
            for (std::size_t oy = 0; oy < ho; ++oy)
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    T best = p[(oy * s.stride) * w + ox * s.stride];
                    for (std::size_t ky = 0; ky < s.kernel; ++ky)
                        for (std::size_t kx = 0; kx < s.kernel; ++kx)
                            best = std::max(best, p[(oy * s.stride + ky) * w + ox * s.stride + kx]);
                    q[oy * wo + ox] = best;
                }
        }
    return y;
}

template <typename T>
Tensor<T> maxpool_backward(const LayerSpec& s, const Tensor<T>& x, const Tensor<T>& dy) {
    const std::size_t n = x.extent(0), ch = x.extent(1), h = x.extent(2), w = x.extent(3);
    const std::size_t ho = dy.extent(2), wo = dy.extent(3);
    Tensor<T> dx(x.shape());
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < ch; ++c) {
            const T* p = x.data() + (b * ch + c) * h * w;
            const T* d = dy.data() + (b * ch + c) * ho * wo;
            T* q = dx.data() + (b * ch + c) * h * w;
            for (std::size_t oy = 0; oy < ho; ++oy)
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    // First maximum in scan order receives the gradient.
                    std::size_t arg = (oy * s.stride) * w + ox * s.stride;
                    for (std::size_t ky = 0; ky < s.kernel; ++ky)
                        for (std::size_t kx = 0; kx < s.kernel; ++kx) {
                            const std::size_t i = (oy * s.stride + ky) * w + ox * s.stride + kx;
                            if (p[i] > p[arg]) arg = i;
                        }
                    q[arg] += d[oy * wo + ox];
                }
        }
    return dx;
}

template <typename T>
Tensor<T> dense_forward(const LayerSpec& s, const Tensor<T>& x, const LayerState<T>& st) {
    const std::size_t n = x.extent(0), fin = s.in_channels, fout = s.out_channels;
    Tensor<T> y({n, fout});
    for (std::size_t b = 0; b < n; ++b) {
        const T* in = x.data() + b * fin;
        for (std::size_t o = 0; o < fout; ++o) {
            const T* wrow = st.weight.data() + o * fin;
            T acc = T(0);
            for (std::size_t i = 0; i < fin; ++i) acc += wrow[i] * in[i];
            y[b * fout + o] = acc + st.bias[o];
        }
    }
    return y;
}

template <typename T>
LayerGrads<T> dense_backward(const LayerSpec& s, const Tensor<T>& x, const Tensor<T>& dy, const LayerState<T>& st) {
    const std::size_t n = x.extent(0), fin = s.in_channels, fout = s.out_channels;
    LayerGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(st.weight.shape()), Tensor<T>(st.bias.shape())};
    for (std::size_t b = 0; b < n; ++b) {
        const T* in = x.data() + b * fin;
        T* gin = g.input.data() + b * fin;
        for (std::size_t o = 0; o < fout; ++o) {
            const T d = dy[b * fout + o];
            const T* wrow = st.weight.data() + o * fin;
            T* gw = g.weight.data() + o * fin;
            for (std::size_t i = 0; i < fin; ++i) {
                gin[i] += wrow[i] * d;
                gw[i] += d * in[i];
            }
            g.bias[o] += d;
        }
    }
    return g;
}

template <typename T>
Tensor<T> softmax_forward(const Tensor<T>& x) {
    const std::size_t n = x.extent(0), k = x.extent(1);
    Tensor<T> y(x.shape());
    for (std::size_t b = 0; b < n; ++b) {
        const T* in = x.data() + b * k;
        T* out = y.data() + b * k;
        const T m = *std::max_element(in, in + k);
        T sum = T(0);
        for (std::size_t j = 0; j < k; ++j) {
            out[j] = std::exp(in[j] - m);
            sum += out[j];
        }
        for (std::size_t j = 0; j < k; ++j) out[j] /= sum;
    }
    return y;
}

}  // namespace detail

/// Forward pass of a single layer on a batched input. Pure: batchnorm's
/// running statistics are updated separately by update_running_stats.
template <typename T>
Tensor<T> forward(const LayerSpec& spec, const Tensor<T>& input, Mode mode, const LayerState<T>& state) {
    const Shape out_shape = output_shape(spec, input.shape());
    require_finite(input, "layer input");
    switch (spec.kind) {
        case LayerKind::conv2d: return detail::conv2d_forward(spec, input, state, out_shape);
        case LayerKind::batchnorm: return detail::batchnorm_forward(spec, input, mode, state);
        case LayerKind::relu: {
            Tensor<T> y(input.shape());
            for (std::size_t i = 0; i < input.size(); ++i) y[i] = input[i] > T(0) ? input[i] : T(0);
            return y;
        }
        case LayerKind::maxpool2d: return detail::maxpool_forward(spec, input, out_shape);
        case LayerKind::globalavgpool: {
            const std::size_t plane = input.extent(2) * input.extent(3);
            Tensor<T> y(out_shape);
            for (std::size_t i = 0; i < y.size(); ++i) {
                const T* p = input.data() + i * plane;
                T acc = T(0);
                for (std::size_t j = 0; j < plane; ++j) acc += p[j];
                y[i] = acc / static_cast<T>(plane);
            }
            return y;
        }
        case LayerKind::dense: return detail::dense_forward(spec, input, state);
        case LayerKind::softmax: return detail::softmax_forward(input);
    }
    return input;
}

/// Gradients of a scalar loss w.r.t. the layer input and parameters given the
/// gradient w.r.t. the layer output. Intermediate quantities (batch moments,
/// pooling arguments, softmax output) are recomputed from `input`.
template <typename T>
LayerGrads<T> backward(const LayerSpec& spec, const Tensor<T>& input, const Tensor<T>& upstream, Mode mode,
                       const LayerState<T>& state) {
    const Shape out_shape = output_shape(spec, input.shape());
    require_shape(upstream, out_shape, "upstream gradient");
    switch (spec.kind) {
        case LayerKind::conv2d: return detail::conv2d_backward(spec, input, upstream, state);
        case LayerKind::batchnorm: return detail::batchnorm_backward(spec, input, upstream, mode, state);
        case LayerKind::relu: {
            LayerGrads<T> g{Tensor<T>(input.shape())};
            for (std::size_t i = 0; i < input.size(); ++i) g.input[i] = input[i] > T(0) ? upstream[i] : T(0);
            return g;
        }
        case LayerKind::maxpool2d: return {detail::maxpool_backward(spec, input, upstream)};
        case LayerKind::globalavgpool: {
            const std::size_t plane = input.extent(2) * input.extent(3);
            LayerGrads<T> g{Tensor<T>(input.shape())};
            for (std::size_t i = 0; i < upstream.size(); ++i) {
                const T v = upstream[i] / static_cast<T>(plane);
                for (std::size_t j = 0; j < plane; ++j) g.input[i * plane + j] = v;
            }
            return g;
        }
        case LayerKind::dense: return detail::dense_backward(spec, input, upstream, state);
        case LayerKind::softmax: {
            const Tensor<T> y = detail::softmax_forward(input);
            const std::size_t n = input.extent(0), k = input.extent(1);
            LayerGrads<T> g{Tensor<T>(input.shape())};
            for (std::size_t b = 0; b < n; ++b) {
                T dot = T(0);
                for (std::size_t j = 0; j < k; ++j) dot += upstream[b * k + j] * y[b * k + j];
                for (std::size_t j = 0; j < k; ++j)
                    g.input[b * k + j] = y[b * k + j] * (upstream[b * k + j] - dot);
            }
            return g;
        }
    }
    return {};
}

/// Exponential moving average of batch moments: r <- m r + (1 - m) batch.
template <typename T>
void update_running_stats(const LayerSpec& spec, const Tensor<T>& input, LayerState<T>& state) {
    if (spec.kind != LayerKind::batchnorm) return;
    std::vector<T> mean, var;
    detail::channel_moments(input, mean, var);
    const T m = static_cast<T>(spec.momentum);
    for (std::size_t c = 0; c < mean.size(); ++c) {
        state.running_mean[c] = m * state.running_mean[c] + (T(1) - m) * mean[c];
        state.running_var[c] = m * state.running_var[c] + (T(1) - m) * var[c];
    }
}

}  // namespace mrdis

#endif
