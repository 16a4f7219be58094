#ifndef MRDIS_IMAGE_HPP
#define MRDIS_IMAGE_HPP

#include <algorithm>
#include <cmath>
#include <vector>

#include "mrdis/tensor.hpp"

namespace mrdis {

// Single images are CHW tensors; batches are NCHW.

template <typename T>
void require_image(const Tensor<T>& img, const char* what) {
    require(img.rank() == 3, "shape_mismatch", std::string(what) + " must be a CHW image, got " + shape_string(img.shape()));
}

/// Bilinear resampling with half-pixel centers: output pixel d samples the
/// source at (d + 0.5) * in / out - 0.5, clamped to the border. Equal sizes
/// reproduce the input exactly.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& img, std::size_t out_h, std::size_t out_w) {
    require_image(img, "resize input");
    require(out_h > 0 && out_w > 0, "shape_mismatch", "resize target must be non-empty");
    const std::size_t ch = img.extent(0), in_h = img.extent(1), in_w = img.extent(2);
    struct Tap {
        std::size_t i0, i1;
        double frac;
    };
    auto taps = [](std::size_t in, std::size_t out) {
        std::vector<Tap> t(out);
        const double scale = static_cast<double>(in) / static_cast<double>(out);
        for (std::size_t d = 0; d < out; ++d) {
            double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(in - 1));
            const auto i0 = static_cast<std::size_t>(std::floor(src));
            t[d] = {i0, std::min(i0 + 1, in - 1), src - static_cast<double>(i0)};
        }
        return t;
    };
    const auto ty = taps(in_h, out_h);
    const auto tx = taps(in_w, out_w);
    Tensor<T> out({ch, out_h, out_w});
    for (std::size_t c = 0; c < ch; ++c) {
        const T* p = img.data() + c * in_h * in_w;
        T* q = out.data() + c * out_h * out_w;
        for (std::size_t y = 0; y < out_h; ++y) {
            const auto& a = ty[y];
            for (std::size_t x = 0; x < out_w; ++x) {
                const auto& b = tx[x];
                const double top = static_cast<double>(p[a.i0 * in_w + b.i0]) * (1 - b.frac) +
                                   static_cast<double>(p[a.i0 * in_w + b.i1]) * b.frac;
                const double bottom = static_cast<double>(p[a.i1 * in_w + b.i0]) * (1 - b.frac) +
                                      static_cast<double>(p[a.i1 * in_w + b.i1]) * b.frac;
                q[y * out_w + x] = static_cast<T>(top * (1 - a.frac) + bottom * a.frac);
            }
        }
    }
    return out;
}

/// Rectangle [x0, x0 + w) x [y0, y0 + h).
template <typename T>
Tensor<T> crop(const Tensor<T>& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
    require_image(img, "crop input");
    const std::size_t ch = img.extent(0), in_h = img.extent(1), in_w = img.extent(2);
    require(w > 0 && h > 0 && x0 + w <= in_w && y0 + h <= in_h, "shape_mismatch", "crop window outside the image");
    Tensor<T> out({ch, h, w});
    for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t y = 0; y < h; ++y)
            std::copy_n(img.data() + (c * in_h + y0 + y) * in_w + x0, w, out.data() + (c * h + y) * w);
    return out;
}

template <typename T>
Tensor<T> hflip(const Tensor<T>& img) {
    require_image(img, "flip input");
    const std::size_t ch = img.extent(0), h = img.extent(1), w = img.extent(2);
    Tensor<T> out(img.shape());
    for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out[(c * h + y) * w + x] = img[(c * h + y) * w + (w - 1 - x)];
    return out;
}

/// Stacks equally shaped CHW images into an NCHW batch.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& images) {
    require(!images.empty(), "shape_mismatch", "cannot stack an empty image list");
    const Shape& s = images.front().shape();
    Shape batch{images.size()};
    batch.insert(batch.end(), s.begin(), s.end());
    Tensor<T> out(batch);
    const std::size_t stride = images.front().size();
    for (std::size_t i = 0; i < images.size(); ++i) {
        require_shape(images[i], s, "stacked image");
        std::copy(images[i].values().begin(), images[i].values().end(), out.data() + i * stride);
    }
    return out;
}

}  // namespace mrdis

#endif
