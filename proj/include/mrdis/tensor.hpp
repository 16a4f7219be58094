#ifndef MRDIS_TENSOR_HPP
#define MRDIS_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mrdis/core.hpp"

namespace mrdis {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

/// Dense row-major array. Batched images use the NCHW layout, single images
/// CHW, and feature batches [N, F].
template <typename T>
class Tensor {
public:
    static_assert(std::is_floating_point_v<T>);
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(shape_size(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        require(shape_size(shape_) == data_.size(), "shape_mismatch",
                "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                    shape_string(shape_));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept {
        return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }
    const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
        return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }

    void reshape(Shape shape) {
        require(shape_size(shape) == data_.size(), "shape_mismatch",
                "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        shape_ = std::move(shape);
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool all_finite() const noexcept {
        for (T v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    void validate_shape() const {
        for (auto e : shape_)
            require(e > 0, "shape_mismatch", "tensor extents must be positive, got " + shape_string(shape_));
    }

    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
void require_finite(const Tensor<T>& t, const char* what) {
    require(t.all_finite(), "non_finite", std::string(what) + " contains NaN or Inf");
}

template <typename T>
void require_shape(const Tensor<T>& t, const Shape& expected, const char* what) {
    require(t.shape() == expected, "shape_mismatch",
            std::string(what) + " has shape " + shape_string(t.shape()) + ", expected " +
                shape_string(expected));
}

}  // namespace mrdis

#endif
