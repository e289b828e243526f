#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cle/error.hpp"

namespace cle {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape)
{
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

/**
 * Dense row-major N-dimensional array. Image tensors use NCHW order.
 *
 * The element type is a template parameter so the same kernels can run in
 * float (production) and double (finite-difference reference) precision.
 */
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape, T fill = T{0})
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

    BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data))
    {
        if (shape_size(shape_) != data_.size())
            throw StructuralError("tensor shape " + shape_str(shape_) + " holds " +
                                  std::to_string(shape_size(shape_)) + " elements, got " +
                                  std::to_string(data_.size()));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty() && shape_.empty(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    T* raw() noexcept { return data_.data(); }
    const T* raw() const noexcept { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w)
    {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const
    {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }
    void zero() { fill(T{0}); }

    BasicTensor reshaped(Shape shape) const&
    {
        BasicTensor out = *this;
        out.reshape(std::move(shape));
        return out;
    }

    BasicTensor reshaped(Shape shape) &&
    {
        reshape(std::move(shape));
        return std::move(*this);
    }

    void reshape(Shape shape)
    {
        if (shape_size(shape) != data_.size())
            throw StructuralError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        shape_ = std::move(shape);
    }

    bool all_finite() const
    {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <typename U>
    BasicTensor<U> cast() const
    {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return BasicTensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const BasicTensor& a, const BasicTensor& b) = default;

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

} // namespace cle
