#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "fcos/error.hpp"

namespace fcos {

enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

std::string to_string(DType dtype);

template <class T>
constexpr DType dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "fp32 or fp64 only");
    return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major array with an optional gradient buffer of identical shape and dtype.
///
/// Element access is typed: `values<float>()` on an fp64 tensor throws UsageError.
/// Copies are deep. Equality is bitwise on shape, dtype and data; gradients are ignored.
class Tensor {
public:
    Tensor();
    explicit Tensor(Shape shape, DType dtype = DType::F32);

    template <class T>
    static Tensor from_values(Shape shape, std::vector<T> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const noexcept;
    DType dtype() const noexcept { return static_cast<DType>(data_.index() + 1); }
    bool empty() const noexcept { return numel() == 0; }

    template <class T>
    std::span<T> values();
    template <class T>
    std::span<const T> values() const;

    double item(std::size_t i) const;
    void set_item(std::size_t i, double v);
    /// All values as doubles, in storage order.
    std::vector<double> to_doubles() const;

    bool has_grad() const noexcept { return grad_.has_value(); }
    /// Allocates (or resets) the gradient buffer to zeros.
    void zero_grad();
    void drop_grad() noexcept { grad_.reset(); }
    template <class T>
    std::span<T> grad();
    template <class T>
    std::span<const T> grad() const;
    double grad_item(std::size_t i) const;

    Tensor cast(DType dtype) const;
    Tensor reshaped(Shape shape) const;
    void fill(double v);

    bool all_finite() const;
    std::span<const std::byte> bytes() const;
    std::span<std::byte> mutable_bytes();

    friend bool operator==(const Tensor& a, const Tensor& b);

private:
    using Buffer = std::variant<std::vector<float>, std::vector<double>>;

    Shape shape_;
    Buffer data_;
    std::optional<Buffer> grad_;
};

template <class T>
Tensor Tensor::from_values(Shape shape, std::vector<T> values) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError(-1, "tensor of shape " + shape_to_string(shape) + " cannot hold " +
                                 std::to_string(values.size()) + " values");
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
}

template <class T>
std::span<T> Tensor::values() {
    auto* v = std::get_if<std::vector<T>>(&data_);
    if (v == nullptr) throw UsageError("tensor dtype is " + to_string(dtype()) + ", not " + to_string(dtype_of<T>()));
    return {v->data(), v->size()};
}

template <class T>
std::span<const T> Tensor::values() const {
    const auto* v = std::get_if<std::vector<T>>(&data_);
    if (v == nullptr) throw UsageError("tensor dtype is " + to_string(dtype()) + ", not " + to_string(dtype_of<T>()));
    return {v->data(), v->size()};
}

template <class T>
std::span<T> Tensor::grad() {
    if (!grad_) throw UsageError("tensor has no gradient buffer");
    auto* v = std::get_if<std::vector<T>>(&*grad_);
    if (v == nullptr) throw UsageError("gradient dtype mismatch");
    return {v->data(), v->size()};
}

template <class T>
std::span<const T> Tensor::grad() const {
    if (!grad_) throw UsageError("tensor has no gradient buffer");
    const auto* v = std::get_if<std::vector<T>>(&*grad_);
    if (v == nullptr) throw UsageError("gradient dtype mismatch");
    return {v->data(), v->size()};
}

/// Gathers rows (first-axis slices) of `t` in the given order.
Tensor take_rows(const Tensor& t, std::span<const std::size_t> rows);
/// First-axis slice [begin, end).
Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end);

/// Invokes `fn.template operator()<T>()` with T matching `dtype`.
template <class Fn>
decltype(auto) dispatch_dtype(DType dtype, Fn&& fn) {
    if (dtype == DType::F64) return fn.template operator()<double>();
    return fn.template operator()<float>();
}

}  // namespace fcos
