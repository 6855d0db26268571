#include "fcos/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace fcos {

std::string to_string(DType dtype) { return dtype == DType::F64 ? "fp64" : "fp32"; }

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor() : data_(std::vector<float>{}) {}

Tensor::Tensor(Shape shape, DType dtype) : shape_(std::move(shape)) {
    const auto n = shape_numel(shape_);
    if (dtype == DType::F64)
        data_ = std::vector<double>(n, 0.0);
    else
        data_ = std::vector<float>(n, 0.0f);
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) throw ShapeError(-1, "axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape_));
    return shape_[axis];
}

std::size_t Tensor::numel() const noexcept {
    return std::visit([](const auto& v) { return v.size(); }, data_);
}

double Tensor::item(std::size_t i) const {
    return std::visit([i](const auto& v) { return static_cast<double>(v.at(i)); }, data_);
}

void Tensor::set_item(std::size_t i, double value) {
    std::visit([i, value](auto& v) { v.at(i) = static_cast<typename std::decay_t<decltype(v)>::value_type>(value); }, data_);
}

std::vector<double> Tensor::to_doubles() const {
    return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, data_);
}

void Tensor::zero_grad() {
    grad_ = std::visit([](const auto& v) -> Buffer {
        using V = std::decay_t<decltype(v)>;
        return V(v.size(), typename V::value_type{0});
    }, data_);
}

double Tensor::grad_item(std::size_t i) const {
    if (!grad_) throw UsageError("tensor has no gradient buffer");
    return std::visit([i](const auto& v) { return static_cast<double>(v.at(i)); }, *grad_);
}

Tensor Tensor::cast(DType dtype) const {
    Tensor out;
    out.shape_ = shape_;
    if (dtype == DType::F64)
        out.data_ = std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, data_);
    else
        out.data_ = std::visit([](const auto& v) { return std::vector<float>(v.begin(), v.end()); }, data_);
    return out;
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
        throw ShapeError(-1, "cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    Tensor out = *this;
    out.shape_ = std::move(shape);
    out.grad_.reset();
    return out;
}

void Tensor::fill(double value) {
    std::visit([value](auto& v) {
        for (auto& x : v) x = static_cast<typename std::decay_t<decltype(v)>::value_type>(value);
    }, data_);
}

bool Tensor::all_finite() const {
    return std::visit([](const auto& v) {
        for (auto x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }, data_);
}

std::span<const std::byte> Tensor::bytes() const {
    return std::visit([](const auto& v) { return std::as_bytes(std::span(v)); }, data_);
}

std::span<std::byte> Tensor::mutable_bytes() {
    return std::visit([](auto& v) { return std::as_writable_bytes(std::span(v)); }, data_);
}

bool operator==(const Tensor& a, const Tensor& b) {
    if (a.shape_ != b.shape_ || a.dtype() != b.dtype()) return false;
    auto x = a.bytes();
    auto y = b.bytes();
    return x.size() == y.size() && (x.empty() || std::memcmp(x.data(), y.data(), x.size()) == 0);
}

Tensor take_rows(const Tensor& t, std::span<const std::size_t> rows) {
    if (t.rank() == 0) throw ShapeError(-1, "take_rows on a scalar");
    Shape shape = t.shape();
    const std::size_t n = shape[0];
    const std::size_t stride = n == 0 ? 0 : t.numel() / n;
    shape[0] = rows.size();
    Tensor out(shape, t.dtype());
    dispatch_dtype(t.dtype(), [&]<class T>() {
        auto src = t.values<T>();
        auto dst = out.values<T>();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i] >= n) throw ShapeError(-1, "row index out of range");
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(rows[i] * stride), stride,
                        dst.begin() + static_cast<std::ptrdiff_t>(i * stride));
        }
    });
    return out;
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
    std::vector<std::size_t> rows;
    for (std::size_t i = begin; i < end; ++i) rows.push_back(i);
    return take_rows(t, rows);
}

}  // namespace fcos
