#include "pvp/tensor.hpp"

#include <cmath>
#include <sstream>

#include "pvp/error.hpp"

namespace pvp {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string(shape_));
    }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
    Shape s{values.size()};
    return Tensor(std::move(s), std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) throw ShapeError("axis out of range for shape " + shape_string(shape_));
    return shape_[axis];
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw ShapeError("expected a matrix, got shape " + shape_string(shape_));
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw ShapeError("expected a matrix, got shape " + shape_string(shape_));
    return shape_[1];
}

double Tensor::item() const {
    if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
}

Tensor Tensor::row(std::size_t r) const {
    const auto c = cols();
    if (r >= rows()) throw ShapeError("row index out of range");
    return Tensor(Shape{1, c}, std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(r * c),
                                                   data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * c)));
}

Tensor Tensor::slice(std::size_t i) const {
    if (shape_.empty() || i >= shape_[0]) throw ShapeError("slice index out of range for " + shape_string(shape_));
    Shape inner(shape_.begin() + 1, shape_.end());
    const auto n = shape_size(inner);
    return Tensor(std::move(inner), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(i * n),
                                                        data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * n)));
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor stack(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("stack of zero tensors");
    Shape shape{parts.size()};
    shape.insert(shape.end(), parts[0].shape().begin(), parts[0].shape().end());
    std::vector<double> data;
    data.reserve(shape_size(shape));
    for (const auto& p : parts) {
        if (p.shape() != parts[0].shape()) throw ShapeError("stack: mismatched shapes");
        data.insert(data.end(), p.storage().begin(), p.storage().end());
    }
    return Tensor(std::move(shape), std::move(data));
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace pvp
