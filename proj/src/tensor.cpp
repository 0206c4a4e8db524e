#include "anyir/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace anyir {

std::int64_t numel(const Shape& shape) {
    if (shape.empty()) return 0;
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > 4) {
        throw ShapeError("tensor rank must be 1..4, got " + std::to_string(shape.size()));
    }
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] < 1) {
            throw ShapeError("tensor extent " + std::to_string(i) + " must be >= 1 in shape " +
                             to_string(shape));
        }
    }
}

}  // namespace

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(static_cast<std::size_t>(anyir::numel(shape_)), fill);
}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (static_cast<std::int64_t>(data_.size()) != anyir::numel(shape_)) {
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         to_string(shape_));
    }
}

template <class T>
std::int64_t BasicTensor<T>::dim(int axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape_));
    }
    return shape_[static_cast<std::size_t>(axis)];
}

template <class T>
T& BasicTensor<T>::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
}

template <class T>
T BasicTensor<T>::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
}

template <class T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const& {
    BasicTensor copy = *this;
    return std::move(copy).reshaped(std::move(shape));
}

template <class T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) && {
    validate_shape(shape);
    if (anyir::numel(shape) != numel()) {
        throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    shape_ = std::move(shape);
    return std::move(*this);
}

template <class T>
bool BasicTensor<T>::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class BasicTensor<float>;
template class BasicTensor<double>;

template <class T>
bool bitwise_equal(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.raw(), b.raw(), static_cast<std::size_t>(a.numel()) * sizeof(T)) == 0;
}

template <class T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("max_abs_diff: shape " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
    double m = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    }
    return m;
}

template bool bitwise_equal(const Tensor&, const Tensor&);
template bool bitwise_equal(const TensorD&, const TensorD&);
template double max_abs_diff(const Tensor&, const Tensor&);
template double max_abs_diff(const TensorD&, const TensorD&);

}  // namespace anyir
