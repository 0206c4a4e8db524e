#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace anyir {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Thrown for shape/argument contract violations. The message always names the
// offending dimension or argument.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Dense row-major array of rank 1..4. A default-constructed tensor is empty
// (rank 0, no data) and is used as "absent".
template <class T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;
    explicit BasicTensor(Shape shape, T fill = T{0});
    BasicTensor(Shape shape, std::vector<T> data);

    static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
    static BasicTensor full(Shape shape, T v) { return BasicTensor(std::move(shape), v); }

    bool empty() const { return shape_.empty(); }
    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t dim(int axis) const;
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    T* raw() { return data_.data(); }
    const T* raw() const { return data_.data(); }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    T operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // Rank-4 element access (n, c, h, w).
    T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w);
    T at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;

    BasicTensor reshaped(Shape shape) const&;
    BasicTensor reshaped(Shape shape) &&;

    template <class U>
    BasicTensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return BasicTensor<U>(shape_, std::move(out));
    }

    bool all_finite() const;

    friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

// Bitwise equality (distinguishes -0.0 from 0.0 and compares NaN payloads).
template <class T>
bool bitwise_equal(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <class T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b);

}  // namespace anyir
