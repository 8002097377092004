#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "atme/common.hpp"

namespace atme {

// Dense row-major tensor. Convention for feature maps is NCHW; vectors and
// matrices use however many dims the op expects. Storage is owned and
// contiguous; copies are deep (ops pass nodes around by shared_ptr, so deep
// copies stay rare and intentional).
template <typename T>
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(count(shape_), T(0));
    }

    Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

    static Tensor full(std::vector<int> shape, T value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor scalar(T value) { return full({1}, value); }

    static Tensor from_vector(std::vector<int> shape, std::vector<T> values) {
        check(count(shape) == static_cast<int64_t>(values.size()),
              "Tensor::from_vector: shape does not match value count");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::move(values);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& raw() { return data_; }
    const std::vector<T>& raw() const { return data_; }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    // Same data, new shape; element count must match.
    Tensor reshaped(std::vector<int> shape) const {
        if (count(shape) != size())
            throw ShapeError("reshaped: element count mismatch for " + shape_str());
        Tensor t = *this;
        t.shape_ = std::move(shape);
        return t;
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    T min_value() const { return *std::min_element(data_.begin(), data_.end()); }
    T max_value() const { return *std::max_element(data_.begin(), data_.end()); }

    double sum() const {
        double s = 0;
        for (const T& v : data_) s += static_cast<double>(v);
        return s;
    }

    double mean() const { return empty() ? 0.0 : sum() / static_cast<double>(size()); }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
        os << "]";
        return os.str();
    }

    static int64_t count(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) {
            check(d >= 0, "Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> t;
        std::vector<U> out(data_.size());
        for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>::from_vector(shape_, std::move(out));
    }

  private:
    std::vector<int> shape_;
    std::vector<T> data_;
};

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) return false;
    return std::equal(a.raw().begin(), a.raw().end(), b.raw().begin());
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    check(a.shape() == b.shape(), "max_abs_diff: shape mismatch");
    double m = 0;
    for (int64_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

}  // namespace atme
