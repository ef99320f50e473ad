#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace seslr {

using Shape = std::vector<size_t>;

size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles. All activations, parameters and
/// features in the library are carried by this type.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    const Shape& shape() const { return shape_; }
    size_t size() const { return data_.size(); }
    size_t rank() const { return shape_.size(); }
    size_t extent(size_t axis) const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    bool empty() const { return data_.empty(); }
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    /// Same data, new shape; element counts must agree.
    Tensor reshaped(Shape new_shape) const;

    void fill(double v);
    bool all_finite() const;
    /// Throws std::runtime_error naming `where` if any element is NaN/Inf.
    void check_finite(const char* where) const;

private:
    Shape shape_;
    std::vector<double> data_;
};

bool is_binary(const Tensor& t);

/// Tensor whose elements are exactly 0 or 1 (spike trains, binary latents).
class SpikeTensor {
public:
    SpikeTensor() = default;

    /// Validates that every element is exactly 0.0 or 1.0.
    static SpikeTensor from_tensor(Tensor t);
    /// Wraps without scanning; caller guarantees binary contents.
    static SpikeTensor from_binary_unchecked(Tensor t);
    static SpikeTensor zeros(Shape shape);

    const Tensor& values() const { return t_; }
    const Shape& shape() const { return t_.shape(); }
    size_t size() const { return t_.size(); }
    bool bit(size_t i) const { return t_[i] != 0.0; }

private:
    explicit SpikeTensor(Tensor t) : t_(std::move(t)) {}
    Tensor t_;
};

}  // namespace seslr
