#include "seslr/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace seslr {

size_t numel(const Shape& shape) {
    size_t n = 1;
    for (size_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    data_.assign(numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_))
        throw std::invalid_argument("Tensor: data size " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_str(shape_));
}

size_t Tensor::extent(size_t axis) const {
    if (axis >= shape_.size()) throw std::out_of_range("Tensor::extent: axis out of range");
    return shape_[axis];
}

Tensor Tensor::reshaped(Shape new_shape) const {
    if (numel(new_shape) != data_.size())
        throw std::invalid_argument("Tensor::reshaped: element count mismatch " + shape_str(shape_) +
                                    " -> " + shape_str(new_shape));
    Tensor out;
    out.shape_ = std::move(new_shape);
    out.data_ = data_;
    return out;
}

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

void Tensor::check_finite(const char* where) const {
    if (!all_finite()) throw std::runtime_error(std::string(where) + ": non-finite value in tensor");
}

bool is_binary(const Tensor& t) {
    for (double x : t.vec())
        if (x != 0.0 && x != 1.0) return false;
    return true;
}

SpikeTensor SpikeTensor::from_tensor(Tensor t) {
    if (!is_binary(t)) throw std::invalid_argument("SpikeTensor: element is not exactly 0 or 1");
    return SpikeTensor(std::move(t));
}

SpikeTensor SpikeTensor::from_binary_unchecked(Tensor t) {
    return SpikeTensor(std::move(t));
}

SpikeTensor SpikeTensor::zeros(Shape shape) {
    return SpikeTensor(Tensor(std::move(shape), 0.0));
}

}  // namespace seslr
