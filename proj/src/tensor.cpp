// SPDX-License-Identifier: Apache-2.0

#include "xlmeta/tensor.hpp"

#include <cstdint>
#include <cstring>
#include <sstream>

namespace xlmeta {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    if (s.empty()) os << "scalar";
    os << ')';
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

Tensor Tensor::scalar(double v) {
    return Tensor(Shape{}, std::make_shared<const std::vector<double>>(1, v));
}

Tensor Tensor::zeros(Shape shape) {
    return full(std::move(shape), 0.0);
}

Tensor Tensor::full(Shape shape, double v) {
    std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::make_shared<const std::vector<double>>(n, v));
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size()) {
        throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not hold " +
                                    std::to_string(values.size()) + " values");
    }
    return Tensor(std::move(shape), std::make_shared<const std::vector<double>>(std::move(values)));
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw std::logic_error("tensor: rows() on non-matrix " + shape_str(shape_));
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw std::logic_error("tensor: cols() on non-matrix " + shape_str(shape_));
    return shape_[1];
}

double Tensor::scalar_value() const {
    if (numel() != 1) {
        throw std::logic_error("tensor: scalar_value() on " + shape_str(shape_));
    }
    return (*data_)[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(shape_) + " as " +
                                    shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
}

std::uint64_t tensor_fingerprint(const Tensor& t) {
    std::uint64_t h = 1469598103934665603ull;
    for (double v : t.view()) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffu;
            h *= 1099511628211ull;
        }
    }
    return h;
}

}  // namespace xlmeta
