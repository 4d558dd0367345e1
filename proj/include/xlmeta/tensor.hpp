// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xlmeta {

// Shape convention: {} scalar, {n} vector, {m, n} row-major matrix.
using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Immutable dense double array. Storage is frozen at construction and may be
// shared between tensors (reshape is zero-copy).
class Tensor {
public:
    Tensor() : shape_{}, data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

    static Tensor scalar(double v);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor from_vector(Shape shape, std::vector<double> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_->size(); }

    // Rank-2 accessors.
    std::size_t rows() const;
    std::size_t cols() const;

    const double* data() const { return data_->data(); }
    std::span<const double> view() const { return {data_->data(), data_->size()}; }

    double at(std::size_t i) const { return (*data_)[i]; }
    double at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }

    // Requires numel() == 1.
    double scalar_value() const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    // Shares storage; count must match.
    Tensor reshaped(Shape shape) const;

private:
    Tensor(Shape shape, std::shared_ptr<const std::vector<double>> data)
        : shape_(std::move(shape)), data_(std::move(data)) {}

    Shape shape_;
    std::shared_ptr<const std::vector<double>> data_;
};

// FNV-1a over the raw bytes; used by tests to assert values never mutate.
std::uint64_t tensor_fingerprint(const Tensor& t);

}  // namespace xlmeta
