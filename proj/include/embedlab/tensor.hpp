#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "embedlab/rng.hpp"

namespace embedlab {

/// Dense row-major tensor of 64-bit floats, rank 1 to 4. The single value
/// carrier for images, activations, parameters and gradients.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double value);
    /// I.i.d. normal(0, stddev) entries, drawn in flat index order.
    static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev = 1.0);
    static Tensor identity(std::size_t n);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t dim) const { return shape_[dim]; }
    std::size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Rank-checked multi-index access for non-hot-path code. Hot kernels
    // index raw data() directly.
    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    double at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    /// Same data, new shape; element count must match.
    Tensor reshaped(std::vector<std::size_t> shape) const;

    /// Copy of rows [begin, end) of a rank-2 tensor.
    Tensor rows(std::size_t begin, std::size_t end) const;

    /// Copy of row i of a rank-2 tensor, as rank-1.
    Tensor row(std::size_t i) const;

    void fill(double value);

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    /// "3x4x2" rendering for error messages.
    static std::string shape_str(const std::vector<std::size_t>& shape);
    std::string shape_str() const { return shape_str(shape_); }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

}  // namespace embedlab
