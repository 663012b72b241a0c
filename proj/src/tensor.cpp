#include "embedlab/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "embedlab/error.hpp"

namespace embedlab {

namespace {

std::size_t checked_numel(const std::vector<std::size_t>& shape) {
    if (shape.empty() || shape.size() > 4) {
        throw DimensionError("tensor rank must be 1..4, got " + std::to_string(shape.size()));
    }
    std::size_t n = 1;
    for (std::size_t e : shape) {
        if (e == 0) throw DimensionError("tensor extents must be positive");
        n *= e;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (checked_numel(shape_) != data_.size()) {
        throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str());
    }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    return Tensor(std::move(shape));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::randn(std::vector<std::size_t> shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = stddev * rng.normal();
    return t;
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
    if (checked_numel(shape) != data_.size()) {
        throw DimensionError("cannot reshape " + shape_str() + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
}

Tensor Tensor::rows(std::size_t begin, std::size_t end) const {
    if (rank() != 2) throw DimensionError("rows() requires rank-2 tensor, got " + shape_str());
    if (begin > end || end > shape_[0]) throw DimensionError("row range out of bounds");
    const std::size_t w = shape_[1];
    std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * w),
                            data_.begin() + static_cast<std::ptrdiff_t>(end * w));
    return Tensor({end - begin, w}, std::move(out));
}

Tensor Tensor::row(std::size_t i) const {
    if (rank() != 2) throw DimensionError("row() requires rank-2 tensor, got " + shape_str());
    if (i >= shape_[0]) throw DimensionError("row index out of bounds");
    const std::size_t w = shape_[1];
    std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(i * w),
                            data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * w));
    return Tensor({w}, std::move(out));
}

void Tensor::fill(double value) {
    std::fill(data_.begin(), data_.end(), value);
}

std::string Tensor::shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    return os.str();
}

}  // namespace embedlab
