#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "embedlab/tensor.hpp"

namespace embedlab {

// ---------------------------------------------------------------------------
// Dense linear algebra
// ---------------------------------------------------------------------------

/// C = A * B for rank-2 tensors; inner extents must agree.
Tensor matmul(const Tensor& a, const Tensor& b);

/// C = A^T * B without materializing the transpose.
Tensor matmul_at(const Tensor& a, const Tensor& b);

/// C = A * B^T without materializing the transpose.
Tensor matmul_bt(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Convolution / pooling
// ---------------------------------------------------------------------------

/// Valid (no padding) stride-1 cross-correlation of a CHW input with OCHW
/// kernels; output is OHW with spatial size input-kernel+1.
Tensor conv2d(const Tensor& input, const Tensor& kernels);

struct Conv2dGrads {
    Tensor input;
    Tensor kernels;
};

/// Gradients of sum(grad_output * conv2d(input, kernels)) w.r.t. both
/// operands.
Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernels,
                            const Tensor& grad_output);

struct MaxPoolResult {
    Tensor output;                   // C x H/2 x W/2
    std::vector<std::uint8_t> mask;  // winning index per window, row-major in-window order
};

/// 2x2 non-overlapping max pooling of a CHW input with even spatial extents.
/// Ties break to the first index in row-major window order, so backward is
/// deterministic.
MaxPoolResult maxpool2(const Tensor& input);

/// Routes grad_output back to the argmax positions recorded in mask.
Tensor maxpool2_backward(const std::vector<std::size_t>& input_shape,
                         const std::vector<std::uint8_t>& mask,
                         const Tensor& grad_output);

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class Activation { linear, relu, sigmoid, selu };

// Standard published SELU constants, full precision.
inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;
inline constexpr double kSeluLambda = 1.0507009873554804934193349852946;

Tensor activate(const Tensor& x, Activation kind);

/// Elementwise chain rule through the activation; x is the pre-activation
/// input that forward saw.
Tensor activate_backward(const Tensor& x, Activation kind, const Tensor& grad_output);

Activation parse_activation(const std::string& name);
std::string activation_name(Activation kind);

// ---------------------------------------------------------------------------
// Normalization / softmax
// ---------------------------------------------------------------------------

/// Row-wise softmax with max-subtraction for overflow safety.
Tensor softmax_rows(const Tensor& logits);

double l2_norm(const Tensor& v);

/// Unit-norm copy of a rank-1 tensor. Near-zero input (norm <= 1e-12) raises
/// DegenerateInputError; the caller decides the fallback.
Tensor l2_normalize(const Tensor& v);

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

/// Central difference (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate. The
/// gradient oracle for every backward test in the toolkit.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h = 1e-5);

/// max over coordinates of |a-n| / max(1, |a|, |n|); the comparison metric
/// used by all gradient checks (absolute below magnitude 1, relative above).
double max_rel_error(const Tensor& analytic, const Tensor& numeric);

}  // namespace embedlab
