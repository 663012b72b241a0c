#include "embedlab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "embedlab/error.hpp"

namespace embedlab {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* who) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(who) + ": expected rank-" + std::to_string(rank) +
                             " tensor, got " + t.shape_str());
    }
}

/// Unrolls a CHW image into a (C*KH*KW) x (OH*OW) matrix of sliding windows.
void im2col(const double* in, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kh, std::size_t kw, double* col) {
    const std::size_t oh = height - kh + 1;
    const std::size_t ow = width - kw + 1;
    double* dst = col;
    for (std::size_t c = 0; c < channels; ++c) {
        const double* plane = in + c * height * width;
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const double* src = plane + (oy + ky) * width + kx;
                    for (std::size_t ox = 0; ox < ow; ++ox) *dst++ = src[ox];
                }
            }
        }
    }
}

/// Scatter-adds a (C*KH*KW) x (OH*OW) column matrix back into a CHW image.
void col2im(const double* col, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kh, std::size_t kw, double* out) {
    const std::size_t oh = height - kh + 1;
    const std::size_t ow = width - kw + 1;
    const double* src = col;
    for (std::size_t c = 0; c < channels; ++c) {
        double* plane = out + c * height * width;
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    double* dst = plane + (oy + ky) * width + kx;
                    for (std::size_t ox = 0; ox < ow; ++ox) dst[ox] += src[ox];
                    src += ow;
                }
            }
        }
    }
}

void check_conv_shapes(const Tensor& input, const Tensor& kernels) {
    require_rank(input, 3, "conv2d input");
    require_rank(kernels, 4, "conv2d kernels");
    if (kernels.extent(1) != input.extent(0)) {
        throw DimensionError("conv2d: kernel channels " + kernels.shape_str() +
                             " do not match input " + input.shape_str());
    }
    if (kernels.extent(2) > input.extent(1) || kernels.extent(3) > input.extent(2)) {
        throw DimensionError("conv2d: kernel " + kernels.shape_str() + " exceeds input " +
                             input.shape_str());
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul lhs");
    require_rank(b, 2, "matmul rhs");
    if (a.extent(1) != b.extent(0)) {
        throw DimensionError("matmul: inner extents disagree, " + a.shape_str() + " x " +
                             b.shape_str());
    }
    const std::size_t n = a.extent(0), m = a.extent(1), p = b.extent(1);
    Tensor c({n, p});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    for (std::size_t i = 0; i < n; ++i) {
        double* crow = pc + i * p;
        for (std::size_t k = 0; k < m; ++k) {
            const double aik = pa[i * m + k];
            const double* brow = pb + k * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Tensor matmul_at(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul_at lhs");
    require_rank(b, 2, "matmul_at rhs");
    if (a.extent(0) != b.extent(0)) {
        throw DimensionError("matmul_at: leading extents disagree, " + a.shape_str() + " x " +
                             b.shape_str());
    }
    const std::size_t m = a.extent(0), n = a.extent(1), p = b.extent(1);
    Tensor c({n, p});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    for (std::size_t k = 0; k < m; ++k) {
        const double* arow = pa + k * n;
        const double* brow = pb + k * p;
        for (std::size_t i = 0; i < n; ++i) {
            const double aki = arow[i];
            double* crow = pc + i * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += aki * brow[j];
        }
    }
    return c;
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul_bt lhs");
    require_rank(b, 2, "matmul_bt rhs");
    if (a.extent(1) != b.extent(1)) {
        throw DimensionError("matmul_bt: trailing extents disagree, " + a.shape_str() + " x " +
                             b.shape_str());
    }
    const std::size_t n = a.extent(0), m = a.extent(1), p = b.extent(0);
    Tensor c({n, p});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = pa + i * m;
        for (std::size_t j = 0; j < p; ++j) {
            const double* brow = pb + j * m;
            double acc = 0.0;
            for (std::size_t k = 0; k < m; ++k) acc += arow[k] * brow[k];
            pc[i * p + j] = acc;
        }
    }
    return c;
}

Tensor conv2d(const Tensor& input, const Tensor& kernels) {
    check_conv_shapes(input, kernels);
    const std::size_t c = input.extent(0), h = input.extent(1), w = input.extent(2);
    const std::size_t o = kernels.extent(0), kh = kernels.extent(2), kw = kernels.extent(3);
    const std::size_t oh = h - kh + 1, ow = w - kw + 1;

    Tensor col({c * kh * kw, oh * ow});
    im2col(input.data(), c, h, w, kh, kw, col.data());
    const Tensor kmat = kernels.reshaped({o, c * kh * kw});
    return matmul(kmat, col).reshaped({o, oh, ow});
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernels,
                            const Tensor& grad_output) {
    check_conv_shapes(input, kernels);
    const std::size_t c = input.extent(0), h = input.extent(1), w = input.extent(2);
    const std::size_t o = kernels.extent(0), kh = kernels.extent(2), kw = kernels.extent(3);
    const std::size_t oh = h - kh + 1, ow = w - kw + 1;
    require_rank(grad_output, 3, "conv2d_backward grad");
    if (grad_output.extent(0) != o || grad_output.extent(1) != oh ||
        grad_output.extent(2) != ow) {
        throw DimensionError("conv2d_backward: grad shape " + grad_output.shape_str() +
                             " does not match output " +
                             Tensor::shape_str({o, oh, ow}));
    }

    Tensor col({c * kh * kw, oh * ow});
    im2col(input.data(), c, h, w, kh, kw, col.data());
    const Tensor gmat = grad_output.reshaped({o, oh * ow});
    const Tensor kmat = kernels.reshaped({o, c * kh * kw});

    Conv2dGrads grads;
    grads.kernels = matmul_bt(gmat, col).reshaped({o, c, kh, kw});
    const Tensor dcol = matmul_at(kmat, gmat);  // (c*kh*kw) x (oh*ow)
    grads.input = Tensor({c, h, w});
    col2im(dcol.data(), c, h, w, kh, kw, grads.input.data());
    return grads;
}

MaxPoolResult maxpool2(const Tensor& input) {
    require_rank(input, 3, "maxpool2 input");
    const std::size_t c = input.extent(0), h = input.extent(1), w = input.extent(2);
    if (h % 2 != 0 || w % 2 != 0) {
        throw DimensionError("maxpool2: spatial extents must be even, got " + input.shape_str());
    }
    const std::size_t oh = h / 2, ow = w / 2;
    MaxPoolResult result{Tensor({c, oh, ow}), std::vector<std::uint8_t>(c * oh * ow)};
    const double* in = input.data();
    double* out = result.output.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* plane = in + ch * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const double v[4] = {plane[(2 * oy) * w + 2 * ox],
                                     plane[(2 * oy) * w + 2 * ox + 1],
                                     plane[(2 * oy + 1) * w + 2 * ox],
                                     plane[(2 * oy + 1) * w + 2 * ox + 1]};
                std::uint8_t best = 0;
                for (std::uint8_t i = 1; i < 4; ++i) {
                    if (v[i] > v[best]) best = i;  // strict: ties keep the first index
                }
                const std::size_t flat = (ch * oh + oy) * ow + ox;
                out[flat] = v[best];
                result.mask[flat] = best;
            }
        }
    }
    return result;
}

Tensor maxpool2_backward(const std::vector<std::size_t>& input_shape,
                         const std::vector<std::uint8_t>& mask,
                         const Tensor& grad_output) {
    if (input_shape.size() != 3) {
        throw DimensionError("maxpool2_backward: input shape must be CHW");
    }
    const std::size_t c = input_shape[0], h = input_shape[1], w = input_shape[2];
    const std::size_t oh = h / 2, ow = w / 2;
    if (grad_output.rank() != 3 || grad_output.extent(0) != c || grad_output.extent(1) != oh ||
        grad_output.extent(2) != ow || mask.size() != c * oh * ow) {
        throw DimensionError("maxpool2_backward: grad " + grad_output.shape_str() +
                             " does not match pooled " + Tensor::shape_str({c, oh, ow}));
    }
    Tensor grad_input({c, h, w});
    double* gin = grad_input.data();
    const double* gout = grad_output.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::size_t flat = (ch * oh + oy) * ow + ox;
                const std::uint8_t idx = mask[flat];
                const std::size_t y = 2 * oy + idx / 2;
                const std::size_t x = 2 * ox + idx % 2;
                gin[(ch * h + y) * w + x] += gout[flat];
            }
        }
    }
    return grad_input;
}

Tensor activate(const Tensor& x, Activation kind) {
    Tensor out = x;
    double* p = out.data();
    const std::size_t n = out.size();
    switch (kind) {
        case Activation::linear:
            break;
        case Activation::relu:
            for (std::size_t i = 0; i < n; ++i) p[i] = p[i] > 0.0 ? p[i] : 0.0;
            break;
        case Activation::sigmoid:
            for (std::size_t i = 0; i < n; ++i) p[i] = 1.0 / (1.0 + std::exp(-p[i]));
            break;
        case Activation::selu:
            for (std::size_t i = 0; i < n; ++i) {
                p[i] = p[i] > 0.0 ? kSeluLambda * p[i]
                                  : kSeluLambda * kSeluAlpha * (std::exp(p[i]) - 1.0);
            }
            break;
    }
    return out;
}

Tensor activate_backward(const Tensor& x, Activation kind, const Tensor& grad_output) {
    if (!x.same_shape(grad_output)) {
        throw DimensionError("activate_backward: grad " + grad_output.shape_str() +
                             " does not match input " + x.shape_str());
    }
    Tensor grad = grad_output;
    double* g = grad.data();
    const double* in = x.data();
    const std::size_t n = grad.size();
    switch (kind) {
        case Activation::linear:
            break;
        case Activation::relu:
            for (std::size_t i = 0; i < n; ++i) {
                if (in[i] <= 0.0) g[i] = 0.0;
            }
            break;
        case Activation::sigmoid:
            for (std::size_t i = 0; i < n; ++i) {
                const double s = 1.0 / (1.0 + std::exp(-in[i]));
                g[i] *= s * (1.0 - s);
            }
            break;
        case Activation::selu:
            for (std::size_t i = 0; i < n; ++i) {
                g[i] *= in[i] > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(in[i]);
            }
            break;
    }
    return grad;
}

Activation parse_activation(const std::string& name) {
    if (name == "linear") return Activation::linear;
    if (name == "relu") return Activation::relu;
    if (name == "sigmoid") return Activation::sigmoid;
    if (name == "selu") return Activation::selu;
    throw ConfigError("unknown activation '" + name + "'");
}

std::string activation_name(Activation kind) {
    switch (kind) {
        case Activation::linear: return "linear";
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
        case Activation::selu: return "selu";
    }
    return "linear";
}

Tensor softmax_rows(const Tensor& logits) {
    require_rank(logits, 2, "softmax_rows");
    const std::size_t n = logits.extent(0), m = logits.extent(1);
    Tensor out({n, m});
    const double* in = logits.data();
    double* p = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = in + i * m;
        double* orow = p + i * m;
        double mx = row[0];
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (std::size_t j = 0; j < m; ++j) orow[j] /= sum;
    }
    return out;
}

double l2_norm(const Tensor& v) {
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) acc += v[i] * v[i];
    return std::sqrt(acc);
}

Tensor l2_normalize(const Tensor& v) {
    if (v.rank() != 1) {
        throw DimensionError("l2_normalize: expected rank-1 tensor, got " + v.shape_str());
    }
    const double norm = l2_norm(v);
    if (norm <= 1e-12) {
        throw DegenerateInputError("l2_normalize: vector norm " + std::to_string(norm) +
                                   " is below 1e-12");
    }
    Tensor out = v;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= norm;
    return out;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h) {
    Tensor grad(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = f(probe);
        probe[i] = orig - h;
        const double fm = f(probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

double max_rel_error(const Tensor& analytic, const Tensor& numeric) {
    if (!analytic.same_shape(numeric)) {
        throw DimensionError("max_rel_error: shapes differ, " + analytic.shape_str() + " vs " +
                             numeric.shape_str());
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic[i], n = numeric[i];
        const double denom = std::max({1.0, std::abs(a), std::abs(n)});
        worst = std::max(worst, std::abs(a - n) / denom);
    }
    return worst;
}

}  // namespace embedlab
