#include "embedlab/network.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "embedlab/error.hpp"

namespace embedlab {

void NetworkConfig::validate() const {
    if (input_shape.size() != 3) {
        throw ConfigError("network input_shape must be CHW, got " +
                          Tensor::shape_str(input_shape));
    }
    if (embed_dim != 2 && embed_dim != 3) {
        throw ConfigError("embed_dim must be 2 or 3, got " + std::to_string(embed_dim));
    }
    if (conv_channels.empty()) throw ConfigError("conv_channels must be nonempty");
    if (fc_width == 0) throw ConfigError("fc_width must be positive");
    if (hidden_activation != Activation::relu && hidden_activation != Activation::selu) {
        throw ConfigError("hidden_activation must be relu or selu");
    }
}

std::vector<std::vector<std::size_t>> compute_feature_shapes(const NetworkConfig& cfg) {
    cfg.validate();
    std::vector<std::vector<std::size_t>> shapes;
    std::size_t c = cfg.input_shape[0], h = cfg.input_shape[1], w = cfg.input_shape[2];
    shapes.push_back({c, h, w});
    const std::size_t k = 3;
    for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
        if (h < k || w < k) {
            throw ConfigError("shape chain infeasible: stage " + std::to_string(i) +
                              " input " + Tensor::shape_str({c, h, w}) +
                              " is smaller than the 3x3 kernel");
        }
        c = cfg.conv_channels[i];
        h -= k - 1;
        w -= k - 1;
        shapes.push_back({c, h, w});
        const bool pooled = i + 1 < cfg.conv_channels.size();
        if (pooled) {
            h = (h - h % 2) / 2;
            w = (w - w % 2) / 2;
            if (h == 0 || w == 0) {
                throw ConfigError("shape chain infeasible: pool after stage " +
                                  std::to_string(i) + " empties the feature map");
            }
            shapes.push_back({c, h, w});
        }
    }
    shapes.push_back({c * h * w});
    return shapes;
}

namespace {

class Conv2dLayer : public Layer {
public:
    Conv2dLayer(std::size_t in_channels, std::size_t out_channels, Rng& rng, std::string name)
        : name_(std::move(name)),
          kernels_(Tensor::randn({out_channels, in_channels, 3, 3}, rng,
                                 std::sqrt(2.0 / static_cast<double>(in_channels * 9)))),
          bias_(Tensor::zeros({out_channels})),
          grad_kernels_(kernels_.shape()),
          grad_bias_(bias_.shape()) {}

    Tensor forward(const Tensor& input) override {
        if (input.rank() != 4 || input.extent(1) != kernels_.extent(1)) {
            throw DimensionError(name_ + ": batch " + input.shape_str() +
                                 " does not match kernels " + kernels_.shape_str());
        }
        cached_input_ = input;
        has_cache_ = true;
        const std::size_t n = input.extent(0);
        const std::size_t o = kernels_.extent(0);
        const std::size_t oh = input.extent(2) - 2, ow = input.extent(3) - 2;
        Tensor out({n, o, oh, ow});
        const std::size_t sample_in = input.size() / n;
        const std::size_t sample_out = o * oh * ow;
        for (std::size_t i = 0; i < n; ++i) {
            Tensor sample({input.extent(1), input.extent(2), input.extent(3)},
                          std::vector<double>(input.data() + i * sample_in,
                                              input.data() + (i + 1) * sample_in));
            Tensor y = conv2d(sample, kernels_);
            double* dst = out.data() + i * sample_out;
            const double* src = y.data();
            for (std::size_t oc = 0; oc < o; ++oc) {
                const double bias = bias_[oc];
                for (std::size_t px = 0; px < oh * ow; ++px) {
                    dst[oc * oh * ow + px] = src[oc * oh * ow + px] + bias;
                }
            }
        }
        return out;
    }

    Tensor backward(const Tensor& grad_output) override {
        if (!has_cache_) throw StateError(name_ + ": backward before forward");
        const Tensor& input = cached_input_;
        const std::size_t n = input.extent(0);
        const std::size_t o = kernels_.extent(0);
        const std::size_t oh = input.extent(2) - 2, ow = input.extent(3) - 2;
        Tensor grad_input(input.shape());
        const std::size_t sample_in = input.size() / n;
        const std::size_t sample_out = o * oh * ow;
        for (std::size_t i = 0; i < n; ++i) {
            Tensor sample({input.extent(1), input.extent(2), input.extent(3)},
                          std::vector<double>(input.data() + i * sample_in,
                                              input.data() + (i + 1) * sample_in));
            Tensor gout({o, oh, ow},
                        std::vector<double>(grad_output.data() + i * sample_out,
                                            grad_output.data() + (i + 1) * sample_out));
            Conv2dGrads grads = conv2d_backward(sample, kernels_, gout);
            for (std::size_t j = 0; j < grad_kernels_.size(); ++j) {
                grad_kernels_[j] += grads.kernels[j];
            }
            for (std::size_t oc = 0; oc < o; ++oc) {
                double acc = 0.0;
                const double* g = gout.data() + oc * oh * ow;
                for (std::size_t px = 0; px < oh * ow; ++px) acc += g[px];
                grad_bias_[oc] += acc;
            }
            std::memcpy(grad_input.data() + i * sample_in, grads.input.data(),
                        sample_in * sizeof(double));
        }
        return grad_input;
    }

    std::vector<Param> params() override {
        return {{name_ + ".kernels", &kernels_, &grad_kernels_},
                {name_ + ".bias", &bias_, &grad_bias_}};
    }

    std::string describe() const override { return name_; }

private:
    std::string name_;
    Tensor kernels_, bias_, grad_kernels_, grad_bias_;
    Tensor cached_input_;
    bool has_cache_ = false;
};

class ActivationLayer : public Layer {
public:
    ActivationLayer(Activation kind, std::string name) : name_(std::move(name)), kind_(kind) {}

    Tensor forward(const Tensor& input) override {
        cached_input_ = input;
        has_cache_ = true;
        return activate(input, kind_);
    }

    Tensor backward(const Tensor& grad_output) override {
        if (!has_cache_) throw StateError(name_ + ": backward before forward");
        return activate_backward(cached_input_, kind_, grad_output);
    }

    std::string describe() const override { return name_; }

private:
    std::string name_;
    Activation kind_;
    Tensor cached_input_;
    bool has_cache_ = false;
};

// 2x2 max pooling over a batch. Odd spatial extents are cropped to even
// first; backward routes nothing into the dropped row/column.
class MaxPoolLayer : public Layer {
public:
    explicit MaxPoolLayer(std::string name) : name_(std::move(name)) {}

    Tensor forward(const Tensor& input) override {
        if (input.rank() != 4) {
            throw DimensionError(name_ + ": expected NCHW batch, got " + input.shape_str());
        }
        in_shape_ = {input.extent(1), input.extent(2), input.extent(3)};
        const std::size_t c = in_shape_[0], h = in_shape_[1], w = in_shape_[2];
        const std::size_t ch = h - h % 2, cw = w - w % 2;
        const std::size_t oh = ch / 2, ow = cw / 2;
        const std::size_t n = input.extent(0);
        Tensor out({n, c, oh, ow});
        masks_.assign(n, {});
        const std::size_t sample_in = c * h * w;
        for (std::size_t i = 0; i < n; ++i) {
            Tensor cropped = crop(input.data() + i * sample_in, c, h, w, ch, cw);
            MaxPoolResult pooled = maxpool2(cropped);
            std::memcpy(out.data() + i * c * oh * ow, pooled.output.data(),
                        c * oh * ow * sizeof(double));
            masks_[i] = std::move(pooled.mask);
        }
        has_cache_ = true;
        return out;
    }

    Tensor backward(const Tensor& grad_output) override {
        if (!has_cache_) throw StateError(name_ + ": backward before forward");
        const std::size_t c = in_shape_[0], h = in_shape_[1], w = in_shape_[2];
        const std::size_t ch = h - h % 2, cw = w - w % 2;
        const std::size_t oh = ch / 2, ow = cw / 2;
        const std::size_t n = grad_output.extent(0);
        Tensor grad_input({n, c, h, w});
        for (std::size_t i = 0; i < n; ++i) {
            Tensor gout({c, oh, ow},
                        std::vector<double>(grad_output.data() + i * c * oh * ow,
                                            grad_output.data() + (i + 1) * c * oh * ow));
            Tensor gcrop = maxpool2_backward({c, ch, cw}, masks_[i], gout);
            double* dst = grad_input.data() + i * c * h * w;
            for (std::size_t cc = 0; cc < c; ++cc) {
                for (std::size_t y = 0; y < ch; ++y) {
                    std::memcpy(dst + (cc * h + y) * w, gcrop.data() + (cc * ch + y) * cw,
                                cw * sizeof(double));
                }
            }
        }
        return grad_input;
    }

    std::string describe() const override { return name_; }

private:
    static Tensor crop(const double* src, std::size_t c, std::size_t h, std::size_t w,
                       std::size_t ch, std::size_t cw) {
        Tensor out({c, ch, cw});
        for (std::size_t cc = 0; cc < c; ++cc) {
            for (std::size_t y = 0; y < ch; ++y) {
                std::memcpy(out.data() + (cc * ch + y) * cw, src + (cc * h + y) * w,
                            cw * sizeof(double));
            }
        }
        return out;
    }

    std::string name_;
    std::vector<std::size_t> in_shape_;
    std::vector<std::vector<std::uint8_t>> masks_;
    bool has_cache_ = false;
};

class FlattenLayer : public Layer {
public:
    explicit FlattenLayer(std::string name) : name_(std::move(name)) {}

    Tensor forward(const Tensor& input) override {
        in_shape_ = input.shape();
        has_cache_ = true;
        return input.reshaped({input.extent(0), input.size() / input.extent(0)});
    }

    Tensor backward(const Tensor& grad_output) override {
        if (!has_cache_) throw StateError(name_ + ": backward before forward");
        return grad_output.reshaped(in_shape_);
    }

    std::string describe() const override { return name_; }

private:
    std::string name_;
    std::vector<std::size_t> in_shape_;
    bool has_cache_ = false;
};

class DenseLayer : public Layer {
public:
    DenseLayer(std::size_t in_width, std::size_t out_width, Rng& rng, std::string name)
        : name_(std::move(name)),
          weights_(Tensor::randn({in_width, out_width}, rng,
                                 std::sqrt(2.0 / static_cast<double>(in_width)))),
          bias_(Tensor::zeros({out_width})),
          grad_weights_(weights_.shape()),
          grad_bias_(bias_.shape()) {}

    Tensor forward(const Tensor& input) override {
        if (input.rank() != 2 || input.extent(1) != weights_.extent(0)) {
            throw DimensionError(name_ + ": batch " + input.shape_str() +
                                 " does not match weights " + weights_.shape_str());
        }
        cached_input_ = input;
        has_cache_ = true;
        Tensor out = matmul(input, weights_);
        const std::size_t n = out.extent(0), m = out.extent(1);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) out.at(i, j) += bias_[j];
        }
        return out;
    }

    Tensor backward(const Tensor& grad_output) override {
        if (!has_cache_) throw StateError(name_ + ": backward before forward");
        Tensor dw = matmul_at(cached_input_, grad_output);
        for (std::size_t i = 0; i < dw.size(); ++i) grad_weights_[i] += dw[i];
        const std::size_t n = grad_output.extent(0), m = grad_output.extent(1);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) grad_bias_[j] += grad_output.at(i, j);
        }
        return matmul_bt(grad_output, weights_);
    }

    std::vector<Param> params() override {
        return {{name_ + ".weights", &weights_, &grad_weights_},
                {name_ + ".bias", &bias_, &grad_bias_}};
    }

    std::string describe() const override { return name_; }

private:
    std::string name_;
    Tensor weights_, bias_, grad_weights_, grad_bias_;
    Tensor cached_input_;
    bool has_cache_ = false;
};

}  // namespace

FeatureExtractor::FeatureExtractor(const NetworkConfig& cfg, Rng& rng) : cfg_(cfg) {
    const auto shapes = compute_feature_shapes(cfg_);
    std::size_t in_channels = cfg_.input_shape[0];
    for (std::size_t i = 0; i < cfg_.conv_channels.size(); ++i) {
        const std::string idx = std::to_string(i + 1);
        layers_.push_back(std::make_unique<Conv2dLayer>(in_channels, cfg_.conv_channels[i], rng,
                                                        "conv" + idx));
        layers_.push_back(
            std::make_unique<ActivationLayer>(cfg_.hidden_activation, "act" + idx));
        if (i + 1 < cfg_.conv_channels.size()) {
            layers_.push_back(std::make_unique<MaxPoolLayer>("pool" + idx));
        }
        in_channels = cfg_.conv_channels[i];
    }
    layers_.push_back(std::make_unique<FlattenLayer>("flatten"));
    const std::size_t flat = shapes.back()[0];
    layers_.push_back(std::make_unique<DenseLayer>(flat, cfg_.fc_width, rng, "fc1"));
    layers_.push_back(std::make_unique<ActivationLayer>(cfg_.hidden_activation, "fc1_act"));
    layers_.push_back(std::make_unique<DenseLayer>(cfg_.fc_width, cfg_.embed_dim, rng, "fc2"));
    layers_.push_back(
        std::make_unique<ActivationLayer>(cfg_.penult_activation, "penult_act"));
}

Tensor FeatureExtractor::forward(const Tensor& batch) {
    if (batch.rank() != 4 || batch.extent(1) != cfg_.input_shape[0] ||
        batch.extent(2) != cfg_.input_shape[1] || batch.extent(3) != cfg_.input_shape[2]) {
        throw DimensionError("forward: batch " + batch.shape_str() +
                             " does not match configured input " +
                             Tensor::shape_str(cfg_.input_shape));
    }
    Tensor x = batch;
    for (auto& layer : layers_) x = layer->forward(x);
    forward_done_ = true;
    return x;
}

Tensor FeatureExtractor::backward(const Tensor& grad_embeddings) {
    if (!forward_done_) throw StateError("extractor backward before forward");
    Tensor g = grad_embeddings;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
}

void FeatureExtractor::zero_grads() {
    for (auto& layer : layers_) {
        for (auto& p : layer->params()) p.grad->fill(0.0);
    }
}

std::vector<Param> FeatureExtractor::params() {
    std::vector<Param> out;
    for (auto& layer : layers_) {
        for (auto& p : layer->params()) out.push_back(p);
    }
    return out;
}

void ClassifierHead::zero_grads() {
    grad_W.fill(0.0);
    grad_b.fill(0.0);
}

ClassifierHead make_classifier_head(std::size_t embed_dim, std::size_t num_classes, Rng& rng,
                                    bool normalized) {
    ClassifierHead head;
    head.W = Tensor::randn({embed_dim, num_classes}, rng,
                           std::sqrt(2.0 / static_cast<double>(embed_dim)));
    head.b = Tensor::zeros({num_classes});
    head.normalized = normalized;
    head.grad_W = Tensor::zeros(head.W.shape());
    head.grad_b = Tensor::zeros(head.b.shape());
    if (normalized) renormalize_classifier(head);
    return head;
}

Tensor forward_logits(const ClassifierHead& head, const Tensor& z) {
    if (z.rank() != 2 || z.extent(1) != head.W.extent(0)) {
        throw DimensionError("forward_logits: embeddings " + z.shape_str() +
                             " do not match head " + head.W.shape_str());
    }
    Tensor logits = matmul(z, head.W);
    const std::size_t n = logits.extent(0), m = logits.extent(1);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) logits.at(i, j) += head.b[j];
    }
    return logits;
}

Tensor backward_logits(ClassifierHead& head, const Tensor& z, const Tensor& grad_logits) {
    if (z.rank() != 2 || grad_logits.rank() != 2 || z.extent(0) != grad_logits.extent(0) ||
        z.extent(1) != head.W.extent(0) || grad_logits.extent(1) != head.W.extent(1)) {
        throw DimensionError("backward_logits: embeddings " + z.shape_str() +
                             " do not match grad " + grad_logits.shape_str());
    }
    Tensor dW = matmul_at(z, grad_logits);
    for (std::size_t i = 0; i < dW.size(); ++i) head.grad_W[i] += dW[i];
    const std::size_t n = grad_logits.extent(0), m = grad_logits.extent(1);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) head.grad_b[j] += grad_logits.at(i, j);
    }
    return matmul_bt(grad_logits, head.W);
}

void renormalize_classifier(ClassifierHead& head) {
    const std::size_t d = head.W.extent(0), m = head.W.extent(1);
    for (std::size_t j = 0; j < m; ++j) {
        double norm = 0.0;
        for (std::size_t i = 0; i < d; ++i) norm += head.W.at(i, j) * head.W.at(i, j);
        norm = std::sqrt(norm);
        if (norm <= 1e-12) {
            throw DegenerateInputError("renormalize_classifier: column " + std::to_string(j) +
                                       " has near-zero norm");
        }
        for (std::size_t i = 0; i < d; ++i) head.W.at(i, j) /= norm;
    }
    head.b.fill(0.0);
}

Network init_network(const NetworkConfig& cfg, std::size_t num_classes, Rng& rng,
                     bool with_head) {
    cfg.validate();
    Network net{FeatureExtractor(cfg, rng), ClassifierHead{}, with_head};
    if (with_head) {
        net.head = make_classifier_head(cfg.embed_dim, num_classes, rng, false);
    }
    return net;
}

// ---------------------------------------------------------------------------
// Checkpoint io
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f64(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) {
        if (pos + n > buf.size()) {
            throw FormatError(std::string("checkpoint truncated while reading ") + what);
        }
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        }
        pos += 4;
        return v;
    }

    double f64(const char* what) {
        need(8, what);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) {
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i]))
                    << (8 * i);
        }
        pos += 8;
        double d;
        std::memcpy(&d, &bits, sizeof(d));
        return d;
    }
};

constexpr char kMagic[4] = {'E', 'M', 'B', 'L'};
constexpr std::uint32_t kFormatVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_text,
                     const std::vector<const Tensor*>& tensors) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(config_text.size()));
    out.append(config_text);
    for (const Tensor* t : tensors) {
        put_u32(out, static_cast<std::uint32_t>(t->rank()));
        for (std::size_t d = 0; d < t->rank(); ++d) {
            put_u32(out, static_cast<std::uint32_t>(t->extent(d)));
        }
        for (std::size_t i = 0; i < t->size(); ++i) put_f64(out, (*t)[i]);
    }
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot open checkpoint for writing: " + path);
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw IoError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

    ByteReader r{buf};
    r.need(4, "magic");
    if (std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw FormatError("bad checkpoint magic in " + path);
    }
    r.pos = 4;
    const std::uint32_t version = r.u32("version");
    if (version != kFormatVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint32_t cfg_len = r.u32("config length");
    r.need(cfg_len, "config text");
    Checkpoint ckpt;
    ckpt.config_text = buf.substr(r.pos, cfg_len);
    r.pos += cfg_len;

    while (r.pos < buf.size()) {
        const std::uint32_t rank = r.u32("tensor rank");
        if (rank < 1 || rank > 4) {
            throw FormatError("checkpoint tensor rank " + std::to_string(rank) +
                              " out of range");
        }
        std::vector<std::size_t> shape(rank);
        std::size_t count = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape[d] = r.u32("tensor extent");
            count *= shape[d];
        }
        Tensor t(shape);
        for (std::size_t i = 0; i < count; ++i) t[i] = r.f64("tensor data");
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

}  // namespace embedlab
