#pragma once

#include <memory>
#include <string>
#include <vector>

#include "embedlab/ops.hpp"
#include "embedlab/rng.hpp"
#include "embedlab/tensor.hpp"

namespace embedlab {

/// Architecture of the reference CNN: a stack of 3x3 valid convolutions with
/// 2x2 pooling between them, a hidden dense layer, and a dense projection
/// into the embedded space with a configurable penultimate activation.
struct NetworkConfig {
    std::vector<std::size_t> input_shape;                  // CHW
    std::vector<std::size_t> conv_channels = {32, 64, 128};
    std::size_t fc_width = 256;
    std::size_t embed_dim = 2;
    Activation penult_activation = Activation::linear;
    Activation hidden_activation = Activation::relu;

    void validate() const;
};

/// Named parameter tensor with its paired gradient buffer.
struct Param {
    std::string name;
    Tensor* value;
    Tensor* grad;
};

/// One stage of the feature extractor. forward caches what backward needs;
/// backward accumulates parameter gradients and returns the input gradient.
class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& input) = 0;
    virtual Tensor backward(const Tensor& grad_output) = 0;
    virtual std::vector<Param> params() { return {}; }
    virtual std::string describe() const = 0;
};

/// Per-stage CHW shapes of the conv/pool pipeline, ending with the flattened
/// width. Throws ConfigError when the chain is infeasible for the input size.
/// Odd extents entering a pool stage are cropped to even (last row/column
/// dropped) before the 2x2 window is applied.
std::vector<std::vector<std::size_t>> compute_feature_shapes(const NetworkConfig& cfg);

/// Input -> embedded space mapping: all layers up to and including the
/// penultimate activation.
class FeatureExtractor {
public:
    FeatureExtractor(const NetworkConfig& cfg, Rng& rng);

    /// Batch NCHW in, N x embed_dim out. Caches intermediates for backward.
    Tensor forward(const Tensor& batch);

    /// Accumulates parameter gradients from the upstream embedding gradient;
    /// returns the gradient w.r.t. the input batch.
    Tensor backward(const Tensor& grad_embeddings);

    void zero_grads();
    std::vector<Param> params();
    const NetworkConfig& config() const { return cfg_; }

private:
    NetworkConfig cfg_;
    std::vector<std::unique_ptr<Layer>> layers_;
    bool forward_done_ = false;
};

/// Final linear classification layer: column j of W and entry j of b score
/// class j. When normalized is set the training loop re-unit-norms the
/// columns and zeroes b after every optimizer step.
struct ClassifierHead {
    Tensor W;  // embed_dim x M
    Tensor b;  // M
    bool normalized = false;
    Tensor grad_W;
    Tensor grad_b;

    std::size_t num_classes() const { return b.size(); }
    std::size_t embed_dim() const { return W.extent(0); }
    void zero_grads();
};

ClassifierHead make_classifier_head(std::size_t embed_dim, std::size_t num_classes, Rng& rng,
                                    bool normalized);

/// Affine class scores z*W + b for a batch of embeddings (N x embed_dim).
Tensor forward_logits(const ClassifierHead& head, const Tensor& z);

/// Chain rule through forward_logits: accumulates grad_W/grad_b on the head
/// and returns the gradient w.r.t. z.
Tensor backward_logits(ClassifierHead& head, const Tensor& z, const Tensor& grad_logits);

/// Forces every weight column to unit norm and b to exactly zero. Raises
/// DegenerateInputError when a column norm is below 1e-12.
void renormalize_classifier(ClassifierHead& head);

/// Feature extractor plus optional classifier head. Pair/triplet/regression
/// losses operate on the embedded space directly and carry no head.
struct Network {
    FeatureExtractor extractor;
    ClassifierHead head;
    bool has_head = false;
};

Network init_network(const NetworkConfig& cfg, std::size_t num_classes, Rng& rng,
                     bool with_head);

// ---------------------------------------------------------------------------
// Checkpoint container: "EMBL" magic, u32 format version, length-prefixed
// UTF-8 config text, then each tensor as (rank u32, extents u32..., f64
// little-endian data). Round-trips bit-exactly.
// ---------------------------------------------------------------------------

struct Checkpoint {
    std::string config_text;
    std::vector<Tensor> tensors;
};

void save_checkpoint(const std::string& path, const std::string& config_text,
                     const std::vector<const Tensor*>& tensors);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace embedlab
