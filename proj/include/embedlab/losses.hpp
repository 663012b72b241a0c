#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "embedlab/network.hpp"
#include "embedlab/rng.hpp"
#include "embedlab/tensor.hpp"

namespace embedlab {

enum class LossKind {
    softmax,
    softmax_normalized,
    cosface,
    center,
    contrastive,
    triplet,
    regression,
};

LossKind parse_loss_kind(const std::string& name);
std::string loss_kind_name(LossKind kind);

/// True for loss families that score through the classifier head; pair,
/// triplet and regression losses shape the embedded space directly and
/// carry no head.
bool loss_uses_head(LossKind kind);

// ---------------------------------------------------------------------------
// Target layouts (regression)
// ---------------------------------------------------------------------------

enum class LayoutKind { raster, circle };

LayoutKind parse_layout_kind(const std::string& name);
std::string layout_kind_name(LayoutKind kind);

/// Fixed per-class coordinates in the embedded space. circle places classes
/// on a radius-`scale` circle (in the xy plane for 3-D); raster places them
/// on a `scale`-spaced grid centered at the origin.
struct TargetLayout {
    LayoutKind kind = LayoutKind::circle;
    Tensor targets;  // M x embed_dim
    double scale = 1.0;
};

TargetLayout make_target_layout(LayoutKind kind, std::size_t num_classes,
                                std::size_t embed_dim, double scale);

// ---------------------------------------------------------------------------
// Loss selection
// ---------------------------------------------------------------------------

/// Loss family plus its hyperparameters. validate() enforces the parameters
/// the selected kind requires and ignores the rest.
struct LossSpec {
    LossKind kind = LossKind::softmax;
    double margin = 0.0;          // cosface additive margin; contrastive/triplet margin
    double scale = 10.0;          // cosface scaling parameter
    double lambda = 0.3;          // center-term weight
    double center_alpha = 0.5;    // center moving-average rate
    bool project_features = false;  // cosface: also emit unit-sphere projected plots
    LayoutKind layout = LayoutKind::circle;
    double layout_scale = 3.0;

    void validate() const;
};

struct LossResult {
    double value = 0.0;
    Tensor grad;  // w.r.t. the op's tensor input
};

// ---------------------------------------------------------------------------
// Classification losses
// ---------------------------------------------------------------------------

/// Mean cross-entropy of row-softmaxed logits at the true class. grad is
/// w.r.t. the logits: (softmax - onehot) / N.
LossResult softmax_loss(const Tensor& logits, const std::vector<std::size_t>& labels);

/// cos(theta_j) per class: rows of z and columns of W are unit-normalized
/// internally, so entries land in [-1, 1]. Caches the normalization state
/// the backward pass needs.
struct CosineLogits {
    Tensor cosines;  // N x M
    Tensor z_unit;   // N x d
    Tensor w_unit;   // d x M
    std::vector<double> z_norms;
    std::vector<double> w_norms;
};

CosineLogits cosine_logits(const ClassifierHead& head, const Tensor& z);

/// Chain rule through cosine_logits, including both normalization Jacobians.
/// Accumulates head.grad_W and returns the gradient w.r.t. z.
Tensor cosine_logits_backward(const CosineLogits& cache, ClassifierHead& head,
                              const Tensor& grad_cosines);

/// Additive angular margin loss on cosine logits:
/// mean of -log[ e^{s(cos y - m)} / (e^{s(cos y - m)} + sum_{j!=y} e^{s cos j}) ].
/// grad is w.r.t. the cosines.
LossResult cosface_loss(const Tensor& cosines, const std::vector<std::size_t>& labels,
                        double margin, double scale);

/// Unit-norm rows; the plot-time hypersphere projection.
Tensor project_to_hypersphere(const Tensor& z);

// ---------------------------------------------------------------------------
// Center loss
// ---------------------------------------------------------------------------

/// Running per-class centers c_y, moved toward batch class means at rate
/// alpha. Gradients never flow through the centers.
struct ClassCenters {
    Tensor centers;  // M x embed_dim
    double alpha = 0.5;
};

ClassCenters make_class_centers(std::size_t num_classes, std::size_t embed_dim, double alpha);

/// The auxiliary term mean of (lambda/2) ||z - c_y||^2; the caller adds it to
/// softmax_loss. grad is w.r.t. z.
LossResult center_loss(const Tensor& z, const std::vector<std::size_t>& labels,
                       const ClassCenters& centers, double lambda);

/// c_y <- c_y - alpha*(c_y - mean of batch members of class y); classes
/// absent from the batch stay unchanged.
void update_centers(ClassCenters& centers, const Tensor& z,
                    const std::vector<std::size_t>& labels);

// ---------------------------------------------------------------------------
// Pairwise / triplet losses
// ---------------------------------------------------------------------------

/// Index pair into a batch; y = 0 same class, 1 different class.
struct IndexPair {
    std::size_t i0;
    std::size_t i1;
    int y;
};

struct PairBatch {
    std::vector<IndexPair> pairs;
    bool single_class = false;  // set when the batch admits no different-class pair
};

/// Draws approximately Y-balanced pairs when both kinds exist; deterministic
/// given the rng state.
PairBatch sample_pairs(const std::vector<std::size_t>& labels, Rng& rng,
                       std::size_t pairs_per_batch);

/// 1/2 (1-Y) d^2 + 1/2 Y max(0, m - d)^2 with d the (unsquared) Euclidean
/// distance, averaged over pairs. grad is w.r.t. the embedding batch.
LossResult contrastive_loss(const Tensor& z, const std::vector<IndexPair>& pairs,
                            double margin);

/// Anchor/positive/negative indices into a batch.
struct TripletSample {
    std::size_t anchor;
    std::size_t positive;
    std::size_t negative;
};

enum class MiningStrategy { random, semi_hard };

MiningStrategy parse_mining_strategy(const std::string& name);

/// random: `count` uniformly drawn valid triplets. semi_hard: one triplet per
/// ordered anchor-positive pair, choosing the hardest negative inside the
/// window d(a,p) < d(a,n) < d(a,p)+m, else the hardest negative overall.
/// Returns an empty list when the batch admits no valid triplet.
std::vector<TripletSample> mine_triplets(const Tensor& z,
                                         const std::vector<std::size_t>& labels,
                                         MiningStrategy strategy, Rng& rng, double margin,
                                         std::size_t count);

/// max(||za-zp||^2 - ||za-zn||^2 + m, 0), averaged over triplets. grad is
/// w.r.t. the embedding batch.
LossResult triplet_loss(const Tensor& z, const std::vector<TripletSample>& triplets,
                        double margin);

// ---------------------------------------------------------------------------
// Regression loss and nearest-point classification
// ---------------------------------------------------------------------------

/// Mean squared Euclidean distance to the true-class target; grad 2(z-t_y)/N.
LossResult regression_loss(const Tensor& z, const std::vector<std::size_t>& labels,
                           const TargetLayout& layout);

/// Index of the reference point (row of an M x d tensor) closest to the
/// rank-1 query; ties go to the smallest index.
std::size_t classify_nearest(const Tensor& z, const Tensor& reference_points);

}  // namespace embedlab
