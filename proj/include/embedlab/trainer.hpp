#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "embedlab/data.hpp"
#include "embedlab/losses.hpp"
#include "embedlab/network.hpp"
#include "embedlab/rng.hpp"
#include "embedlab/tensor.hpp"

namespace embedlab {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct OptimizerConfig {
    enum class Kind { sgd_momentum, adam };
    Kind kind = Kind::adam;
    double lr = 1e-3;
    double momentum = 0.9;  // sgd_momentum only
    // Bias-corrected Adam constants.
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const;
};

OptimizerConfig::Kind parse_optimizer_kind(const std::string& name);
std::string optimizer_kind_name(OptimizerConfig::Kind kind);

/// Everything one training run needs. Parsed from a plain-text key-value file
/// with section-prefixed keys (`loss.margin = 0.2`); unknown keys are errors.
struct TrainConfig {
    LossSpec loss;
    NetworkConfig network;  // input_shape is filled from the dataset at train time
    OptimizerConfig optimizer;
    MiningStrategy mining = MiningStrategy::semi_hard;  // triplet only
    std::size_t pairs_per_batch = 0;                    // contrastive; 0 -> batch_size

    std::size_t epochs = 10;
    std::size_t batch_size = 64;
    std::uint64_t seed = 42;

    std::string dataset = "mnist";
    std::string data_root;          // empty -> $EMBEDLAB_DATA_DIR
    std::size_t train_limit = 0;    // keep only the first N train samples; 0 = all
    std::size_t test_limit = 0;
    std::size_t num_classes = 0;    // resolved from the dataset at train time; 0 until then

    std::string out_dir = "out";

    void validate() const;
};

TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);

/// Canonical key-value rendering; parse_train_config(serialize_train_config(c))
/// reproduces c. Embedded in checkpoints so they are self-describing.
std::string serialize_train_config(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Optimizers. State slots are allocated on first use and keyed by parameter
// order, which is fixed for a given network.
// ---------------------------------------------------------------------------

struct OptimizerState {
    std::vector<Tensor> velocity;  // sgd_momentum
    std::vector<Tensor> m, v;      // adam moments
    std::size_t t = 0;             // adam step counter
};

/// v <- momentum*v - lr*g; p <- p + v. Throws ValueError naming the parameter
/// on a non-finite gradient.
void step_sgd(const std::vector<Param>& params, OptimizerState& state, double lr,
              double momentum);

/// Bias-corrected Adam step; same non-finite contract as step_sgd.
void step_adam(const std::vector<Param>& params, OptimizerState& state,
               const OptimizerConfig& cfg);

/// Scales all gradients by max_norm/norm when their joint global norm exceeds
/// max_norm. Returns the pre-clip norm.
double clip_gradients(const std::vector<Param>& params, double max_norm);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct Centroids {
    Tensor mean;                      // M x d; rows of absent classes are zero
    std::vector<std::size_t> counts;  // per-class sample counts
};

Centroids class_centroids(const Tensor& points, const std::vector<std::size_t>& labels,
                          std::size_t num_classes);

struct EmbeddingStats {
    double intra_class_variance;  // mean over present classes of mean squared
                                  // distance to the class centroid
    double inter_class_distance;  // mean pairwise distance between present
                                  // class centroids
};

EmbeddingStats embedding_stats(const Tensor& points, const std::vector<std::size_t>& labels,
                               std::size_t num_classes);

/// Fraction of rows whose nearest reference row index equals their label.
/// `active` masks which reference rows may be chosen (empty = all).
double nearest_reference_accuracy(const Tensor& points,
                                  const std::vector<std::size_t>& labels,
                                  const Tensor& references,
                                  const std::vector<std::size_t>& active = {});

/// Per-loss inference inputs: the classifier head covers the softmax family,
/// reference points cover regression (targets) and contrastive/triplet
/// (train-set centroids).
struct EvalContext {
    LossKind kind = LossKind::softmax;
    const Tensor* reference_points = nullptr;       // M x d when used
    const std::vector<std::size_t>* active = nullptr;  // optional reference mask
};

struct EvalResult {
    double accuracy = 0.0;
    EmbeddingStats stats{0.0, 0.0};
    Tensor embeddings;  // N x embed_dim
};

/// Forwards every sample through the extractor in fixed-size chunks;
/// N x embed_dim, deterministic.
Tensor embed_points(FeatureExtractor& extractor, const Dataset& ds);

/// Embeds the dataset in deterministic chunks and scores it with the
/// loss-appropriate rule.
EvalResult evaluate(Network& net, const Dataset& ds, const EvalContext& ctx);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double test_accuracy = 0.0;
    double intra_class_variance = 0.0;
    double inter_class_distance = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::string checkpoint_file;  // filename relative to the output directory
    double wall_seconds = 0.0;    // in-memory diagnostic; never serialized, so
                                  // reports stay bit-identical across reruns
};

/// One epoch record per line in fixed field order, then the checkpoint line.
std::string serialize_report(const TrainReport& report);

/// A trained model restored from (or produced by) a run: network parameters
/// plus whichever auxiliary state the loss family needs at inference time.
struct TrainedModel {
    TrainConfig cfg;
    Network net;
    ClassCenters centers;     // center loss
    Tensor reference_points;  // regression targets or train centroids; empty otherwise
    bool has_centers = false;
    bool has_references = false;
};

struct TrainOutcome {
    TrainReport report;
    TrainedModel model;
};

/// Runs the full loop on train/test sets already in memory: per-batch forward,
/// loss, backward, clip (global norm 10), optimizer step, per-loss upkeep
/// (head renormalization, center updates), per-epoch metrics. Deterministic
/// given cfg.seed. Writes checkpoint.bin and report.txt under cfg.out_dir.
TrainOutcome train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& test_set);

/// Dataset root used by config-driven runs: cfg.data_root when set, else
/// $EMBEDLAB_DATA_DIR; neither -> ConfigError.
std::string resolve_data_root(const TrainConfig& cfg);

/// Loads the dataset split named by cfg from resolve_data_root(cfg) with the
/// matching train/test sample limit applied.
Dataset load_config_dataset(const TrainConfig& cfg, bool train_split);

/// Loads the datasets named by cfg (from cfg.data_root or $EMBEDLAB_DATA_DIR),
/// applies train/test limits, then trains.
TrainOutcome train_from_config(const TrainConfig& cfg);

TrainedModel load_trained_model(const std::string& checkpoint_path);

/// The global-norm threshold applied to every step's gradients.
inline constexpr double kGradClipNorm = 10.0;

}  // namespace embedlab
