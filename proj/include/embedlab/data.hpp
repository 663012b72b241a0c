#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "embedlab/rng.hpp"
#include "embedlab/tensor.hpp"

namespace embedlab {

/// Immutable labeled image collection. Pixel values live in [0,1]; grayscale
/// sets are C=1 so one conv stack serves every dataset.
struct Dataset {
    Tensor images;  // N x C x H x W
    std::vector<std::size_t> labels;
    std::vector<std::string> class_names;
    std::string name;  // mnist | fashion_mnist | cifar10

    std::size_t size() const { return labels.size(); }
    std::size_t num_classes() const { return class_names.size(); }

    /// Checks the structural invariants: image/label counts agree, labels in
    /// range, pixels in [0,1]. Loaders call this before returning.
    void validate() const;

    /// New dataset holding the given sample indices, in order.
    Dataset subset(const std::vector<std::size_t>& indices) const;
};

/// How an epoch is cut into batches. Pair/triplet losses need intra-batch
/// structure, hence the batch_size >= 2 floor.
struct BatchPlan {
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    bool drop_last = false;
};

struct Batch {
    Tensor images;  // B x C x H x W
    std::vector<std::size_t> labels;
};

// ---------------------------------------------------------------------------
// IDX (MNIST-family) binary format. Big-endian; image magic 0x00000803,
// label magic 0x00000801. Gzip-compressed files are detected by the 0x1f8b
// leading bytes and inflated transparently.
// ---------------------------------------------------------------------------

Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Writes a dataset as an IDX image/label file pair, quantizing pixels to u8
/// (round(v*255)). With gzip set, both files are gzip-compressed.
void write_idx(const Dataset& ds, const std::string& images_path,
               const std::string& labels_path, bool gzip = false);

// ---------------------------------------------------------------------------
// CIFAR-10 binary batches: 3073-byte records, 1 label byte + 3072 pixel
// bytes in R,G,B planes of 32x32 row-major.
// ---------------------------------------------------------------------------

Dataset load_cifar10(const std::vector<std::string>& batch_paths);

void write_cifar10(const Dataset& ds, const std::string& path);

// ---------------------------------------------------------------------------
// Splitting / batching
// ---------------------------------------------------------------------------

/// Disjoint, exhaustive, seed-deterministic split; the first part holds
/// round(train_fraction * N) samples.
std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, Rng& rng);

/// The batches of one epoch. Sample order is a fresh permutation seeded by
/// (plan.seed, epoch); every sample appears exactly once, except the tail
/// when drop_last is set.
std::vector<Batch> batches(const Dataset& ds, const BatchPlan& plan, std::uint64_t epoch);

// ---------------------------------------------------------------------------
// Synthetic fixtures. Offline stand-ins shaped like the real datasets, used
// by tests and by runs in environments without the originals: dot-matrix
// digit glyphs with jitter and noise (MNIST-shaped, 1x28x28) and colored
// blob images (CIFAR-shaped, 3x32x32).
// ---------------------------------------------------------------------------

Dataset synthetic_digits(std::size_t count, Rng& rng);
Dataset synthetic_color_blobs(std::size_t count, Rng& rng);

// ---------------------------------------------------------------------------
// Name-based loading
// ---------------------------------------------------------------------------

/// Loads `name` from its standard filenames under root (IDX pairs for the
/// MNIST family, data_batch_*.bin / test_batch.bin for cifar10), picking the
/// train or test files. Gzip variants (.gz suffix) are found automatically.
Dataset load_dataset(const std::string& name, const std::string& root, bool train_split);

/// Class-name table for a dataset name; throws ConfigError for unknown names.
std::vector<std::string> dataset_class_names(const std::string& name);

}  // namespace embedlab
