#include "embedlab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "embedlab/error.hpp"
#include "embedlab/ops.hpp"

namespace embedlab {

namespace {

void check_labels(const std::vector<std::size_t>& labels, std::size_t count,
                  std::size_t num_classes, const char* who) {
    if (labels.size() != count) {
        throw DimensionError(std::string(who) + ": " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(count) + " samples");
    }
    for (std::size_t y : labels) {
        if (y >= num_classes) {
            throw ValueError(std::string(who) + ": label " + std::to_string(y) +
                             " out of range [0, " + std::to_string(num_classes) + ")");
        }
    }
}

double squared_distance(const double* a, const double* b, std::size_t d) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = a[i] - b[i];
        acc += diff * diff;
    }
    return acc;
}

}  // namespace

LossKind parse_loss_kind(const std::string& name) {
    if (name == "softmax") return LossKind::softmax;
    if (name == "softmax_normalized") return LossKind::softmax_normalized;
    if (name == "cosface") return LossKind::cosface;
    if (name == "center") return LossKind::center;
    if (name == "contrastive") return LossKind::contrastive;
    if (name == "triplet") return LossKind::triplet;
    if (name == "regression") return LossKind::regression;
    throw ConfigError("unknown loss kind '" + name + "'");
}

std::string loss_kind_name(LossKind kind) {
    switch (kind) {
        case LossKind::softmax: return "softmax";
        case LossKind::softmax_normalized: return "softmax_normalized";
        case LossKind::cosface: return "cosface";
        case LossKind::center: return "center";
        case LossKind::contrastive: return "contrastive";
        case LossKind::triplet: return "triplet";
        case LossKind::regression: return "regression";
    }
    return "softmax";
}

bool loss_uses_head(LossKind kind) {
    switch (kind) {
        case LossKind::softmax:
        case LossKind::softmax_normalized:
        case LossKind::cosface:
        case LossKind::center:
            return true;
        case LossKind::contrastive:
        case LossKind::triplet:
        case LossKind::regression:
            return false;
    }
    return false;
}

LayoutKind parse_layout_kind(const std::string& name) {
    if (name == "raster") return LayoutKind::raster;
    if (name == "circle") return LayoutKind::circle;
    throw ConfigError("unknown target layout '" + name + "'");
}

std::string layout_kind_name(LayoutKind kind) {
    return kind == LayoutKind::raster ? "raster" : "circle";
}

void LossSpec::validate() const {
    switch (kind) {
        case LossKind::cosface:
            if (scale <= 0.0) throw ConfigError("cosface scale s must be positive");
            if (margin < 0.0) throw ConfigError("cosface margin must be nonnegative");
            if (margin >= 2.0) {
                throw ConfigError("cosface margin " + std::to_string(margin) +
                                  " exceeds the cosine range");
            }
            break;
        case LossKind::center:
            if (lambda < 0.0) throw ConfigError("center lambda must be nonnegative");
            if (center_alpha <= 0.0 || center_alpha > 1.0) {
                throw ConfigError("center alpha must be in (0, 1]");
            }
            break;
        case LossKind::contrastive:
            if (margin <= 0.0) throw ConfigError("contrastive margin must be positive");
            break;
        case LossKind::triplet:
            if (margin < 0.0) throw ConfigError("triplet margin must be nonnegative");
            break;
        case LossKind::regression:
            if (layout_scale <= 0.0) throw ConfigError("layout scale must be positive");
            break;
        case LossKind::softmax:
        case LossKind::softmax_normalized:
            break;
    }
}

TargetLayout make_target_layout(LayoutKind kind, std::size_t num_classes,
                                std::size_t embed_dim, double scale) {
    if (num_classes < 2) throw ConfigError("target layout needs at least 2 classes");
    if (embed_dim != 2 && embed_dim != 3) {
        throw ConfigError("target layout requires embed_dim 2 or 3");
    }
    if (scale <= 0.0) throw ConfigError("target layout scale must be positive");

    TargetLayout layout;
    layout.kind = kind;
    layout.scale = scale;
    layout.targets = Tensor::zeros({num_classes, embed_dim});

    if (kind == LayoutKind::circle) {
        const double two_pi = 6.283185307179586476925286766559;
        for (std::size_t j = 0; j < num_classes; ++j) {
            const double angle = two_pi * static_cast<double>(j) /
                                 static_cast<double>(num_classes);
            layout.targets.at(j, 0) = scale * std::cos(angle);
            layout.targets.at(j, 1) = scale * std::sin(angle);
        }
    } else if (embed_dim == 2) {
        const auto cols = static_cast<std::size_t>(
            std::ceil(std::sqrt(static_cast<double>(num_classes))));
        const std::size_t rows = (num_classes + cols - 1) / cols;
        for (std::size_t j = 0; j < num_classes; ++j) {
            const std::size_t r = j / cols, c = j % cols;
            layout.targets.at(j, 0) =
                scale * (static_cast<double>(c) - static_cast<double>(cols - 1) / 2.0);
            layout.targets.at(j, 1) =
                scale * (static_cast<double>(rows - 1) / 2.0 - static_cast<double>(r));
        }
    } else {
        // cubic grid, row-major over (x fastest, then y, then z)
        const auto side = static_cast<std::size_t>(
            std::ceil(std::cbrt(static_cast<double>(num_classes))));
        for (std::size_t j = 0; j < num_classes; ++j) {
            const std::size_t x = j % side, y = (j / side) % side, zc = j / (side * side);
            layout.targets.at(j, 0) =
                scale * (static_cast<double>(x) - static_cast<double>(side - 1) / 2.0);
            layout.targets.at(j, 1) =
                scale * (static_cast<double>(y) - static_cast<double>(side - 1) / 2.0);
            layout.targets.at(j, 2) =
                scale * (static_cast<double>(zc) - static_cast<double>(side - 1) / 2.0);
        }
    }
    return layout;
}

LossResult softmax_loss(const Tensor& logits, const std::vector<std::size_t>& labels) {
    if (logits.rank() != 2) {
        throw DimensionError("softmax_loss: logits must be rank-2, got " + logits.shape_str());
    }
    const std::size_t n = logits.extent(0), m = logits.extent(1);
    check_labels(labels, n, m, "softmax_loss");

    const Tensor probs = softmax_rows(logits);
    LossResult result;
    result.grad = probs;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = probs.at(i, labels[i]);
        // p is strictly positive by construction of softmax_rows
        total += -std::log(p);
        result.grad.at(i, labels[i]) -= 1.0;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < result.grad.size(); ++i) result.grad[i] *= inv_n;
    result.value = total * inv_n;
    return result;
}

CosineLogits cosine_logits(const ClassifierHead& head, const Tensor& z) {
    if (z.rank() != 2 || z.extent(1) != head.W.extent(0)) {
        throw DimensionError("cosine_logits: embeddings " + z.shape_str() +
                             " do not match head " + head.W.shape_str());
    }
    const std::size_t n = z.extent(0), d = z.extent(1), m = head.W.extent(1);

    CosineLogits out;
    out.z_unit = z;
    out.z_norms.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        for (std::size_t k = 0; k < d; ++k) norm += z.at(i, k) * z.at(i, k);
        norm = std::sqrt(norm);
        if (norm <= 1e-12) {
            throw DegenerateInputError("cosine_logits: embedding row " + std::to_string(i) +
                                       " has near-zero norm");
        }
        out.z_norms[i] = norm;
        for (std::size_t k = 0; k < d; ++k) out.z_unit.at(i, k) /= norm;
    }

    out.w_unit = head.W;
    out.w_norms.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
        double norm = 0.0;
        for (std::size_t k = 0; k < d; ++k) norm += head.W.at(k, j) * head.W.at(k, j);
        norm = std::sqrt(norm);
        if (norm <= 1e-12) {
            throw DegenerateInputError("cosine_logits: weight column " + std::to_string(j) +
                                       " has near-zero norm");
        }
        out.w_norms[j] = norm;
        for (std::size_t k = 0; k < d; ++k) out.w_unit.at(k, j) /= norm;
    }

    out.cosines = matmul(out.z_unit, out.w_unit);
    return out;
}

Tensor cosine_logits_backward(const CosineLogits& cache, ClassifierHead& head,
                              const Tensor& grad_cosines) {
    const std::size_t n = cache.z_unit.extent(0), d = cache.z_unit.extent(1);
    const std::size_t m = cache.w_unit.extent(1);
    if (grad_cosines.rank() != 2 || grad_cosines.extent(0) != n ||
        grad_cosines.extent(1) != m) {
        throw DimensionError("cosine_logits_backward: grad " + grad_cosines.shape_str() +
                             " does not match cosines " + cache.cosines.shape_str());
    }

    // d cos/d z through the row normalization: project out the radial part.
    const Tensor dz_unit = matmul_bt(grad_cosines, cache.w_unit);
    Tensor grad_z({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        double radial = 0.0;
        for (std::size_t k = 0; k < d; ++k) radial += dz_unit.at(i, k) * cache.z_unit.at(i, k);
        for (std::size_t k = 0; k < d; ++k) {
            grad_z.at(i, k) =
                (dz_unit.at(i, k) - radial * cache.z_unit.at(i, k)) / cache.z_norms[i];
        }
    }

    // Same treatment for the weight columns.
    const Tensor dw_unit = matmul_at(cache.z_unit, grad_cosines);  // d x m
    for (std::size_t j = 0; j < m; ++j) {
        double radial = 0.0;
        for (std::size_t k = 0; k < d; ++k) radial += dw_unit.at(k, j) * cache.w_unit.at(k, j);
        for (std::size_t k = 0; k < d; ++k) {
            head.grad_W.at(k, j) +=
                (dw_unit.at(k, j) - radial * cache.w_unit.at(k, j)) / cache.w_norms[j];
        }
    }
    return grad_z;
}

LossResult cosface_loss(const Tensor& cosines, const std::vector<std::size_t>& labels,
                        double margin, double scale) {
    if (cosines.rank() != 2) {
        throw DimensionError("cosface_loss: cosines must be rank-2, got " +
                             cosines.shape_str());
    }
    if (scale <= 0.0) throw ConfigError("cosface_loss: scale must be positive");
    if (margin < 0.0) throw ConfigError("cosface_loss: margin must be nonnegative");
    if (margin >= 2.0) {
        throw ConfigError("cosface_loss: margin " + std::to_string(margin) +
                          " exceeds the cosine range");
    }
    const std::size_t n = cosines.extent(0), m = cosines.extent(1);
    check_labels(labels, n, m, "cosface_loss");

    // Shift the true-class cosine by the margin, scale, then softmax.
    Tensor adjusted = cosines;
    for (std::size_t i = 0; i < n; ++i) adjusted.at(i, labels[i]) -= margin;
    for (std::size_t i = 0; i < adjusted.size(); ++i) adjusted[i] *= scale;

    const Tensor probs = softmax_rows(adjusted);
    LossResult result;
    result.grad = probs;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        total += -std::log(probs.at(i, labels[i]));
        result.grad.at(i, labels[i]) -= 1.0;
    }
    const double factor = scale / static_cast<double>(n);
    for (std::size_t i = 0; i < result.grad.size(); ++i) result.grad[i] *= factor;
    result.value = total / static_cast<double>(n);
    return result;
}

Tensor project_to_hypersphere(const Tensor& z) {
    if (z.rank() != 2) {
        throw DimensionError("project_to_hypersphere: expected rank-2, got " + z.shape_str());
    }
    Tensor out = z;
    const std::size_t n = z.extent(0), d = z.extent(1);
    for (std::size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        for (std::size_t k = 0; k < d; ++k) norm += out.at(i, k) * out.at(i, k);
        norm = std::sqrt(norm);
        if (norm <= 1e-12) {
            throw DegenerateInputError("project_to_hypersphere: row " + std::to_string(i) +
                                       " has near-zero norm");
        }
        for (std::size_t k = 0; k < d; ++k) out.at(i, k) /= norm;
    }
    return out;
}

ClassCenters make_class_centers(std::size_t num_classes, std::size_t embed_dim,
                                double alpha) {
    if (alpha <= 0.0 || alpha > 1.0) throw ConfigError("center alpha must be in (0, 1]");
    return ClassCenters{Tensor::zeros({num_classes, embed_dim}), alpha};
}

LossResult center_loss(const Tensor& z, const std::vector<std::size_t>& labels,
                       const ClassCenters& centers, double lambda) {
    if (z.rank() != 2 || z.extent(1) != centers.centers.extent(1)) {
        throw DimensionError("center_loss: embeddings " + z.shape_str() +
                             " do not match centers " + centers.centers.shape_str());
    }
    const std::size_t n = z.extent(0), d = z.extent(1);
    check_labels(labels, n, centers.centers.extent(0), "center_loss");

    LossResult result;
    result.grad = Tensor::zeros(z.shape());
    const double inv_n = 1.0 / static_cast<double>(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = labels[i];
        double sq = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            const double diff = z.at(i, k) - centers.centers.at(y, k);
            sq += diff * diff;
            result.grad.at(i, k) = lambda * diff * inv_n;
        }
        total += 0.5 * lambda * sq;
    }
    result.value = total * inv_n;
    return result;
}

void update_centers(ClassCenters& centers, const Tensor& z,
                    const std::vector<std::size_t>& labels) {
    const std::size_t m = centers.centers.extent(0), d = centers.centers.extent(1);
    check_labels(labels, z.extent(0), m, "update_centers");

    std::vector<double> sums(m * d, 0.0);
    std::vector<std::size_t> counts(m, 0);
    for (std::size_t i = 0; i < z.extent(0); ++i) {
        const std::size_t y = labels[i];
        ++counts[y];
        for (std::size_t k = 0; k < d; ++k) sums[y * d + k] += z.at(i, k);
    }
    for (std::size_t y = 0; y < m; ++y) {
        if (counts[y] == 0) continue;
        for (std::size_t k = 0; k < d; ++k) {
            const double mean = sums[y * d + k] / static_cast<double>(counts[y]);
            centers.centers.at(y, k) -=
                centers.alpha * (centers.centers.at(y, k) - mean);
        }
    }
}

PairBatch sample_pairs(const std::vector<std::size_t>& labels, Rng& rng,
                       std::size_t pairs_per_batch) {
    const std::size_t n = labels.size();
    if (n < 2) throw ValueError("sample_pairs: batch size must be at least 2");

    // Group indices by class to draw same-class pairs uniformly.
    const std::size_t num_classes = 1 + *std::max_element(labels.begin(), labels.end());
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(i);

    std::size_t same_pair_count = 0;
    for (const auto& group : by_class) {
        same_pair_count += group.size() * (group.size() - 1) / 2;
    }
    std::size_t populated = 0;
    for (const auto& group : by_class) populated += group.empty() ? 0 : 1;
    const bool has_same = same_pair_count > 0;
    const bool has_diff = populated > 1;

    PairBatch batch;
    batch.single_class = !has_diff;
    if (!has_same && !has_diff) return batch;  // n >= 2 guarantees at least one kind

    for (std::size_t p = 0; p < pairs_per_batch; ++p) {
        int want_diff;
        if (!has_diff) {
            want_diff = 0;
        } else if (!has_same) {
            want_diff = 1;
        } else {
            want_diff = rng.uniform() < 0.5 ? 0 : 1;
        }
        if (want_diff == 0) {
            // class weighted by its number of unordered pairs
            std::size_t ticket = rng.uniform_int(same_pair_count);
            std::size_t cls = 0;
            for (; cls < num_classes; ++cls) {
                const std::size_t w = by_class[cls].size() * (by_class[cls].size() - 1) / 2;
                if (ticket < w) break;
                ticket -= w;
            }
            const auto& group = by_class[cls];
            const std::size_t a = rng.uniform_int(group.size());
            std::size_t b = rng.uniform_int(group.size() - 1);
            if (b >= a) ++b;
            batch.pairs.push_back({group[a], group[b], 0});
        } else {
            const std::size_t i = rng.uniform_int(n);
            std::size_t j = rng.uniform_int(n);
            while (labels[j] == labels[i]) j = rng.uniform_int(n);
            batch.pairs.push_back({i, j, 1});
        }
    }
    return batch;
}

LossResult contrastive_loss(const Tensor& z, const std::vector<IndexPair>& pairs,
                            double margin) {
    if (z.rank() != 2) {
        throw DimensionError("contrastive_loss: embeddings must be rank-2, got " +
                             z.shape_str());
    }
    if (margin <= 0.0) throw ConfigError("contrastive_loss: margin must be positive");
    const std::size_t d = z.extent(1);

    LossResult result;
    result.grad = Tensor::zeros(z.shape());
    if (pairs.empty()) return result;

    const double inv_p = 1.0 / static_cast<double>(pairs.size());
    double total = 0.0;
    for (const IndexPair& pair : pairs) {
        const double* a = z.data() + pair.i0 * d;
        const double* b = z.data() + pair.i1 * d;
        double* ga = result.grad.data() + pair.i0 * d;
        double* gb = result.grad.data() + pair.i1 * d;
        const double dist_sq = squared_distance(a, b, d);
        if (pair.y == 0) {
            total += 0.5 * dist_sq;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = a[k] - b[k];
                ga[k] += diff * inv_p;
                gb[k] -= diff * inv_p;
            }
        } else {
            const double dist = std::sqrt(dist_sq);
            const double gap = margin - dist;
            if (gap > 0.0) {
                total += 0.5 * gap * gap;
                // d/dz0 of (m-d)^2/2 = -(m-d) * (z0-z1)/d; the coincident-pair
                // direction is undefined, treated as zero subgradient.
                if (dist > 1e-12) {
                    const double coeff = -gap / dist * inv_p;
                    for (std::size_t k = 0; k < d; ++k) {
                        const double diff = a[k] - b[k];
                        ga[k] += coeff * diff;
                        gb[k] -= coeff * diff;
                    }
                }
            }
        }
    }
    result.value = total * inv_p;
    return result;
}

MiningStrategy parse_mining_strategy(const std::string& name) {
    if (name == "random") return MiningStrategy::random;
    if (name == "semi_hard") return MiningStrategy::semi_hard;
    throw ConfigError("unknown mining strategy '" + name + "'");
}

std::vector<TripletSample> mine_triplets(const Tensor& z,
                                         const std::vector<std::size_t>& labels,
                                         MiningStrategy strategy, Rng& rng, double margin,
                                         std::size_t count) {
    if (z.rank() != 2 || z.extent(0) != labels.size()) {
        throw DimensionError("mine_triplets: embeddings " + z.shape_str() + " vs " +
                             std::to_string(labels.size()) + " labels");
    }
    const std::size_t n = labels.size();
    const std::size_t d = z.extent(1);

    std::vector<std::size_t> anchors;  // indices whose class has another member
    std::vector<std::size_t> class_count;
    {
        const std::size_t num_classes =
            n == 0 ? 0 : 1 + *std::max_element(labels.begin(), labels.end());
        class_count.assign(num_classes, 0);
        for (std::size_t y : labels) ++class_count[y];
        for (std::size_t i = 0; i < n; ++i) {
            if (class_count[labels[i]] >= 2 && class_count[labels[i]] < n) {
                anchors.push_back(i);
            }
        }
    }
    std::vector<TripletSample> out;
    if (anchors.empty()) return out;  // no valid triplet; caller skips the step

    if (strategy == MiningStrategy::random) {
        for (std::size_t t = 0; t < count; ++t) {
            const std::size_t a = anchors[rng.uniform_int(anchors.size())];
            std::size_t p = rng.uniform_int(n);
            while (p == a || labels[p] != labels[a]) p = rng.uniform_int(n);
            std::size_t neg = rng.uniform_int(n);
            while (labels[neg] == labels[a]) neg = rng.uniform_int(n);
            out.push_back({a, p, neg});
        }
        return out;
    }

    // semi_hard: deterministic scan over ordered anchor-positive pairs.
    for (std::size_t a = 0; a < n; ++a) {
        if (class_count[labels[a]] < 2 || class_count[labels[a]] == n) continue;
        const double* za = z.data() + a * d;
        for (std::size_t p = 0; p < n; ++p) {
            if (p == a || labels[p] != labels[a]) continue;
            const double dap = std::sqrt(squared_distance(za, z.data() + p * d, d));
            std::size_t best_window = n, best_any = n;
            double best_window_dist = std::numeric_limits<double>::infinity();
            double best_any_dist = std::numeric_limits<double>::infinity();
            for (std::size_t neg = 0; neg < n; ++neg) {
                if (labels[neg] == labels[a]) continue;
                const double dan = std::sqrt(squared_distance(za, z.data() + neg * d, d));
                if (dan < best_any_dist) {
                    best_any_dist = dan;
                    best_any = neg;
                }
                if (dan > dap && dan < dap + margin && dan < best_window_dist) {
                    best_window_dist = dan;
                    best_window = neg;
                }
            }
            const std::size_t chosen = best_window != n ? best_window : best_any;
            out.push_back({a, p, chosen});
        }
    }
    return out;
}

LossResult triplet_loss(const Tensor& z, const std::vector<TripletSample>& triplets,
                        double margin) {
    if (z.rank() != 2) {
        throw DimensionError("triplet_loss: embeddings must be rank-2, got " + z.shape_str());
    }
    if (margin < 0.0) throw ConfigError("triplet_loss: margin must be nonnegative");
    const std::size_t d = z.extent(1);

    LossResult result;
    result.grad = Tensor::zeros(z.shape());
    if (triplets.empty()) return result;

    const double inv_t = 1.0 / static_cast<double>(triplets.size());
    double total = 0.0;
    for (const TripletSample& t : triplets) {
        const double* za = z.data() + t.anchor * d;
        const double* zp = z.data() + t.positive * d;
        const double* zn = z.data() + t.negative * d;
        const double pos_sq = squared_distance(za, zp, d);
        const double neg_sq = squared_distance(za, zn, d);
        const double hinge = pos_sq - neg_sq + margin;
        if (hinge <= 0.0) continue;
        total += hinge;
        double* ga = result.grad.data() + t.anchor * d;
        double* gp = result.grad.data() + t.positive * d;
        double* gn = result.grad.data() + t.negative * d;
        for (std::size_t k = 0; k < d; ++k) {
            ga[k] += 2.0 * (zn[k] - zp[k]) * inv_t;
            gp[k] += 2.0 * (zp[k] - za[k]) * inv_t;
            gn[k] += 2.0 * (za[k] - zn[k]) * inv_t;
        }
    }
    result.value = total * inv_t;
    return result;
}

LossResult regression_loss(const Tensor& z, const std::vector<std::size_t>& labels,
                           const TargetLayout& layout) {
    if (z.rank() != 2 || z.extent(1) != layout.targets.extent(1)) {
        throw DimensionError("regression_loss: embeddings " + z.shape_str() +
                             " do not match targets " + layout.targets.shape_str());
    }
    const std::size_t n = z.extent(0), d = z.extent(1);
    check_labels(labels, n, layout.targets.extent(0), "regression_loss");

    LossResult result;
    result.grad = Tensor::zeros(z.shape());
    const double inv_n = 1.0 / static_cast<double>(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = labels[i];
        for (std::size_t k = 0; k < d; ++k) {
            const double diff = z.at(i, k) - layout.targets.at(y, k);
            total += diff * diff;
            result.grad.at(i, k) = 2.0 * diff * inv_n;
        }
    }
    result.value = total * inv_n;
    return result;
}

std::size_t classify_nearest(const Tensor& z, const Tensor& reference_points) {
    if (z.rank() != 1 || reference_points.rank() != 2 ||
        z.size() != reference_points.extent(1)) {
        throw DimensionError("classify_nearest: query " + z.shape_str() +
                             " does not match references " + reference_points.shape_str());
    }
    const std::size_t m = reference_points.extent(0), d = z.size();
    std::size_t best = 0;
    double best_sq = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
        const double sq = squared_distance(z.data(), reference_points.data() + j * d, d);
        if (sq < best_sq) {  // strict: ties keep the smallest index
            best_sq = sq;
            best = j;
        }
    }
    return best;
}

}  // namespace embedlab
