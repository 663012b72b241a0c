#include "embedlab/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "embedlab/error.hpp"
#include "embedlab/losses.hpp"
#include "embedlab/network.hpp"
#include "embedlab/ops.hpp"

namespace embedlab {

bool GradCheckReport::all_passed() const {
    return std::all_of(cases.begin(), cases.end(),
                       [](const GradCheckCase& c) { return c.passed; });
}

double GradCheckReport::worst_error() const {
    double worst = 0.0;
    for (const auto& c : cases) worst = std::max(worst, c.max_error);
    return worst;
}

namespace {

constexpr double kTolerance = 1e-4;

/// Per-draw loss context with all stochastic structure (pairs, triplets) and
/// auxiliary state (centers, layout) frozen, so that the loss value is a
/// deterministic, differentiable function of the embeddings and head.
struct FrozenLoss {
    LossKind kind = LossKind::softmax;
    double margin = 0.25;
    double scale = 4.0;
    double lambda = 0.4;
    ClassCenters centers;
    TargetLayout layout;
    std::vector<IndexPair> pairs;
    std::vector<TripletSample> triplets;
};

double frozen_value(const ClassifierHead& head, const Tensor& z,
                    const std::vector<std::size_t>& labels, const FrozenLoss& fl) {
    switch (fl.kind) {
        case LossKind::softmax:
        case LossKind::softmax_normalized:
            return softmax_loss(forward_logits(head, z), labels).value;
        case LossKind::cosface:
            return cosface_loss(cosine_logits(head, z).cosines, labels, fl.margin, fl.scale)
                .value;
        case LossKind::center:
            return softmax_loss(forward_logits(head, z), labels).value +
                   center_loss(z, labels, fl.centers, fl.lambda).value;
        case LossKind::contrastive:
            return contrastive_loss(z, fl.pairs, fl.margin).value;
        case LossKind::triplet:
            return fl.triplets.empty() ? 0.0 : triplet_loss(z, fl.triplets, fl.margin).value;
        case LossKind::regression:
            return regression_loss(z, labels, fl.layout).value;
    }
    throw ValueError("unhandled loss kind in gradient check");
}

/// Analytic gradient w.r.t. z; head gradients accumulate on the head.
Tensor frozen_grad(ClassifierHead& head, const Tensor& z,
                   const std::vector<std::size_t>& labels, const FrozenLoss& fl) {
    switch (fl.kind) {
        case LossKind::softmax:
        case LossKind::softmax_normalized: {
            const LossResult r = softmax_loss(forward_logits(head, z), labels);
            return backward_logits(head, z, r.grad);
        }
        case LossKind::cosface: {
            const CosineLogits cache = cosine_logits(head, z);
            const LossResult r = cosface_loss(cache.cosines, labels, fl.margin, fl.scale);
            return cosine_logits_backward(cache, head, r.grad);
        }
        case LossKind::center: {
            const LossResult soft = softmax_loss(forward_logits(head, z), labels);
            const LossResult cent = center_loss(z, labels, fl.centers, fl.lambda);
            Tensor dz = backward_logits(head, z, soft.grad);
            for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += cent.grad[i];
            return dz;
        }
        case LossKind::contrastive:
            return contrastive_loss(z, fl.pairs, fl.margin).grad;
        case LossKind::triplet:
            return fl.triplets.empty() ? Tensor::zeros(z.shape())
                                       : triplet_loss(z, fl.triplets, fl.margin).grad;
        case LossKind::regression:
            return regression_loss(z, labels, fl.layout).grad;
    }
    throw ValueError("unhandled loss kind in gradient check");
}

const std::array<LossKind, 7> kAllLosses = {
    LossKind::softmax,    LossKind::softmax_normalized, LossKind::cosface, LossKind::center,
    LossKind::contrastive, LossKind::triplet,           LossKind::regression};

/// Labels guaranteeing both valid pairs and valid triplets in every draw.
const std::vector<std::size_t> kLossLabels = {0, 0, 1, 1, 2, 3};

FrozenLoss freeze(LossKind kind, const Tensor& z, const std::vector<std::size_t>& labels,
                  std::size_t num_classes, std::size_t embed_dim, Rng& rng) {
    FrozenLoss fl;
    fl.kind = kind;
    if (kind == LossKind::center) {
        fl.centers = make_class_centers(num_classes, embed_dim, 0.5);
        for (std::size_t i = 0; i < fl.centers.centers.size(); ++i) {
            fl.centers.centers[i] = rng.normal();
        }
    }
    if (kind == LossKind::regression) {
        fl.layout = make_target_layout(LayoutKind::circle, num_classes, embed_dim, 2.0);
    }
    if (kind == LossKind::contrastive) {
        fl.pairs = sample_pairs(labels, rng, labels.size()).pairs;
    }
    if (kind == LossKind::triplet) {
        fl.triplets =
            mine_triplets(z, labels, MiningStrategy::semi_hard, rng, fl.margin, labels.size());
    }
    return fl;
}

void record(GradCheckReport& report, std::size_t index, const std::string& name, double err) {
    if (index >= report.cases.size()) {
        GradCheckCase c;
        c.name = name;
        c.tolerance = kTolerance;
        report.cases.push_back(c);
    }
    GradCheckCase& c = report.cases[index];
    c.max_error = std::max(c.max_error, err);
    c.passed = c.max_error < c.tolerance;
}

}  // namespace

GradCheckReport check_loss_gradients(std::uint64_t seed, std::size_t points) {
    GradCheckReport report;
    const std::size_t batch = kLossLabels.size();
    const std::size_t num_classes = 4;
    const std::size_t embed_dim = 2;

    for (LossKind kind : kAllLosses) {
        Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(kind) + 1));
        const std::size_t base = report.cases.size();
        for (std::size_t point = 0; point < points; ++point) {
            Tensor z({batch, embed_dim});
            for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.normal() * 1.5;
            ClassifierHead head =
                make_classifier_head(embed_dim, num_classes, rng, false);
            const FrozenLoss fl = freeze(kind, z, kLossLabels, num_classes, embed_dim, rng);

            head.zero_grads();
            const Tensor analytic_z = frozen_grad(head, z, kLossLabels, fl);
            const auto value_at = [&](const Tensor& zz) {
                return frozen_value(head, zz, kLossLabels, fl);
            };
            std::size_t slot = base;
            record(report, slot++, loss_kind_name(kind) + "/embedding",
                   max_rel_error(analytic_z, finite_diff_grad(value_at, z)));

            if (loss_uses_head(kind)) {
                const Tensor w_orig = head.W;
                const auto value_at_w = [&](const Tensor& w) {
                    head.W = w;
                    const double v = frozen_value(head, z, kLossLabels, fl);
                    return v;
                };
                const Tensor fd_w = finite_diff_grad(value_at_w, w_orig);
                head.W = w_orig;
                record(report, slot++, loss_kind_name(kind) + "/head.W",
                       max_rel_error(head.grad_W, fd_w));

                const Tensor b_orig = head.b;
                const auto value_at_b = [&](const Tensor& b) {
                    head.b = b;
                    const double v = frozen_value(head, z, kLossLabels, fl);
                    return v;
                };
                const Tensor fd_b = finite_diff_grad(value_at_b, b_orig);
                head.b = b_orig;
                record(report, slot++, loss_kind_name(kind) + "/head.b",
                       max_rel_error(head.grad_b, fd_b));
            }
        }
    }
    return report;
}

GradCheckReport check_network_gradients(std::uint64_t seed, std::size_t points) {
    GradCheckReport report;
    const std::size_t num_classes = 4;
    // Rotating the penultimate activation across the loss families covers
    // every activation backward; the two-conv stack puts a pooling layer in
    // the path.
    const std::array<Activation, 4> penults = {Activation::linear, Activation::sigmoid,
                                               Activation::selu, Activation::relu};

    for (std::size_t li = 0; li < kAllLosses.size(); ++li) {
        const LossKind kind = kAllLosses[li];
        NetworkConfig cfg;
        cfg.input_shape = {1, 8, 8};
        cfg.conv_channels = {2, 3};
        cfg.fc_width = 4;
        cfg.embed_dim = 2;
        cfg.hidden_activation = Activation::relu;
        cfg.penult_activation = penults[li % penults.size()];

        Rng rng(Rng::mix(seed, 0x100 + li));
        Network net = init_network(cfg, num_classes, rng, loss_uses_head(kind));
        if (kind == LossKind::softmax_normalized || kind == LossKind::cosface) {
            net.head.normalized = true;
            renormalize_classifier(net.head);
        }

        const std::size_t base = report.cases.size();
        for (std::size_t point = 0; point < points; ++point) {
            Tensor x({3, 1, 8, 8});
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal() * 0.8;
            const std::vector<std::size_t> labels = {0, 0, 1};

            // Nudge parameters so each draw probes a different point in
            // parameter space as well as input space.
            std::vector<Param> params = net.extractor.params();
            if (net.has_head) {
                params.push_back({"head.W", &net.head.W, &net.head.grad_W});
                params.push_back({"head.b", &net.head.b, &net.head.grad_b});
            }
            for (auto& p : params) {
                for (std::size_t i = 0; i < p.value->size(); ++i) {
                    (*p.value)[i] += 0.05 * rng.normal();
                }
            }

            const Tensor z0 = net.extractor.forward(x);
            const FrozenLoss fl = freeze(kind, z0, labels, num_classes, cfg.embed_dim, rng);

            net.extractor.zero_grads();
            if (net.has_head) net.head.zero_grads();
            const Tensor z = net.extractor.forward(x);
            const Tensor dz = frozen_grad(net.head, z, labels, fl);
            net.extractor.backward(dz);

            const auto loss_at_current = [&]() {
                return frozen_value(net.head, net.extractor.forward(x), labels, fl);
            };
            std::size_t slot = base;
            for (auto& p : params) {
                const Tensor original = *p.value;
                const auto value_at = [&](const Tensor& v) {
                    *p.value = v;
                    return loss_at_current();
                };
                const Tensor fd = finite_diff_grad(value_at, original);
                *p.value = original;
                record(report, slot++, loss_kind_name(kind) + "/" + p.name,
                       max_rel_error(*p.grad, fd));
            }
        }
    }
    return report;
}

GradCheckReport run_gradcheck(const std::string& scope, std::uint64_t seed,
                              std::size_t points) {
    GradCheckReport report;
    if (scope == "losses" || scope == "all") {
        GradCheckReport part = check_loss_gradients(seed, points);
        for (auto& c : part.cases) report.cases.push_back(std::move(c));
    }
    if (scope == "network" || scope == "all") {
        GradCheckReport part = check_network_gradients(seed, points);
        for (auto& c : part.cases) report.cases.push_back(std::move(c));
    }
    if (report.cases.empty()) {
        throw ValueError("unknown gradient-check scope '" + scope +
                         "' (expected losses, network, or all)");
    }
    return report;
}

std::string format_gradcheck(const GradCheckReport& report) {
    std::string out;
    std::size_t passed = 0;
    for (const auto& c : report.cases) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-40s max_err=%.3e  tol=%.0e  %s\n",
                      c.name.c_str(), c.max_error, c.tolerance, c.passed ? "PASS" : "FAIL");
        out += line;
        if (c.passed) ++passed;
    }
    char tail[96];
    std::snprintf(tail, sizeof(tail), "gradient check: %zu/%zu comparisons passed (worst %.3e)\n",
                  passed, report.cases.size(), report.worst_error());
    out += tail;
    return out;
}

}  // namespace embedlab
