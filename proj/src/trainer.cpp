#include "embedlab/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "embedlab/error.hpp"
#include "embedlab/ops.hpp"

namespace embedlab {

namespace {

std::string read_text_file(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open '" + path + "' for reading");
    std::fseek(f, 0, SEEK_END);
    const long size = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::string bytes(size > 0 ? static_cast<std::size_t>(size) : 0, '\0');
    const std::size_t got = bytes.empty() ? 0 : std::fread(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    if (got != bytes.size()) throw IoError("short read on '" + path + "'");
    return bytes;
}

void write_text_file(const std::string& path, const std::string& bytes) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    const std::size_t put = std::fwrite(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    if (put != bytes.size()) throw IoError("short write on '" + path + "'");
}

// %.17g: shortest decimal that round-trips an IEEE double exactly.
std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + value + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true") return true;
    if (value == "0" || value == "false") return false;
    throw ConfigError(key + ": expected 0/1/true/false, got '" + value + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value) {
    std::vector<std::size_t> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw ConfigError(key + ": empty entry in '" + value + "'");
        out.push_back(static_cast<std::size_t>(parse_u64(key, item)));
    }
    if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
    return out;
}

std::string size_list_str(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

void apply_config_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "loss.kind") cfg.loss.kind = parse_loss_kind(value);
    else if (key == "loss.margin") cfg.loss.margin = parse_double(key, value);
    else if (key == "loss.scale") cfg.loss.scale = parse_double(key, value);
    else if (key == "loss.lambda") cfg.loss.lambda = parse_double(key, value);
    else if (key == "loss.center_alpha") cfg.loss.center_alpha = parse_double(key, value);
    else if (key == "loss.project_features") cfg.loss.project_features = parse_bool(key, value);
    else if (key == "loss.layout") cfg.loss.layout = parse_layout_kind(value);
    else if (key == "loss.layout_scale") cfg.loss.layout_scale = parse_double(key, value);
    else if (key == "loss.mining") cfg.mining = parse_mining_strategy(value);
    else if (key == "loss.pairs_per_batch")
        cfg.pairs_per_batch = static_cast<std::size_t>(parse_u64(key, value));
    else if (key == "network.input_shape") cfg.network.input_shape = parse_size_list(key, value);
    else if (key == "network.conv_channels")
        cfg.network.conv_channels = parse_size_list(key, value);
    else if (key == "network.fc_width")
        cfg.network.fc_width = static_cast<std::size_t>(parse_u64(key, value));
    else if (key == "network.embed_dim")
        cfg.network.embed_dim = static_cast<std::size_t>(parse_u64(key, value));
    else if (key == "network.hidden_activation")
        cfg.network.hidden_activation = parse_activation(value);
    else if (key == "network.penult_activation")
        cfg.network.penult_activation = parse_activation(value);
    else if (key == "optimizer.kind") cfg.optimizer.kind = parse_optimizer_kind(value);
    else if (key == "optimizer.lr") cfg.optimizer.lr = parse_double(key, value);
    else if (key == "optimizer.momentum") cfg.optimizer.momentum = parse_double(key, value);
    else if (key == "optimizer.beta1") cfg.optimizer.beta1 = parse_double(key, value);
    else if (key == "optimizer.beta2") cfg.optimizer.beta2 = parse_double(key, value);
    else if (key == "optimizer.eps") cfg.optimizer.eps = parse_double(key, value);
    else if (key == "train.epochs")
        cfg.epochs = static_cast<std::size_t>(parse_u64(key, value));
    else if (key == "train.batch_size")
        cfg.batch_size = static_cast<std::size_t>(parse_u64(key, value));
    else if (key == "train.seed") cfg.seed = parse_u64(key, value);
    else if (key == "data.name") cfg.dataset = value;
    else if (key == "data.root") cfg.data_root = value;
    else if (key == "data.train_limit")
        cfg.train_limit = static_cast<std::size_t>(parse_u64(key, value));
    else if (key == "data.test_limit")
        cfg.test_limit = static_cast<std::size_t>(parse_u64(key, value));
    else if (key == "data.num_classes")
        cfg.num_classes = static_cast<std::size_t>(parse_u64(key, value));
    else if (key == "out.dir") cfg.out_dir = value;
    else throw ConfigError("unknown config key '" + key + "'");
}

void check_finite_grads(const std::vector<Param>& params) {
    for (const auto& p : params) {
        const double* g = p.grad->data();
        for (std::size_t i = 0; i < p.grad->size(); ++i) {
            if (!std::isfinite(g[i])) {
                throw ValueError("non-finite gradient in parameter '" + p.name +
                                 "' (flat index " + std::to_string(i) + ")");
            }
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

void OptimizerConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) {
        throw ConfigError("optimizer.lr must be positive, got " + fmt_double(lr));
    }
    if (momentum < 0.0 || momentum >= 1.0) {
        throw ConfigError("optimizer.momentum must lie in [0, 1), got " + fmt_double(momentum));
    }
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw ConfigError("optimizer betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ConfigError("optimizer.eps must be positive");
}

OptimizerConfig::Kind parse_optimizer_kind(const std::string& name) {
    if (name == "sgd_momentum") return OptimizerConfig::Kind::sgd_momentum;
    if (name == "adam") return OptimizerConfig::Kind::adam;
    throw ConfigError("unknown optimizer kind '" + name + "'");
}

std::string optimizer_kind_name(OptimizerConfig::Kind kind) {
    return kind == OptimizerConfig::Kind::adam ? "adam" : "sgd_momentum";
}

void TrainConfig::validate() const {
    loss.validate();
    optimizer.validate();
    if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
    if (batch_size < 2) {
        throw ConfigError("train.batch_size must be at least 2, got " +
                          std::to_string(batch_size));
    }
    dataset_class_names(dataset);  // rejects unknown dataset names
    // input_shape is taken from the dataset at train time; validate the rest
    // of the architecture against a stand-in shape until then.
    NetworkConfig net = network;
    if (net.input_shape.empty()) net.input_shape = {1, 28, 28};
    net.validate();
}

TrainConfig parse_train_config(const std::string& text) {
    TrainConfig cfg;
    std::stringstream ss(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        }
        apply_config_key(cfg, key, value);
    }
    return cfg;
}

TrainConfig load_train_config(const std::string& path) {
    return parse_train_config(read_text_file(path));
}

std::string serialize_train_config(const TrainConfig& cfg) {
    std::string out;
    auto kv = [&out](const std::string& key, const std::string& value) {
        out += key + " = " + value + "\n";
    };
    kv("loss.kind", loss_kind_name(cfg.loss.kind));
    kv("loss.margin", fmt_double(cfg.loss.margin));
    kv("loss.scale", fmt_double(cfg.loss.scale));
    kv("loss.lambda", fmt_double(cfg.loss.lambda));
    kv("loss.center_alpha", fmt_double(cfg.loss.center_alpha));
    kv("loss.project_features", cfg.loss.project_features ? "1" : "0");
    kv("loss.layout", layout_kind_name(cfg.loss.layout));
    kv("loss.layout_scale", fmt_double(cfg.loss.layout_scale));
    kv("loss.mining", cfg.mining == MiningStrategy::semi_hard ? "semi_hard" : "random");
    kv("loss.pairs_per_batch", std::to_string(cfg.pairs_per_batch));
    if (!cfg.network.input_shape.empty()) {
        kv("network.input_shape", size_list_str(cfg.network.input_shape));
    }
    kv("network.conv_channels", size_list_str(cfg.network.conv_channels));
    kv("network.fc_width", std::to_string(cfg.network.fc_width));
    kv("network.embed_dim", std::to_string(cfg.network.embed_dim));
    kv("network.hidden_activation", activation_name(cfg.network.hidden_activation));
    kv("network.penult_activation", activation_name(cfg.network.penult_activation));
    kv("optimizer.kind", optimizer_kind_name(cfg.optimizer.kind));
    kv("optimizer.lr", fmt_double(cfg.optimizer.lr));
    kv("optimizer.momentum", fmt_double(cfg.optimizer.momentum));
    kv("optimizer.beta1", fmt_double(cfg.optimizer.beta1));
    kv("optimizer.beta2", fmt_double(cfg.optimizer.beta2));
    kv("optimizer.eps", fmt_double(cfg.optimizer.eps));
    kv("train.epochs", std::to_string(cfg.epochs));
    kv("train.batch_size", std::to_string(cfg.batch_size));
    kv("train.seed", std::to_string(cfg.seed));
    kv("data.name", cfg.dataset);
    if (!cfg.data_root.empty()) kv("data.root", cfg.data_root);
    kv("data.train_limit", std::to_string(cfg.train_limit));
    kv("data.test_limit", std::to_string(cfg.test_limit));
    if (cfg.num_classes > 0) kv("data.num_classes", std::to_string(cfg.num_classes));
    kv("out.dir", cfg.out_dir);
    return out;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

void step_sgd(const std::vector<Param>& params, OptimizerState& state, double lr,
              double momentum) {
    check_finite_grads(params);
    if (state.velocity.empty()) {
        for (const auto& p : params) state.velocity.push_back(Tensor::zeros(p.value->shape()));
    }
    if (state.velocity.size() != params.size()) {
        throw StateError("optimizer state tracks " + std::to_string(state.velocity.size()) +
                         " parameters, step got " + std::to_string(params.size()));
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& v = state.velocity[k];
        if (!v.same_shape(*params[k].value)) {
            throw DimensionError("optimizer state shape " + v.shape_str() +
                                 " does not match parameter '" + params[k].name + "' " +
                                 params[k].value->shape_str());
        }
        double* vel = v.data();
        double* val = params[k].value->data();
        const double* g = params[k].grad->data();
        for (std::size_t i = 0; i < v.size(); ++i) {
            vel[i] = momentum * vel[i] - lr * g[i];
            val[i] += vel[i];
        }
    }
}

void step_adam(const std::vector<Param>& params, OptimizerState& state,
               const OptimizerConfig& cfg) {
    check_finite_grads(params);
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.push_back(Tensor::zeros(p.value->shape()));
            state.v.push_back(Tensor::zeros(p.value->shape()));
        }
    }
    if (state.m.size() != params.size()) {
        throw StateError("optimizer state tracks " + std::to_string(state.m.size()) +
                         " parameters, step got " + std::to_string(params.size()));
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& m = state.m[k];
        Tensor& v = state.v[k];
        if (!m.same_shape(*params[k].value)) {
            throw DimensionError("optimizer state shape " + m.shape_str() +
                                 " does not match parameter '" + params[k].name + "' " +
                                 params[k].value->shape_str());
        }
        double* md = m.data();
        double* vd = v.data();
        double* val = params[k].value->data();
        const double* g = params[k].grad->data();
        for (std::size_t i = 0; i < m.size(); ++i) {
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * g[i];
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = md[i] / bc1;
            const double vhat = vd[i] / bc2;
            val[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

double clip_gradients(const std::vector<Param>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        const double* g = p.grad->data();
        for (std::size_t i = 0; i < p.grad->size(); ++i) sq += g[i] * g[i];
    }
    const double norm = std::sqrt(sq);
    if (std::isfinite(norm) && norm > max_norm) {
        const double scale = max_norm / norm;
        for (const auto& p : params) {
            double* g = p.grad->data();
            for (std::size_t i = 0; i < p.grad->size(); ++i) g[i] *= scale;
        }
    }
    return norm;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

Centroids class_centroids(const Tensor& points, const std::vector<std::size_t>& labels,
                          std::size_t num_classes) {
    if (points.rank() != 2 || points.extent(0) != labels.size()) {
        throw DimensionError("class_centroids: points " + points.shape_str() + " vs " +
                             std::to_string(labels.size()) + " labels");
    }
    const std::size_t d = points.extent(1);
    Centroids out{Tensor::zeros({num_classes, d}), std::vector<std::size_t>(num_classes, 0)};
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const std::size_t y = labels[i];
        if (y >= num_classes) {
            throw ValueError("label " + std::to_string(y) + " out of range for " +
                             std::to_string(num_classes) + " classes");
        }
        out.counts[y] += 1;
        for (std::size_t j = 0; j < d; ++j) out.mean.at(y, j) += points.at(i, j);
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (out.counts[c] == 0) continue;
        const double inv = 1.0 / static_cast<double>(out.counts[c]);
        for (std::size_t j = 0; j < d; ++j) out.mean.at(c, j) *= inv;
    }
    return out;
}

EmbeddingStats embedding_stats(const Tensor& points, const std::vector<std::size_t>& labels,
                               std::size_t num_classes) {
    const Centroids cents = class_centroids(points, labels, num_classes);
    const std::size_t d = points.extent(1);

    // Mean over present classes of the mean squared distance to the centroid.
    std::vector<double> sqsum(num_classes, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const std::size_t y = labels[i];
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = points.at(i, j) - cents.mean.at(y, j);
            sq += diff * diff;
        }
        sqsum[y] += sq;
    }
    double intra = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (cents.counts[c] == 0) continue;
        intra += sqsum[c] / static_cast<double>(cents.counts[c]);
        ++present;
    }
    if (present > 0) intra /= static_cast<double>(present);

    // Mean pairwise distance between present centroids.
    double inter = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < num_classes; ++a) {
        if (cents.counts[a] == 0) continue;
        for (std::size_t b = a + 1; b < num_classes; ++b) {
            if (cents.counts[b] == 0) continue;
            double sq = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = cents.mean.at(a, j) - cents.mean.at(b, j);
                sq += diff * diff;
            }
            inter += std::sqrt(sq);
            ++pairs;
        }
    }
    if (pairs > 0) inter /= static_cast<double>(pairs);
    return {intra, inter};
}

double nearest_reference_accuracy(const Tensor& points, const std::vector<std::size_t>& labels,
                                  const Tensor& references,
                                  const std::vector<std::size_t>& active) {
    if (points.rank() != 2 || references.rank() != 2 ||
        points.extent(1) != references.extent(1)) {
        throw DimensionError("nearest_reference_accuracy: points " + points.shape_str() +
                             " vs references " + references.shape_str());
    }
    if (points.extent(0) != labels.size()) {
        throw DimensionError("nearest_reference_accuracy: " +
                             std::to_string(points.extent(0)) + " points vs " +
                             std::to_string(labels.size()) + " labels");
    }
    if (labels.empty()) return 0.0;
    std::vector<std::size_t> candidates = active;
    if (candidates.empty()) {
        candidates.resize(references.extent(0));
        for (std::size_t c = 0; c < candidates.size(); ++c) candidates[c] = c;
    }
    const std::size_t d = points.extent(1);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        std::size_t best = candidates[0];
        double best_sq = -1.0;
        for (const std::size_t c : candidates) {
            double sq = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = points.at(i, j) - references.at(c, j);
                sq += diff * diff;
            }
            if (best_sq < 0.0 || sq < best_sq) {  // strict <: ties keep the smaller index
                best_sq = sq;
                best = c;
            }
        }
        if (best == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

Tensor embed_points(FeatureExtractor& extractor, const Dataset& ds) {
    const std::size_t n = ds.size();
    const std::size_t d = extractor.config().embed_dim;
    Tensor out({n, d});
    const std::size_t chunk = 256;
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t end = std::min(n, start + chunk);
        std::vector<std::size_t> idx(end - start);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
        const Dataset part = ds.subset(idx);
        const Tensor z = extractor.forward(part.images);
        std::copy(z.data(), z.data() + z.size(), out.data() + start * d);
    }
    return out;
}

namespace {

/// Class scores whose argmax matches the cosine rule: z . W_unit. Scaling a
/// row by a positive constant never changes its argmax, so raw z works and
/// zero-norm rows degrade gracefully to all-zero scores.
Tensor cosine_scores(const ClassifierHead& head, const Tensor& z) {
    const std::size_t d = head.embed_dim(), m = head.num_classes();
    Tensor w_unit({d, m});
    for (std::size_t j = 0; j < m; ++j) {
        double sq = 0.0;
        for (std::size_t i = 0; i < d; ++i) sq += head.W.at(i, j) * head.W.at(i, j);
        const double norm = std::sqrt(sq);
        const double inv = norm > 1e-12 ? 1.0 / norm : 0.0;
        for (std::size_t i = 0; i < d; ++i) w_unit.at(i, j) = head.W.at(i, j) * inv;
    }
    return matmul(z, w_unit);
}

std::size_t argmax_row(const Tensor& scores, std::size_t row) {
    std::size_t best = 0;
    double best_v = scores.at(row, 0);
    for (std::size_t j = 1; j < scores.extent(1); ++j) {
        if (scores.at(row, j) > best_v) {  // strict >: ties keep the smaller index
            best_v = scores.at(row, j);
            best = j;
        }
    }
    return best;
}

}  // namespace

EvalResult evaluate(Network& net, const Dataset& ds, const EvalContext& ctx) {
    EvalResult out;
    out.embeddings = embed_points(net.extractor, ds);
    if (ds.size() == 0) return out;
    out.stats = embedding_stats(out.embeddings, ds.labels, ds.num_classes());

    switch (ctx.kind) {
        case LossKind::softmax:
        case LossKind::softmax_normalized:
        case LossKind::center: {
            const Tensor logits = forward_logits(net.head, out.embeddings);
            std::size_t hits = 0;
            for (std::size_t i = 0; i < ds.size(); ++i) {
                if (argmax_row(logits, i) == ds.labels[i]) ++hits;
            }
            out.accuracy = static_cast<double>(hits) / static_cast<double>(ds.size());
            break;
        }
        case LossKind::cosface: {
            const Tensor scores = cosine_scores(net.head, out.embeddings);
            std::size_t hits = 0;
            for (std::size_t i = 0; i < ds.size(); ++i) {
                if (argmax_row(scores, i) == ds.labels[i]) ++hits;
            }
            out.accuracy = static_cast<double>(hits) / static_cast<double>(ds.size());
            break;
        }
        case LossKind::regression:
        case LossKind::contrastive:
        case LossKind::triplet: {
            if (ctx.reference_points == nullptr) {
                throw StateError("evaluate: " + loss_kind_name(ctx.kind) +
                                 " needs reference points for nearest-point accuracy");
            }
            const std::vector<std::size_t> empty;
            out.accuracy = nearest_reference_accuracy(out.embeddings, ds.labels,
                                                      *ctx.reference_points,
                                                      ctx.active ? *ctx.active : empty);
            break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

std::string serialize_report(const TrainReport& report) {
    std::string out;
    for (const auto& e : report.epochs) {
        out += "epoch=" + std::to_string(e.epoch);
        out += " train_loss=" + fmt_double(e.train_loss);
        out += " test_accuracy=" + fmt_double(e.test_accuracy);
        out += " intra_class_variance=" + fmt_double(e.intra_class_variance);
        out += " inter_class_distance=" + fmt_double(e.inter_class_distance);
        out += "\n";
    }
    out += "checkpoint=" + report.checkpoint_file + "\n";
    return out;
}

namespace {

struct StepOutput {
    double loss = 0.0;
    Tensor dz;  // gradient w.r.t. the embedding batch
};

/// Loss-specific forward/backward around the embedding batch. Head gradients
/// (when a head exists) are accumulated inside.
StepOutput loss_step(const TrainConfig& cfg, Network& net, ClassCenters& centers,
                     const TargetLayout& layout, const Tensor& z,
                     const std::vector<std::size_t>& labels, Rng& sample_rng) {
    StepOutput out;
    switch (cfg.loss.kind) {
        case LossKind::softmax:
        case LossKind::softmax_normalized: {
            const Tensor logits = forward_logits(net.head, z);
            const LossResult r = softmax_loss(logits, labels);
            out.loss = r.value;
            out.dz = backward_logits(net.head, z, r.grad);
            break;
        }
        case LossKind::cosface: {
            const CosineLogits cache = cosine_logits(net.head, z);
            const LossResult r =
                cosface_loss(cache.cosines, labels, cfg.loss.margin, cfg.loss.scale);
            out.loss = r.value;
            out.dz = cosine_logits_backward(cache, net.head, r.grad);
            break;
        }
        case LossKind::center: {
            const Tensor logits = forward_logits(net.head, z);
            const LossResult soft = softmax_loss(logits, labels);
            const LossResult cent = center_loss(z, labels, centers, cfg.loss.lambda);
            out.loss = soft.value + cent.value;
            out.dz = backward_logits(net.head, z, soft.grad);
            for (std::size_t i = 0; i < out.dz.size(); ++i) out.dz[i] += cent.grad[i];
            break;
        }
        case LossKind::contrastive: {
            const std::size_t count =
                cfg.pairs_per_batch > 0 ? cfg.pairs_per_batch : labels.size();
            const PairBatch pb = sample_pairs(labels, sample_rng, count);
            const LossResult r = contrastive_loss(z, pb.pairs, cfg.loss.margin);
            out.loss = r.value;
            out.dz = r.grad;
            break;
        }
        case LossKind::triplet: {
            const std::vector<TripletSample> triplets = mine_triplets(
                z, labels, cfg.mining, sample_rng, cfg.loss.margin, labels.size());
            if (triplets.empty()) {
                out.loss = 0.0;
                out.dz = Tensor::zeros(z.shape());
            } else {
                const LossResult r = triplet_loss(z, triplets, cfg.loss.margin);
                out.loss = r.value;
                out.dz = r.grad;
            }
            break;
        }
        case LossKind::regression: {
            const LossResult r = regression_loss(z, labels, layout);
            out.loss = r.value;
            out.dz = r.grad;
            break;
        }
    }
    return out;
}

}  // namespace

TrainOutcome train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& test_set) {
    cfg.validate();
    train_set.validate();
    test_set.validate();
    if (train_set.size() < 2) throw ConfigError("training set needs at least 2 samples");
    const std::size_t num_classes = train_set.num_classes();
    if (num_classes < 2) throw ConfigError("training set needs at least 2 classes");

    const auto t_start = std::chrono::steady_clock::now();

    NetworkConfig net_cfg = cfg.network;
    net_cfg.input_shape = {train_set.images.extent(1), train_set.images.extent(2),
                           train_set.images.extent(3)};
    net_cfg.validate();
    compute_feature_shapes(net_cfg);  // rejects infeasible input sizes up front

    TrainConfig effective = cfg;  // the config embedded in artifacts carries the
    effective.network = net_cfg;  // resolved input shape and class count
    effective.num_classes = num_classes;

    const bool with_head = loss_uses_head(cfg.loss.kind);
    const bool normalized_head = cfg.loss.kind == LossKind::softmax_normalized ||
                                 cfg.loss.kind == LossKind::cosface;
    Rng init_rng(Rng::mix(cfg.seed, 0x696e6974));  // "init" stream
    Network net = init_network(net_cfg, num_classes, init_rng, with_head);
    if (with_head && normalized_head) {
        net.head.normalized = true;
        renormalize_classifier(net.head);
    }

    ClassCenters centers = cfg.loss.kind == LossKind::center
                               ? make_class_centers(num_classes, net_cfg.embed_dim,
                                                    cfg.loss.center_alpha)
                               : ClassCenters{};
    TargetLayout layout;
    if (cfg.loss.kind == LossKind::regression) {
        layout = make_target_layout(cfg.loss.layout, num_classes, net_cfg.embed_dim,
                                    cfg.loss.layout_scale);
    }

    OptimizerState opt_state;
    Rng sample_rng(Rng::mix(cfg.seed, 0x70616972));  // "pair" stream
    BatchPlan plan;
    plan.batch_size = cfg.batch_size;
    plan.seed = cfg.seed;
    plan.drop_last = false;

    const bool needs_centroids =
        cfg.loss.kind == LossKind::contrastive || cfg.loss.kind == LossKind::triplet;

    TrainReport report;
    Tensor train_centroids;
    std::vector<std::size_t> active_classes;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        std::size_t batch_count = 0;
        for (const Batch& batch : batches(train_set, plan, epoch)) {
            net.extractor.zero_grads();
            if (net.has_head) net.head.zero_grads();

            const Tensor z = net.extractor.forward(batch.images);
            const StepOutput step =
                loss_step(cfg, net, centers, layout, z, batch.labels, sample_rng);
            if (!std::isfinite(step.loss)) {
                throw ValueError("non-finite training loss at epoch " +
                                 std::to_string(epoch + 1) + ", batch " +
                                 std::to_string(batch_count + 1));
            }
            loss_sum += step.loss;
            ++batch_count;

            net.extractor.backward(step.dz);

            std::vector<Param> params = net.extractor.params();
            if (net.has_head) {
                params.push_back({"head.W", &net.head.W, &net.head.grad_W});
                params.push_back({"head.b", &net.head.b, &net.head.grad_b});
            }
            clip_gradients(params, kGradClipNorm);
            if (cfg.optimizer.kind == OptimizerConfig::Kind::adam) {
                step_adam(params, opt_state, cfg.optimizer);
            } else {
                step_sgd(params, opt_state, cfg.optimizer.lr, cfg.optimizer.momentum);
            }

            if (net.has_head && net.head.normalized) renormalize_classifier(net.head);
            if (cfg.loss.kind == LossKind::center) update_centers(centers, z, batch.labels);
        }

        EvalContext ctx;
        ctx.kind = cfg.loss.kind;
        if (cfg.loss.kind == LossKind::regression) {
            ctx.reference_points = &layout.targets;
        } else if (needs_centroids) {
            const Tensor train_z = embed_points(net.extractor, train_set);
            const Centroids cents = class_centroids(train_z, train_set.labels, num_classes);
            train_centroids = cents.mean;
            active_classes.clear();
            for (std::size_t c = 0; c < num_classes; ++c) {
                if (cents.counts[c] > 0) active_classes.push_back(c);
            }
            ctx.reference_points = &train_centroids;
            ctx.active = &active_classes;
        }
        const EvalResult ev = evaluate(net, test_set, ctx);

        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.train_loss = batch_count > 0 ? loss_sum / static_cast<double>(batch_count) : 0.0;
        rec.test_accuracy = ev.accuracy;
        rec.intra_class_variance = ev.stats.intra_class_variance;
        rec.inter_class_distance = ev.stats.inter_class_distance;
        report.epochs.push_back(rec);
    }

    // Persist: checkpoint (config + parameters + per-loss auxiliary state),
    // then the per-epoch report next to it.
    std::filesystem::create_directories(cfg.out_dir);
    const std::string checkpoint_path = cfg.out_dir + "/checkpoint.bin";
    std::vector<const Tensor*> tensors;
    for (const auto& p : net.extractor.params()) tensors.push_back(p.value);
    if (net.has_head) {
        tensors.push_back(&net.head.W);
        tensors.push_back(&net.head.b);
    }
    if (cfg.loss.kind == LossKind::center) tensors.push_back(&centers.centers);
    if (cfg.loss.kind == LossKind::regression) tensors.push_back(&layout.targets);
    if (needs_centroids) tensors.push_back(&train_centroids);
    save_checkpoint(checkpoint_path, serialize_train_config(effective), tensors);

    report.checkpoint_file = "checkpoint.bin";
    write_text_file(cfg.out_dir + "/report.txt", serialize_report(report));

    const auto t_end = std::chrono::steady_clock::now();
    report.wall_seconds = std::chrono::duration<double>(t_end - t_start).count();

    TrainedModel model{std::move(effective), std::move(net), std::move(centers), Tensor(),
                       false, false};
    if (cfg.loss.kind == LossKind::center) model.has_centers = true;
    if (cfg.loss.kind == LossKind::regression) {
        model.reference_points = layout.targets;
        model.has_references = true;
    } else if (needs_centroids) {
        model.reference_points = train_centroids;
        model.has_references = true;
    }
    return TrainOutcome{std::move(report), std::move(model)};
}

std::string resolve_data_root(const TrainConfig& cfg) {
    if (!cfg.data_root.empty()) return cfg.data_root;
    const char* env = std::getenv("EMBEDLAB_DATA_DIR");
    if (env != nullptr && env[0] != '\0') return env;
    throw ConfigError("no data root: set data.root in the config or EMBEDLAB_DATA_DIR");
}

namespace {

Dataset limited(Dataset ds, std::size_t limit) {
    if (limit == 0 || limit >= ds.size()) return ds;
    std::vector<std::size_t> idx(limit);
    for (std::size_t i = 0; i < limit; ++i) idx[i] = i;
    return ds.subset(idx);
}

}  // namespace

Dataset load_config_dataset(const TrainConfig& cfg, bool train_split) {
    const std::string root = resolve_data_root(cfg);
    return limited(load_dataset(cfg.dataset, root, train_split),
                   train_split ? cfg.train_limit : cfg.test_limit);
}

TrainOutcome train_from_config(const TrainConfig& cfg) {
    cfg.validate();
    Dataset train_set = load_config_dataset(cfg, true);
    Dataset test_set = load_config_dataset(cfg, false);
    return train(cfg, train_set, test_set);
}

TrainedModel load_trained_model(const std::string& checkpoint_path) {
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    TrainConfig cfg = parse_train_config(ck.config_text);
    cfg.validate();
    if (cfg.network.input_shape.size() != 3) {
        throw FormatError("checkpoint config lacks a resolved network.input_shape");
    }

    const std::size_t num_classes =
        cfg.num_classes > 0 ? cfg.num_classes : dataset_class_names(cfg.dataset).size();
    const bool with_head = loss_uses_head(cfg.loss.kind);
    Rng rng(0);  // placeholder init; every parameter is overwritten below
    Network net = init_network(cfg.network, num_classes, rng, with_head);

    std::size_t next = 0;
    auto take = [&](Tensor& dst, const std::string& what) {
        if (next >= ck.tensors.size()) {
            throw FormatError("checkpoint ended before " + what);
        }
        const Tensor& src = ck.tensors[next++];
        if (!src.same_shape(dst)) {
            throw FormatError("checkpoint tensor for " + what + " has shape " +
                              src.shape_str() + ", expected " + dst.shape_str());
        }
        dst = src;
    };

    for (auto& p : net.extractor.params()) take(*p.value, "parameter '" + p.name + "'");
    if (net.has_head) {
        take(net.head.W, "head.W");
        take(net.head.b, "head.b");
        net.head.normalized = cfg.loss.kind == LossKind::softmax_normalized ||
                              cfg.loss.kind == LossKind::cosface;
    }

    TrainedModel model{std::move(cfg), std::move(net), ClassCenters{}, Tensor(), false, false};
    if (model.cfg.loss.kind == LossKind::center) {
        model.centers = make_class_centers(num_classes, model.cfg.network.embed_dim,
                                           model.cfg.loss.center_alpha);
        take(model.centers.centers, "class centers");
        model.has_centers = true;
    }
    if (model.cfg.loss.kind == LossKind::regression ||
        model.cfg.loss.kind == LossKind::contrastive ||
        model.cfg.loss.kind == LossKind::triplet) {
        model.reference_points =
            Tensor::zeros({num_classes, model.cfg.network.embed_dim});
        take(model.reference_points, "reference points");
        model.has_references = true;
    }
    if (next != ck.tensors.size()) {
        throw FormatError("checkpoint holds " + std::to_string(ck.tensors.size()) +
                          " tensors, expected " + std::to_string(next));
    }
    return model;
}

}  // namespace embedlab
