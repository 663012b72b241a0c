#include "embedlab/cli.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "embedlab/error.hpp"
#include "embedlab/gradcheck.hpp"
#include "embedlab/losses.hpp"
#include "embedlab/viz.hpp"

namespace embedlab {

namespace {

constexpr const char* kCellNames[] = {"softmax",     "softmax_normalized", "cosface",
                                      "cosface_projected", "center",       "contrastive",
                                      "triplet",     "regression_circle"};

TrainConfig base_cell_config(const std::string& dataset, std::size_t dims,
                             std::uint64_t seed, std::size_t epochs) {
    TrainConfig cfg;
    cfg.dataset = dataset;
    cfg.network.conv_channels = {32, 64, 128};
    cfg.network.fc_width = 256;
    cfg.network.embed_dim = dims;
    cfg.optimizer.kind = OptimizerConfig::Kind::adam;
    cfg.optimizer.lr = 1e-3;
    cfg.epochs = epochs == 0 ? 20 : epochs;
    cfg.batch_size = 64;
    cfg.seed = seed;
    return cfg;
}

std::string figure_base(const std::string& figures_dir, const std::string& dataset,
                        const std::string& cell, std::size_t dims) {
    return figures_dir + "/" + dataset + "_" + cell + "_" + std::to_string(dims) + "d";
}

/// Unit-normalized copy of a set for the sphere-projected figures; zero-norm
/// rows are dropped, mirroring the dedicated circle view.
EmbeddingSet project_rows_to_sphere(const EmbeddingSet& es) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < es.size(); ++i) {
        double sq = 0.0;
        for (std::size_t k = 0; k < es.dim(); ++k) sq += es.points.at(i, k) * es.points.at(i, k);
        if (std::sqrt(sq) > 1e-12) keep.push_back(i);
    }
    EmbeddingSet out;
    out.class_names = es.class_names;
    out.points = Tensor({keep.size(), es.dim()});
    out.labels.resize(keep.size());
    for (std::size_t r = 0; r < keep.size(); ++r) {
        const std::size_t i = keep[r];
        double sq = 0.0;
        for (std::size_t k = 0; k < es.dim(); ++k) sq += es.points.at(i, k) * es.points.at(i, k);
        const double norm = std::sqrt(sq);
        for (std::size_t k = 0; k < es.dim(); ++k) out.points.at(r, k) = es.points.at(i, k) / norm;
        out.labels[r] = es.labels[i];
    }
    if (keep.empty()) throw DegenerateInputError("every embedding has zero norm");
    return out;
}

/// Renders one figure cell's SVGs: single plot for 2-D, the three standard
/// views for 3-D.
std::vector<std::string> write_figures(const EmbeddingSet& es, const std::string& base,
                                       bool sphere_projected) {
    std::vector<std::string> written;
    RenderOptions opt;
    if (es.dim() == 2) {
        const std::string path = base + ".svg";
        if (sphere_projected) {
            render_unit_circle_projection(es, opt, path);
        } else {
            render_svg(es, opt, path);
        }
        written.push_back(path);
        return written;
    }
    const EmbeddingSet* to_draw = &es;
    EmbeddingSet projected;
    if (sphere_projected) {
        projected = project_rows_to_sphere(es);
        to_draw = &projected;
    }
    for (const auto& view : kDefaultViews3D) {
        opt.azimuth_deg = view[0];
        opt.elevation_deg = view[1];
        char suffix[48];
        std::snprintf(suffix, sizeof(suffix), "_az%g_el%g.svg", view[0], view[1]);
        const std::string path = base + suffix;
        render_svg(*to_draw, opt, path);
        written.push_back(path);
    }
    return written;
}

int run_one_cell(const CellSpec& cell, const std::string& figures_dir,
                 const std::string& dataset, std::size_t dims, std::ostream& out) {
    TrainOutcome outcome = train_from_config(cell.config);
    const Dataset test_set = load_config_dataset(outcome.model.cfg, false);
    const EmbeddingSet es = embed_dataset(outcome.model, test_set);

    const std::string base = figure_base(figures_dir, dataset, cell.name, dims);
    export_csv(es, base + ".csv");
    const std::vector<std::string> figures = write_figures(es, base, cell.sphere_projected);
    const double accuracy = outcome.report.epochs.empty()
                                ? 0.0
                                : outcome.report.epochs.back().test_accuracy;
    out << cell.name << ": test accuracy " << accuracy << ", wrote " << base << ".csv";
    for (const auto& f : figures) out << ", " << f;
    out << "\n";
    return 0;
}

/// Self path for spawning parallel reproduction cells.
std::string self_executable() {
    char buf[4096];
    const ssize_t n = ::readlink("/proc/self/exe", buf, sizeof(buf) - 1);
    if (n <= 0) return {};
    buf[n] = '\0';
    return buf;
}

int spawn_cells(const std::vector<std::string>& cell_names, const std::string& exe,
                const std::string& figures_dir, const std::string& dataset, std::size_t dims,
                std::uint64_t seed, std::size_t epochs, std::size_t jobs, std::ostream& out,
                std::ostream& err) {
    std::size_t next = 0;
    std::size_t running = 0;
    int worst = 0;
    std::vector<pid_t> pids;
    while (next < cell_names.size() || running > 0) {
        while (running < jobs && next < cell_names.size()) {
            std::vector<std::string> argv_s = {exe,
                                               "reproduce",
                                               "--figures-dir",
                                               figures_dir,
                                               "--dataset",
                                               dataset,
                                               "--dims",
                                               std::to_string(dims),
                                               "--seed",
                                               std::to_string(seed),
                                               "--loss",
                                               cell_names[next]};
            if (epochs > 0) {
                argv_s.push_back("--epochs");
                argv_s.push_back(std::to_string(epochs));
            }
            std::vector<char*> argv;
            for (auto& s : argv_s) argv.push_back(s.data());
            argv.push_back(nullptr);
            const pid_t pid = ::fork();
            if (pid < 0) throw IoError("fork failed while parallelizing reproduction cells");
            if (pid == 0) {
                ::execv(exe.c_str(), argv.data());
                ::_exit(127);
            }
            pids.push_back(pid);
            ++running;
            ++next;
        }
        int status = 0;
        const pid_t done = ::wait(&status);
        if (done < 0) break;
        --running;
        const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 2;
        if (code != 0) {
            err << "reproduction cell process " << done << " exited with code " << code << "\n";
            worst = std::max(worst, code == 1 ? 1 : 2);
        }
    }
    if (worst == 0) out << "all " << cell_names.size() << " cells finished\n";
    return worst;
}

}  // namespace

std::vector<CellSpec> reproduction_cells(const std::string& dataset, std::size_t dims,
                                         std::uint64_t seed, std::size_t epochs,
                                         const std::string& figures_dir) {
    std::vector<CellSpec> cells;
    for (const char* name : kCellNames) {
        CellSpec cell;
        cell.name = name;
        cell.config = base_cell_config(dataset, dims, seed, epochs);
        cell.config.out_dir = figure_base(figures_dir, dataset, name, dims);
        const std::string n = name;
        if (n == "softmax") {
            cell.config.loss.kind = LossKind::softmax;
        } else if (n == "softmax_normalized") {
            cell.config.loss.kind = LossKind::softmax_normalized;
        } else if (n == "cosface" || n == "cosface_projected") {
            cell.config.loss.kind = LossKind::cosface;
            cell.config.loss.margin = 0.2;
            cell.config.loss.scale = 10.0;
            if (n == "cosface_projected") {
                cell.config.loss.project_features = true;
                cell.sphere_projected = true;
            }
        } else if (n == "center") {
            cell.config.loss.kind = LossKind::center;
            cell.config.loss.lambda = 0.3;
            cell.config.loss.center_alpha = 0.5;
        } else if (n == "contrastive") {
            cell.config.loss.kind = LossKind::contrastive;
            cell.config.loss.margin = 1.0;
        } else if (n == "triplet") {
            cell.config.loss.kind = LossKind::triplet;
            cell.config.loss.margin = 1.0;
            cell.config.mining = MiningStrategy::semi_hard;
        } else if (n == "regression_circle") {
            cell.config.loss.kind = LossKind::regression;
            cell.config.loss.layout = LayoutKind::circle;
            cell.config.loss.layout_scale = 3.0;
        }
        cell.config.validate();
        cells.push_back(std::move(cell));
    }
    return cells;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"embedlab: train small CNNs with embedding-shaping losses and "
                 "render the embedded spaces",
                 "embedlab"};
    app.require_subcommand(1);

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
    std::string train_config_path;
    std::uint64_t seed_flag = 0;
    std::size_t epochs_flag = 0;
    std::string out_flag;
    train_cmd->add_option("--config", train_config_path, "training configuration file")
        ->required();
    auto* train_seed = train_cmd->add_option("--seed", seed_flag, "override train.seed");
    auto* train_epochs = train_cmd->add_option("--epochs", epochs_flag, "override train.epochs");
    auto* train_out = train_cmd->add_option("--out", out_flag, "override out.dir");

    // embed
    auto* embed_cmd =
        app.add_subcommand("embed", "Embed a dataset's test split with a trained checkpoint");
    std::string checkpoint_path;
    std::string dataset_flag;
    std::string embed_out = "embeddings.csv";
    embed_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    embed_cmd->add_option("--dataset", dataset_flag, "override the checkpoint's dataset name");
    embed_cmd->add_option("--out", embed_out, "output CSV path");

    // plot
    auto* plot_cmd = app.add_subcommand("plot", "Render an embedding CSV or checkpoint as SVG");
    std::string plot_input;
    std::string plot_style = "points";
    std::string plot_out = "plot.svg";
    plot_cmd->add_option("--input", plot_input, "embedding CSV or checkpoint file")->required();
    plot_cmd->add_option("--style", plot_style, "points or circle (unit-norm projection)")
        ->check(CLI::IsMember({"points", "circle"}));
    plot_cmd->add_option("--out", plot_out, "output SVG path");

    // gradcheck
    auto* grad_cmd =
        app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
    std::string scope = "all";
    std::uint64_t grad_seed = 42;
    grad_cmd->add_option("--scope", scope, "losses, network, or all")
        ->check(CLI::IsMember({"losses", "network", "all"}));
    grad_cmd->add_option("--seed", grad_seed, "random draw seed");

    // reproduce
    auto* repro_cmd =
        app.add_subcommand("reproduce", "Train and render the full figure grid");
    std::string figures_dir = "figures";
    std::string repro_dataset = "mnist";
    std::size_t dims = 2;
    std::string only_cell;
    std::size_t jobs = 1;
    std::uint64_t repro_seed = 42;
    std::size_t repro_epochs = 0;
    repro_cmd->add_option("--figures-dir", figures_dir, "output directory for figures");
    repro_cmd->add_option("--dataset", repro_dataset, "dataset name");
    repro_cmd->add_option("--dims", dims, "embedding dimension")
        ->check(CLI::IsMember({"2", "3"}));
    repro_cmd->add_option("--loss", only_cell, "run only this cell")
        ->check(CLI::IsMember(std::vector<std::string>(std::begin(kCellNames),
                                                       std::end(kCellNames))));
    repro_cmd->add_option("--jobs", jobs, "parallel cell processes")
        ->check(CLI::PositiveNumber);
    repro_cmd->add_option("--seed", repro_seed, "seed for every cell");
    repro_cmd->add_option("--epochs", repro_epochs, "override epochs for every cell");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        std::stringstream hold_out, hold_err;
        const int code = app.exit(e, hold_out, hold_err);
        out << hold_out.str();
        err << hold_err.str();
        if (code == 0) return 0;
        err << app.help();
        return 1;
    }

    try {
        if (*train_cmd) {
            TrainConfig cfg = load_train_config(train_config_path);
            if (*train_seed) cfg.seed = seed_flag;
            if (*train_epochs) cfg.epochs = epochs_flag;
            if (*train_out) cfg.out_dir = out_flag;
            const TrainOutcome outcome = train_from_config(cfg);
            out << serialize_report(outcome.report);
            return 0;
        }
        if (*embed_cmd) {
            TrainedModel model = load_trained_model(checkpoint_path);
            if (!dataset_flag.empty()) model.cfg.dataset = dataset_flag;
            const Dataset ds = load_config_dataset(model.cfg, false);
            const EmbeddingSet es = embed_dataset(model, ds);
            export_csv(es, embed_out);
            out << "wrote " << es.size() << " embeddings to " << embed_out << "\n";
            return 0;
        }
        if (*plot_cmd) {
            EmbeddingSet es;
            std::ifstream probe(plot_input, std::ios::binary);
            if (!probe) throw IoError("cannot open input file " + plot_input);
            char magic[4] = {};
            probe.read(magic, 4);
            probe.close();
            if (std::memcmp(magic, "EMBL", 4) == 0) {
                TrainedModel model = load_trained_model(plot_input);
                const Dataset ds = load_config_dataset(model.cfg, false);
                es = embed_dataset(model, ds);
            } else {
                es = load_csv(plot_input);
            }
            RenderOptions opt;
            if (plot_style == "circle") {
                render_unit_circle_projection(es, opt, plot_out);
            } else {
                render_svg(es, opt, plot_out);
            }
            out << "wrote " << plot_out << "\n";
            return 0;
        }
        if (*grad_cmd) {
            const GradCheckReport report = run_gradcheck(scope, grad_seed);
            out << format_gradcheck(report);
            return report.all_passed() ? 0 : 2;
        }
        if (*repro_cmd) {
            std::filesystem::create_directories(figures_dir);
            std::vector<CellSpec> cells =
                reproduction_cells(repro_dataset, dims, repro_seed, repro_epochs, figures_dir);
            if (!only_cell.empty()) {
                std::vector<CellSpec> filtered;
                for (auto& c : cells) {
                    if (c.name == only_cell) filtered.push_back(std::move(c));
                }
                cells = std::move(filtered);
            }
            const std::string exe = self_executable();
            if (jobs > 1 && cells.size() > 1 && !exe.empty()) {
                std::vector<std::string> names;
                for (const auto& c : cells) names.push_back(c.name);
                return spawn_cells(names, exe, figures_dir, repro_dataset, dims, repro_seed,
                                   repro_epochs, jobs, out, err);
            }
            for (const auto& cell : cells) {
                run_one_cell(cell, figures_dir, repro_dataset, dims, out);
            }
            return 0;
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace embedlab
