#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "embedlab/cli.hpp"
#include "embedlab/data.hpp"
#include "embedlab/rng.hpp"
#include "embedlab/viz.hpp"

using namespace embedlab;

namespace {

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string tmp_dir(const std::string& name) {
    const std::string path = "/tmp/embedlab_cli_" + name;
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
    return path;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

/// Small on-disk dataset in the standard binary layout, so config-driven
/// commands can run hermetically.
std::string fixture_root(const std::string& name, std::size_t ntrain, std::size_t ntest) {
    const std::string root = tmp_dir("data_" + name);
    Rng r1(1), r2(2);
    write_idx(synthetic_digits(ntrain, r1), root + "/train-images-idx3-ubyte",
              root + "/train-labels-idx1-ubyte");
    write_idx(synthetic_digits(ntest, r2), root + "/t10k-images-idx3-ubyte",
              root + "/t10k-labels-idx1-ubyte");
    return root;
}

std::string tiny_config_text(const std::string& root, const std::string& out_dir) {
    return "loss.kind = softmax\n"
           "network.conv_channels = 4\n"
           "network.fc_width = 8\n"
           "network.embed_dim = 2\n"
           "train.epochs = 1\n"
           "train.batch_size = 8\n"
           "train.seed = 42\n"
           "data.name = mnist\n"
           "data.root = " +
           root +
           "\n"
           "out.dir = " +
           out_dir + "\n";
}

}  // namespace

TEST_CASE("train with a missing config exits 2 and names the path") {
    const CliResult r = cli({"train", "--config", "/nonexistent/missing.cfg"});
    CHECK(r.code == 2);
    CHECK(r.err.find("/nonexistent/missing.cfg") != std::string::npos);
}

TEST_CASE("usage errors exit 1 with help text") {
    const CliResult none = cli({});
    CHECK(none.code == 1);
    CHECK(none.err.find("Usage") != std::string::npos);

    CHECK(cli({"unknown_command"}).code == 1);
    CHECK(cli({"reproduce", "--dims", "5"}).code == 1);
    CHECK(cli({"reproduce", "--loss", "bogus_cell"}).code == 1);
    CHECK(cli({"gradcheck", "--scope", "everything"}).code == 1);
    CHECK(cli({"train"}).code == 1);  // --config is required
}

TEST_CASE("help exits 0 and lists every command") {
    const CliResult r = cli({"--help"});
    CHECK(r.code == 0);
    for (const char* cmd : {"train", "embed", "plot", "gradcheck", "reproduce"}) {
        CHECK_MESSAGE(r.out.find(cmd) != std::string::npos, cmd);
    }
}

TEST_CASE("gradcheck command reports passing comparisons") {
    const CliResult r = cli({"gradcheck", "--scope", "losses"});
    CHECK(r.code == 0);
    CHECK(r.out.find("comparisons passed") != std::string::npos);
    CHECK(r.out.find("FAIL") == std::string::npos);
}

TEST_CASE("train, embed, and plot chain end to end on a tiny dataset") {
    const std::string root = fixture_root("chain", 32, 16);
    const std::string out_dir = tmp_dir("chain_out");
    const std::string cfg_path = out_dir + "/run.cfg";
    write_text(cfg_path, tiny_config_text(root, out_dir + "/run"));

    const CliResult train_r = cli({"train", "--config", cfg_path});
    CHECK(train_r.code == 0);
    CHECK(train_r.out.find("epoch=1 ") != std::string::npos);
    CHECK(std::filesystem::exists(out_dir + "/run/checkpoint.bin"));
    CHECK(std::filesystem::exists(out_dir + "/run/report.txt"));

    const std::string csv_path = out_dir + "/emb.csv";
    const CliResult embed_r =
        cli({"embed", "--checkpoint", out_dir + "/run/checkpoint.bin", "--out", csv_path});
    CHECK(embed_r.code == 0);
    CHECK(parse_csv(slurp(csv_path)).size() == 16);

    const CliResult plot_r =
        cli({"plot", "--input", csv_path, "--out", out_dir + "/p.svg"});
    CHECK(plot_r.code == 0);
    const std::string svg = slurp(out_dir + "/p.svg");
    CHECK(svg.find("<?xml") == 0);
    CHECK(svg.find("class=\"pt\"") != std::string::npos);

    const CliResult circle_r = cli(
        {"plot", "--input", csv_path, "--style", "circle", "--out", out_dir + "/c.svg"});
    CHECK(circle_r.code == 0);
    CHECK(slurp(out_dir + "/c.svg").find("class=\"ref\"") != std::string::npos);

    const CliResult ck_plot = cli({"plot", "--input", out_dir + "/run/checkpoint.bin",
                                   "--out", out_dir + "/ck.svg"});
    CHECK(ck_plot.code == 0);
    CHECK(std::filesystem::exists(out_dir + "/ck.svg"));
}

TEST_CASE("train flag overrides change epochs and output directory") {
    const std::string root = fixture_root("override", 24, 12);
    const std::string out_dir = tmp_dir("override_out");
    const std::string cfg_path = out_dir + "/run.cfg";
    write_text(cfg_path, tiny_config_text(root, out_dir + "/a"));

    const CliResult r = cli({"train", "--config", cfg_path, "--epochs", "2", "--out",
                             out_dir + "/b", "--seed", "7"});
    CHECK(r.code == 0);
    CHECK(r.out.find("epoch=2 ") != std::string::npos);
    CHECK(std::filesystem::exists(out_dir + "/b/checkpoint.bin"));
    CHECK_FALSE(std::filesystem::exists(out_dir + "/a/checkpoint.bin"));
    CHECK(slurp(out_dir + "/b/checkpoint.bin").find("train.seed = 7") != std::string::npos);
}

TEST_CASE("malformed inputs produce exit 2, not a crash") {
    const std::string dir = tmp_dir("malformed");
    write_text(dir + "/garbage.csv", "not,a,real\nheader at all\n");
    CHECK(cli({"plot", "--input", dir + "/garbage.csv", "--out", dir + "/x.svg"}).code == 2);
    CHECK(cli({"plot", "--input", dir + "/missing.csv", "--out", dir + "/x.svg"}).code == 2);

    write_text(dir + "/bad.cfg", "loss.kind = softmax\nunknown.key = 1\n");
    const CliResult r = cli({"train", "--config", dir + "/bad.cfg"});
    CHECK(r.code == 2);
    CHECK(r.err.find("unknown.key") != std::string::npos);

    CHECK(cli({"embed", "--checkpoint", dir + "/missing.bin"}).code == 2);
}

TEST_CASE("reproduce renders one cell and reruns are byte-identical") {
    const std::string root = fixture_root("cell", 24, 12);
    setenv("EMBEDLAB_DATA_DIR", root.c_str(), 1);
    const std::string figs = tmp_dir("cell_figs");

    const CliResult r1 = cli({"reproduce", "--figures-dir", figs, "--dataset", "mnist",
                              "--dims", "2", "--epochs", "1", "--loss", "regression_circle"});
    CHECK(r1.code == 0);
    const std::string csv_path = figs + "/mnist_regression_circle_2d.csv";
    const std::string svg_path = figs + "/mnist_regression_circle_2d.svg";
    REQUIRE(std::filesystem::exists(csv_path));
    REQUIRE(std::filesystem::exists(svg_path));
    const std::string csv1 = slurp(csv_path);
    const std::string svg1 = slurp(svg_path);
    const std::string ckpt1 = slurp(figs + "/mnist_regression_circle_2d/checkpoint.bin");

    const CliResult r2 = cli({"reproduce", "--figures-dir", figs, "--dataset", "mnist",
                              "--dims", "2", "--epochs", "1", "--loss", "regression_circle"});
    CHECK(r2.code == 0);
    CHECK(slurp(csv_path) == csv1);
    CHECK(slurp(svg_path) == svg1);
    CHECK(slurp(figs + "/mnist_regression_circle_2d/checkpoint.bin") == ckpt1);
    unsetenv("EMBEDLAB_DATA_DIR");
}

TEST_CASE("reproduce emits three views per figure in 3-D") {
    const std::string root = fixture_root("threed", 24, 12);
    setenv("EMBEDLAB_DATA_DIR", root.c_str(), 1);
    const std::string figs = tmp_dir("threed_figs");
    const CliResult r = cli({"reproduce", "--figures-dir", figs, "--dims", "3", "--epochs",
                             "1", "--loss", "triplet"});
    CHECK(r.code == 0);
    CHECK(std::filesystem::exists(figs + "/mnist_triplet_3d_az45_el30.svg"));
    CHECK(std::filesystem::exists(figs + "/mnist_triplet_3d_az0_el0.svg"));
    CHECK(std::filesystem::exists(figs + "/mnist_triplet_3d_az90_el30.svg"));
    const EmbeddingSet es = load_csv(figs + "/mnist_triplet_3d.csv");
    CHECK(es.dim() == 3);
    CHECK(es.size() == 12);
    unsetenv("EMBEDLAB_DATA_DIR");
}

TEST_CASE("reproduce with an unknown dataset exits 2") {
    const CliResult r = cli({"reproduce", "--dataset", "imagenet"});
    CHECK(r.code == 2);
    CHECK(r.err.find("imagenet") != std::string::npos);
}

TEST_CASE("the full grid runs as parallel processes through the binary") {
    const std::string root = fixture_root("grid", 24, 12);
    setenv("EMBEDLAB_DATA_DIR", root.c_str(), 1);
    const std::string figs = tmp_dir("grid_figs");
    const std::string cmd = std::string(EMBEDLAB_CLI_PATH) + " reproduce --figures-dir " +
                            figs + " --dims 2 --epochs 1 --jobs 2 >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    CHECK(WEXITSTATUS(rc) == 0);
    for (const char* cell :
         {"softmax", "softmax_normalized", "cosface", "cosface_projected", "center",
          "contrastive", "triplet", "regression_circle"}) {
        const std::string base = figs + "/mnist_" + cell + "_2d";
        CHECK_MESSAGE(std::filesystem::exists(base + ".csv"), cell);
        CHECK_MESSAGE(std::filesystem::exists(base + ".svg"), cell);
    }
    unsetenv("EMBEDLAB_DATA_DIR");
}

TEST_CASE("reproduction cells match the shipped config files") {
    const std::vector<std::pair<std::string, std::string>> mapping = {
        {"softmax", "softmax.cfg"},
        {"softmax_normalized", "softmax_normalized.cfg"},
        {"cosface", "cosface_m0.2.cfg"},
        {"cosface_projected", "cosface_projected.cfg"},
        {"center", "center.cfg"},
        {"contrastive", "contrastive.cfg"},
        {"triplet", "triplet.cfg"},
        {"regression_circle", "regression_circle.cfg"},
    };
    const std::vector<CellSpec> cells = reproduction_cells("mnist", 2, 42, 0, "figures");
    REQUIRE(cells.size() == mapping.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
        CHECK(cells[i].name == mapping[i].first);
        const std::string path =
            std::string(EMBEDLAB_SOURCE_DIR) + "/configs/" + mapping[i].second;
        TrainConfig shipped = load_train_config(path);
        shipped.out_dir = cells[i].config.out_dir;  // the only run-dependent field
        CHECK_MESSAGE(serialize_train_config(shipped) ==
                          serialize_train_config(cells[i].config),
                      mapping[i].second);
    }
}

TEST_CASE("margin-sweep configs differ only in the margin") {
    const std::string base = std::string(EMBEDLAB_SOURCE_DIR) + "/configs/";
    TrainConfig m0 = load_train_config(base + "cosface_m0.cfg");
    TrainConfig m005 = load_train_config(base + "cosface_m0.05.cfg");
    TrainConfig m02 = load_train_config(base + "cosface_m0.2.cfg");
    CHECK(m0.loss.margin == 0.0);
    CHECK(m005.loss.margin == 0.05);
    CHECK(m02.loss.margin == 0.2);
    m0.loss.margin = m02.loss.margin;
    m0.out_dir = m02.out_dir;
    m005.loss.margin = m02.loss.margin;
    m005.out_dir = m02.out_dir;
    CHECK(serialize_train_config(m0) == serialize_train_config(m02));
    CHECK(serialize_train_config(m005) == serialize_train_config(m02));
}
