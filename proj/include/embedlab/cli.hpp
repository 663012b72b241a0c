#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "embedlab/trainer.hpp"

namespace embedlab {

/// One cell of the reproduction grid: a full training configuration plus the
/// rendering treatment its figure gets.
struct CellSpec {
    std::string name;  // figure identifier, e.g. "cosface_projected"
    TrainConfig config;
    bool sphere_projected = false;  // draw the unit-norm projected view
};

/// The eight-figure grid for one dataset/dimension choice: softmax,
/// normalized softmax, cosface, cosface on the unit sphere, center,
/// contrastive, triplet, and circle-layout regression. epochs == 0 keeps the
/// shipped epoch count; figures_dir anchors every cell's output paths.
std::vector<CellSpec> reproduction_cells(const std::string& dataset, std::size_t dims,
                                         std::uint64_t seed, std::size_t epochs,
                                         const std::string& figures_dir);

/// Command-line driver. `args` excludes the program name. Exit codes: 0
/// success; 1 usage error (help text printed to err); 2 data/config/runtime
/// error (diagnostic printed to err).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace embedlab
