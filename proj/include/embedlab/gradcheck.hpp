#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace embedlab {

/// One analytic-vs-central-difference comparison, aggregated over all checked
/// random draws for that target.
struct GradCheckCase {
    std::string name;        // "<loss>/<gradient target>"
    double max_error = 0.0;  // worst max_rel_error across the draws
    double tolerance = 1e-4;
    bool passed = false;
};

struct GradCheckReport {
    std::vector<GradCheckCase> cases;

    bool all_passed() const;
    double worst_error() const;
};

/// Loss-level sweep: for every loss family, the analytic gradient with
/// respect to the embedding batch (and the classifier-head parameters where
/// the loss uses a head) is compared against central finite differences at
/// `points` random draws. The stochastic structure of pair and triplet
/// losses is frozen per draw so the differences probe a fixed scalar
/// function.
GradCheckReport check_loss_gradients(std::uint64_t seed = 42, std::size_t points = 20);

/// End-to-end sweep: miniature networks containing every layer kind
/// (convolution, pooling, both dense layers, and each activation in either
/// the hidden or penultimate slot) are driven through every loss family, and
/// each parameter tensor's accumulated gradient is compared against central
/// finite differences of the whole scalar loss at `points` random draws.
GradCheckReport check_network_gradients(std::uint64_t seed = 42, std::size_t points = 20);

/// Scope dispatch: "losses", "network", or "all". Unknown scope -> ValueError.
GradCheckReport run_gradcheck(const std::string& scope, std::uint64_t seed = 42,
                              std::size_t points = 20);

/// One line per case plus a trailing verdict line.
std::string format_gradcheck(const GradCheckReport& report);

}  // namespace embedlab
