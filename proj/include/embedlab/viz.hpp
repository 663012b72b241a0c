#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "embedlab/data.hpp"
#include "embedlab/tensor.hpp"
#include "embedlab/trainer.hpp"

namespace embedlab {

/// Everything one scatter figure needs: the embedded points, their classes,
/// and whichever reference geometry the loss family carries (classifier
/// weight directions, class centers, layout targets).
struct EmbeddingSet {
    Tensor points;  // N x d, d in {2, 3}
    std::vector<std::size_t> labels;
    std::vector<std::string> class_names;

    Tensor weight_directions;  // d x M: column j scores class j
    Tensor centers;            // M x d
    Tensor targets;            // M x d
    bool has_weights = false;
    bool has_centers = false;
    bool has_targets = false;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return points.rank() == 2 ? points.extent(1) : 0; }
    void validate() const;
};

/// Embeds every sample and attaches the overlays the model's loss family
/// defines: head weights for the softmax family, class centers for center
/// loss, layout targets for regression. Deterministic.
EmbeddingSet embed_dataset(TrainedModel& model, const Dataset& ds);

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

/// Header `x,y[,z],label,class_name`, one row per sample, coordinates printed
/// with 17 significant digits so parsing returns the exact doubles.
std::string csv_text(const EmbeddingSet& es);
void export_csv(const EmbeddingSet& es, const std::string& path);

/// Inverse of csv_text (points, labels, class names; overlays do not travel
/// through CSV).
EmbeddingSet parse_csv(const std::string& text);
EmbeddingSet load_csv(const std::string& path);

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// Ten visually distinct class colors, also listed in docs/figures.md; class
/// j uses entry j % 10.
extern const std::array<const char*, 10> kClassPalette;

struct RenderOptions {
    double width = 720.0;
    double height = 720.0;
    double marker_radius = 3.0;
    bool legend = true;
    // 3-D view angles (orthographic); ignored for 2-D sets.
    double azimuth_deg = 45.0;
    double elevation_deg = 30.0;
};

/// The three standard views emitted per 3-D figure, as (azimuth, elevation).
inline constexpr std::array<std::array<double, 2>, 3> kDefaultViews3D = {
    {{45.0, 30.0}, {0.0, 0.0}, {90.0, 30.0}}};

/// Orthographic screen coordinates of N x 3 points under the documented
/// view rotation: azimuth spins the scene about +z, elevation tilts it about
/// +x; at azimuth 0, elevation 0 the y axis is depth and (x, z) is the
/// screen plane.
Tensor project_3d(const Tensor& points, double azimuth_deg, double elevation_deg);

/// View depth per point (larger = farther); renderers draw far points first.
std::vector<double> view_depth(const Tensor& points, double azimuth_deg,
                               double elevation_deg);

///// Standalone SVG scatter: one marker per sample colored by class, legend,
/// overlay rays/squares/crosses when present. 3-D sets are projected with the
/// options' view angles. Byte-deterministic; empty sets are an error.
std::string render_svg_text(const EmbeddingSet& es, const RenderOptions& opt);
void render_svg(const EmbeddingSet& es, const RenderOptions& opt, const std::string& path);

///// Unit-circle view of a 2-D set: every point is radially
/// projected onto the unit circle, drawn over a reference circle. Zero-norm
/// points are skipped; the skip count lands in *skipped_out (when non-null)
/// and in a comment inside the file.
std::string render_unit_circle_text(const EmbeddingSet& es, const RenderOptions& opt,
                                    std::size_t* skipped_out = nullptr);
void render_unit_circle_projection(const EmbeddingSet& es, const RenderOptions& opt,
                                   const std::string& path,
                                   std::size_t* skipped_out = nullptr);

}  // namespace embedlab
