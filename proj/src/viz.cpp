#include "embedlab/viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "embedlab/error.hpp"

namespace embedlab {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Pixel coordinates: two decimals is sub-pixel and keeps files small.
std::string fmt_px(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (const char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

void write_file(const std::string& path, const std::string& bytes) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    const std::size_t put = std::fwrite(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    if (put != bytes.size()) throw IoError("short write on '" + path + "'");
}

std::string read_file(const std::string& path) {
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

const char* class_color(std::size_t label) { return kClassPalette[label % 10]; }

}  // namespace

const std::array<const char*, 10> kClassPalette = {
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
};

void EmbeddingSet::validate() const {
    if (points.rank() != 2) {
        throw DimensionError("embedding set points must be rank 2, got " + points.shape_str());
    }
    const std::size_t d = points.extent(1);
    if (d != 2 && d != 3) {
        throw DimensionError("embedding dimension must be 2 or 3, got " + std::to_string(d));
    }
    if (points.extent(0) != labels.size()) {
        throw DimensionError(std::to_string(points.extent(0)) + " points vs " +
                             std::to_string(labels.size()) + " labels");
    }
    for (const std::size_t y : labels) {
        if (y >= class_names.size()) {
            throw ValueError("label " + std::to_string(y) + " out of range for " +
                             std::to_string(class_names.size()) + " class names");
        }
    }
    if (has_weights &&
        (weight_directions.rank() != 2 || weight_directions.extent(0) != d)) {
        throw DimensionError("weight directions must be " + std::to_string(d) +
                             "xM, got " + weight_directions.shape_str());
    }
    if (has_centers && (centers.rank() != 2 || centers.extent(1) != d)) {
        throw DimensionError("centers must be Mx" + std::to_string(d) + ", got " +
                             centers.shape_str());
    }
    if (has_targets && (targets.rank() != 2 || targets.extent(1) != d)) {
        throw DimensionError("targets must be Mx" + std::to_string(d) + ", got " +
                             targets.shape_str());
    }
}

EmbeddingSet embed_dataset(TrainedModel& model, const Dataset& ds) {
    EmbeddingSet es;
    es.points = embed_points(model.net.extractor, ds);
    es.labels = ds.labels;
    es.class_names = ds.class_names;
    switch (model.cfg.loss.kind) {
        case LossKind::softmax:
        case LossKind::softmax_normalized:
        case LossKind::cosface:
            es.weight_directions = model.net.head.W;
            es.has_weights = true;
            break;
        case LossKind::center:
            if (model.has_centers) {
                es.centers = model.centers.centers;
                es.has_centers = true;
            }
            break;
        case LossKind::regression:
            if (model.has_references) {
                es.targets = model.reference_points;
                es.has_targets = true;
            }
            break;
        case LossKind::contrastive:
        case LossKind::triplet:
            break;  // pair- and triplet-shaped spaces render bare
    }
    es.validate();
    return es;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::string csv_text(const EmbeddingSet& es) {
    es.validate();
    const std::size_t d = es.dim();
    std::string out = d == 3 ? "x,y,z,label,class_name\n" : "x,y,label,class_name\n";
    for (std::size_t i = 0; i < es.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            out += fmt_double(es.points.at(i, j));
            out += ',';
        }
        out += std::to_string(es.labels[i]);
        out += ',';
        out += es.class_names[es.labels[i]];
        out += '\n';
    }
    return out;
}

void export_csv(const EmbeddingSet& es, const std::string& path) {
    write_file(path, csv_text(es));
}

EmbeddingSet parse_csv(const std::string& text) {
    std::stringstream ss(text);
    std::string line;
    if (!std::getline(ss, line)) throw FormatError("empty CSV");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t d = 0;
    if (line == "x,y,label,class_name") d = 2;
    else if (line == "x,y,z,label,class_name") d = 3;
    else throw FormatError("unrecognized CSV header '" + line + "'");

    std::vector<double> coords;
    std::vector<std::size_t> labels;
    std::vector<std::string> names_by_row;
    std::size_t lineno = 1;
    while (std::getline(ss, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        // Coordinates and label occupy the first d+1 fields; the class name
        // is everything after them, so names may contain commas.
        std::size_t pos = 0;
        for (std::size_t field = 0; field < d + 1; ++field) {
            const std::size_t comma = line.find(',', pos);
            if (comma == std::string::npos) {
                throw FormatError("CSV line " + std::to_string(lineno) +
                                  ": expected " + std::to_string(d + 2) + " fields");
            }
            const std::string cell = line.substr(pos, comma - pos);
            try {
                if (field < d) {
                    std::size_t used = 0;
                    coords.push_back(std::stod(cell, &used));
                    if (used != cell.size()) throw std::invalid_argument(cell);
                } else {
                    std::size_t used = 0;
                    labels.push_back(std::stoull(cell, &used));
                    if (used != cell.size()) throw std::invalid_argument(cell);
                }
            } catch (const std::exception&) {
                throw FormatError("CSV line " + std::to_string(lineno) + ": bad value '" +
                                  cell + "'");
            }
            pos = comma + 1;
        }
        names_by_row.push_back(line.substr(pos));
    }
    if (labels.empty()) throw FormatError("CSV has no data rows");

    EmbeddingSet es;
    es.points = Tensor({labels.size(), d}, std::move(coords));
    es.labels = labels;
    std::size_t max_label = 0;
    for (const std::size_t y : labels) max_label = std::max(max_label, y);
    es.class_names.resize(labels.empty() ? 0 : max_label + 1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        es.class_names[labels[i]] = names_by_row[i];
    }
    for (std::size_t c = 0; c < es.class_names.size(); ++c) {
        if (es.class_names[c].empty()) es.class_names[c] = "class " + std::to_string(c);
    }
    es.validate();
    return es;
}

EmbeddingSet load_csv(const std::string& path) { return parse_csv(read_file(path)); }

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

namespace {

struct View {
    double ca, sa, ce, se;
};

View make_view(double azimuth_deg, double elevation_deg) {
    const double az = azimuth_deg * kPi / 180.0;
    const double el = elevation_deg * kPi / 180.0;
    return {std::cos(az), std::sin(az), std::cos(el), std::sin(el)};
}

// Scene rotation Rx(el) * Rz(az); screen = (x', z'), depth = y'.
void project_point(const View& v, double x, double y, double z, double& sx, double& sy,
                   double& depth) {
    const double x1 = v.ca * x - v.sa * y;
    const double y1 = v.sa * x + v.ca * y;
    sx = x1;
    sy = v.se * y1 + v.ce * z;
    depth = v.ce * y1 - v.se * z;
}

}  // namespace

Tensor project_3d(const Tensor& points, double azimuth_deg, double elevation_deg) {
    if (points.rank() != 2 || points.extent(1) != 3) {
        throw DimensionError("project_3d expects Nx3 points, got " + points.shape_str());
    }
    const View v = make_view(azimuth_deg, elevation_deg);
    Tensor out({points.extent(0), 2});
    for (std::size_t i = 0; i < points.extent(0); ++i) {
        double sx, sy, depth;
        project_point(v, points.at(i, 0), points.at(i, 1), points.at(i, 2), sx, sy, depth);
        out.at(i, 0) = sx;
        out.at(i, 1) = sy;
    }
    return out;
}

std::vector<double> view_depth(const Tensor& points, double azimuth_deg,
                               double elevation_deg) {
    if (points.rank() != 2 || points.extent(1) != 3) {
        throw DimensionError("view_depth expects Nx3 points, got " + points.shape_str());
    }
    const View v = make_view(azimuth_deg, elevation_deg);
    std::vector<double> out(points.extent(0));
    for (std::size_t i = 0; i < points.extent(0); ++i) {
        double sx, sy, depth;
        project_point(v, points.at(i, 0), points.at(i, 1), points.at(i, 2), sx, sy, depth);
        out[i] = depth;
    }
    return out;
}

// ---------------------------------------------------------------------------
// SVG rendering
// ---------------------------------------------------------------------------

namespace {

/// Affine data-plane -> pixel mapping with a uniform scale (aspect preserved)
/// and flipped y.
struct PixelMap {
    double scale, cx, cy, px_cx, px_cy;

    double x(double data_x) const { return px_cx + (data_x - cx) * scale; }
    double y(double data_y) const { return px_cy - (data_y - cy) * scale; }
};

struct Bounds {
    double lo_x = 0.0, hi_x = 0.0, lo_y = 0.0, hi_y = 0.0;
    bool any = false;

    void add(double x, double y) {
        if (!any) {
            lo_x = hi_x = x;
            lo_y = hi_y = y;
            any = true;
            return;
        }
        lo_x = std::min(lo_x, x);
        hi_x = std::max(hi_x, x);
        lo_y = std::min(lo_y, y);
        hi_y = std::max(hi_y, y);
    }
};

PixelMap fit_bounds(const Bounds& b, const RenderOptions& opt) {
    double span_x = b.hi_x - b.lo_x;
    double span_y = b.hi_y - b.lo_y;
    if (span_x <= 0.0) span_x = 1.0;
    if (span_y <= 0.0) span_y = 1.0;
    const double margin = 0.08;
    const double usable_w = opt.width * (1.0 - 2.0 * margin);
    const double usable_h = opt.height * (1.0 - 2.0 * margin);
    const double scale = std::min(usable_w / span_x, usable_h / span_y);
    return {scale, (b.lo_x + b.hi_x) / 2.0, (b.lo_y + b.hi_y) / 2.0, opt.width / 2.0,
            opt.height / 2.0};
}

/// Flat 2-D drawing geometry extracted from a (possibly 3-D) embedding set:
/// everything the renderer places, already projected, plus far-first order.
struct Scene {
    Tensor pts;                      // N x 2
    std::vector<std::size_t> order;  // marker draw order
    Tensor weights;                  // 2 x M when has_weights
    Tensor centers;                  // M x 2 when has_centers
    Tensor targets;                  // M x 2 when has_targets
};

Scene flatten_scene(const EmbeddingSet& es, const RenderOptions& opt) {
    Scene sc;
    const std::size_t n = es.size();
    sc.order.resize(n);
    std::iota(sc.order.begin(), sc.order.end(), 0);
    if (es.dim() == 2) {
        sc.pts = es.points;
        if (es.has_weights) sc.weights = es.weight_directions;
        if (es.has_centers) sc.centers = es.centers;
        if (es.has_targets) sc.targets = es.targets;
        return sc;
    }
    sc.pts = project_3d(es.points, opt.azimuth_deg, opt.elevation_deg);
    const std::vector<double> depth =
        view_depth(es.points, opt.azimuth_deg, opt.elevation_deg);
    // Painter's algorithm: farthest first; index order breaks ties so the
    // rendering is reproducible.
    std::stable_sort(sc.order.begin(), sc.order.end(),
                     [&depth](std::size_t a, std::size_t b) { return depth[a] > depth[b]; });
    if (es.has_weights) {
        // Columns are directions; project them as points (origin-anchored).
        const std::size_t m = es.weight_directions.extent(1);
        Tensor tips({m, 3});
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t k = 0; k < 3; ++k) tips.at(j, k) = es.weight_directions.at(k, j);
        }
        const Tensor proj = project_3d(tips, opt.azimuth_deg, opt.elevation_deg);
        sc.weights = Tensor({2, m});
        for (std::size_t j = 0; j < m; ++j) {
            sc.weights.at(0, j) = proj.at(j, 0);
            sc.weights.at(1, j) = proj.at(j, 1);
        }
    }
    if (es.has_centers) sc.centers = project_3d(es.centers, opt.azimuth_deg, opt.elevation_deg);
    if (es.has_targets) sc.targets = project_3d(es.targets, opt.azimuth_deg, opt.elevation_deg);
    return sc;
}

void open_svg(std::string& out, const RenderOptions& opt) {
    out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt_px(opt.width) +
           "\" height=\"" + fmt_px(opt.height) + "\" viewBox=\"0 0 " + fmt_px(opt.width) +
           " " + fmt_px(opt.height) + "\">\n";
    out += "<rect x=\"0\" y=\"0\" width=\"" + fmt_px(opt.width) + "\" height=\"" +
           fmt_px(opt.height) + "\" fill=\"#ffffff\"/>\n";
}

void draw_markers(std::string& out, const Scene& sc, const EmbeddingSet& es,
                  const PixelMap& map, const RenderOptions& opt) {
    out += "<g class=\"pts\">\n";
    for (const std::size_t i : sc.order) {
        out += "<circle class=\"pt\" cx=\"" + fmt_px(map.x(sc.pts.at(i, 0))) + "\" cy=\"" +
               fmt_px(map.y(sc.pts.at(i, 1))) + "\" r=\"" + fmt_px(opt.marker_radius) +
               "\" fill=\"" + class_color(es.labels[i]) + "\" fill-opacity=\"0.75\" data-x=\"" +
               fmt_double(sc.pts.at(i, 0)) + "\" data-y=\"" + fmt_double(sc.pts.at(i, 1)) +
               "\"/>\n";
    }
    out += "</g>\n";
}

void draw_overlays(std::string& out, const Scene& sc, const PixelMap& map) {
    if (sc.weights.size() > 0) {
        // Rays from the data origin along each class weight direction, with a
        // fixed pixel length so direction survives any weight magnitude.
        out += "<g class=\"weights\">\n";
        const double ray_px = 150.0;
        for (std::size_t j = 0; j < sc.weights.extent(1); ++j) {
            const double wx = sc.weights.at(0, j), wy = sc.weights.at(1, j);
            const double norm = std::sqrt(wx * wx + wy * wy);
            if (norm <= 1e-12) continue;
            const double x0 = map.x(0.0), y0 = map.y(0.0);
            const double x1 = x0 + ray_px * wx / norm;
            const double y1 = y0 - ray_px * wy / norm;
            out += "<line class=\"w\" x1=\"" + fmt_px(x0) + "\" y1=\"" + fmt_px(y0) +
                   "\" x2=\"" + fmt_px(x1) + "\" y2=\"" + fmt_px(y1) + "\" stroke=\"" +
                   class_color(j) + "\" stroke-width=\"2\" data-dx=\"" + fmt_double(wx) +
                   "\" data-dy=\"" + fmt_double(wy) + "\"/>\n";
        }
        out += "</g>\n";
    }
    if (sc.centers.size() > 0) {
        out += "<g class=\"centers\">\n";
        const double half = 5.0;
        for (std::size_t j = 0; j < sc.centers.extent(0); ++j) {
            const double px = map.x(sc.centers.at(j, 0));
            const double py = map.y(sc.centers.at(j, 1));
            out += "<rect class=\"c\" x=\"" + fmt_px(px - half) + "\" y=\"" +
                   fmt_px(py - half) + "\" width=\"" + fmt_px(2 * half) + "\" height=\"" +
                   fmt_px(2 * half) + "\" fill=\"" + class_color(j) +
                   "\" stroke=\"#000000\" stroke-width=\"1\" data-x=\"" +
                   fmt_double(sc.centers.at(j, 0)) + "\" data-y=\"" +
                   fmt_double(sc.centers.at(j, 1)) + "\"/>\n";
        }
        out += "</g>\n";
    }
    if (sc.targets.size() > 0) {
        out += "<g class=\"targets\">\n";
        const double arm = 6.0;
        for (std::size_t j = 0; j < sc.targets.extent(0); ++j) {
            const double px = map.x(sc.targets.at(j, 0));
            const double py = map.y(sc.targets.at(j, 1));
            out += "<g class=\"t\" data-x=\"" + fmt_double(sc.targets.at(j, 0)) +
                   "\" data-y=\"" + fmt_double(sc.targets.at(j, 1)) + "\">";
            out += "<line x1=\"" + fmt_px(px - arm) + "\" y1=\"" + fmt_px(py) + "\" x2=\"" +
                   fmt_px(px + arm) + "\" y2=\"" + fmt_px(py) +
                   "\" stroke=\"#000000\" stroke-width=\"2\"/>";
            out += "<line x1=\"" + fmt_px(px) + "\" y1=\"" + fmt_px(py - arm) + "\" x2=\"" +
                   fmt_px(px) + "\" y2=\"" + fmt_px(py + arm) +
                   "\" stroke=\"#000000\" stroke-width=\"2\"/>";
            out += "</g>\n";
        }
        out += "</g>\n";
    }
}

void draw_legend(std::string& out, const EmbeddingSet& es, const RenderOptions& opt) {
    if (!opt.legend) return;
    out += "<g class=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n";
    const double x = opt.width - 150.0;
    double y = 18.0;
    for (std::size_t c = 0; c < es.class_names.size(); ++c) {
        out += "<rect x=\"" + fmt_px(x) + "\" y=\"" + fmt_px(y - 9) +
               "\" width=\"10\" height=\"10\" fill=\"" + class_color(c) + "\"/>";
        out += "<text x=\"" + fmt_px(x + 15) + "\" y=\"" + fmt_px(y) + "\">" +
               xml_escape(es.class_names[c]) + "</text>\n";
        y += 16.0;
    }
    out += "</g>\n";
}

}  // namespace

std::string render_svg_text(const EmbeddingSet& es, const RenderOptions& opt) {
    es.validate();
    if (es.size() == 0) throw ValueError("cannot render an empty embedding set");

    const Scene sc = flatten_scene(es, opt);
    Bounds b;
    for (std::size_t i = 0; i < sc.pts.extent(0); ++i) b.add(sc.pts.at(i, 0), sc.pts.at(i, 1));
    if (sc.centers.size() > 0) {
        for (std::size_t j = 0; j < sc.centers.extent(0); ++j) {
            b.add(sc.centers.at(j, 0), sc.centers.at(j, 1));
        }
    }
    if (sc.targets.size() > 0) {
        for (std::size_t j = 0; j < sc.targets.extent(0); ++j) {
            b.add(sc.targets.at(j, 0), sc.targets.at(j, 1));
        }
    }
    if (sc.weights.size() > 0) b.add(0.0, 0.0);  // rays start at the origin
    const PixelMap map = fit_bounds(b, opt);

    std::string out;
    open_svg(out, opt);
    draw_markers(out, sc, es, map, opt);
    draw_overlays(out, sc, map);
    draw_legend(out, es, opt);
    out += "</svg>\n";
    return out;
}

void render_svg(const EmbeddingSet& es, const RenderOptions& opt, const std::string& path) {
    write_file(path, render_svg_text(es, opt));
}

std::string render_unit_circle_text(const EmbeddingSet& es, const RenderOptions& opt,
                                    std::size_t* skipped_out) {
    es.validate();
    if (es.dim() != 2) {
        throw DimensionError("unit-circle projection is 2-D only, got dimension " +
                             std::to_string(es.dim()));
    }
    if (es.size() == 0) throw ValueError("cannot render an empty embedding set");

    std::vector<std::size_t> keep;
    Tensor unit({es.size(), 2});
    std::size_t skipped = 0;
    for (std::size_t i = 0; i < es.size(); ++i) {
        const double x = es.points.at(i, 0), y = es.points.at(i, 1);
        const double norm = std::sqrt(x * x + y * y);
        if (norm <= 1e-12) {
            ++skipped;
            continue;
        }
        unit.at(i, 0) = x / norm;
        unit.at(i, 1) = y / norm;
        keep.push_back(i);
    }
    if (skipped_out != nullptr) *skipped_out = skipped;

    // The drawing plane is fixed: the unit circle plus a small margin.
    Bounds b;
    b.add(-1.2, -1.2);
    b.add(1.2, 1.2);
    const PixelMap map = fit_bounds(b, opt);

    std::string out;
    open_svg(out, opt);
    out += "<!-- skipped " + std::to_string(skipped) + " zero-norm points -->\n";
    out += "<circle class=\"ref\" cx=\"" + fmt_px(map.x(0.0)) + "\" cy=\"" +
           fmt_px(map.y(0.0)) + "\" r=\"" + fmt_px(map.scale) +
           "\" fill=\"none\" stroke=\"#888888\" stroke-width=\"1\" stroke-dasharray=\"4 3\"/>\n";
    out += "<g class=\"pts\">\n";
    for (const std::size_t i : keep) {
        out += "<circle class=\"pt\" cx=\"" + fmt_px(map.x(unit.at(i, 0))) + "\" cy=\"" +
               fmt_px(map.y(unit.at(i, 1))) + "\" r=\"" + fmt_px(opt.marker_radius) +
               "\" fill=\"" + class_color(es.labels[i]) + "\" fill-opacity=\"0.75\" data-x=\"" +
               fmt_double(unit.at(i, 0)) + "\" data-y=\"" + fmt_double(unit.at(i, 1)) +
               "\"/>\n";
    }
    out += "</g>\n";
    if (es.has_weights && es.weight_directions.extent(0) == 2) {
        Scene sc;
        sc.weights = es.weight_directions;
        draw_overlays(out, sc, map);
    }
    draw_legend(out, es, opt);
    out += "</svg>\n";
    return out;
}

void render_unit_circle_projection(const EmbeddingSet& es, const RenderOptions& opt,
                                   const std::string& path, std::size_t* skipped_out) {
    write_file(path, render_unit_circle_text(es, opt, skipped_out));
}

}  // namespace embedlab
