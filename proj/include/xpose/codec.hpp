#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "xpose/errors.hpp"
#include "xpose/geometry.hpp"

namespace xpose {

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

constexpr std::array<int, 3> kStrides{8, 16, 32};

/// Anchor (width, height) in pixels, one list per output scale.
using AnchorSet = std::array<std::vector<Eigen::Vector2d>, 3>;

inline AnchorSet default_anchors() {
    return {{{{10, 13}, {16, 30}, {33, 23}},
             {{30, 61}, {62, 45}, {59, 119}},
             {{116, 90}, {156, 198}, {373, 326}}}};
}

struct ScaleGrid {
    int stride = 0;
    int width = 0;   ///< cells along u
    int height = 0;  ///< cells along v
    std::vector<Eigen::Vector2d> anchors_px;

    std::size_t cell_count() const { return static_cast<std::size_t>(width) * height; }
};

/// Multi-scale output grid over a stride-32-padded input image.
struct GridLayout {
    int image_width_px = 0;
    int image_height_px = 0;
    int padded_width_px = 0;
    int padded_height_px = 0;
    // Padding is applied on the bottom/right only, so decoded pixels need no
    // shift; the offsets stay recorded for the pixel mapping regardless.
    int pad_left_px = 0;
    int pad_top_px = 0;
    std::array<ScaleGrid, 3> scales;

    std::size_t total_predictions() const {
        std::size_t total = 0;
        for (const auto& s : scales) total += s.cell_count() * s.anchors_px.size();
        return total;
    }
};

inline GridLayout make_grid_layout(int width_px, int height_px,
                                   const AnchorSet& anchors = default_anchors()) {
    if (width_px <= 0 || height_px <= 0)
        throw InvalidGeometryError("grid layout needs a positive image size");
    for (const auto& list : anchors)
        if (list.empty()) throw ConfigError("every scale needs at least one anchor");

    GridLayout layout;
    layout.image_width_px = width_px;
    layout.image_height_px = height_px;
    layout.padded_width_px = (width_px + 31) / 32 * 32;
    layout.padded_height_px = (height_px + 31) / 32 * 32;
    for (std::size_t s = 0; s < kStrides.size(); ++s) {
        layout.scales[s].stride = kStrides[s];
        layout.scales[s].width = layout.padded_width_px / kStrides[s];
        layout.scales[s].height = layout.padded_height_px / kStrides[s];
        layout.scales[s].anchors_px = anchors[s];
    }
    return layout;
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Scaled-sigmoid transfer for the object center: each axis maps to
/// (cell - 0.5, cell + 1.5), so centers near a cell edge stay reachable.
inline Point2 decode_center(double tx, double ty, int cell_x, int cell_y) {
    return {2.0 * sigmoid(tx) - 0.5 + cell_x, 2.0 * sigmoid(ty) - 0.5 + cell_y};
}

/// Box corners use a plain additive offset from the cell corner; they may land
/// arbitrarily far from the owning cell.
inline std::array<Point2, 8> decode_corners(std::span<const double> raw_xy16, int cell_x,
                                            int cell_y) {
    if (raw_xy16.size() != 16) throw ShapeMismatchError("corner decoding expects 16 raw values");
    std::array<Point2, 8> out;
    for (int k = 0; k < 8; ++k)
        out[k] = {raw_xy16[2 * k] + cell_x, raw_xy16[2 * k + 1] + cell_y};
    return out;
}

// ---------------------------------------------------------------------------
// Confidence
// ---------------------------------------------------------------------------

/// Grid-adaptive confidence: exponential falloff in the distance D (grid
/// units) with cutoff at d_T = beta * sqrt(W^2 + H^2). Normalized so c(0) = 1,
/// which keeps the values usable as cross-entropy targets.
inline double confidence(double distance_grid_units, double grid_w, double grid_h,
                         double alpha = 2.0, double beta = 0.2) {
    const double cutoff = beta * std::hypot(grid_w, grid_h);
    if (!(distance_grid_units < cutoff)) return 0.0;
    return std::exp(-alpha * distance_grid_units / cutoff);
}

/// Unnormalized variant (c(0) = e^alpha), kept for comparison.
inline double confidence_unnormalized(double distance_grid_units, double grid_w, double grid_h,
                                      double alpha = 2.0, double beta = 0.2) {
    const double cutoff = beta * std::hypot(grid_w, grid_h);
    if (!(distance_grid_units < cutoff)) return 0.0;
    return std::exp(alpha * (1.0 - distance_grid_units / cutoff));
}

// ---------------------------------------------------------------------------
// Predictions
// ---------------------------------------------------------------------------

/// One (scale, cell, anchor) slot: 19 raw values — center logits, 8 corner
/// offsets, objectness logit.
struct CellPrediction {
    static constexpr int kValueCount = 19;

    int scale = 0;
    int cell_x = 0;
    int cell_y = 0;
    int anchor = 0;
    std::array<double, kValueCount> raw{};

    double objectness() const { return sigmoid(raw[18]); }

    /// Decoded keypoints in grid units of this scale; index 0 is the center.
    std::array<Point2, 9> decode_grid_points() const {
        std::array<Point2, 9> pts;
        pts[0] = decode_center(raw[0], raw[1], cell_x, cell_y);
        const auto corners = decode_corners(std::span<const double>(raw).subspan(2, 16), cell_x, cell_y);
        std::copy(corners.begin(), corners.end(), pts.begin() + 1);
        return pts;
    }
};

/// Dense raw prediction tensors for a whole layout.
struct PredictionGrids {
    GridLayout layout;
    std::array<std::vector<double>, 3> values;  // [scale] -> H*W*n_a*19

    static PredictionGrids zeros(const GridLayout& layout) {
        PredictionGrids g;
        g.layout = layout;
        for (std::size_t s = 0; s < 3; ++s)
            g.values[s].assign(layout.scales[s].cell_count() * layout.scales[s].anchors_px.size() *
                                   CellPrediction::kValueCount,
                               0.0);
        return g;
    }

    std::size_t offset(int scale, int cell_x, int cell_y, int anchor) const {
        const auto& grid = layout.scales[scale];
        const std::size_t cell = static_cast<std::size_t>(cell_y) * grid.width + cell_x;
        return (cell * grid.anchors_px.size() + anchor) * CellPrediction::kValueCount;
    }

    double* at(int scale, int cell_x, int cell_y, int anchor) {
        return values[scale].data() + offset(scale, cell_x, cell_y, anchor);
    }
    const double* at(int scale, int cell_x, int cell_y, int anchor) const {
        return values[scale].data() + offset(scale, cell_x, cell_y, anchor);
    }

    void insert(const CellPrediction& p) {
        std::copy(p.raw.begin(), p.raw.end(), at(p.scale, p.cell_x, p.cell_y, p.anchor));
    }

    CellPrediction extract(int scale, int cell_x, int cell_y, int anchor) const {
        CellPrediction p{scale, cell_x, cell_y, anchor, {}};
        const double* src = at(scale, cell_x, cell_y, anchor);
        std::copy(src, src + CellPrediction::kValueCount, p.raw.begin());
        return p;
    }
};

// ---------------------------------------------------------------------------
// Target encoding
// ---------------------------------------------------------------------------

struct CodecParams {
    double alpha = 2.0;  ///< confidence sharpness
    double beta = 0.2;   ///< confidence cutoff fraction of the grid diagonal
    double anchor_ratio_threshold = 4.0;
    double lambda_points = 1.0;
    double lambda_conf = 1.0;
    bool normalized_confidence = true;

    double eval_confidence(double d, double w, double h) const {
        return normalized_confidence ? confidence(d, w, h, alpha, beta)
                                     : confidence_unnormalized(d, w, h, alpha, beta);
    }
};

struct TargetAssignment {
    int scale = 0;
    int cell_x = 0;
    int cell_y = 0;
    int anchor = 0;
    std::array<Point2, 9> points_grid;  ///< ground truth in this scale's grid units
    double confidence = 0.0;            ///< cell-center objectness target
};

struct TargetEncoding {
    std::vector<TargetAssignment> assignments;
    std::array<Eigen::Vector2i, 3> grid_size{};  // snapshot for shape checks

    bool empty() const { return assignments.empty(); }
};

/// Assigns the 9 ground-truth keypoints (pixels, index 0 = center) to grid
/// cells. Anchors match when both extent/anchor ratios stay under the
/// threshold; the cell containing the center always participates, plus the
/// horizontally and vertically nearest neighbors when the center sits off the
/// cell midpoint. Returns an empty encoding when the center is outside the
/// padded image.
inline TargetEncoding encode_targets(const std::array<Point2, 9>& points_px,
                                     const GridLayout& layout, const CodecParams& params = {}) {
    TargetEncoding enc;
    for (std::size_t s = 0; s < 3; ++s)
        enc.grid_size[s] = {layout.scales[s].width, layout.scales[s].height};

    const Point2 center_px(points_px[0].x() + layout.pad_left_px,
                           points_px[0].y() + layout.pad_top_px);
    if (center_px.x() < 0.0 || center_px.x() >= layout.padded_width_px || center_px.y() < 0.0 ||
        center_px.y() >= layout.padded_height_px)
        return enc;

    double min_u = points_px[0].x(), max_u = min_u;
    double min_v = points_px[0].y(), max_v = min_v;
    for (const auto& p : points_px) {
        min_u = std::min(min_u, p.x());
        max_u = std::max(max_u, p.x());
        min_v = std::min(min_v, p.y());
        max_v = std::max(max_v, p.y());
    }
    const double extent_w = max_u - min_u;
    const double extent_h = max_v - min_v;

    const auto ratio = [](double extent, double anchor) {
        if (extent <= 0.0 || anchor <= 0.0) return std::numeric_limits<double>::infinity();
        return std::max(extent / anchor, anchor / extent);
    };

    for (int s = 0; s < 3; ++s) {
        const auto& grid = layout.scales[s];
        const double inv_stride = 1.0 / grid.stride;

        std::array<Point2, 9> points_grid;
        for (int k = 0; k < 9; ++k)
            points_grid[k] = {(points_px[k].x() + layout.pad_left_px) * inv_stride,
                              (points_px[k].y() + layout.pad_top_px) * inv_stride};
        const Point2 center = points_grid[0];
        const int cx = std::clamp(static_cast<int>(std::floor(center.x())), 0, grid.width - 1);
        const int cy = std::clamp(static_cast<int>(std::floor(center.y())), 0, grid.height - 1);
        const double fx = center.x() - std::floor(center.x());
        const double fy = center.y() - std::floor(center.y());

        std::vector<std::pair<int, int>> cells{{cx, cy}};
        if (fx < 0.5 && cx - 1 >= 0) cells.emplace_back(cx - 1, cy);
        if (fx > 0.5 && cx + 1 < grid.width) cells.emplace_back(cx + 1, cy);
        if (fy < 0.5 && cy - 1 >= 0) cells.emplace_back(cx, cy - 1);
        if (fy > 0.5 && cy + 1 < grid.height) cells.emplace_back(cx, cy + 1);

        for (std::size_t a = 0; a < grid.anchors_px.size(); ++a) {
            const double worst = std::max(ratio(extent_w, grid.anchors_px[a].x()),
                                          ratio(extent_h, grid.anchors_px[a].y()));
            if (!(worst < params.anchor_ratio_threshold)) continue;
            for (const auto& [ix, iy] : cells) {
                TargetAssignment t;
                t.scale = s;
                t.cell_x = ix;
                t.cell_y = iy;
                t.anchor = static_cast<int>(a);
                t.points_grid = points_grid;
                const double d = std::abs(center.x() - (ix + 0.5)) + std::abs(center.y() - (iy + 0.5));
                t.confidence = params.eval_confidence(d, grid.width, grid.height);
                enc.assignments.push_back(t);
            }
        }
    }
    std::sort(enc.assignments.begin(), enc.assignments.end(), [](const auto& a, const auto& b) {
        return std::tuple(a.scale, a.cell_y, a.cell_x, a.anchor) <
               std::tuple(b.scale, b.cell_y, b.cell_x, b.anchor);
    });
    return enc;
}

// ---------------------------------------------------------------------------
// Best-prediction selection
// ---------------------------------------------------------------------------

struct BestPrediction {
    CellPrediction cell;
    double confidence = 0.0;
    std::array<Point2, 9> points_grid;
    std::array<Point2, 9> points_px;
};

namespace detail {

inline BestPrediction finalize_best(const CellPrediction& cell, const GridLayout& layout) {
    BestPrediction best;
    best.cell = cell;
    best.confidence = cell.objectness();
    best.points_grid = cell.decode_grid_points();
    const double stride = layout.scales[cell.scale].stride;
    for (int k = 0; k < 9; ++k)
        best.points_px[k] = {best.points_grid[k].x() * stride - layout.pad_left_px,
                             best.points_grid[k].y() * stride - layout.pad_top_px};
    return best;
}

}  // namespace detail

/// Highest-objectness slot of the dense grids; ties keep the lowest
/// (scale, cell, anchor) in scan order.
inline BestPrediction select_best(const PredictionGrids& grids) {
    double best_logit = -std::numeric_limits<double>::infinity();
    CellPrediction best;
    bool found = false;
    for (int s = 0; s < 3; ++s) {
        const auto& grid = grids.layout.scales[s];
        const int n_a = static_cast<int>(grid.anchors_px.size());
        for (int cy = 0; cy < grid.height; ++cy)
            for (int cx = 0; cx < grid.width; ++cx)
                for (int a = 0; a < n_a; ++a) {
                    const double logit_value =
                        grids.at(s, cx, cy, a)[CellPrediction::kValueCount - 1];
                    if (logit_value > best_logit) {
                        best_logit = logit_value;
                        best = grids.extract(s, cx, cy, a);
                        found = true;
                    }
                }
    }
    if (!found) throw DataError("prediction grids are empty");
    return detail::finalize_best(best, grids.layout);
}

/// Highest-objectness candidate from a sparse record list.
inline BestPrediction select_best(std::span<const CellPrediction> candidates,
                                  const GridLayout& layout) {
    if (candidates.empty()) throw DataError("no prediction candidates to select from");
    const auto key = [&layout](const CellPrediction& p) {
        return std::tuple(p.scale, static_cast<long>(p.cell_y) * layout.scales[p.scale].width +
                                       p.cell_x,
                          p.anchor);
    };
    const CellPrediction* best = &candidates[0];
    for (const auto& p : candidates) {
        if (p.raw[18] > best->raw[18] || (p.raw[18] == best->raw[18] && key(p) < key(*best)))
            best = &p;
    }
    return detail::finalize_best(*best, layout);
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct LossBreakdown {
    double points_loss = 0.0;
    double conf_loss = 0.0;
    double total = 0.0;
    double lambda_points = 1.0;
    double lambda_conf = 1.0;
};

namespace detail {

/// Compensated (Kahan) accumulator so reductions stay order-independent to
/// machine precision.
struct KahanSum {
    double sum = 0.0;
    double carry = 0.0;
    void add(double x) {
        const double y = x - carry;
        const double t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
};

}  // namespace detail

/// Composite loss: mean absolute error over the assigned cells' 18 keypoint
/// coordinates plus binary cross-entropy between predicted objectness and the
/// confidence targets over every slot. Assigned slots take a distance-based
/// target from their own decoded points; all other slots target zero.
inline LossBreakdown compute_loss(const PredictionGrids& pred, const TargetEncoding& target,
                                  const CodecParams& params = {}) {
    for (int s = 0; s < 3; ++s) {
        const auto& grid = pred.layout.scales[s];
        if (target.grid_size[s].x() != grid.width || target.grid_size[s].y() != grid.height)
            throw ShapeMismatchError("prediction grids do not match the target encoding layout");
        for (const auto& t : target.assignments)
            if (t.scale == s && (t.cell_x >= grid.width || t.cell_y >= grid.height ||
                                 t.anchor >= static_cast<int>(grid.anchors_px.size())))
                throw ShapeMismatchError("target assignment outside the prediction grids");
    }

    LossBreakdown loss;
    loss.lambda_points = params.lambda_points;
    loss.lambda_conf = params.lambda_conf;

    // Keypoint term over assigned slots (assignments arrive canonically sorted).
    detail::KahanSum point_sum;
    for (const auto& t : target.assignments) {
        const CellPrediction p = pred.extract(t.scale, t.cell_x, t.cell_y, t.anchor);
        const auto decoded = p.decode_grid_points();
        for (int k = 0; k < 9; ++k) {
            point_sum.add(std::abs(decoded[k].x() - t.points_grid[k].x()));
            point_sum.add(std::abs(decoded[k].y() - t.points_grid[k].y()));
        }
    }
    if (!target.assignments.empty())
        loss.points_loss = point_sum.sum / (18.0 * static_cast<double>(target.assignments.size()));

    // Confidence targets: distance-based for assigned slots, zero elsewhere.
    detail::KahanSum conf_sum;
    std::size_t slot_count = 0;
    constexpr double kEps = 1e-12;
    for (int s = 0; s < 3; ++s) {
        const auto& grid = pred.layout.scales[s];
        const int n_a = static_cast<int>(grid.anchors_px.size());
        for (int cy = 0; cy < grid.height; ++cy)
            for (int cx = 0; cx < grid.width; ++cx)
                for (int a = 0; a < n_a; ++a) {
                    const CellPrediction p = pred.extract(s, cx, cy, a);
                    double conf_target = 0.0;
                    for (const auto& t : target.assignments) {
                        if (t.scale != s || t.cell_x != cx || t.cell_y != cy || t.anchor != a)
                            continue;
                        const auto decoded = p.decode_grid_points();
                        double dist = 0.0;
                        for (int k = 0; k < 9; ++k)
                            dist += std::abs(decoded[k].x() - t.points_grid[k].x()) +
                                    std::abs(decoded[k].y() - t.points_grid[k].y());
                        conf_target = params.eval_confidence(dist / 9.0, grid.width, grid.height);
                        break;
                    }
                    const double prob = std::clamp(p.objectness(), kEps, 1.0 - kEps);
                    conf_sum.add(-(conf_target * std::log(prob) +
                                   (1.0 - conf_target) * std::log(1.0 - prob)));
                    ++slot_count;
                }
    }
    if (slot_count > 0) loss.conf_loss = conf_sum.sum / static_cast<double>(slot_count);

    loss.total = params.lambda_points * loss.points_loss + params.lambda_conf * loss.conf_loss;
    return loss;
}

// ---------------------------------------------------------------------------
// Record serialization
// ---------------------------------------------------------------------------

/// One candidate per line: scale, cell x, cell y, anchor, then the 19 raw values.
inline std::string format_prediction_record(const CellPrediction& p) {
    char buf[64];
    std::string line = std::to_string(p.scale) + ' ' + std::to_string(p.cell_x) + ' ' +
                       std::to_string(p.cell_y) + ' ' + std::to_string(p.anchor);
    for (const double v : p.raw) {
        std::snprintf(buf, sizeof(buf), " %.17g", v);
        line += buf;
    }
    return line;
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t pos = 0;
    while (pos < line.size()) {
        while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
        std::size_t end = pos;
        while (end < line.size() && line[end] != ' ' && line[end] != '\t') ++end;
        if (end > pos) fields.push_back(line.substr(pos, end - pos));
        pos = end;
    }
    return fields;
}

inline double parse_double_field(std::string_view field, std::size_t line_number) {
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size())
        throw ParseError(line_number, "invalid numeric field '" + std::string(field) + "'");
    return value;
}

inline long parse_int_field(std::string_view field, std::size_t line_number) {
    long value = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size())
        throw ParseError(line_number, "invalid integer field '" + std::string(field) + "'");
    return value;
}

}  // namespace detail

inline CellPrediction parse_prediction_record(std::string_view line, std::size_t line_number) {
    const auto fields = detail::split_fields(line);
    if (fields.size() != 4 + CellPrediction::kValueCount)
        throw ParseError(line_number,
                         "prediction record needs " + std::to_string(4 + CellPrediction::kValueCount) +
                             " fields, got " + std::to_string(fields.size()));
    CellPrediction p;
    p.scale = static_cast<int>(detail::parse_int_field(fields[0], line_number));
    p.cell_x = static_cast<int>(detail::parse_int_field(fields[1], line_number));
    p.cell_y = static_cast<int>(detail::parse_int_field(fields[2], line_number));
    p.anchor = static_cast<int>(detail::parse_int_field(fields[3], line_number));
    if (p.scale < 0 || p.scale > 2) throw ParseError(line_number, "scale index out of range");
    for (int k = 0; k < CellPrediction::kValueCount; ++k)
        p.raw[k] = detail::parse_double_field(fields[4 + k], line_number);
    return p;
}

}  // namespace xpose
