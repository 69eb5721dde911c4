#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "xpose/errors.hpp"
#include "xpose/geometry.hpp"

namespace xpose {

// ---------------------------------------------------------------------------
// Instrument models
// ---------------------------------------------------------------------------

enum class Symmetry {
    Asymmetric,
    ContinuousAxis,  ///< rotationally symmetric about symmetry_axis
};

/// 3D instrument description: a vertex set for the distance metrics, the nine
/// control points (center + 3D bounding-box corners) used as PnP keypoints,
/// and the diameter parameter the accuracy thresholds scale with. The
/// diameter is an explicit model parameter, not necessarily the vertex-set
/// diameter.
struct InstrumentModel {
    std::string name;
    std::vector<Point3> vertices;
    std::array<Point3, 9> control_points;  ///< [0] = center, [1..8] = box corners
    double diameter_mm = 0.0;
    Symmetry symmetry = Symmetry::Asymmetric;
    Eigen::Vector3d symmetry_axis = Eigen::Vector3d::UnitZ();

    void validate() const {
        if (vertices.size() < 4)
            throw DataError("instrument model needs at least 4 vertices, got " +
                            std::to_string(vertices.size()));
        if (!(diameter_mm > 0.0)) throw DataError("instrument diameter must be positive");
        Point3 lo = control_points[1], hi = control_points[1];
        for (int k = 1; k < 9; ++k) {
            lo = lo.cwiseMin(control_points[k]);
            hi = hi.cwiseMax(control_points[k]);
        }
        for (const auto& v : vertices)
            if (((v - lo).minCoeff() < -1e-9) || ((hi - v).minCoeff() < -1e-9))
                throw DataError("control points do not bound the vertex set");
    }
};

/// Diameter of a vertex set as max pairwise distance.
inline double max_pairwise_distance(std::span<const Point3> points) {
    double best = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i)
        for (std::size_t j = i + 1; j < points.size(); ++j)
            best = std::max(best, (points[i] - points[j]).norm());
    return best;
}

// ---------------------------------------------------------------------------
// Distance metrics
// ---------------------------------------------------------------------------

namespace detail {

/// Exact nearest-neighbor queries over a fixed point set via a uniform grid
/// with ring expansion. Falls back to linear scan for tiny sets.
class NearestNeighborIndex {
public:
    explicit NearestNeighborIndex(std::span<const Point3> points) : points_(points) {
        if (points_.size() < 64) return;  // brute force is faster below this

        Point3 lo = points_[0], hi = points_[0];
        for (const auto& p : points_) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        origin_ = lo;
        const Point3 extent = hi - lo;
        const double target_cells = std::cbrt(static_cast<double>(points_.size()));
        cell_size_ = std::max(extent.maxCoeff() / target_cells, 1e-9);
        for (int a = 0; a < 3; ++a)
            dims_[a] = std::max(1, static_cast<int>(std::floor(extent[a] / cell_size_)) + 1);
        buckets_.resize(static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2]);
        for (std::size_t i = 0; i < points_.size(); ++i)
            buckets_[bucket_of(cell_of(points_[i]))].push_back(static_cast<int>(i));
        gridded_ = true;
    }

    double nearest_distance(const Point3& q) const {
        if (!gridded_) {
            double best_sq = std::numeric_limits<double>::infinity();
            for (const auto& p : points_) best_sq = std::min(best_sq, (p - q).squaredNorm());
            return std::sqrt(best_sq);
        }

        const std::array<int, 3> home = cell_of(q);
        int max_ring = 0;
        for (int a = 0; a < 3; ++a)
            max_ring = std::max({max_ring, home[a] + 1, dims_[a] - home[a]});

        double best_sq = std::numeric_limits<double>::infinity();
        for (int ring = 0; ring <= max_ring; ++ring) {
            // Every unvisited point now lies at Chebyshev cell distance
            // >= ring, hence at Euclidean distance >= (ring - 1) * cell.
            if (ring > 0 && best_sq <= square((ring - 1) * cell_size_)) break;
            scan_ring(home, ring, q, best_sq);
        }
        return std::sqrt(best_sq);
    }

private:
    static double square(double x) { return x * x; }

    std::array<int, 3> cell_of(const Point3& p) const {
        std::array<int, 3> c;
        for (int a = 0; a < 3; ++a) c[a] = static_cast<int>(std::floor((p[a] - origin_[a]) / cell_size_));
        return c;
    }

    std::size_t bucket_of(const std::array<int, 3>& c) const {
        return (static_cast<std::size_t>(c[2]) * dims_[1] + c[1]) * dims_[0] + c[0];
    }

    void scan_cell(int x, int y, int z, const Point3& q, double& best_sq) const {
        if (x < 0 || y < 0 || z < 0 || x >= dims_[0] || y >= dims_[1] || z >= dims_[2]) return;
        for (const int idx : buckets_[bucket_of({x, y, z})])
            best_sq = std::min(best_sq, (points_[idx] - q).squaredNorm());
    }

    void scan_ring(const std::array<int, 3>& home, int ring, const Point3& q, double& best_sq) const {
        if (ring == 0) {
            scan_cell(home[0], home[1], home[2], q, best_sq);
            return;
        }
        for (int dx = -ring; dx <= ring; ++dx)
            for (int dy = -ring; dy <= ring; ++dy)
                for (int dz = -ring; dz <= ring; ++dz) {
                    if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
                    scan_cell(home[0] + dx, home[1] + dy, home[2] + dz, q, best_sq);
                }
    }

    std::span<const Point3> points_;
    bool gridded_ = false;
    Point3 origin_ = Point3::Zero();
    double cell_size_ = 1.0;
    std::array<int, 3> dims_{1, 1, 1};
    std::vector<std::vector<int>> buckets_;
};

}  // namespace detail

/// Mean 3D vertex distance between the two posed models (matched vertices).
inline double add_metric(const InstrumentModel& model, const RigidTransform& gt,
                         const RigidTransform& pred) {
    if (model.vertices.empty()) throw DataError("ADD needs a non-empty vertex set");
    double sum = 0.0;
    for (const auto& v : model.vertices) sum += (gt.apply(v) - pred.apply(v)).norm();
    return sum / static_cast<double>(model.vertices.size());
}

/// Closest-point variant for symmetric objects: each ground-truth vertex
/// matches its nearest predicted vertex.
inline double add_s_metric(const InstrumentModel& model, const RigidTransform& gt,
                           const RigidTransform& pred) {
    if (model.vertices.empty()) throw DataError("ADD-S needs a non-empty vertex set");
    std::vector<Point3> predicted;
    predicted.reserve(model.vertices.size());
    for (const auto& v : model.vertices) predicted.push_back(pred.apply(v));
    const detail::NearestNeighborIndex index(predicted);
    double sum = 0.0;
    for (const auto& v : model.vertices) sum += index.nearest_distance(gt.apply(v));
    return sum / static_cast<double>(model.vertices.size());
}

/// Mean Euclidean pixel distance between matched 2D point sets.
inline double reprojection_error_2d(std::span<const Point2> points_gt,
                                    std::span<const Point2> points_pred) {
    if (points_gt.size() != points_pred.size())
        throw ShapeMismatchError("2D point sets differ in size");
    if (points_gt.empty()) throw DataError("reprojection error needs at least one point");
    double sum = 0.0;
    for (std::size_t i = 0; i < points_gt.size(); ++i) sum += (points_gt[i] - points_pred[i]).norm();
    return sum / static_cast<double>(points_gt.size());
}

inline double translation_error_mm(const RigidTransform& gt, const RigidTransform& pred) {
    return (gt.translation - pred.translation).norm();
}

/// Rotation error in degrees. Asymmetric objects use the geodesic angle;
/// axially symmetric objects use the angle between the posed symmetry axes,
/// discarding spin about the axis.
inline double angular_error_deg(const RigidTransform& gt, const RigidTransform& pred,
                                Symmetry symmetry,
                                const Eigen::Vector3d& axis = Eigen::Vector3d::UnitZ()) {
    if (symmetry == Symmetry::Asymmetric) return rotation_angle_deg(gt.rotation, pred.rotation);
    const Eigen::Vector3d a = (gt.rotation * axis).normalized();
    const Eigen::Vector3d b = (pred.rotation * axis).normalized();
    return rad_to_deg(std::acos(std::clamp(a.dot(b), -1.0, 1.0)));
}

// ---------------------------------------------------------------------------
// Per-sample evaluation
// ---------------------------------------------------------------------------

/// Accuracy threshold, either relative to the model diameter or absolute mm.
struct ThresholdSpec {
    std::string label;
    double value = 0.0;
    bool relative = true;

    double resolve_mm(double diameter_mm) const { return relative ? value * diameter_mm : value; }
};

inline std::vector<ThresholdSpec> default_thresholds() {
    return {{"0.1d", 0.1, true}, {"0.05d", 0.05, true}, {"1.0mm", 1.0, false}, {"0.02d", 0.02, true}};
}

struct ThresholdResult {
    std::string label;
    double threshold_mm = 0.0;
    bool pass = false;
};

struct PoseEvaluation {
    double add_mm = 0.0;
    double add_s_mm = 0.0;
    double reproj_err_px = 0.0;
    double translation_err_mm = 0.0;
    double angular_err_deg = 0.0;
    double primary_metric_mm = 0.0;  ///< add for asymmetric, add_s for symmetric
    std::vector<ThresholdResult> thresholds;
};

inline PoseEvaluation evaluate_pose(const InstrumentModel& model, const RigidTransform& gt,
                                    const RigidTransform& pred,
                                    std::span<const Point2> points_gt_px,
                                    std::span<const Point2> points_pred_px,
                                    const std::vector<ThresholdSpec>& thresholds = default_thresholds()) {
    PoseEvaluation e;
    e.add_mm = add_metric(model, gt, pred);
    e.add_s_mm = add_s_metric(model, gt, pred);
    e.reproj_err_px = points_gt_px.empty() ? 0.0 : reprojection_error_2d(points_gt_px, points_pred_px);
    e.translation_err_mm = translation_error_mm(gt, pred);
    e.angular_err_deg = angular_error_deg(gt, pred, model.symmetry, model.symmetry_axis);
    e.primary_metric_mm = model.symmetry == Symmetry::Asymmetric ? e.add_mm : e.add_s_mm;
    for (const auto& spec : thresholds) {
        const double t = spec.resolve_mm(model.diameter_mm);
        e.thresholds.push_back({spec.label, t, e.primary_metric_mm < t});
    }
    return e;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct ThresholdStat {
    std::string label;
    double pass_percent = 0.0;
};

struct AggregateReport {
    std::size_t count = 0;
    std::vector<ThresholdStat> thresholds;
    double translation_mean_mm = 0.0;
    double translation_std_mm = 0.0;
    double angular_mean_deg = 0.0;
    double angular_std_deg = 0.0;
    double reproj_mean_px = 0.0;
};

namespace detail {

inline std::pair<double, double> mean_and_std(std::span<const double> values) {
    const auto n = static_cast<double>(values.size());
    double mean = 0.0;
    for (const double v : values) mean += v;
    mean /= n;
    if (values.size() < 2) return {mean, 0.0};
    double sq = 0.0;
    for (const double v : values) sq += (v - mean) * (v - mean);
    return {mean, std::sqrt(sq / (n - 1.0))};
}

}  // namespace detail

/// Pass percentages per threshold plus mean +/- sample standard deviation of
/// the translation and angular errors.
inline AggregateReport aggregate(std::span<const PoseEvaluation> evals) {
    if (evals.empty()) throw DataError("cannot aggregate an empty evaluation list");
    AggregateReport report;
    report.count = evals.size();
    const auto& labels = evals.front().thresholds;
    for (std::size_t t = 0; t < labels.size(); ++t) {
        std::size_t passed = 0;
        for (const auto& e : evals) {
            if (e.thresholds.size() != labels.size())
                throw ShapeMismatchError("evaluations carry differing threshold lists");
            passed += e.thresholds[t].pass ? 1 : 0;
        }
        report.thresholds.push_back(
            {labels[t].label, 100.0 * static_cast<double>(passed) / static_cast<double>(evals.size())});
    }
    std::vector<double> trans, ang, reproj;
    for (const auto& e : evals) {
        trans.push_back(e.translation_err_mm);
        ang.push_back(e.angular_err_deg);
        reproj.push_back(e.reproj_err_px);
    }
    std::tie(report.translation_mean_mm, report.translation_std_mm) = detail::mean_and_std(trans);
    std::tie(report.angular_mean_deg, report.angular_std_deg) = detail::mean_and_std(ang);
    report.reproj_mean_px = detail::mean_and_std(reproj).first;
    return report;
}

/// CSV rows mirroring the accuracy-table layout: one row per threshold, then
/// translation and angular error rows with mean and std.
inline std::string aggregate_to_csv(const AggregateReport& report) {
    char buf[128];
    std::string csv = "metric,value,std\n";
    for (const auto& t : report.thresholds) {
        std::snprintf(buf, sizeof(buf), "ADD(-S) %s,%.2f,\n", t.label.c_str(), t.pass_percent);
        csv += buf;
    }
    std::snprintf(buf, sizeof(buf), "3D Transl.err. [mm],%.4f,%.4f\n", report.translation_mean_mm,
                  report.translation_std_mm);
    csv += buf;
    std::snprintf(buf, sizeof(buf), "3D Ang.err. [deg.],%.4f,%.4f\n", report.angular_mean_deg,
                  report.angular_std_deg);
    csv += buf;
    return csv;
}

}  // namespace xpose
