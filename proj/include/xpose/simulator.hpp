#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <istream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "xpose/codec.hpp"
#include "xpose/errors.hpp"
#include "xpose/geometry.hpp"
#include "xpose/metrics.hpp"
#include "xpose/rng.hpp"

namespace xpose {

// ---------------------------------------------------------------------------
// Capture parameter ranges
// ---------------------------------------------------------------------------

struct Range {
    double min = 0.0;
    double max = 0.0;
};

/// C-arm and table parameter ranges driving the synthetic capture sweep.
/// Defaults follow the acquisition protocol: +-45 degree rotations on a
/// 10-degree lattice, table translations 0/0/700 +- 40 mm, SID 950-1230 mm,
/// detector FOV diagonal 156-484 mm.
struct CaptureRanges {
    Range rotation_x_deg{-45.0, 45.0};
    Range rotation_y_deg{-45.0, 45.0};
    Range rotation_z_deg{-45.0, 45.0};
    double rotation_step_deg = 10.0;
    double translation_x_center_mm = 0.0;
    double translation_x_spread_mm = 40.0;
    double translation_y_center_mm = 0.0;
    double translation_y_spread_mm = 40.0;
    double translation_z_center_mm = 700.0;
    double translation_z_spread_mm = 40.0;
    Range sid_mm{950.0, 1230.0};
    Range fov_diagonal_mm{156.0, 484.0};

    void validate() const {
        for (const Range& r : {rotation_x_deg, rotation_y_deg, rotation_z_deg, sid_mm, fov_diagonal_mm})
            if (!(r.min <= r.max)) throw ConfigError("capture range has min > max");
        if (!(rotation_step_deg > 0.0)) throw ConfigError("rotation step must be positive");
        if (translation_x_spread_mm < 0.0 || translation_y_spread_mm < 0.0 ||
            translation_z_spread_mm < 0.0)
            throw ConfigError("translation spreads must be non-negative");
    }
};

/// Full: the complete rotation ranges. Clinical: viewing angles restricted to
/// |rx|, |ry| <= 45 degrees with free rotation about z, matching the
/// screw-placement working positions.
enum class ViewConstraint { Full, Clinical };

inline CaptureRanges apply_constraint(CaptureRanges ranges, ViewConstraint constraint) {
    if (constraint == ViewConstraint::Clinical) {
        ranges.rotation_x_deg = {std::max(ranges.rotation_x_deg.min, -45.0),
                                 std::min(ranges.rotation_x_deg.max, 45.0)};
        ranges.rotation_y_deg = {std::max(ranges.rotation_y_deg.min, -45.0),
                                 std::min(ranges.rotation_y_deg.max, 45.0)};
        ranges.rotation_z_deg = {-180.0, 180.0};
    }
    return ranges;
}

// ---------------------------------------------------------------------------
// Geometry sampling
// ---------------------------------------------------------------------------

struct SimOptions {
    int image_width_px = 960;
    int image_height_px = 742;
    /// Signed principal-point offset from the detector center, mm; +u points
    /// right and +v down in the stored image.
    double principal_offset_u_mm = 0.0;
    double principal_offset_v_mm = 0.0;
    /// Fixed rig transforms closing the object->board->camera->source chain.
    RigidTransform board_from_object{Eigen::Matrix3d::Identity(), {40.0, 25.0, 15.0}};
    RigidTransform source_from_camera{rotation_xyz_deg(5.0, -3.0, 2.0), {150.0, 100.0, -250.0}};
};

struct GeometrySample {
    RigidTransform pose;  ///< object -> source
    AcquisitionGeometry geometry;
    Eigen::Vector3d rotation_deg;  ///< lattice rotation this sample was built from
};

/// Deterministic stream of (pose, geometry) pairs. Rotations are enumerated
/// on the step lattice, one full pass per lattice size in a seed-derived
/// order so partial sweeps still cover the range uniformly; SID, FOV and
/// translations are drawn uniformly per emission.
class GeometrySampleStream {
public:
    GeometrySampleStream(const CaptureRanges& ranges, std::uint64_t seed, ViewConstraint constraint,
                         SimOptions options = {})
        : ranges_(apply_constraint(ranges, constraint)), seed_(seed), options_(options) {
        ranges_.validate();
        lattice_x_ = lattice_values(ranges_.rotation_x_deg, ranges_.rotation_step_deg);
        lattice_y_ = lattice_values(ranges_.rotation_y_deg, ranges_.rotation_step_deg);
        lattice_z_ = lattice_values(ranges_.rotation_z_deg, ranges_.rotation_step_deg);
        if (lattice_x_.empty() || lattice_y_.empty() || lattice_z_.empty())
            throw ConfigError("rotation lattice is empty");
    }

    std::size_t lattice_size() const { return lattice_x_.size() * lattice_y_.size() * lattice_z_.size(); }

    /// Lattice rotation for stream index i; pure function of (seed, i).
    Eigen::Vector3d lattice_rotation(std::uint64_t index) const {
        const std::size_t size = lattice_size();
        const std::uint64_t pass = index / size;
        const std::size_t slot = shuffled_slot(index % size, size, pass);
        const std::size_t zi = slot % lattice_z_.size();
        const std::size_t yi = (slot / lattice_z_.size()) % lattice_y_.size();
        const std::size_t xi = slot / (lattice_z_.size() * lattice_y_.size());
        return {lattice_x_[xi], lattice_y_[yi], lattice_z_[zi]};
    }

    /// Continuous parameters for (index, attempt) drawn from the sample's own
    /// RNG stream; retries after rejection advance `attempt`.
    GeometrySample sample(std::uint64_t index, int attempt = 0) const {
        Rng rng = Rng::for_index(seed_, index);
        for (int skip = 0; skip < attempt * 6; ++skip) rng.uniform01();

        const Eigen::Vector3d rot = lattice_rotation(index);
        GeometrySample s;
        s.rotation_deg = rot;
        s.pose.rotation = rotation_xyz_deg(rot.x(), rot.y(), rot.z());
        s.pose.translation = {
            ranges_.translation_x_center_mm +
                rng.uniform(-ranges_.translation_x_spread_mm, ranges_.translation_x_spread_mm),
            ranges_.translation_y_center_mm +
                rng.uniform(-ranges_.translation_y_spread_mm, ranges_.translation_y_spread_mm),
            ranges_.translation_z_center_mm +
                rng.uniform(-ranges_.translation_z_spread_mm, ranges_.translation_z_spread_mm)};

        const double sid = rng.uniform(ranges_.sid_mm.min, ranges_.sid_mm.max);
        const double fov = rng.uniform(ranges_.fov_diagonal_mm.min, ranges_.fov_diagonal_mm.max);
        const double pixel_diag =
            std::hypot(options_.image_width_px, options_.image_height_px);
        const double density = pixel_diag / fov;  // detector pixels span the FOV diagonal

        s.geometry.focal_length_mm = sid;
        s.geometry.pixel_density_u = density;
        s.geometry.pixel_density_v = density;
        s.geometry.image_width_px = options_.image_width_px;
        s.geometry.image_height_px = options_.image_height_px;
        s.geometry.principal_x0_mm =
            options_.image_width_px / (2.0 * density) + options_.principal_offset_u_mm;
        s.geometry.principal_y0_mm =
            options_.image_height_px / (2.0 * density) + options_.principal_offset_v_mm;
        return s;
    }

    const CaptureRanges& effective_ranges() const { return ranges_; }
    const SimOptions& options() const { return options_; }

private:
    static std::vector<double> lattice_values(const Range& range, double step) {
        std::vector<double> values;
        for (double v = range.min; v <= range.max + 1e-9; v += step) values.push_back(v);
        return values;
    }

    /// Position of `slot` in a seed-derived permutation of [0, size).
    std::size_t shuffled_slot(std::size_t slot, std::size_t size, std::uint64_t pass) const {
        std::vector<std::uint32_t> perm(size);
        std::iota(perm.begin(), perm.end(), 0);
        Rng rng(seed_ ^ (0xa0761d6478bd642fULL + pass));
        for (std::size_t i = size; i > 1; --i)
            std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
        return perm[slot];
    }

    CaptureRanges ranges_;
    std::uint64_t seed_;
    SimOptions options_;
    std::vector<double> lattice_x_, lattice_y_, lattice_z_;
};

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

struct DatasetSample {
    std::int64_t id = 0;
    AcquisitionGeometry geometry;
    RigidTransform pose;  ///< object -> source
    std::array<Point2, 9> points_px{};
    std::string instrument;
};

struct DatasetStats {
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    double rejection_rate() const {
        const std::size_t total = accepted + rejected;
        return total == 0 ? 0.0 : static_cast<double>(rejected) / static_cast<double>(total);
    }
};

namespace detail {

inline bool inside_image(const Point2& p, const AcquisitionGeometry& g) {
    return p.x() >= 0.0 && p.x() < g.image_width_px && p.y() >= 0.0 && p.y() < g.image_height_px;
}

/// Runs fn(i) for i in [0, n); work items must be independent. The first
/// exception wins and is rethrown on the calling thread.
template <typename Fn>
void parallel_for_index(std::size_t n, int threads, Fn&& fn) {
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const int worker_count = static_cast<int>(std::min<std::size_t>(threads, n));
    std::vector<std::thread> workers;
    std::mutex error_mutex;
    std::exception_ptr first_error;
    std::atomic<std::size_t> next{0};
    for (int w = 0; w < worker_count; ++w)
        workers.emplace_back([&]() {
            try {
                for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                const std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    for (auto& w : workers) w.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace detail

/// Labels one sample: builds the object->board->camera->source chain around
/// the drawn pose, resolves it and projects the control points. Samples whose
/// control points leave the image are rejected and redrawn; a sample that
/// cannot be placed within the attempt budget aborts generation. Each sample
/// draws from its own (seed, index) stream, so any thread count emits
/// identical datasets.
inline std::vector<DatasetSample> generate_dataset(const InstrumentModel& instrument,
                                                   const CaptureRanges& ranges, std::size_t n,
                                                   std::uint64_t seed,
                                                   ViewConstraint constraint = ViewConstraint::Full,
                                                   SimOptions options = {},
                                                   DatasetStats* stats_out = nullptr,
                                                   int threads = 1) {
    instrument.validate();
    const GeometrySampleStream stream(ranges, seed, constraint, options);
    constexpr int kMaxAttempts = 1000;

    std::vector<DatasetSample> samples(n);
    std::vector<std::size_t> rejected_per_sample(n, 0);

    const auto place_sample = [&](std::size_t i) {
        for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
            const GeometrySample g = stream.sample(i, attempt);

            FrameChain chain;
            const RigidTransform camera_from_board = compose(
                invert(options.source_from_camera), compose(g.pose, invert(options.board_from_object)));
            chain.add("object", "board", options.board_from_object);
            chain.add("board", "camera", camera_from_board);
            chain.add("camera", "source", options.source_from_camera);
            const RigidTransform pose = chain_resolve(chain, "object", "source");

            DatasetSample& s = samples[i];
            s.id = static_cast<std::int64_t>(i);
            s.geometry = g.geometry;
            s.pose = pose;
            s.instrument = instrument.name;
            bool in_frame = true;
            try {
                const auto projected = project_points(instrument.control_points, pose, g.geometry);
                for (int k = 0; k < 9; ++k) {
                    s.points_px[k] = projected[k];
                    in_frame = in_frame && detail::inside_image(projected[k], g.geometry);
                }
            } catch (const BehindSourceError&) {
                in_frame = false;
            }
            if (in_frame) return;
            ++rejected_per_sample[i];
        }
        throw InfeasibleConfigurationError(
            "sample " + std::to_string(i) + " rejected " + std::to_string(kMaxAttempts) +
            " times; configuration keeps the instrument outside the image");
    };

    detail::parallel_for_index(n, threads, place_sample);

    DatasetStats stats;
    stats.accepted = n;
    for (const std::size_t r : rejected_per_sample) stats.rejected += r;
    if (stats_out) *stats_out = stats;
    return samples;
}

// ---------------------------------------------------------------------------
// Fiducial board & dome link simulation
// ---------------------------------------------------------------------------

/// Flat fiducial grid in the board frame (z = 0), spacing in mm.
inline std::vector<Point3> make_fiducial_grid(int cols = 6, int rows = 4, double spacing_mm = 40.0) {
    std::vector<Point3> grid;
    grid.reserve(static_cast<std::size_t>(cols) * rows);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            grid.push_back({(c - (cols - 1) / 2.0) * spacing_mm, (r - (rows - 1) / 2.0) * spacing_mm, 0.0});
    return grid;
}

struct FiducialObservation {
    std::vector<Point3> fiducials_3d;   ///< board-frame positions that stayed in frame
    std::vector<Point2> detections_2d;  ///< their noisy detections
};

/// Projects board fiducials into the optical camera and perturbs them with
/// isotropic Gaussian pixel noise. Fiducials that fall outside the optical
/// frame (or behind the camera) are dropped.
inline FiducialObservation simulate_fiducial_board(std::span<const Point3> board_fiducials,
                                                   const AcquisitionGeometry& camera_geom,
                                                   const RigidTransform& board_pose,
                                                   double noise_px, std::uint64_t seed) {
    if (!board_pose.is_valid(1e-6)) throw DataError("board pose is not a rigid transform");
    const Eigen::Matrix3d k = build_intrinsics(camera_geom);
    Rng rng(seed);
    FiducialObservation obs;
    for (const auto& f : board_fiducials) {
        const Point3 q = board_pose.apply(f);
        // draw noise unconditionally so dropping a fiducial does not shift
        // the noise of the remaining ones
        const double nx = rng.gaussian(noise_px);
        const double ny = rng.gaussian(noise_px);
        if (!(q.z() > 0.0)) continue;
        const Point2 detection = project_with_intrinsics(q, k) + Point2(nx, ny);
        if (!detail::inside_image(detection, camera_geom)) continue;
        obs.fiducials_3d.push_back(f);
        obs.detections_2d.push_back(detection);
    }
    if (obs.fiducials_3d.empty()) throw DataError("all fiducials fell outside the optical frame");
    return obs;
}

enum class DomeLayout {
    Dome,      ///< points spread over a hemispherical shell
    Collinear  ///< degenerate layout for exercising registration failure paths
};

struct DomePointPair {
    std::vector<Point3> optical_points;
    std::vector<Point3> xray_points;
};

/// Paired point clouds of the calibration dome as seen by the optical and
/// X-ray reconstructions: xray = link(optical) + Gaussian noise.
inline DomePointPair simulate_dome_link(std::size_t n_points, const RigidTransform& true_link,
                                        double noise_mm, std::uint64_t seed,
                                        DomeLayout layout = DomeLayout::Dome,
                                        double dome_radius_mm = 120.0) {
    if (n_points < 3)
        throw DataError("dome link simulation needs at least 3 points, got " +
                        std::to_string(n_points));
    Rng rng(seed);
    DomePointPair pair;
    pair.optical_points.reserve(n_points);
    for (std::size_t i = 0; i < n_points; ++i) {
        if (layout == DomeLayout::Collinear) {
            const double t = static_cast<double>(i) / static_cast<double>(n_points - 1);
            pair.optical_points.push_back(Point3(1.0, 0.5, 0.25) * (t * dome_radius_mm));
        } else {
            // hemispherical shell, upper half
            const double azimuth = rng.uniform(0.0, 2.0 * kPi);
            const double zenith = rng.uniform(0.0, kPi / 2.0);
            pair.optical_points.push_back(dome_radius_mm *
                                          Point3(std::sin(zenith) * std::cos(azimuth),
                                                 std::sin(zenith) * std::sin(azimuth),
                                                 std::cos(zenith)));
        }
    }
    pair.xray_points.reserve(n_points);
    for (const auto& p : pair.optical_points)
        pair.xray_points.push_back(true_link.apply(p) +
                                   Point3(rng.gaussian(noise_mm), rng.gaussian(noise_mm),
                                          rng.gaussian(noise_mm)));
    return pair;
}

// ---------------------------------------------------------------------------
// Oracle predictions
// ---------------------------------------------------------------------------

/// How the oracle fills the objectness of planted cells.
enum class OracleConfidenceModel {
    TargetConfidence,  ///< distance-based target confidence of the assignment
    ConstantHigh       ///< flat 0.99
};

struct OracleOptions {
    double jitter_px = 0.0;
    OracleConfidenceModel conf_model = OracleConfidenceModel::TargetConfidence;
    int background_records = 25;
    double background_conf_max = 0.4;
};

/// Stand-in for a trained network: writes the (jittered) ground-truth
/// keypoints into the grid slots that target encoding assigns, with high
/// objectness, plus low-objectness background records. Deterministic under
/// (seed, sample id).
inline std::vector<CellPrediction> oracle_predict(const DatasetSample& sample,
                                                  const GridLayout& layout,
                                                  const OracleOptions& options, std::uint64_t seed,
                                                  const CodecParams& params = {}) {
    Rng rng = Rng::for_index(seed, static_cast<std::uint64_t>(sample.id));

    std::array<Point2, 9> jittered = sample.points_px;
    for (auto& p : jittered)
        p += Point2(rng.gaussian(options.jitter_px), rng.gaussian(options.jitter_px));

    std::vector<CellPrediction> records;
    const TargetEncoding encoding = encode_targets(jittered, layout, params);
    for (const auto& t : encoding.assignments) {
        CellPrediction p;
        p.scale = t.scale;
        p.cell_x = t.cell_x;
        p.cell_y = t.cell_y;
        p.anchor = t.anchor;
        // invert the center transfer: coord = 2*sigmoid(raw) - 0.5 + cell
        for (int axis = 0; axis < 2; ++axis) {
            const double rel = t.points_grid[0][axis] - (axis == 0 ? t.cell_x : t.cell_y);
            const double s = std::clamp((rel + 0.5) / 2.0, 1e-9, 1.0 - 1e-9);
            p.raw[axis] = logit(s);
        }
        for (int k = 1; k < 9; ++k) {
            p.raw[2 * k] = t.points_grid[k].x() - t.cell_x;
            p.raw[2 * k + 1] = t.points_grid[k].y() - t.cell_y;
        }
        const double conf = options.conf_model == OracleConfidenceModel::ConstantHigh
                                ? 0.99
                                : std::clamp(t.confidence, 0.5, 1.0 - 1e-9);
        p.raw[18] = logit(conf);
        records.push_back(p);
    }

    for (int b = 0; b < options.background_records; ++b) {
        CellPrediction p;
        p.scale = static_cast<int>(rng.uniform_int(0, 2));
        const auto& grid = layout.scales[p.scale];
        p.cell_x = static_cast<int>(rng.uniform_int(0, grid.width - 1));
        p.cell_y = static_cast<int>(rng.uniform_int(0, grid.height - 1));
        p.anchor = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(grid.anchors_px.size()) - 1));
        const bool collides = std::any_of(
            encoding.assignments.begin(), encoding.assignments.end(), [&p](const auto& t) {
                return t.scale == p.scale && t.cell_x == p.cell_x && t.cell_y == p.cell_y &&
                       t.anchor == p.anchor;
            });
        p.raw[0] = rng.uniform(-2.0, 2.0);
        p.raw[1] = rng.uniform(-2.0, 2.0);
        for (int k = 2; k < 18; ++k) p.raw[k] = rng.uniform(-3.0, 3.0);
        p.raw[18] = logit(rng.uniform(0.01, options.background_conf_max));
        if (!collides) records.push_back(p);
    }
    return records;
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

namespace detail {

inline void append_g17(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), " %.17g", v);
    out += buf;
}

}  // namespace detail

/// One sample per line: id, geometry (f k_u k_v x0 y0 W H), rotation
/// (row-major), translation, the 18 projected coordinates, instrument name.
/// 17 significant digits so doubles round-trip exactly.
inline std::string format_dataset_record(const DatasetSample& s) {
    std::string line = std::to_string(s.id);
    detail::append_g17(line, s.geometry.focal_length_mm);
    detail::append_g17(line, s.geometry.pixel_density_u);
    detail::append_g17(line, s.geometry.pixel_density_v);
    detail::append_g17(line, s.geometry.principal_x0_mm);
    detail::append_g17(line, s.geometry.principal_y0_mm);
    line += ' ' + std::to_string(s.geometry.image_width_px);
    line += ' ' + std::to_string(s.geometry.image_height_px);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) detail::append_g17(line, s.pose.rotation(r, c));
    for (int r = 0; r < 3; ++r) detail::append_g17(line, s.pose.translation(r));
    for (int k = 0; k < 9; ++k) {
        detail::append_g17(line, s.points_px[k].x());
        detail::append_g17(line, s.points_px[k].y());
    }
    line += ' ' + s.instrument;
    return line;
}

inline void write_dataset(std::ostream& out, std::span<const DatasetSample> samples) {
    for (const auto& s : samples) out << format_dataset_record(s) << '\n';
}

inline DatasetSample parse_dataset_record(std::string_view line, std::size_t line_number) {
    const auto fields = detail::split_fields(line);
    constexpr std::size_t kFieldCount = 1 + 7 + 9 + 3 + 18 + 1;
    if (fields.size() != kFieldCount)
        throw ParseError(line_number, "dataset record needs " + std::to_string(kFieldCount) +
                                          " fields, got " + std::to_string(fields.size()));
    DatasetSample s;
    std::size_t f = 0;
    s.id = detail::parse_int_field(fields[f++], line_number);
    s.geometry.focal_length_mm = detail::parse_double_field(fields[f++], line_number);
    s.geometry.pixel_density_u = detail::parse_double_field(fields[f++], line_number);
    s.geometry.pixel_density_v = detail::parse_double_field(fields[f++], line_number);
    s.geometry.principal_x0_mm = detail::parse_double_field(fields[f++], line_number);
    s.geometry.principal_y0_mm = detail::parse_double_field(fields[f++], line_number);
    s.geometry.image_width_px = static_cast<int>(detail::parse_int_field(fields[f++], line_number));
    s.geometry.image_height_px = static_cast<int>(detail::parse_int_field(fields[f++], line_number));
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            s.pose.rotation(r, c) = detail::parse_double_field(fields[f++], line_number);
    for (int r = 0; r < 3; ++r)
        s.pose.translation(r) = detail::parse_double_field(fields[f++], line_number);
    for (int k = 0; k < 9; ++k) {
        s.points_px[k].x() = detail::parse_double_field(fields[f++], line_number);
        s.points_px[k].y() = detail::parse_double_field(fields[f++], line_number);
    }
    s.instrument = std::string(fields[f++]);
    return s;
}

inline std::vector<DatasetSample> read_dataset(std::istream& in) {
    std::vector<DatasetSample> samples;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        samples.push_back(parse_dataset_record(line, line_number));
    }
    return samples;
}

/// Prediction files prepend the sample id to the per-candidate record so a
/// whole dataset's predictions share one file.
inline void write_predictions(std::ostream& out, std::int64_t sample_id,
                              std::span<const CellPrediction> records) {
    for (const auto& r : records)
        out << sample_id << ' ' << format_prediction_record(r) << '\n';
}

struct PredictionFileEntry {
    std::int64_t sample_id = 0;
    CellPrediction record;
};

inline std::vector<PredictionFileEntry> read_predictions(std::istream& in) {
    std::vector<PredictionFileEntry> entries;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        const auto fields = detail::split_fields(line);
        if (fields.size() != 1 + 4 + CellPrediction::kValueCount)
            throw ParseError(line_number,
                             "prediction line needs " +
                                 std::to_string(1 + 4 + CellPrediction::kValueCount) +
                                 " fields, got " + std::to_string(fields.size()));
        PredictionFileEntry entry;
        entry.sample_id = detail::parse_int_field(fields[0], line_number);
        std::string record_part;
        for (std::size_t k = 1; k < fields.size(); ++k) {
            if (k > 1) record_part += ' ';
            record_part += fields[k];
        }
        entry.record = parse_prediction_record(record_part, line_number);
        entries.push_back(entry);
    }
    return entries;
}

}  // namespace xpose
