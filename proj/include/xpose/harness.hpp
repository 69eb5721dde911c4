#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xpose/codec.hpp"
#include "xpose/errors.hpp"
#include "xpose/geometry.hpp"
#include "xpose/metrics.hpp"
#include "xpose/models.hpp"
#include "xpose/pnp.hpp"
#include "xpose/registration.hpp"
#include "xpose/simulator.hpp"

namespace xpose {

constexpr const char* kToolName = "xpose";
constexpr const char* kToolVersion = "0.1.0";

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// Threshold specs serialize as their label: "0.1d" (relative to the model
/// diameter) or "1.0mm" (absolute).
inline ThresholdSpec parse_threshold(const std::string& text) {
    try {
        if (text.size() > 2 && text.substr(text.size() - 2) == "mm")
            return {text, std::stod(text.substr(0, text.size() - 2)), false};
        if (text.size() > 1 && text.back() == 'd')
            return {text, std::stod(text.substr(0, text.size() - 1)), true};
    } catch (const std::exception&) {
    }
    throw ConfigError("cannot parse threshold '" + text + "'; expected forms like 0.1d or 1.0mm");
}

/// Everything a subcommand needs, resolvable from defaults, a JSON config
/// file and command-line flags (flags win).
struct RunConfig {
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    int threads = 1;

    std::string instrument = "cube";  ///< cube | screw | path to an instrument JSON
    int n_samples = 1000;
    bool clinical = false;
    CaptureRanges ranges;
    SimOptions sim;

    CodecParams codec;
    AnchorSet anchors = default_anchors();

    double jitter_px = 0.0;
    std::string oracle_conf_model = "target";  ///< target | constant
    int background_records = 25;
    double conf_threshold = 0.5;

    std::vector<std::string> thresholds = {"0.1d", "0.05d", "1.0mm", "0.02d"};

    std::string dataset_path;
    std::string predictions_path;

    int dome_points = 12;
    std::vector<double> dome_noise_levels_mm = {0.0, 0.1, 0.25, 0.5, 1.0, 2.0};
    int dome_trials = 20;
    bool dome_collinear = false;

    int bench_iterations = 1000;

    std::vector<ThresholdSpec> threshold_specs() const {
        std::vector<ThresholdSpec> specs;
        for (const auto& t : thresholds) specs.push_back(parse_threshold(t));
        return specs;
    }

    void validate() const {
        ranges.validate();
        if (n_samples < 0) throw ConfigError("n_samples must be non-negative");
        if (threads < 1) throw ConfigError("threads must be at least 1");
        if (jitter_px < 0.0) throw ConfigError("jitter must be non-negative");
        if (oracle_conf_model != "target" && oracle_conf_model != "constant")
            throw ConfigError("oracle_conf_model must be 'target' or 'constant'");
        if (bench_iterations < 1) throw ConfigError("bench_iterations must be positive");
        if (dome_points < 3) throw ConfigError("dome_points must be at least 3");
        threshold_specs();  // throws on malformed entries
    }
};

namespace detail {

inline Json range_to_json(const Range& r) { return Json::array({r.min, r.max}); }

inline Range range_from_json(const Json& j) {
    if (!j.is_array() || j.size() != 2) throw ConfigError("range must be a [min, max] array");
    return {j[0].get<double>(), j[1].get<double>()};
}

inline Json transform_to_json(const RigidTransform& t) {
    Json j;
    Json rot = Json::array();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) rot.push_back(t.rotation(r, c));
    j["rotation"] = rot;
    j["translation"] = Json::array({t.translation.x(), t.translation.y(), t.translation.z()});
    return j;
}

inline RigidTransform transform_from_json(const Json& j) {
    RigidTransform t;
    const auto& rot = j.at("rotation");
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) t.rotation(r, c) = rot.at(3 * r + c).get<double>();
    const auto& trans = j.at("translation");
    t.translation = {trans.at(0).get<double>(), trans.at(1).get<double>(), trans.at(2).get<double>()};
    return t;
}

}  // namespace detail

inline Json config_to_json(const RunConfig& c) {
    Json j;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["threads"] = c.threads;
    j["instrument"] = c.instrument;
    j["n_samples"] = c.n_samples;
    j["clinical"] = c.clinical;
    Json ranges;
    ranges["rotation_x_deg"] = detail::range_to_json(c.ranges.rotation_x_deg);
    ranges["rotation_y_deg"] = detail::range_to_json(c.ranges.rotation_y_deg);
    ranges["rotation_z_deg"] = detail::range_to_json(c.ranges.rotation_z_deg);
    ranges["rotation_step_deg"] = c.ranges.rotation_step_deg;
    ranges["translation_x_mm"] = Json::array({c.ranges.translation_x_center_mm, c.ranges.translation_x_spread_mm});
    ranges["translation_y_mm"] = Json::array({c.ranges.translation_y_center_mm, c.ranges.translation_y_spread_mm});
    ranges["translation_z_mm"] = Json::array({c.ranges.translation_z_center_mm, c.ranges.translation_z_spread_mm});
    ranges["sid_mm"] = detail::range_to_json(c.ranges.sid_mm);
    ranges["fov_diagonal_mm"] = detail::range_to_json(c.ranges.fov_diagonal_mm);
    j["ranges"] = ranges;
    Json sim;
    sim["image_width_px"] = c.sim.image_width_px;
    sim["image_height_px"] = c.sim.image_height_px;
    sim["principal_offset_u_mm"] = c.sim.principal_offset_u_mm;
    sim["principal_offset_v_mm"] = c.sim.principal_offset_v_mm;
    sim["board_from_object"] = detail::transform_to_json(c.sim.board_from_object);
    sim["source_from_camera"] = detail::transform_to_json(c.sim.source_from_camera);
    j["sim"] = sim;
    Json codec;
    codec["alpha"] = c.codec.alpha;
    codec["beta"] = c.codec.beta;
    codec["anchor_ratio_threshold"] = c.codec.anchor_ratio_threshold;
    codec["lambda_points"] = c.codec.lambda_points;
    codec["lambda_conf"] = c.codec.lambda_conf;
    codec["normalized_confidence"] = c.codec.normalized_confidence;
    j["codec"] = codec;
    Json anchors = Json::array();
    for (const auto& scale : c.anchors) {
        Json list = Json::array();
        for (const auto& a : scale) list.push_back(Json::array({a.x(), a.y()}));
        anchors.push_back(list);
    }
    j["anchors"] = anchors;
    j["jitter_px"] = c.jitter_px;
    j["oracle_conf_model"] = c.oracle_conf_model;
    j["background_records"] = c.background_records;
    j["conf_threshold"] = c.conf_threshold;
    j["thresholds"] = c.thresholds;
    j["dataset_path"] = c.dataset_path;
    j["predictions_path"] = c.predictions_path;
    j["dome_points"] = c.dome_points;
    j["dome_noise_levels_mm"] = c.dome_noise_levels_mm;
    j["dome_trials"] = c.dome_trials;
    j["dome_collinear"] = c.dome_collinear;
    j["bench_iterations"] = c.bench_iterations;
    return j;
}

/// Applies the keys present in `j` onto `c`; absent keys keep their values.
/// This gives the CLI > config file > defaults precedence when applied in
/// sequence.
inline void config_merge_json(RunConfig& c, const Json& j) {
    try {
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
        if (j.contains("threads")) c.threads = j["threads"].get<int>();
        if (j.contains("instrument")) c.instrument = j["instrument"].get<std::string>();
        if (j.contains("n_samples")) c.n_samples = j["n_samples"].get<int>();
        if (j.contains("clinical")) c.clinical = j["clinical"].get<bool>();
        if (j.contains("ranges")) {
            const auto& r = j["ranges"];
            if (r.contains("rotation_x_deg")) c.ranges.rotation_x_deg = detail::range_from_json(r["rotation_x_deg"]);
            if (r.contains("rotation_y_deg")) c.ranges.rotation_y_deg = detail::range_from_json(r["rotation_y_deg"]);
            if (r.contains("rotation_z_deg")) c.ranges.rotation_z_deg = detail::range_from_json(r["rotation_z_deg"]);
            if (r.contains("rotation_step_deg")) c.ranges.rotation_step_deg = r["rotation_step_deg"].get<double>();
            if (r.contains("translation_x_mm")) {
                c.ranges.translation_x_center_mm = r["translation_x_mm"].at(0).get<double>();
                c.ranges.translation_x_spread_mm = r["translation_x_mm"].at(1).get<double>();
            }
            if (r.contains("translation_y_mm")) {
                c.ranges.translation_y_center_mm = r["translation_y_mm"].at(0).get<double>();
                c.ranges.translation_y_spread_mm = r["translation_y_mm"].at(1).get<double>();
            }
            if (r.contains("translation_z_mm")) {
                c.ranges.translation_z_center_mm = r["translation_z_mm"].at(0).get<double>();
                c.ranges.translation_z_spread_mm = r["translation_z_mm"].at(1).get<double>();
            }
            if (r.contains("sid_mm")) c.ranges.sid_mm = detail::range_from_json(r["sid_mm"]);
            if (r.contains("fov_diagonal_mm")) c.ranges.fov_diagonal_mm = detail::range_from_json(r["fov_diagonal_mm"]);
        }
        if (j.contains("sim")) {
            const auto& s = j["sim"];
            if (s.contains("image_width_px")) c.sim.image_width_px = s["image_width_px"].get<int>();
            if (s.contains("image_height_px")) c.sim.image_height_px = s["image_height_px"].get<int>();
            if (s.contains("principal_offset_u_mm")) c.sim.principal_offset_u_mm = s["principal_offset_u_mm"].get<double>();
            if (s.contains("principal_offset_v_mm")) c.sim.principal_offset_v_mm = s["principal_offset_v_mm"].get<double>();
            if (s.contains("board_from_object")) c.sim.board_from_object = detail::transform_from_json(s["board_from_object"]);
            if (s.contains("source_from_camera")) c.sim.source_from_camera = detail::transform_from_json(s["source_from_camera"]);
        }
        if (j.contains("codec")) {
            const auto& k = j["codec"];
            if (k.contains("alpha")) c.codec.alpha = k["alpha"].get<double>();
            if (k.contains("beta")) c.codec.beta = k["beta"].get<double>();
            if (k.contains("anchor_ratio_threshold")) c.codec.anchor_ratio_threshold = k["anchor_ratio_threshold"].get<double>();
            if (k.contains("lambda_points")) c.codec.lambda_points = k["lambda_points"].get<double>();
            if (k.contains("lambda_conf")) c.codec.lambda_conf = k["lambda_conf"].get<double>();
            if (k.contains("normalized_confidence")) c.codec.normalized_confidence = k["normalized_confidence"].get<bool>();
        }
        if (j.contains("anchors")) {
            const auto& a = j["anchors"];
            if (!a.is_array() || a.size() != 3) throw ConfigError("anchors must hold 3 per-scale lists");
            for (int s = 0; s < 3; ++s) {
                c.anchors[s].clear();
                for (const auto& entry : a[s])
                    c.anchors[s].push_back({entry.at(0).get<double>(), entry.at(1).get<double>()});
            }
        }
        if (j.contains("jitter_px")) c.jitter_px = j["jitter_px"].get<double>();
        if (j.contains("oracle_conf_model")) c.oracle_conf_model = j["oracle_conf_model"].get<std::string>();
        if (j.contains("background_records")) c.background_records = j["background_records"].get<int>();
        if (j.contains("conf_threshold")) c.conf_threshold = j["conf_threshold"].get<double>();
        if (j.contains("thresholds")) c.thresholds = j["thresholds"].get<std::vector<std::string>>();
        if (j.contains("dataset_path")) c.dataset_path = j["dataset_path"].get<std::string>();
        if (j.contains("predictions_path")) c.predictions_path = j["predictions_path"].get<std::string>();
        if (j.contains("dome_points")) c.dome_points = j["dome_points"].get<int>();
        if (j.contains("dome_noise_levels_mm")) c.dome_noise_levels_mm = j["dome_noise_levels_mm"].get<std::vector<double>>();
        if (j.contains("dome_trials")) c.dome_trials = j["dome_trials"].get<int>();
        if (j.contains("dome_collinear")) c.dome_collinear = j["dome_collinear"].get<bool>();
        if (j.contains("bench_iterations")) c.bench_iterations = j["bench_iterations"].get<int>();
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
}

inline RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig c;
    config_merge_json(c, j);
    return c;
}

// ---------------------------------------------------------------------------
// Instrument files
// ---------------------------------------------------------------------------

inline Json instrument_to_json(const InstrumentModel& m) {
    Json j;
    j["name"] = m.name;
    j["diameter_mm"] = m.diameter_mm;
    j["symmetry"] = m.symmetry == Symmetry::Asymmetric ? "asymmetric" : "continuous-axis";
    j["symmetry_axis"] = Json::array({m.symmetry_axis.x(), m.symmetry_axis.y(), m.symmetry_axis.z()});
    Json cps = Json::array();
    for (const auto& p : m.control_points) cps.push_back(Json::array({p.x(), p.y(), p.z()}));
    j["control_points"] = cps;
    Json verts = Json::array();
    for (const auto& p : m.vertices) verts.push_back(Json::array({p.x(), p.y(), p.z()}));
    j["vertices"] = verts;
    return j;
}

inline InstrumentModel load_instrument(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open instrument file '" + path + "'");
    Json j;
    try {
        in >> j;
        InstrumentModel m;
        m.name = j.at("name").get<std::string>();
        m.diameter_mm = j.at("diameter_mm").get<double>();
        const std::string sym = j.at("symmetry").get<std::string>();
        if (sym == "asymmetric")
            m.symmetry = Symmetry::Asymmetric;
        else if (sym == "continuous-axis")
            m.symmetry = Symmetry::ContinuousAxis;
        else
            throw ConfigError("unknown symmetry '" + sym + "'");
        if (j.contains("symmetry_axis")) {
            const auto& a = j["symmetry_axis"];
            m.symmetry_axis = {a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()};
        }
        const auto& cps = j.at("control_points");
        if (cps.size() != 9) throw ConfigError("instrument needs exactly 9 control points");
        for (int k = 0; k < 9; ++k)
            m.control_points[k] = {cps[k].at(0).get<double>(), cps[k].at(1).get<double>(),
                                   cps[k].at(2).get<double>()};
        for (const auto& v : j.at("vertices"))
            m.vertices.push_back({v.at(0).get<double>(), v.at(1).get<double>(), v.at(2).get<double>()});
        m.validate();
        return m;
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("malformed instrument file: ") + e.what());
    }
}

/// Resolves the configured instrument: built-in name or a JSON file path.
inline InstrumentModel resolve_instrument(const RunConfig& config) {
    if (config.instrument == "cube") return make_cube_model();
    if (config.instrument == "screw") return make_screw_model();
    return load_instrument(config.instrument);
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

namespace detail {

inline std::filesystem::path ensure_out_dir(const RunConfig& config) {
    const std::filesystem::path dir(config.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + config.out_dir + "'");
    return dir;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << content;
    if (!out) throw ConfigError("write failed for '" + path.string() + "'");
}

inline void write_manifest(const std::filesystem::path& path, const std::string& command,
                           const RunConfig& config, const Json& summary) {
    Json manifest;
    manifest["tool"] = kToolName;
    manifest["version"] = kToolVersion;
    manifest["command"] = command;
    manifest["summary"] = summary;
    manifest["config"] = config_to_json(config);
    write_text_file(path, manifest.dump(2) + "\n");
}

inline std::string format_double(double v, const char* fmt = "%.17g") {
    char buf[48];
    std::snprintf(buf, sizeof(buf), fmt, v);
    return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateResult {
    std::filesystem::path dataset_path;
    std::size_t samples = 0;
    double rejection_rate = 0.0;
};

inline GenerateResult run_generate(const RunConfig& config, std::ostream& log = std::cout) {
    config.validate();
    const auto dir = detail::ensure_out_dir(config);
    const InstrumentModel model = resolve_instrument(config);

    DatasetStats stats;
    const auto samples = generate_dataset(
        model, config.ranges, static_cast<std::size_t>(config.n_samples), config.seed,
        config.clinical ? ViewConstraint::Clinical : ViewConstraint::Full, config.sim, &stats,
        config.threads);

    std::ostringstream body;
    write_dataset(body, samples);
    const auto dataset_path = dir / "dataset.txt";
    detail::write_text_file(dataset_path, body.str());

    Json summary;
    summary["samples"] = samples.size();
    summary["rejection_rate"] = stats.rejection_rate();
    summary["instrument"] = model.name;
    detail::write_manifest(dir / "generate_manifest.json", "generate", config, summary);

    log << "generated " << samples.size() << " samples (rejection rate "
        << detail::format_double(stats.rejection_rate(), "%.4f") << ") -> " << dataset_path.string()
        << "\n";
    return {dataset_path, samples.size(), stats.rejection_rate()};
}

// ---------------------------------------------------------------------------
// predict-oracle
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<DatasetSample> load_dataset(const RunConfig& config,
                                               const std::filesystem::path& dir) {
    const std::filesystem::path path =
        config.dataset_path.empty() ? dir / "dataset.txt" : std::filesystem::path(config.dataset_path);
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset '" + path.string() + "'");
    return read_dataset(in);
}

inline GridLayout layout_for_dataset(const RunConfig& config,
                                     std::span<const DatasetSample> samples) {
    int w = config.sim.image_width_px;
    int h = config.sim.image_height_px;
    if (!samples.empty()) {
        w = samples.front().geometry.image_width_px;
        h = samples.front().geometry.image_height_px;
    }
    return make_grid_layout(w, h, config.anchors);
}

}  // namespace detail

struct PredictOracleResult {
    std::filesystem::path predictions_path;
    std::size_t samples = 0;
    std::size_t records = 0;
};

inline PredictOracleResult run_predict_oracle(const RunConfig& config,
                                              std::ostream& log = std::cout) {
    config.validate();
    const auto dir = detail::ensure_out_dir(config);
    const auto samples = detail::load_dataset(config, dir);
    const GridLayout layout = detail::layout_for_dataset(config, samples);

    OracleOptions options;
    options.jitter_px = config.jitter_px;
    options.conf_model = config.oracle_conf_model == "constant"
                             ? OracleConfidenceModel::ConstantHigh
                             : OracleConfidenceModel::TargetConfidence;
    options.background_records = config.background_records;

    std::ostringstream body;
    std::size_t total_records = 0;
    for (const auto& sample : samples) {
        const auto records = oracle_predict(sample, layout, options, config.seed, config.codec);
        write_predictions(body, sample.id, records);
        total_records += records.size();
    }
    const auto predictions_path = dir / "predictions.txt";
    detail::write_text_file(predictions_path, body.str());

    Json summary;
    summary["samples"] = samples.size();
    summary["records"] = total_records;
    detail::write_manifest(dir / "predict_oracle_manifest.json", "predict-oracle", config, summary);

    log << "wrote " << total_records << " prediction records for " << samples.size()
        << " samples -> " << predictions_path.string() << "\n";
    return {predictions_path, samples.size(), total_records};
}

// ---------------------------------------------------------------------------
// solve / evaluate
// ---------------------------------------------------------------------------

namespace detail {

struct SolvedSample {
    std::int64_t id = 0;
    bool detected = false;
    PnPSolution solution;
    std::array<Point2, 9> points_px{};
};

/// Runs the selection + PnP stage of the pipeline over every dataset sample.
/// Prediction ids must reference dataset ids; samples without predictions (or
/// whose best candidate stays under the confidence threshold) come back
/// undetected rather than failing the run.
inline std::vector<SolvedSample> solve_pipeline(const RunConfig& config,
                                                std::span<const DatasetSample> samples,
                                                const std::vector<PredictionFileEntry>& entries,
                                                const GridLayout& layout,
                                                const InstrumentModel& model) {
    std::map<std::int64_t, std::vector<CellPrediction>> by_id;
    std::map<std::int64_t, const DatasetSample*> sample_by_id;
    for (const auto& s : samples) sample_by_id[s.id] = &s;
    for (const auto& e : entries) {
        if (!sample_by_id.count(e.sample_id))
            throw DataError("prediction references unknown sample id " +
                            std::to_string(e.sample_id));
        by_id[e.sample_id].push_back(e.record);
    }

    std::vector<SolvedSample> solved(samples.size());
    const auto solve_one = [&](std::size_t i) {
        const DatasetSample& sample = samples[i];
        SolvedSample& out = solved[i];
        out.id = sample.id;
        const auto it = by_id.find(sample.id);
        if (it == by_id.end() || it->second.empty()) return;
        const BestPrediction best = select_best(it->second, layout);
        if (best.confidence < config.conf_threshold) return;

        CorrespondenceSet set = CorrespondenceSet::from_geometry(
            {model.control_points.begin(), model.control_points.end()},
            {best.points_px.begin(), best.points_px.end()}, sample.geometry);
        const PnPSolution coarse = solve_epnp(set);
        out.solution = refine_gauss_newton(set, coarse.pose);
        out.points_px = best.points_px;
        out.detected = true;
    };
    parallel_for_index(samples.size(), config.threads, solve_one);
    return solved;
}

}  // namespace detail

struct SolveResult {
    std::filesystem::path poses_path;
    std::size_t detected = 0;
    std::size_t total = 0;
};

inline SolveResult run_solve(const RunConfig& config, std::ostream& log = std::cout) {
    config.validate();
    const auto dir = detail::ensure_out_dir(config);
    const auto samples = detail::load_dataset(config, dir);
    const std::filesystem::path pred_path = config.predictions_path.empty()
                                                ? dir / "predictions.txt"
                                                : std::filesystem::path(config.predictions_path);
    std::ifstream pred_in(pred_path);
    if (!pred_in) throw DataError("cannot open predictions '" + pred_path.string() + "'");
    const auto entries = read_predictions(pred_in);
    const GridLayout layout = detail::layout_for_dataset(config, samples);
    const InstrumentModel model = resolve_instrument(config);

    const auto solved = detail::solve_pipeline(config, samples, entries, layout, model);

    std::string body;
    std::size_t detected = 0;
    for (const auto& s : solved) {
        body += std::to_string(s.id);
        body += s.detected ? " 1" : " 0";
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                body += ' ' + detail::format_double(s.solution.pose.rotation(r, c));
        for (int r = 0; r < 3; ++r) body += ' ' + detail::format_double(s.solution.pose.translation(r));
        body += ' ' + detail::format_double(s.solution.mean_reprojection_error_px);
        body += ' ' + std::to_string(s.solution.refinement_iterations);
        body += '\n';
        detected += s.detected ? 1 : 0;
    }
    const auto poses_path = dir / "poses.txt";
    detail::write_text_file(poses_path, body);

    Json summary;
    summary["samples"] = solved.size();
    summary["detected"] = detected;
    detail::write_manifest(dir / "solve_manifest.json", "solve", config, summary);

    log << "solved " << detected << "/" << solved.size() << " samples -> " << poses_path.string()
        << "\n";
    return {poses_path, detected, solved.size()};
}

struct EvaluateResult {
    std::filesystem::path report_path;
    AggregateReport report;
    std::size_t detected = 0;
    std::size_t total = 0;
};

inline EvaluateResult run_evaluate(const RunConfig& config, std::ostream& log = std::cout) {
    config.validate();
    const auto dir = detail::ensure_out_dir(config);
    const auto samples = detail::load_dataset(config, dir);
    if (samples.empty()) throw DataError("dataset is empty");
    const std::filesystem::path pred_path = config.predictions_path.empty()
                                                ? dir / "predictions.txt"
                                                : std::filesystem::path(config.predictions_path);
    std::ifstream pred_in(pred_path);
    if (!pred_in) throw DataError("cannot open predictions '" + pred_path.string() + "'");
    const auto entries = read_predictions(pred_in);
    const GridLayout layout = detail::layout_for_dataset(config, samples);
    const InstrumentModel model = resolve_instrument(config);
    for (const auto& s : samples)
        if (s.instrument != model.name)
            throw DataError("dataset sample " + std::to_string(s.id) + " carries instrument '" +
                            s.instrument + "' but the configured model is '" + model.name + "'");

    const auto solved = detail::solve_pipeline(config, samples, entries, layout, model);
    const auto specs = config.threshold_specs();

    std::vector<PoseEvaluation> evals;
    std::string per_sample = "id detected add_mm add_s_mm reproj_px transl_mm ang_deg";
    for (const auto& spec : specs) per_sample += " pass_" + spec.label;
    per_sample += '\n';
    std::size_t detected = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = solved[i];
        per_sample += std::to_string(s.id);
        if (!s.detected) {
            per_sample += " 0";
            for (std::size_t t = 0; t < specs.size() + 5; ++t) per_sample += " -";
            per_sample += '\n';
            continue;
        }
        ++detected;
        const PoseEvaluation e =
            evaluate_pose(model, samples[i].pose, s.solution.pose, samples[i].points_px,
                          s.points_px, specs);
        per_sample += " 1 " + detail::format_double(e.add_mm, "%.6g") + ' ' +
                      detail::format_double(e.add_s_mm, "%.6g") + ' ' +
                      detail::format_double(e.reproj_err_px, "%.6g") + ' ' +
                      detail::format_double(e.translation_err_mm, "%.6g") + ' ' +
                      detail::format_double(e.angular_err_deg, "%.6g");
        for (const auto& t : e.thresholds) per_sample += t.pass ? " 1" : " 0";
        per_sample += '\n';
        evals.push_back(e);
    }
    if (evals.empty()) throw DataError("no sample was detected; nothing to evaluate");

    AggregateReport report = aggregate(evals);
    if (detected < samples.size()) {
        // undetected samples count as failures in the pass rates
        const double scale = static_cast<double>(detected) / static_cast<double>(samples.size());
        for (auto& t : report.thresholds) t.pass_percent *= scale;
        report.count = samples.size();
    }

    detail::write_text_file(dir / "evaluation.txt", per_sample);
    const auto report_path = dir / "report.csv";
    detail::write_text_file(report_path, aggregate_to_csv(report));

    Json summary;
    summary["samples"] = samples.size();
    summary["detected"] = detected;
    for (const auto& t : report.thresholds) summary["pass_" + t.label] = t.pass_percent;
    summary["translation_mean_mm"] = report.translation_mean_mm;
    summary["angular_mean_deg"] = report.angular_mean_deg;
    detail::write_manifest(dir / "evaluate_manifest.json", "evaluate", config, summary);

    log << "evaluated " << detected << "/" << samples.size() << " samples -> "
        << report_path.string() << "\n";
    log << aggregate_to_csv(report);
    return {report_path, report, detected, samples.size()};
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchRow {
    std::string stage;
    std::size_t n = 0;
    int iterations = 0;
    double median_ms = 0.0;
    double p95_ms = 0.0;
};

struct BenchResult {
    std::filesystem::path report_path;
    std::vector<BenchRow> rows;

    const BenchRow* find(const std::string& stage) const {
        for (const auto& r : rows)
            if (r.stage == stage) return &r;
        return nullptr;
    }
};

namespace detail {

template <typename Fn>
BenchRow bench_stage(const std::string& stage, std::size_t n, int iterations, Fn&& fn) {
    using Clock = std::chrono::steady_clock;
    for (int w = 0; w < std::max(1, iterations / 10); ++w) fn();  // warm-up
    std::vector<double> times_ms(iterations);
    for (int i = 0; i < iterations; ++i) {
        const auto start = Clock::now();
        fn();
        times_ms[i] = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    }
    std::sort(times_ms.begin(), times_ms.end());
    BenchRow row{stage, n, iterations, 0.0, 0.0};
    row.median_ms = times_ms[times_ms.size() / 2];
    row.p95_ms = times_ms[static_cast<std::size_t>(0.95 * (times_ms.size() - 1))];
    return row;
}

}  // namespace detail

/// Times the non-network pipeline stages: the EPnP solve at several
/// correspondence counts and best-prediction filtering over the full X-ray
/// grid layout.
inline BenchResult run_bench(const RunConfig& config, std::ostream& log = std::cout) {
    config.validate();
    const auto dir = detail::ensure_out_dir(config);
    const int iters = config.bench_iterations;

    BenchResult result;
    Rng rng(config.seed + 1);

    // EPnP over increasing correspondence counts; 9 matches the keypoint case.
    const InstrumentModel cube = make_cube_model();
    const AcquisitionGeometry geom{1000.0, 2.5, 2.5, 192.0, 148.4, 960, 742};
    const RigidTransform pose{rotation_xyz_deg(15.0, -10.0, 5.0), {5.0, -10.0, 700.0}};
    for (const std::size_t count : {std::size_t{9}, std::size_t{100}, std::size_t{1000}}) {
        std::vector<Point3> object;
        if (count == 9) {
            object.assign(cube.control_points.begin(), cube.control_points.end());
        } else {
            for (std::size_t i = 0; i < count; ++i)
                object.push_back({rng.uniform(-15.0, 15.0), rng.uniform(-15.0, 15.0),
                                  rng.uniform(-15.0, 15.0)});
        }
        const auto image = project_points(object, pose, geom);
        const CorrespondenceSet set = CorrespondenceSet::from_geometry(object, image, geom);
        volatile double sink = 0.0;
        result.rows.push_back(detail::bench_stage(
            "epnp", count, iters, [&]() { sink = solve_epnp(set).mean_reprojection_error_px; }));
        (void)sink;
    }

    // Best-prediction selection over the padded 960x742 layout.
    {
        const GridLayout layout = make_grid_layout(960, 742, config.anchors);
        PredictionGrids grids = PredictionGrids::zeros(layout);
        for (auto& scale : grids.values)
            for (auto& v : scale) v = rng.uniform(-6.0, 6.0);
        volatile double sink = 0.0;
        result.rows.push_back(detail::bench_stage("select_best", layout.total_predictions(), iters,
                                                  [&]() { sink = select_best(grids).confidence; }));
        (void)sink;
    }

    std::string csv = "stage,n,iterations,median_ms,p95_ms\n";
    for (const auto& r : result.rows) {
        csv += r.stage + ',' + std::to_string(r.n) + ',' + std::to_string(r.iterations) + ',' +
               detail::format_double(r.median_ms, "%.6f") + ',' +
               detail::format_double(r.p95_ms, "%.6f") + '\n';
    }
    result.report_path = dir / "bench.csv";
    detail::write_text_file(result.report_path, csv);
    detail::write_manifest(dir / "bench_manifest.json", "bench", config, Json::object());
    log << csv;
    return result;
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

struct CalibrateRow {
    double noise_mm = 0.0;
    bool degenerate = false;
    double median_rotation_err_deg = 0.0;
    double median_translation_err_mm = 0.0;
    double median_residual_rms_mm = 0.0;
};

struct CalibrateResult {
    std::filesystem::path report_path;
    std::vector<CalibrateRow> rows;
};

/// Sweeps the dome-link simulation over noise levels and reports how well
/// rigid registration recovers the optical <-> X-ray link.
inline CalibrateResult run_calibrate(const RunConfig& config, std::ostream& log = std::cout) {
    config.validate();
    const auto dir = detail::ensure_out_dir(config);

    const RigidTransform true_link{rotation_xyz_deg(12.0, -7.0, 31.0), {85.0, -40.0, 160.0}};
    const DomeLayout layout = config.dome_collinear ? DomeLayout::Collinear : DomeLayout::Dome;

    CalibrateResult result;
    for (const double noise : config.dome_noise_levels_mm) {
        CalibrateRow row;
        row.noise_mm = noise;
        std::vector<double> rot_errs, trans_errs, rms_values;
        for (int trial = 0; trial < config.dome_trials; ++trial) {
            const std::uint64_t trial_seed = config.seed + 7919 * (trial + 1);
            const auto pair = simulate_dome_link(static_cast<std::size_t>(config.dome_points),
                                                 true_link, noise, trial_seed, layout);
            try {
                const RegistrationResult reg =
                    register_point_sets(pair.optical_points, pair.xray_points);
                rot_errs.push_back(rotation_angle_deg(reg.transform.rotation, true_link.rotation));
                trans_errs.push_back((reg.transform.translation - true_link.translation).norm());
                rms_values.push_back(reg.residual_rms_mm);
            } catch (const DegenerateConfigurationError&) {
                row.degenerate = true;
            }
        }
        const auto median = [](std::vector<double>& v) {
            if (v.empty()) return 0.0;
            std::sort(v.begin(), v.end());
            return v[v.size() / 2];
        };
        row.median_rotation_err_deg = median(rot_errs);
        row.median_translation_err_mm = median(trans_errs);
        row.median_residual_rms_mm = median(rms_values);
        result.rows.push_back(row);
    }

    std::string csv = "noise_mm,status,median_rotation_err_deg,median_translation_err_mm,median_residual_rms_mm\n";
    for (const auto& r : result.rows) {
        csv += detail::format_double(r.noise_mm, "%.6g");
        csv += r.degenerate ? ",degenerate," : ",ok,";
        csv += detail::format_double(r.median_rotation_err_deg, "%.6g") + ',' +
               detail::format_double(r.median_translation_err_mm, "%.6g") + ',' +
               detail::format_double(r.median_residual_rms_mm, "%.6g") + '\n';
    }
    result.report_path = dir / "calibrate.csv";
    detail::write_text_file(result.report_path, csv);
    detail::write_manifest(dir / "calibrate_manifest.json", "calibrate", config, Json::object());
    log << csv;
    return result;
}

}  // namespace xpose
