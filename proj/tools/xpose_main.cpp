// Command-line front end: dataset generation, oracle prediction, pose
// solving, metric evaluation, calibration sweeps and timing benchmarks.

#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "xpose/harness.hpp"

namespace {

struct CliFlags {
    std::string config_path;
    xpose::RunConfig config;
};

/// Attaches the shared and per-command options to a subcommand. Option
/// defaults are only applied when the flag is actually passed, so the
/// precedence CLI > config file > built-in defaults holds.
void attach_options(CLI::App* cmd, CliFlags& flags) {
    cmd->add_option("--config", flags.config_path, "JSON config file");
    cmd->add_option("--seed", flags.config.seed, "RNG seed");
    cmd->add_option("--out", flags.config.out_dir, "output directory");
    cmd->add_option("--threads", flags.config.threads, "worker threads");
    cmd->add_option("--instrument", flags.config.instrument,
                    "built-in instrument (cube, screw) or instrument JSON path");
    cmd->add_option("--n", flags.config.n_samples, "sample count");
    cmd->add_flag("--clinical", flags.config.clinical, "restrict viewing angles to the clinical range");
    cmd->add_option("--sigma", flags.config.jitter_px, "oracle keypoint jitter, px");
    cmd->add_option("--conf-model", flags.config.oracle_conf_model,
                    "oracle objectness model: target | constant");
    cmd->add_option("--conf-threshold", flags.config.conf_threshold,
                    "minimum objectness for a detection");
    cmd->add_option("--dataset", flags.config.dataset_path, "dataset file path");
    cmd->add_option("--predictions", flags.config.predictions_path, "predictions file path");
    cmd->add_option("--thresholds", flags.config.thresholds,
                    "accuracy thresholds, e.g. 0.1d 0.05d 1.0mm");
    cmd->add_option("--alpha", flags.config.codec.alpha, "confidence sharpness");
    cmd->add_option("--beta", flags.config.codec.beta, "confidence cutoff fraction");
    cmd->add_option("--lambda-points", flags.config.codec.lambda_points, "keypoint loss weight");
    cmd->add_option("--lambda-conf", flags.config.codec.lambda_conf, "confidence loss weight");
    cmd->add_option("--anchor-ratio", flags.config.codec.anchor_ratio_threshold,
                    "anchor match ratio threshold");
    cmd->add_option("--dome-points", flags.config.dome_points, "calibration dome point count");
    cmd->add_option("--dome-trials", flags.config.dome_trials, "trials per noise level");
    cmd->add_flag("--dome-collinear", flags.config.dome_collinear,
                  "use a degenerate collinear dome layout");
    cmd->add_option("--bench-iterations", flags.config.bench_iterations,
                    "timing iterations per stage");
}

/// Re-applies CLI values over the config file by replaying the parse: start
/// from defaults, merge the file, then let CLI11 write the passed flags.
xpose::RunConfig resolve_config(CLI::App* cmd, const CliFlags& flags) {
    xpose::RunConfig config;
    if (!flags.config_path.empty()) config = xpose::load_config_file(flags.config_path);

    // Pull only the options the user actually passed out of the parsed flags.
    xpose::RunConfig from_cli = flags.config;
    const auto passed = [cmd](const std::string& name) { return cmd->count(name) > 0; };
    if (passed("--seed")) config.seed = from_cli.seed;
    if (passed("--out")) config.out_dir = from_cli.out_dir;
    if (passed("--threads")) config.threads = from_cli.threads;
    if (passed("--instrument")) config.instrument = from_cli.instrument;
    if (passed("--n")) config.n_samples = from_cli.n_samples;
    if (passed("--clinical")) config.clinical = from_cli.clinical;
    if (passed("--sigma")) config.jitter_px = from_cli.jitter_px;
    if (passed("--conf-model")) config.oracle_conf_model = from_cli.oracle_conf_model;
    if (passed("--conf-threshold")) config.conf_threshold = from_cli.conf_threshold;
    if (passed("--dataset")) config.dataset_path = from_cli.dataset_path;
    if (passed("--predictions")) config.predictions_path = from_cli.predictions_path;
    if (passed("--thresholds")) config.thresholds = from_cli.thresholds;
    if (passed("--alpha")) config.codec.alpha = from_cli.codec.alpha;
    if (passed("--beta")) config.codec.beta = from_cli.codec.beta;
    if (passed("--lambda-points")) config.codec.lambda_points = from_cli.codec.lambda_points;
    if (passed("--lambda-conf")) config.codec.lambda_conf = from_cli.codec.lambda_conf;
    if (passed("--anchor-ratio"))
        config.codec.anchor_ratio_threshold = from_cli.codec.anchor_ratio_threshold;
    if (passed("--dome-points")) config.dome_points = from_cli.dome_points;
    if (passed("--dome-trials")) config.dome_trials = from_cli.dome_trials;
    if (passed("--dome-collinear")) config.dome_collinear = from_cli.dome_collinear;
    if (passed("--bench-iterations")) config.bench_iterations = from_cli.bench_iterations;
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"6-DoF instrument pose estimation toolkit for variable X-ray geometries"};
    app.require_subcommand(1);

    CliFlags flags;
    CLI::App* generate = app.add_subcommand("generate", "emit a labeled synthetic dataset");
    CLI::App* predict = app.add_subcommand("predict-oracle", "emit oracle prediction records");
    CLI::App* solve = app.add_subcommand("solve", "recover poses from prediction records");
    CLI::App* evaluate = app.add_subcommand("evaluate", "score predictions against the dataset");
    CLI::App* bench = app.add_subcommand("bench", "time the pipeline stages");
    CLI::App* calibrate = app.add_subcommand("calibrate", "sweep the dome-link registration");
    for (CLI::App* cmd : {generate, predict, solve, evaluate, bench, calibrate})
        attach_options(cmd, flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        CLI::App* cmd = app.get_subcommands().front();
        const xpose::RunConfig config = resolve_config(cmd, flags);
        if (cmd == generate)
            xpose::run_generate(config);
        else if (cmd == predict)
            xpose::run_predict_oracle(config);
        else if (cmd == solve)
            xpose::run_solve(config);
        else if (cmd == evaluate)
            xpose::run_evaluate(config);
        else if (cmd == bench)
            xpose::run_bench(config);
        else if (cmd == calibrate)
            xpose::run_calibrate(config);
        return 0;
    } catch (const xpose::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const xpose::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const xpose::NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
