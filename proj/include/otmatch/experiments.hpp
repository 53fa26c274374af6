#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "otmatch/analysis.hpp"
#include "otmatch/decode.hpp"
#include "otmatch/encoders.hpp"
#include "otmatch/grid.hpp"
#include "otmatch/loss.hpp"

namespace otmatch {

/// One synthetic training sample: a noisy disc per joint rendered at input
/// resolution (r*H x r*W), plus the sub-pixel ground-truth joints.
struct SyntheticSample {
    int input_width = 0;
    int input_height = 0;
    std::vector<double> rendered_input;  // row-major, input resolution
    std::vector<Keypoint> gt_joints;
    std::uint64_t seed = 0;
};

enum class PredictorMode { direct_logits, small_model };

struct PredictorSpec {
    PredictorMode mode = PredictorMode::direct_logits;
    int model_width = 32;       // hidden units, small_model only
    double init_scale = 1.0;    // direct_logits: mean of the initial logits
    double learning_rate = 0.5;
    int steps = 500;
};

enum class LossKind { matching, mse_gaussian, mse_dot };

struct LossSpec {
    LossKind kind = LossKind::matching;
    DemanderMode demander_mode = DemanderMode::subpixel;
    SinkhornConfig sinkhorn;
    GaussianSpec gaussian;
};

struct RunConfig {
    GridGeometry geometry{8, 8, 1.0, 2.0};
    int num_samples = 1;
    int num_joints = 1;
    std::uint64_t seed = 0;
    PredictorSpec predictor;
    LossSpec loss;
    int record_every = 1;
    bool safeguarded = false;
};

/// Per-step record: training loss plus mean decode error under both decoders.
struct RunStep {
    int step = 0;
    double loss = 0.0;
    double err_expectation = 0.0;
    double err_argmax = 0.0;
};

struct RunResult {
    LocalizationMetrics final_metrics;  // primary decoder
    ConsistencyTrace trace;             // primary decoder error per step
    std::vector<RunStep> steps;
    RunConfig config;
    double wall_time_seconds = 0.0;
};

std::vector<SyntheticSample> generate_dataset(int n, const GridGeometry& geom, int num_joints,
                                              std::uint64_t seed);

RunResult train(const std::vector<SyntheticSample>& dataset, const RunConfig& cfg,
                Exec exec = Exec::parallel);

enum class AblationAxis { demander_mode, sinkhorn_iterations };

struct AblationValues {
    std::vector<DemanderMode> demander_modes{DemanderMode::subpixel, DemanderMode::naive};
    std::vector<int> sinkhorn_iterations{500, 1000, 1500};
};

/// One training run per value of the chosen axis, all on the same dataset.
std::vector<RunResult> run_ablation(AblationAxis axis, const RunConfig& base,
                                    Exec exec = Exec::parallel,
                                    const AblationValues& values = {});

// Declarative "key = value" run configuration (keys: mode, loss, demanders,
// lambda, iterations, sigma, lr, steps, seed, n, K, H, W, r, record_every,
// init_scale, model_width, safeguarded).
RunConfig parse_run_config(const std::string& text);
RunConfig read_run_config(const std::string& path);
std::string config_echo_json(const RunConfig& cfg);

/// Writes trace.csv, metrics.json and config_echo.json into `dir`.
void write_run_outputs(const RunResult& result, const std::string& dir);

}  // namespace otmatch
