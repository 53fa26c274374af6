#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "otmatch/experiments.hpp"

using namespace otmatch;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("dataset generation is deterministic under the seed") {
    GridGeometry g(8, 8, 1.0, 2.0);
    auto a = generate_dataset(5, g, 3, 42);
    auto b = generate_dataset(5, g, 3, 42);
    auto c = generate_dataset(5, g, 3, 43);
    REQUIRE(a.size() == 5);
    for (int s = 0; s < 5; ++s) {
        CHECK(a[s].rendered_input == b[s].rendered_input);
        for (int j = 0; j < 3; ++j) {
            CHECK(a[s].gt_joints[j].x == b[s].gt_joints[j].x);
            CHECK(a[s].gt_joints[j].y == b[s].gt_joints[j].y);
        }
    }
    CHECK(a[0].rendered_input != c[0].rendered_input);
}

TEST_CASE("single joint renders a single disc") {
    GridGeometry g(8, 8, 1.0, 2.0);
    auto data = generate_dataset(1, g, 1, 7);
    const auto& s = data[0];
    CHECK(s.input_width == 16);
    CHECK(s.input_height == 16);
    // disc of radius 3 input pixels: the count of near-1 pixels must match
    // one disc's area, not two
    int lit = 0;
    for (double v : s.rendered_input)
        if (v > 0.5) ++lit;
    CHECK(lit > 15);
    CHECK(lit < 50);
    CHECK(s.gt_joints.size() == 1);
    CHECK(s.gt_joints[0].x >= 0.0);
    CHECK(s.gt_joints[0].x <= g.max_x());
}

TEST_CASE("joint coordinates cover the hull uniformly") {
    GridGeometry g(8, 8, 1.0, 1.0);
    auto data = generate_dataset(10000, g, 1, 99);
    double mx = 0.0, my = 0.0;
    for (const auto& s : data) {
        mx += s.gt_joints[0].x;
        my += s.gt_joints[0].y;
    }
    mx /= data.size();
    my /= data.size();
    // uniform on [0, 7]: mean 3.5, sd 7/sqrt(12); 3 standard errors
    const double se = 7.0 / std::sqrt(12.0) / std::sqrt(10000.0);
    CHECK(std::abs(mx - 3.5) <= 3.0 * se);
    CHECK(std::abs(my - 3.5) <= 3.0 * se);
}

TEST_CASE("matching loss on direct logits reaches sub-pixel accuracy") {
    RunConfig cfg;
    cfg.num_samples = 1;
    cfg.num_joints = 1;
    cfg.seed = 5;
    cfg.predictor.steps = 500;
    cfg.predictor.learning_rate = 0.5;
    cfg.record_every = 50;
    auto data = generate_dataset(cfg.num_samples, cfg.geometry, cfg.num_joints, cfg.seed);
    RunResult r = train(data, cfg);
    CHECK(r.final_metrics.mean_error < 0.1);
}

TEST_CASE("mse against the dot target converges to the dot heatmap") {
    RunConfig cfg;
    cfg.num_samples = 1;
    cfg.num_joints = 1;
    cfg.seed = 11;
    cfg.loss.kind = LossKind::mse_dot;
    cfg.predictor.steps = 300;
    cfg.predictor.learning_rate = 0.4;
    cfg.record_every = 50;
    auto data = generate_dataset(cfg.num_samples, cfg.geometry, cfg.num_joints, cfg.seed);
    RunResult r = train(data, cfg);

    // optimum is the dot heatmap itself, so the argmax error equals the
    // quantization offset of the GT joint
    const Keypoint& gt = data[0].gt_joints[0];
    int col = containing_index(gt.x, cfg.geometry.pixel_size, cfg.geometry.width);
    int row = containing_index(gt.y, cfg.geometry.pixel_size, cfg.geometry.height);
    double qerr = std::hypot(gt.x - col, gt.y - row);
    CHECK(r.final_metrics.mean_error == doctest::Approx(qerr).epsilon(1e-6));
}

TEST_CASE("zero learning rate leaves the trace constant") {
    RunConfig cfg;
    cfg.num_samples = 2;
    cfg.num_joints = 1;
    cfg.seed = 3;
    cfg.predictor.learning_rate = 0.0;
    cfg.predictor.steps = 5;
    cfg.loss.sinkhorn.iterations = 100;
    auto data = generate_dataset(cfg.num_samples, cfg.geometry, cfg.num_joints, cfg.seed);
    RunResult r = train(data, cfg);
    for (const auto& st : r.steps) {
        CHECK(st.loss == r.steps.front().loss);
        CHECK(st.err_expectation == r.steps.front().err_expectation);
    }
    CHECK(r.trace.inconsistency_rate == 0.0);
}

TEST_CASE("safeguarded mode keeps the loss non-increasing") {
    RunConfig cfg;
    cfg.num_samples = 2;
    cfg.num_joints = 1;
    cfg.seed = 21;
    cfg.safeguarded = true;
    cfg.predictor.learning_rate = 8.0;  // deliberately unstable
    cfg.predictor.steps = 60;
    cfg.loss.sinkhorn.iterations = 150;
    auto data = generate_dataset(cfg.num_samples, cfg.geometry, cfg.num_joints, cfg.seed);
    RunResult r = train(data, cfg);
    for (size_t i = 1; i < r.steps.size(); ++i)
        CHECK(r.steps[i].loss <= r.steps[i - 1].loss + 1e-15);
}

TEST_CASE("identical config and seed reproduce the run bit-exactly") {
    RunConfig cfg;
    cfg.num_samples = 3;
    cfg.num_joints = 2;
    cfg.seed = 17;
    cfg.predictor.steps = 10;
    cfg.loss.sinkhorn.iterations = 100;
    auto data = generate_dataset(cfg.num_samples, cfg.geometry, cfg.num_joints, cfg.seed);
    RunResult a = train(data, cfg, Exec::serial);
    RunResult b = train(data, cfg, Exec::parallel);
    REQUIRE(a.steps.size() == b.steps.size());
    for (size_t i = 0; i < a.steps.size(); ++i) {
        CHECK(a.steps[i].loss == b.steps[i].loss);
        CHECK(a.steps[i].err_expectation == b.steps[i].err_expectation);
        CHECK(a.steps[i].err_argmax == b.steps[i].err_argmax);
    }
}

TEST_CASE("small model trains end to end") {
    RunConfig cfg;
    cfg.num_samples = 4;
    cfg.num_joints = 1;
    cfg.seed = 29;
    cfg.predictor.mode = PredictorMode::small_model;
    cfg.predictor.model_width = 16;
    cfg.predictor.learning_rate = 0.05;
    cfg.predictor.steps = 30;
    cfg.loss.sinkhorn.iterations = 100;
    cfg.record_every = 5;
    auto data = generate_dataset(cfg.num_samples, cfg.geometry, cfg.num_joints, cfg.seed);
    RunResult r = train(data, cfg);
    CHECK(r.steps.back().loss < r.steps.front().loss);
}

TEST_CASE("single-value ablation equals a plain training run") {
    RunConfig cfg;
    cfg.num_samples = 2;
    cfg.num_joints = 1;
    cfg.seed = 13;
    cfg.predictor.steps = 8;
    cfg.loss.sinkhorn.iterations = 120;
    AblationValues values;
    values.sinkhorn_iterations = {120};
    auto runs = run_ablation(AblationAxis::sinkhorn_iterations, cfg, Exec::parallel, values);
    REQUIRE(runs.size() == 1);
    auto data = generate_dataset(cfg.num_samples, cfg.geometry, cfg.num_joints, cfg.seed);
    RunResult direct = train(data, cfg);
    CHECK(runs[0].final_metrics.mean_error == direct.final_metrics.mean_error);
    REQUIRE(runs[0].steps.size() == direct.steps.size());
    for (size_t i = 0; i < direct.steps.size(); ++i)
        CHECK(runs[0].steps[i].loss == direct.steps[i].loss);
}

TEST_CASE("config files parse, unknown keys are rejected, echo is faithful") {
    RunConfig cfg = parse_run_config(
        "mode = direct_logits\n"
        "loss = matching  # the transport loss\n"
        "demanders = naive\n"
        "lambda = 2.5\n"
        "iterations = 250\n"
        "sigma = 1.5\n"
        "lr = 0.25\n"
        "steps = 42\n"
        "seed = 9\n"
        "n = 6\n"
        "K = 2\n"
        "H = 10\n"
        "W = 12\n"
        "r = 2\n"
        "record_every = 7\n"
        "safeguarded = true\n");
    CHECK(cfg.predictor.mode == PredictorMode::direct_logits);
    CHECK(cfg.loss.kind == LossKind::matching);
    CHECK(cfg.loss.demander_mode == DemanderMode::naive);
    CHECK(cfg.loss.sinkhorn.lambda == 2.5);
    CHECK(cfg.loss.sinkhorn.iterations == 250);
    CHECK(cfg.loss.gaussian.sigma == 1.5);
    CHECK(cfg.predictor.learning_rate == 0.25);
    CHECK(cfg.predictor.steps == 42);
    CHECK(cfg.seed == 9);
    CHECK(cfg.num_samples == 6);
    CHECK(cfg.num_joints == 2);
    CHECK(cfg.geometry.height == 10);
    CHECK(cfg.geometry.width == 12);
    CHECK(cfg.geometry.image_scale == 2.0);
    CHECK(cfg.record_every == 7);
    CHECK(cfg.safeguarded);

    CHECK_THROWS_AS(parse_run_config("bogus_key = 1\n"), std::invalid_argument);

    std::string echo = config_echo_json(cfg);
    CHECK(echo.find("\"steps\"") != std::string::npos);
    CHECK(echo.find("42") != std::string::npos);
}

TEST_CASE("run outputs land in the requested directory") {
    RunConfig cfg;
    cfg.num_samples = 1;
    cfg.num_joints = 1;
    cfg.seed = 2;
    cfg.predictor.steps = 4;
    cfg.loss.sinkhorn.iterations = 80;
    auto data = generate_dataset(cfg.num_samples, cfg.geometry, cfg.num_joints, cfg.seed);
    RunResult r = train(data, cfg);

    std::filesystem::path dir = std::filesystem::temp_directory_path() / "otmatch_run_test";
    std::filesystem::remove_all(dir);
    write_run_outputs(r, dir.string());
    std::string trace = slurp(dir / "trace.csv");
    CHECK(trace.rfind("step,loss,error", 0) == 0);
    CHECK(slurp(dir / "metrics.json").find("mean_error") != std::string::npos);
    CHECK(slurp(dir / "config_echo.json").find("seed") != std::string::npos);

    // byte-identical trace from an identical rerun
    RunResult r2 = train(data, cfg);
    std::filesystem::path dir2 = std::filesystem::temp_directory_path() / "otmatch_run_test2";
    std::filesystem::remove_all(dir2);
    write_run_outputs(r2, dir2.string());
    CHECK(slurp(dir / "trace.csv") == slurp(dir2 / "trace.csv"));
    std::filesystem::remove_all(dir);
    std::filesystem::remove_all(dir2);
}
