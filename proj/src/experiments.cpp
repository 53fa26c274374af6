#include "otmatch/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <random>
#include <sstream>

#include <json.hpp>

namespace otmatch {

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::vector<SyntheticSample> generate_dataset(int n, const GridGeometry& geom, int num_joints,
                                              std::uint64_t seed) {
    if (n < 1)
        throw std::invalid_argument("generate_dataset: n must be >= 1");
    if (num_joints < 1)
        throw std::invalid_argument("generate_dataset: need at least one joint");

    const double r = geom.image_scale;
    const int in_w = static_cast<int>(std::lround(geom.width * r));
    const int in_h = static_cast<int>(std::lround(geom.height * r));
    const double disc_radius = 1.5 * r;
    const double noise_std = 0.05;

    std::vector<SyntheticSample> out(n);
    for (int idx = 0; idx < n; ++idx) {
        SyntheticSample& sample = out[idx];
        sample.seed = mix_seed(seed, static_cast<std::uint64_t>(idx));
        sample.input_width = in_w;
        sample.input_height = in_h;
        std::mt19937_64 rng(sample.seed);
        std::uniform_real_distribution<double> ux(0.0, geom.max_x());
        std::uniform_real_distribution<double> uy(0.0, geom.max_y());
        std::normal_distribution<double> noise(0.0, noise_std);

        for (int k = 0; k < num_joints; ++k)
            sample.gt_joints.push_back(clamp_keypoint({ux(rng), uy(rng), true}, geom));

        sample.rendered_input.assign(static_cast<size_t>(in_w) * in_h, 0.0);
        for (const auto& kp : sample.gt_joints) {
            // joint position at input resolution; input pixel (i, j) sits at (i, j)
            const double cx = kp.x / geom.pixel_size * r;
            const double cy = kp.y / geom.pixel_size * r;
            for (int row = 0; row < in_h; ++row)
                for (int col = 0; col < in_w; ++col)
                    if (std::hypot(col - cx, row - cy) <= disc_radius)
                        sample.rendered_input[row * in_w + col] += 1.0;
        }
        for (auto& v : sample.rendered_input) v += noise(rng);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

struct JointProblem {
    Keypoint gt;
    // matching loss only
    DemanderSet demanders;
    CostMatrix cost;
    std::vector<std::pair<double, double>> supplier_locations;
    // mse only
    std::vector<double> target;
};

struct EvalResult {
    double loss = 0.0;                // instance total
    std::vector<std::vector<double>> grads;  // per joint
};

// Loss and gradient for one sample's K heatmap grids.
EvalResult eval_sample(const std::vector<std::vector<double>>& heatmap_values,
                       const std::vector<JointProblem>& problems, const GridGeometry& geom,
                       const LossSpec& loss) {
    EvalResult out;
    const int k = static_cast<int>(problems.size());
    out.grads.resize(k);
    const int n = geom.num_pixels();
    for (int j = 0; j < k; ++j) {
        out.grads[j].assign(n, 0.0);
        const std::vector<double>& h = heatmap_values[j];
        if (loss.kind == LossKind::matching) {
            // suppliers: relu + L1 normalization over the raw grid
            double total = 0.0;
            for (double v : h)
                if (v > 0.0) total += v;
            if (total < 1e-12) continue;  // degenerate joint: masked, zero grad
            std::vector<double> masses(n);
            for (int i = 0; i < n; ++i) masses[i] = h[i] > 0.0 ? h[i] / total : 0.0;

            SinkhornGradResult res = sinkhorn_with_grad(masses, problems[j].demanders.masses,
                                                        problems[j].cost, loss.sinkhorn);
            out.loss += res.plan.objective;
            double dot = 0.0;
            for (int i = 0; i < n; ++i) dot += res.grad_supply[i] * masses[i];
            for (int i = 0; i < n; ++i)
                if (h[i] > 0.0) out.grads[j][i] = (res.grad_supply[i] - dot) / total;
        } else {
            const std::vector<double>& t = problems[j].target;
            for (int i = 0; i < n; ++i) {
                double diff = h[i] - t[i];
                out.loss += diff * diff;
                out.grads[j][i] = 2.0 * diff;
            }
        }
    }
    return out;
}

std::vector<std::vector<JointProblem>> prepare_problems(
    const std::vector<SyntheticSample>& dataset, const GridGeometry& geom,
    const LossSpec& loss) {
    SupplierSet grid = build_suppliers(Heatmap::zeros(geom));  // only locations used
    std::vector<std::vector<JointProblem>> problems(dataset.size());
    for (size_t s = 0; s < dataset.size(); ++s) {
        for (const auto& kp : dataset[s].gt_joints) {
            JointProblem jp;
            jp.gt = kp;
            if (loss.kind == LossKind::matching) {
                jp.demanders = build_demanders(kp, geom, loss.demander_mode);
                jp.supplier_locations = grid.locations;
                SupplierSet locs;
                locs.masses.assign(geom.num_pixels(), 1.0 / geom.num_pixels());
                locs.locations = grid.locations;
                jp.cost = build_cost(locs, jp.demanders);
            } else if (loss.kind == LossKind::mse_gaussian) {
                jp.target = build_gaussian_heatmap(kp, geom, loss.gaussian).values();
            } else {
                jp.target = build_dot_heatmap(kp, geom).values();
            }
            problems[s].push_back(std::move(jp));
        }
    }
    return problems;
}

struct ErrorPair {
    double expectation = 0.0;
    double argmax = 0.0;
};

ErrorPair mean_decode_errors(const std::vector<std::vector<std::vector<double>>>& heatmaps,
                             const std::vector<std::vector<JointProblem>>& problems,
                             const GridGeometry& geom) {
    ErrorPair out;
    int count = 0;
    const double cx = geom.max_x() / 2.0, cy = geom.max_y() / 2.0;
    for (size_t s = 0; s < heatmaps.size(); ++s) {
        for (size_t j = 0; j < heatmaps[s].size(); ++j) {
            Heatmap h(geom, heatmaps[s][j]);
            const Keypoint& gt = problems[s][j].gt;
            double ex, ey;
            try {
                DecodedJoint d = decode_expectation(h);
                ex = d.x;
                ey = d.y;
            } catch (const DegenerateDecodeError&) {
                ex = cx;
                ey = cy;  // fall back to the grid center
            }
            DecodedJoint am = decode_argmax(h);
            out.expectation += std::hypot(ex - gt.x, ey - gt.y);
            out.argmax += std::hypot(am.x - gt.x, am.y - gt.y);
            ++count;
        }
    }
    out.expectation /= count;
    out.argmax /= count;
    return out;
}

LocalizationMetrics pooled_metrics(const std::vector<std::vector<std::vector<double>>>& heatmaps,
                                   const std::vector<std::vector<JointProblem>>& problems,
                                   const GridGeometry& geom, bool expectation) {
    LocalizationMetrics metrics;
    double sum = 0.0;
    const double cx = geom.max_x() / 2.0, cy = geom.max_y() / 2.0;
    for (size_t s = 0; s < heatmaps.size(); ++s) {
        for (size_t j = 0; j < heatmaps[s].size(); ++j) {
            Heatmap h(geom, heatmaps[s][j]);
            double px = cx, py = cy;
            if (expectation) {
                try {
                    DecodedJoint d = decode_expectation(h);
                    px = d.x;
                    py = d.y;
                } catch (const DegenerateDecodeError&) {
                }
            } else {
                DecodedJoint d = decode_argmax(h);
                px = d.x;
                py = d.y;
            }
            const Keypoint& gt = problems[s][j].gt;
            double err = std::hypot(px - gt.x, py - gt.y);
            metrics.per_joint_error.push_back(err);
            sum += err;
        }
    }
    metrics.mean_error = sum / metrics.per_joint_error.size();
    for (double t : default_pck_thresholds()) {
        int ok = 0;
        for (double e : metrics.per_joint_error)
            if (e <= t) ++ok;
        metrics.pck_at[t] = static_cast<double>(ok) / metrics.per_joint_error.size();
    }
    return metrics;
}

// Tiny one-hidden-layer model: rendered input -> tanh(hidden) -> K heatmaps.
struct SmallModel {
    int in_dim, hid, out_dim;
    std::vector<double> w1, b1, w2, b2;  // w1: hid x in, w2: out x hid

    SmallModel(int in, int hidden, int out, double init_scale, std::uint64_t seed)
        : in_dim(in), hid(hidden), out_dim(out) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> gauss(0.0, 1.0);
        w1.resize(static_cast<size_t>(hid) * in_dim);
        b1.assign(hid, 0.0);
        w2.resize(static_cast<size_t>(out_dim) * hid);
        b2.assign(out_dim, init_scale);  // start from a positive flat heatmap
        const double s1 = 1.0 / std::sqrt(in_dim);
        const double s2 = 1.0 / std::sqrt(hid);
        for (auto& w : w1) w = s1 * gauss(rng);
        for (auto& w : w2) w = s2 * gauss(rng);
    }

    void forward(const std::vector<double>& x, std::vector<double>& hact,
                 std::vector<double>& out) const {
        hact.assign(hid, 0.0);
        for (int h = 0; h < hid; ++h) {
            double acc = b1[h];
            const double* row = &w1[static_cast<size_t>(h) * in_dim];
            for (int i = 0; i < in_dim; ++i) acc += row[i] * x[i];
            hact[h] = std::tanh(acc);
        }
        out.assign(out_dim, 0.0);
        for (int o = 0; o < out_dim; ++o) {
            double acc = b2[o];
            const double* row = &w2[static_cast<size_t>(o) * hid];
            for (int h = 0; h < hid; ++h) acc += row[h] * hact[h];
            out[o] = acc;
        }
    }
};

}  // namespace

RunResult train(const std::vector<SyntheticSample>& dataset, const RunConfig& cfg, Exec exec) {
    if (dataset.empty())
        throw std::invalid_argument("train: empty dataset");
    const auto t0 = std::chrono::steady_clock::now();
    const GridGeometry& geom = cfg.geometry;
    const int n = static_cast<int>(dataset.size());
    const int k = static_cast<int>(dataset.front().gt_joints.size());
    const int hw = geom.num_pixels();
    const bool matching = cfg.loss.kind == LossKind::matching;

    auto problems = prepare_problems(dataset, geom, cfg.loss);

    // Current predicted heatmaps, one grid per sample-joint.
    std::vector<std::vector<std::vector<double>>> heatmaps(
        n, std::vector<std::vector<double>>(k, std::vector<double>(hw, 0.0)));

    // direct_logits parameters are the heatmaps themselves
    std::vector<std::vector<std::vector<double>>>& logits = heatmaps;
    std::unique_ptr<SmallModel> model;
    std::vector<std::vector<double>> hacts(n);

    if (cfg.predictor.mode == PredictorMode::direct_logits) {
        for (int s = 0; s < n; ++s) {
            std::mt19937_64 rng(mix_seed(cfg.seed, 0x10000ULL + s));
            std::normal_distribution<double> gauss(cfg.predictor.init_scale, 0.1);
            for (int j = 0; j < k; ++j)
                for (int i = 0; i < hw; ++i) logits[s][j][i] = gauss(rng);
        }
    } else {
        const int in_dim = dataset.front().input_width * dataset.front().input_height;
        model = std::make_unique<SmallModel>(in_dim, cfg.predictor.model_width, k * hw,
                                             cfg.predictor.init_scale,
                                             mix_seed(cfg.seed, 0x51ULL));
    }

    auto model_forward_all = [&]() {
        if (!model) return;
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
        for (int s = 0; s < n; ++s) {
            std::vector<double> out;
            model->forward(dataset[s].rendered_input, hacts[s], out);
            for (int j = 0; j < k; ++j)
                std::copy(out.begin() + j * hw, out.begin() + (j + 1) * hw,
                          heatmaps[s][j].begin());
        }
    };
    model_forward_all();

    auto eval_all = [&](std::vector<EvalResult>& results) {
        results.resize(n);
#pragma omp parallel for schedule(dynamic) if (exec == Exec::parallel)
        for (int s = 0; s < n; ++s)
            results[s] = eval_sample(heatmaps[s], problems[s], geom, cfg.loss);
        double total = 0.0;
        for (int s = 0; s < n; ++s) total += results[s].loss;  // sample order
        return total / n;
    };

    RunResult run;
    run.config = cfg;
    double lr = cfg.predictor.learning_rate;
    double prev_loss = std::numeric_limits<double>::infinity();
    std::vector<EvalResult> results;

    // model parameter gradients (small_model only)
    std::vector<double> gw1, gb1, gw2, gb2;

    // pre-update snapshot so safeguarded mode can actually roll back
    std::vector<std::vector<std::vector<double>>> logits_snap;
    std::vector<double> w1_snap, b1_snap, w2_snap, b2_snap;
    auto snapshot = [&]() {
        if (!cfg.safeguarded) return;
        if (model) {
            w1_snap = model->w1;
            b1_snap = model->b1;
            w2_snap = model->w2;
            b2_snap = model->b2;
        } else {
            logits_snap = logits;
        }
    };
    auto restore = [&]() {
        if (model) {
            model->w1 = w1_snap;
            model->b1 = b1_snap;
            model->w2 = w2_snap;
            model->b2 = b2_snap;
            model_forward_all();
        } else {
            logits = logits_snap;
        }
    };

    for (int step = 0; step <= cfg.predictor.steps; ++step) {
        double loss = eval_all(results);
        if (!std::isfinite(loss))
            throw DivergenceError("train: loss diverged (non-finite) at step " +
                                      std::to_string(step),
                                  step);

        bool rejected = false;
        if (cfg.safeguarded && loss > prev_loss) {
            // undo the last update and retry from the old point at half the rate
            restore();
            lr *= 0.5;
            loss = prev_loss;
            rejected = true;
        }

        if (step % cfg.record_every == 0 || step == cfg.predictor.steps) {
            ErrorPair errs = mean_decode_errors(heatmaps, problems, geom);
            run.steps.push_back({step, loss, errs.expectation, errs.argmax});
        }
        prev_loss = loss;
        if (step == cfg.predictor.steps) break;
        if (rejected) continue;  // gradients are stale; re-evaluate before stepping
        snapshot();

        if (cfg.predictor.mode == PredictorMode::direct_logits) {
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
            for (int s = 0; s < n; ++s)
                for (int j = 0; j < k; ++j)
                    for (int i = 0; i < hw; ++i)
                        logits[s][j][i] -= lr * results[s].grads[j][i] / n;
        } else {
            gw1.assign(model->w1.size(), 0.0);
            gb1.assign(model->b1.size(), 0.0);
            gw2.assign(model->w2.size(), 0.0);
            gb2.assign(model->b2.size(), 0.0);
            const int hid = model->hid;
            const int in_dim = model->in_dim;
            for (int s = 0; s < n; ++s) {  // sample order for determinism
                std::vector<double> dhact(hid, 0.0);
                for (int j = 0; j < k; ++j) {
                    for (int i = 0; i < hw; ++i) {
                        double d = results[s].grads[j][i] / n;
                        if (d == 0.0) continue;
                        int o = j * hw + i;
                        gb2[o] += d;
                        double* w2row = &model->w2[static_cast<size_t>(o) * hid];
                        double* gw2row = &gw2[static_cast<size_t>(o) * hid];
                        for (int h = 0; h < hid; ++h) {
                            gw2row[h] += d * hacts[s][h];
                            dhact[h] += d * w2row[h];
                        }
                    }
                }
                const std::vector<double>& x = dataset[s].rendered_input;
                for (int h = 0; h < hid; ++h) {
                    double dpre = dhact[h] * (1.0 - hacts[s][h] * hacts[s][h]);
                    if (dpre == 0.0) continue;
                    gb1[h] += dpre;
                    double* gw1row = &gw1[static_cast<size_t>(h) * in_dim];
                    for (int i = 0; i < in_dim; ++i) gw1row[i] += dpre * x[i];
                }
            }
            for (size_t i = 0; i < model->w1.size(); ++i) model->w1[i] -= lr * gw1[i];
            for (size_t i = 0; i < model->b1.size(); ++i) model->b1[i] -= lr * gb1[i];
            for (size_t i = 0; i < model->w2.size(); ++i) model->w2[i] -= lr * gw2[i];
            for (size_t i = 0; i < model->b2.size(); ++i) model->b2[i] -= lr * gb2[i];
            model_forward_all();
        }
    }

    run.final_metrics = pooled_metrics(heatmaps, problems, geom, matching);

    std::vector<TraceStep> trace;
    for (const auto& st : run.steps)
        trace.push_back({st.step, st.loss, matching ? st.err_expectation : st.err_argmax});
    run.trace = trace_consistency(trace);
    run.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return run;
}

std::vector<RunResult> run_ablation(AblationAxis axis, const RunConfig& base, Exec exec,
                                    const AblationValues& values) {
    auto dataset = generate_dataset(base.num_samples, base.geometry, base.num_joints, base.seed);
    std::vector<RunResult> results;
    if (axis == AblationAxis::demander_mode) {
        for (DemanderMode mode : values.demander_modes) {
            RunConfig cfg = base;
            cfg.loss.kind = LossKind::matching;
            cfg.loss.demander_mode = mode;
            results.push_back(train(dataset, cfg, exec));
        }
    } else {
        for (int iters : values.sinkhorn_iterations) {
            RunConfig cfg = base;
            cfg.loss.kind = LossKind::matching;
            cfg.loss.sinkhorn.iterations = iters;
            results.push_back(train(dataset, cfg, exec));
        }
    }
    return results;
}

// ---------------------------------------------------------------------------
// Config file and run outputs
// ---------------------------------------------------------------------------

RunConfig parse_run_config(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            size_t b = s.find_first_not_of(" \t\r");
            size_t e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (!key.empty()) kv[key] = value;
    }

    int h = 8, w = 8;
    double r = 2.0;
    RunConfig cfg;
    for (const auto& [key, value] : kv) {
        if (key == "mode") {
            if (value == "direct_logits")
                cfg.predictor.mode = PredictorMode::direct_logits;
            else if (value == "small_model")
                cfg.predictor.mode = PredictorMode::small_model;
            else
                throw std::invalid_argument("config: unknown mode '" + value + "'");
        } else if (key == "loss") {
            if (value == "matching")
                cfg.loss.kind = LossKind::matching;
            else if (value == "mse_gaussian")
                cfg.loss.kind = LossKind::mse_gaussian;
            else if (value == "mse_dot")
                cfg.loss.kind = LossKind::mse_dot;
            else
                throw std::invalid_argument("config: unknown loss '" + value + "'");
        } else if (key == "demanders") {
            if (value == "subpixel")
                cfg.loss.demander_mode = DemanderMode::subpixel;
            else if (value == "naive")
                cfg.loss.demander_mode = DemanderMode::naive;
            else
                throw std::invalid_argument("config: unknown demanders '" + value + "'");
        } else if (key == "lambda") {
            cfg.loss.sinkhorn.lambda = std::stod(value);
        } else if (key == "iterations") {
            cfg.loss.sinkhorn.iterations = std::stoi(value);
        } else if (key == "sigma") {
            cfg.loss.gaussian.sigma = std::stod(value);
        } else if (key == "lr") {
            cfg.predictor.learning_rate = std::stod(value);
        } else if (key == "steps") {
            cfg.predictor.steps = std::stoi(value);
        } else if (key == "seed") {
            cfg.seed = std::stoull(value);
        } else if (key == "n") {
            cfg.num_samples = std::stoi(value);
        } else if (key == "K") {
            cfg.num_joints = std::stoi(value);
        } else if (key == "H") {
            h = std::stoi(value);
        } else if (key == "W") {
            w = std::stoi(value);
        } else if (key == "r") {
            r = std::stod(value);
        } else if (key == "record_every") {
            cfg.record_every = std::stoi(value);
        } else if (key == "init_scale") {
            cfg.predictor.init_scale = std::stod(value);
        } else if (key == "model_width") {
            cfg.predictor.model_width = std::stoi(value);
        } else if (key == "safeguarded") {
            cfg.safeguarded = (value == "1" || value == "true");
        } else {
            throw std::invalid_argument("config: unknown key '" + key + "'");
        }
    }
    cfg.geometry = GridGeometry(w, h, 1.0, r);
    return cfg;
}

RunConfig read_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open config: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string config_echo_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["mode"] =
        cfg.predictor.mode == PredictorMode::direct_logits ? "direct_logits" : "small_model";
    j["loss"] = cfg.loss.kind == LossKind::matching
                    ? "matching"
                    : (cfg.loss.kind == LossKind::mse_gaussian ? "mse_gaussian" : "mse_dot");
    j["demanders"] = cfg.loss.demander_mode == DemanderMode::subpixel ? "subpixel" : "naive";
    j["lambda"] = cfg.loss.sinkhorn.lambda;
    j["iterations"] = cfg.loss.sinkhorn.iterations;
    j["sigma"] = cfg.loss.gaussian.sigma;
    j["lr"] = cfg.predictor.learning_rate;
    j["steps"] = cfg.predictor.steps;
    j["seed"] = cfg.seed;
    j["n"] = cfg.num_samples;
    j["K"] = cfg.num_joints;
    j["H"] = cfg.geometry.height;
    j["W"] = cfg.geometry.width;
    j["r"] = cfg.geometry.image_scale;
    j["record_every"] = cfg.record_every;
    j["init_scale"] = cfg.predictor.init_scale;
    j["model_width"] = cfg.predictor.model_width;
    j["safeguarded"] = cfg.safeguarded;
    return j.dump(2) + "\n";
}

void write_run_outputs(const RunResult& result, const std::string& dir) {
    std::filesystem::create_directories(dir);

    std::ofstream trace(dir + "/trace.csv");
    trace << "step,loss,error\n";
    for (const auto& st : result.trace.steps)
        trace << st.step << ',' << format_double(st.loss) << ',' << format_double(st.error)
              << '\n';

    nlohmann::json metrics;
    metrics["mean_error"] = result.final_metrics.mean_error;
    for (const auto& [t, frac] : result.final_metrics.pck_at)
        metrics["pck"][format_double(t)] = frac;
    metrics["inconsistency_rate"] = result.trace.inconsistency_rate;
    metrics["final_loss"] = result.steps.back().loss;
    metrics["final_err_expectation"] = result.steps.back().err_expectation;
    metrics["final_err_argmax"] = result.steps.back().err_argmax;
    metrics["wall_time_seconds"] = result.wall_time_seconds;
    std::ofstream mfile(dir + "/metrics.json");
    mfile << metrics.dump(2) << '\n';

    std::ofstream cfile(dir + "/config_echo.json");
    cfile << config_echo_json(result.config);
}

}  // namespace otmatch
