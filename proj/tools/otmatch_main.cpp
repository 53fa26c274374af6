#include <cmath>
#include <cstdint>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "otmatch/analysis.hpp"
#include "otmatch/decode.hpp"
#include "otmatch/encoders.hpp"
#include "otmatch/experiments.hpp"
#include "otmatch/io.hpp"
#include "otmatch/loss.hpp"
#include "otmatch/transport.hpp"

namespace {

using nlohmann::json;
using namespace otmatch;

json demanders_to_json(const DemanderSet& d) {
    json j;
    j["masses"] = d.masses;
    json locs = json::array();
    for (auto [x, y] : d.locations) locs.push_back({x, y});
    j["locations"] = locs;
    return j;
}

GaussianPeakConvention parse_convention(const std::string& name) {
    if (name == "peak-one") return GaussianPeakConvention::peak_one_at_dot_pixel;
    if (name == "subpixel") return GaussianPeakConvention::subpixel_centered;
    throw CLI::ValidationError("--convention", "expected 'peak-one' or 'subpixel'");
}

// Random balanced problem on a [0, span]^2 box: uniform positive masses
// (normalized) at uniform locations.
struct RandomProblem {
    std::vector<double> supply, demand;
    CostMatrix cost;
};

RandomProblem random_problem(std::mt19937_64& rng, int n, int m, double span = 8.0) {
    std::uniform_real_distribution<double> umass(0.05, 1.0);
    std::uniform_real_distribution<double> uloc(0.0, span);
    RandomProblem p;
    SupplierSet s;
    DemanderSet d;
    double ts = 0.0, td = 0.0;
    for (int i = 0; i < n; ++i) {
        s.masses.push_back(umass(rng));
        ts += s.masses.back();
        s.locations.emplace_back(uloc(rng), uloc(rng));
    }
    for (int j = 0; j < m; ++j) {
        d.masses.push_back(umass(rng));
        td += d.masses.back();
        d.locations.emplace_back(uloc(rng), uloc(rng));
    }
    for (auto& v : s.masses) v /= ts;
    for (auto& v : d.masses) v /= td;
    p.supply = s.masses;
    p.demand = d.masses;
    p.cost = build_cost(s, d);
    return p;
}

int cmd_sinkhorn_check(int n, int m, double lambda, int iterations, int trials,
                       std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    double max_gap = 0.0, max_residual_defaults = 0.0;
    for (int t = 0; t < trials; ++t) {
        RandomProblem p = random_problem(rng, n, m);
        TransportPlan exact = emd_exact(p.supply, p.demand, p.cost);
        // gap check runs to convergence: at large lambda the fixed default
        // budget is not enough, and the bound concerns the converged plan
        SinkhornConfig cfg;
        cfg.lambda = lambda;
        cfg.iterations = std::max(iterations, 50000);
        cfg.early_stop = true;
        TransportPlan reg = sinkhorn(p.supply, p.demand, p.cost, cfg);
        max_gap = std::max(max_gap, std::abs(reg.objective - exact.objective));

        SinkhornConfig defaults;  // lambda 1, 1000 iterations
        TransportPlan at_defaults = sinkhorn(p.supply, p.demand, p.cost, defaults);
        max_residual_defaults = std::max(max_residual_defaults, at_defaults.marginal_residual);
    }
    json out;
    out["trials"] = trials;
    out["lambda"] = lambda;
    out["max_abs_gap"] = max_gap;
    out["max_marginal_residual_at_defaults"] = max_residual_defaults;
    std::cout << out.dump(2) << '\n';
    return 0;
}

int cmd_gradcheck(int h, int w, int trials, double lambda, int iterations, double fd_step,
                  std::uint64_t seed) {
    GridGeometry geom(w, h);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.3, 1.0);
    std::uniform_real_distribution<double> ux(0.0, geom.max_x());
    std::uniform_real_distribution<double> uy(0.0, geom.max_y());
    SinkhornConfig cfg;
    cfg.lambda = lambda;
    cfg.iterations = iterations;

    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        std::vector<double> values(geom.num_pixels());
        for (auto& v : values) v = gauss(rng);
        Keypoint kp{ux(rng), uy(rng), true};
        auto loss_at = [&](const std::vector<double>& vals) {
            PoseInstance inst({kp}, {Heatmap(geom, vals)});
            return matching_loss(inst, DemanderMode::subpixel, cfg, Exec::serial).total;
        };
        PoseInstance inst({kp}, {Heatmap(geom, values)});
        LossReport report = matching_loss(inst, DemanderMode::subpixel, cfg, Exec::serial);

        double max_abs = 0.0, max_fd = 0.0;
        std::vector<double> fd(geom.num_pixels());
        for (int i = 0; i < geom.num_pixels(); ++i) {
            std::vector<double> plus = values, minus = values;
            plus[i] += fd_step;
            minus[i] -= fd_step;
            fd[i] = (loss_at(plus) - loss_at(minus)) / (2.0 * fd_step);
            max_fd = std::max(max_fd, std::abs(fd[i]));
        }
        for (int i = 0; i < geom.num_pixels(); ++i)
            max_abs = std::max(max_abs, std::abs(report.gradients[0][i] - fd[i]));
        worst = std::max(worst, max_abs / std::max(max_fd, 1e-12));
    }
    json out;
    out["trials"] = trials;
    out["max_rel_err"] = worst;
    std::cout << out.dump(2) << '\n';
    return 0;
}

int cmd_theorem1(int h, int w, int trials, double sigma, GaussianPeakConvention convention,
                 std::uint64_t seed) {
    GridGeometry geom(w, h);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> ux(0.0, geom.max_x());
    std::uniform_real_distribution<double> uy(0.0, geom.max_y());
    GaussianSpec spec{sigma, convention};

    std::vector<DecompositionSample> batch;
    for (int t = 0; t < trials; ++t) {
        std::vector<double> values(geom.num_pixels());
        for (auto& v : values) v = gauss(rng);
        Keypoint kp{ux(rng), uy(rng), true};
        batch.push_back({Heatmap(geom, values), build_gaussian_heatmap(kp, geom, spec),
                         build_dot_heatmap(kp, geom), convention});
    }
    DecompositionReport rep = verify_decomposition(batch);
    json out;
    out["lhs"] = rep.lhs;
    out["rhs"] = rep.rhs;
    out["residual"] = rep.residual;
    out["constant_C"] = rep.constant_C;
    out["inner_gau"] = rep.inner_gau;
    out["inner_dot"] = rep.inner_dot;
    std::cout << out.dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Heatmap keypoint localization as optimal-transport distribution matching"};
    app.name("otmatch");
    app.require_subcommand(1);

    // shared flag storage
    double x = 0.0, y = 0.0, sigma = 2.0, lambda = 1.0, fd_step = 1e-5;
    int height = 8, width = 8, iterations = 1000, trials = 50, n = 6, m = 4;
    double pixel_size = 1.0, image_scale = 1.0;
    std::uint64_t seed = 0;
    std::string mode = "subpixel", convention = "peak-one", decoder = "expectation";
    std::string heatmap_path, keypoints_path, out_path, config_path, axis = "demander_mode";
    std::vector<std::string> heatmap_paths;
    std::string loss_kind = "matching", demanders = "subpixel";
    bool with_gradients = false, serial = false;

    auto* enc = app.add_subcommand("encode", "Build demanders or target heatmaps from a dot");
    enc->add_option("--x", x, "dot x (heatmap coordinates)")->required();
    enc->add_option("--y", y, "dot y (heatmap coordinates)")->required();
    enc->add_option("--height", height, "heatmap rows");
    enc->add_option("--width", width, "heatmap columns");
    enc->add_option("--pixel-size", pixel_size, "distance between adjacent pixel centers");
    enc->add_option("--image-scale", image_scale, "input resolution / heatmap resolution");
    enc->add_option("--mode", mode, "subpixel|naive|gaussian|dot");
    enc->add_option("--sigma", sigma, "Gaussian sigma in heatmap pixels");
    enc->add_option("--convention", convention, "peak-one|subpixel Gaussian centering");
    enc->add_option("--out", out_path, "write a heatmap file (gaussian/dot modes)");

    auto* dec = app.add_subcommand("decode", "Decode sub-pixel coordinates from a heatmap");
    dec->add_option("--heatmap", heatmap_path, "heatmap text file")->required();
    dec->add_option("--decoder", decoder, "expectation|argmax");

    auto* los = app.add_subcommand("loss", "Loss and gradients for heatmaps vs keypoints");
    los->add_option("--heatmap", heatmap_paths, "heatmap file, one per joint")->required();
    los->add_option("--keypoints", keypoints_path, "keypoint JSON file")->required();
    los->add_option("--loss", loss_kind, "matching|mse_gaussian|mse_dot");
    los->add_option("--demanders", demanders, "subpixel|naive (matching loss)");
    los->add_option("--lambda", lambda, "Sinkhorn regularization weight");
    los->add_option("--iterations", iterations, "Sinkhorn iterations");
    los->add_option("--sigma", sigma, "Gaussian sigma (mse_gaussian)");
    los->add_option("--convention", convention, "peak-one|subpixel (mse_gaussian)");
    los->add_flag("--with-gradients", with_gradients, "include gradient grids in output");
    los->add_flag("--serial", serial, "disable per-joint parallelism");

    auto* snk = app.add_subcommand("sinkhorn-check",
                                   "Compare Sinkhorn against the exact transportation simplex");
    snk->add_option("--n", n, "suppliers per problem");
    snk->add_option("--m", m, "demanders per problem");
    snk->add_option("--lambda", lambda, "regularization weight for the gap check");
    snk->add_option("--iterations", iterations, "Sinkhorn iterations");
    snk->add_option("--trials", trials, "number of random problems");
    snk->add_option("--seed", seed, "RNG seed");

    auto* thm = app.add_subcommand("theorem1", "Numerical check of the MSE risk decomposition");
    thm->add_option("--trials", trials, "batch size");
    thm->add_option("--sigma", sigma, "Gaussian sigma");
    thm->add_option("--convention", convention, "peak-one|subpixel");
    thm->add_option("--height", height, "heatmap rows");
    thm->add_option("--width", width, "heatmap columns");
    thm->add_option("--seed", seed, "RNG seed");

    auto* fig = app.add_subcommand("fig1", "Search for a loss/error inconsistency witness pair");
    fig->add_option("--sigma", sigma, "Gaussian sigma");
    fig->add_option("--height", height, "heatmap rows");
    fig->add_option("--width", width, "heatmap columns");
    fig->add_option("--x", x, "dot x");
    fig->add_option("--y", y, "dot y");

    auto* trn = app.add_subcommand("train", "Run a training experiment from a config file");
    trn->add_option("--config", config_path, "key = value run configuration")->required();
    trn->add_option("--out", out_path, "output directory for trace.csv/metrics.json")
        ->required();
    trn->add_option("--seed", seed, "override the config seed");
    trn->add_flag("--serial", serial, "disable per-sample parallelism");

    auto* abl = app.add_subcommand("ablate", "Run an ablation axis from a base config");
    abl->add_option("--config", config_path, "base run configuration")->required();
    abl->add_option("--axis", axis, "demander_mode|sinkhorn_iterations");
    abl->add_option("--out", out_path, "output directory (one subdirectory per run)")
        ->required();
    abl->add_flag("--serial", serial, "disable per-sample parallelism");

    auto* grd = app.add_subcommand("gradcheck",
                                   "Finite-difference check of the matching-loss gradient");
    grd->add_option("--trials", trials, "random instances");
    grd->add_option("--height", height, "heatmap rows");
    grd->add_option("--width", width, "heatmap columns");
    grd->add_option("--lambda", lambda, "Sinkhorn regularization weight");
    grd->add_option("--iterations", iterations, "Sinkhorn iterations");
    grd->add_option("--step", fd_step, "finite-difference step");
    grd->add_option("--seed", seed, "RNG seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    Exec exec = serial ? Exec::serial : Exec::parallel;
    try {
        if (enc->parsed()) {
            GridGeometry geom(width, height, pixel_size, image_scale);
            Keypoint kp{x, y, true};
            if (mode == "subpixel" || mode == "naive") {
                DemanderSet d = build_demanders(
                    clamp_keypoint(kp, geom), geom,
                    mode == "subpixel" ? DemanderMode::subpixel : DemanderMode::naive);
                std::cout << demanders_to_json(d).dump(2) << '\n';
            } else if (mode == "gaussian" || mode == "dot") {
                Heatmap h = mode == "gaussian"
                                ? build_gaussian_heatmap(
                                      kp, geom, {sigma, parse_convention(convention)})
                                : build_dot_heatmap(kp, geom);
                if (!out_path.empty()) {
                    write_heatmap(h, out_path);
                    std::cout << json{{"written", out_path}}.dump(2) << '\n';
                } else {
                    std::cout << json{{"values", h.values()}}.dump(2) << '\n';
                }
            } else {
                std::cerr << "encode: unknown --mode '" << mode << "'\n";
                return 2;
            }
        } else if (dec->parsed()) {
            Heatmap h = read_heatmap(heatmap_path);
            json out;
            if (decoder == "expectation") {
                DecodedJoint d = decode_expectation(h);
                out = {{"x", d.x}, {"y", d.y}, {"window", {d.window_col, d.window_row}}};
            } else if (decoder == "argmax") {
                DecodedJoint d = decode_argmax(h);
                out = {{"x", d.x}, {"y", d.y}};
            } else {
                std::cerr << "decode: unknown --decoder '" << decoder << "'\n";
                return 2;
            }
            std::cout << out.dump(2) << '\n';
        } else if (los->parsed()) {
            std::vector<Heatmap> heatmaps;
            for (const auto& p : heatmap_paths) heatmaps.push_back(read_heatmap(p));
            std::vector<Keypoint> joints = read_keypoints(keypoints_path);
            PoseInstance inst(joints, heatmaps);
            LossReport report;
            if (loss_kind == "matching") {
                SinkhornConfig cfg;
                cfg.lambda = lambda;
                cfg.iterations = iterations;
                report = matching_loss(inst,
                                       demanders == "naive" ? DemanderMode::naive
                                                            : DemanderMode::subpixel,
                                       cfg, exec);
            } else if (loss_kind == "mse_gaussian") {
                report = mse_loss(inst, MseTarget::gaussian,
                                  {sigma, parse_convention(convention)}, exec);
            } else if (loss_kind == "mse_dot") {
                report = mse_loss(inst, MseTarget::dot, {}, exec);
            } else {
                std::cerr << "loss: unknown --loss '" << loss_kind << "'\n";
                return 2;
            }
            json out;
            out["per_joint"] = report.per_joint;
            out["total"] = report.total;
            out["masked"] = report.masked;
            if (with_gradients) out["gradients"] = report.gradients;
            std::cout << out.dump(2) << '\n';
        } else if (snk->parsed()) {
            return cmd_sinkhorn_check(n, m, lambda, iterations, trials, seed);
        } else if (thm->parsed()) {
            return cmd_theorem1(height, width, trials, sigma, parse_convention(convention),
                                seed);
        } else if (fig->parsed()) {
            GridGeometry geom(width, height);
            Keypoint kp{x, y, true};
            if (!fig->count("--x")) kp.x = geom.max_x() / 2.0 + 0.25;
            if (!fig->count("--y")) kp.y = geom.max_y() / 2.0 + 0.25;
            Fig1Witness wtn = fig1_witness(geom, kp, {sigma});
            json out;
            out["found"] = wtn.found;
            if (wtn.found) {
                out["mse_correctly_located"] = wtn.mse1;
                out["mse_offset_blob"] = wtn.mse2;
                out["err_correctly_located"] = wtn.err1;
                out["err_offset_blob"] = wtn.err2;
            }
            std::cout << out.dump(2) << '\n';
        } else if (trn->parsed()) {
            RunConfig cfg = read_run_config(config_path);
            if (trn->count("--seed")) cfg.seed = seed;
            auto dataset =
                generate_dataset(cfg.num_samples, cfg.geometry, cfg.num_joints, cfg.seed);
            RunResult result = train(dataset, cfg, exec);
            write_run_outputs(result, out_path);
            json out;
            out["mean_error"] = result.final_metrics.mean_error;
            out["inconsistency_rate"] = result.trace.inconsistency_rate;
            out["final_loss"] = result.steps.back().loss;
            out["out_dir"] = out_path;
            std::cout << out.dump(2) << '\n';
        } else if (abl->parsed()) {
            RunConfig cfg = read_run_config(config_path);
            AblationAxis ax;
            if (axis == "demander_mode")
                ax = AblationAxis::demander_mode;
            else if (axis == "sinkhorn_iterations")
                ax = AblationAxis::sinkhorn_iterations;
            else {
                std::cerr << "ablate: unknown --axis '" << axis << "'\n";
                return 2;
            }
            std::vector<RunResult> results = run_ablation(ax, cfg, exec);
            json table = json::array();
            for (size_t i = 0; i < results.size(); ++i) {
                std::string name =
                    ax == AblationAxis::demander_mode
                        ? (i == 0 ? "subpixel" : "naive")
                        : "iters_" + std::to_string(
                                         results[i].config.loss.sinkhorn.iterations);
                write_run_outputs(results[i], out_path + "/" + name);
                table.push_back({{"run", name},
                                 {"mean_error", results[i].final_metrics.mean_error},
                                 {"final_loss", results[i].steps.back().loss}});
            }
            std::cout << table.dump(2) << '\n';
        } else if (grd->parsed()) {
            return cmd_gradcheck(height, width, trials, lambda, iterations, fd_step, seed);
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
