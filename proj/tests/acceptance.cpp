// Acceptance gate: eight checks, one pass/fail line each, nonzero exit on
// any failure. Tolerances are pinned here, not in flags.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <vector>

#include "otmatch/analysis.hpp"
#include "otmatch/decode.hpp"
#include "otmatch/encoders.hpp"
#include "otmatch/experiments.hpp"
#include "otmatch/loss.hpp"
#include "otmatch/transport.hpp"

using namespace otmatch;

namespace {

int failures = 0;

void report(int index, const char* name, bool ok, const std::string& detail) {
    std::printf("%s  criterion %d (%s): %s\n", ok ? "PASS" : "FAIL", index, name,
                detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

double now_seconds() {
    using clock = std::chrono::steady_clock;
    static const clock::time_point start = clock::now();
    return std::chrono::duration<double>(clock::now() - start).count();
}

struct Problem {
    std::vector<double> supply, demand;
    CostMatrix cost;
};

Problem random_problem(std::mt19937_64& rng, int n, int m, double span = 8.0) {
    std::uniform_real_distribution<double> umass(0.05, 1.0);
    std::uniform_real_distribution<double> uloc(0.0, span);
    Problem p;
    p.supply.resize(n);
    p.demand.resize(m);
    std::vector<std::pair<double, double>> sl(n), dl(m);
    double ts = 0.0, td = 0.0;
    for (int i = 0; i < n; ++i) {
        p.supply[i] = umass(rng);
        ts += p.supply[i];
        sl[i] = {uloc(rng), uloc(rng)};
    }
    for (int j = 0; j < m; ++j) {
        p.demand[j] = umass(rng);
        td += p.demand[j];
        dl[j] = {uloc(rng), uloc(rng)};
    }
    for (double& v : p.supply) v /= ts;
    for (double& v : p.demand) v /= td;
    p.cost.n = n;
    p.cost.m = m;
    p.cost.entries.resize(static_cast<size_t>(n) * m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            p.cost.at(i, j) =
                std::hypot(sl[i].first - dl[j].first, sl[i].second - dl[j].second);
    return p;
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), pattern, a, b, c);
    return buf;
}

// --- 1: Sinkhorn vs exact EMD over 200 random balanced problems ------------

void criterion_sinkhorn_agreement() {
    const double t0 = now_seconds();
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<int> usize(2, 64);
    double max_gap = 0.0, max_residual = 0.0;
    for (int t = 0; t < 200; ++t) {
        Problem p = random_problem(rng, usize(rng), 4);
        double exact = emd_exact(p.supply, p.demand, p.cost).objective;

        // converged plan at lambda=100: the fixed default budget is pinned
        // only for the residual leg below
        SinkhornConfig sharp;
        sharp.lambda = 100.0;
        sharp.iterations = 50000;
        sharp.early_stop = true;
        double gap = std::abs(sinkhorn(p.supply, p.demand, p.cost, sharp).objective - exact);
        max_gap = std::max(max_gap, gap);

        SinkhornConfig defaults;  // lambda 1, 1000 iterations
        max_residual = std::max(
            max_residual, sinkhorn(p.supply, p.demand, p.cost, defaults).marginal_residual);
    }
    const double elapsed = now_seconds() - t0;
    bool ok = max_gap <= 1e-2 && max_residual <= 1e-6 && elapsed < 30.0;
    report(1, "sinkhorn vs exact EMD", ok,
           fmt("max |<C,p_reg>-EMD| = %.3g (<= 1e-2), max residual at defaults = %.3g "
               "(<= 1e-6), %.1f s (< 30 s)",
               max_gap, max_residual, elapsed));
}

// --- 2: matching-loss gradients vs central finite differences --------------

void criterion_gradients() {
    const double t0 = now_seconds();
    GridGeometry geom(8, 8);
    std::mt19937_64 rng(202);
    std::normal_distribution<double> gauss(0.3, 1.0);
    std::uniform_real_distribution<double> ux(0.0, geom.max_x());
    std::uniform_real_distribution<double> uy(0.0, geom.max_y());
    SinkhornConfig cfg;  // library defaults: lambda 1, 1000 iterations

    const double step = 1e-5;
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
        std::vector<double> values(geom.num_pixels());
        for (auto& v : values) v = gauss(rng);
        Keypoint kp{ux(rng), uy(rng), true};
        PoseInstance inst({kp}, {Heatmap(geom, values)});
        LossReport r = matching_loss(inst, DemanderMode::subpixel, cfg, Exec::serial);
        if (r.masked[0]) continue;

        double fd_scale = 0.0, err = 0.0;
        for (int i = 0; i < geom.num_pixels(); ++i) {
            std::vector<double> probe = values;
            probe[i] = values[i] + step;
            double up = matching_loss(PoseInstance({kp}, {Heatmap(geom, probe)}),
                                      DemanderMode::subpixel, cfg, Exec::serial)
                            .total;
            probe[i] = values[i] - step;
            double down = matching_loss(PoseInstance({kp}, {Heatmap(geom, probe)}),
                                        DemanderMode::subpixel, cfg, Exec::serial)
                              .total;
            double fd = (up - down) / (2.0 * step);
            fd_scale = std::max(fd_scale, std::abs(fd));
            err = std::max(err, std::abs(r.gradients[0][i] - fd));
        }
        worst = std::max(worst, err / std::max(fd_scale, 1e-12));
    }
    const double elapsed = now_seconds() - t0;
    bool ok = worst <= 1e-4 && elapsed < 120.0;
    report(2, "gradient vs finite differences", ok,
           fmt("max relative error = %.3g (<= 1e-4) over 50 instances, %.1f s (< 2 min)",
               worst, elapsed));
}

// --- 3: encode/decode round-trip, independent of image scale ---------------

void criterion_roundtrip() {
    std::mt19937_64 rng(303);
    double worst = 0.0;
    int count = 0;
    for (double r : {1.0, 2.0, 4.0, 8.0}) {
        GridGeometry geom(8, 8, 1.0, r);
        std::uniform_real_distribution<double> ux(-0.5, geom.max_x() + 0.5);
        std::uniform_real_distribution<double> uy(-0.5, geom.max_y() + 0.5);
        for (int t = 0; t < 2500; ++t, ++count) {
            Keypoint kp = clamp_keypoint({ux(rng), uy(rng), true}, geom);
            DemanderSet d = build_demanders_subpixel(kp, geom);
            Heatmap h = Heatmap::zeros(geom);
            for (size_t i = 0; i < d.masses.size(); ++i) {
                int col = static_cast<int>(std::lround(d.locations[i].first));
                int row = static_cast<int>(std::lround(d.locations[i].second));
                h.at(row, col) = d.masses[i];
            }
            DecodedJoint dec = decode_expectation(h);
            worst = std::max(worst, std::hypot(dec.x - kp.x, dec.y - kp.y));
        }
    }
    bool ok = worst <= 1e-9 && count == 10000;
    report(3, "encode/decode round-trip", ok,
           fmt("max round-trip error = %.3g (<= 1e-9) over 10000 keypoints, r in {1,2,4,8}",
               worst));
}

// --- 4: risk-decomposition identity -----------------------------------------

void criterion_decomposition() {
    const double t0 = now_seconds();
    GridGeometry geom(8, 8);
    std::mt19937_64 rng(404);
    std::uniform_real_distribution<double> u(0.0, 7.0);
    std::normal_distribution<double> gauss(0.3, 1.0);
    GaussianSpec spec;  // sigma 2, peak-one

    double worst = 0.0;
    for (int b = 0; b < 100; ++b) {
        std::vector<DecompositionSample> batch;
        for (int i = 0; i < 8; ++i) {
            Keypoint kp{u(rng), u(rng), true};
            std::vector<double> vals(geom.num_pixels());
            for (auto& v : vals) v = gauss(rng);
            batch.push_back({Heatmap(geom, vals), build_gaussian_heatmap(kp, geom, spec),
                             build_dot_heatmap(kp, geom),
                             GaussianPeakConvention::peak_one_at_dot_pixel});
        }
        worst = std::max(worst, verify_decomposition(batch).residual);
    }
    const double elapsed = now_seconds() - t0;
    bool ok = worst <= 1e-6 && elapsed < 10.0;
    report(4, "risk decomposition identity", ok,
           fmt("max residual = %.3g (<= 1e-6) over 100 batches, %.1f s (< 10 s)", worst,
               elapsed));
}

// --- 5: sub-pixel convergence of matching-loss training --------------------

void criterion_subpixel_convergence() {
    const double t0 = now_seconds();
    const int runs = 100;
    int matching_ok = 0;
    double mse_mean = 0.0;

    for (int run = 0; run < runs; ++run) {
        RunConfig cfg;
        cfg.num_samples = 1;
        cfg.num_joints = 1;
        cfg.seed = 5000 + run;
        cfg.predictor.steps = 500;
        cfg.predictor.learning_rate = 0.5;
        cfg.record_every = 250;
        // iteration and lambda budgets are not pinned by this check; 300
        // iterations keep the runtime inside the bound, and lambda 3 keeps
        // the entropic blur of the optimum below the 0.1-pixel target
        cfg.loss.sinkhorn.iterations = 300;
        cfg.loss.sinkhorn.lambda = 3.0;
        auto data = generate_dataset(cfg.num_samples, cfg.geometry, cfg.num_joints, cfg.seed);
        RunResult matching = train(data, cfg);
        if (matching.final_metrics.mean_error < 0.1) ++matching_ok;

        RunConfig mse_cfg = cfg;
        mse_cfg.loss.kind = LossKind::mse_gaussian;
        RunResult mse = train(data, mse_cfg);  // argmax is the mse primary decoder
        mse_mean += mse.final_metrics.mean_error / runs;
    }
    const double elapsed = now_seconds() - t0;
    bool ok = matching_ok >= 95 && mse_mean >= 0.2 && elapsed < 600.0;
    report(5, "sub-pixel convergence", ok,
           fmt("matching < 0.1 px on %g/100 runs (>= 95), mse_gaussian argmax mean = %.3f "
               "(>= 0.2)",
               static_cast<double>(matching_ok), mse_mean) +
               fmt(", %.0f s (< 10 min)", elapsed));
}

// --- 6: consistency ordering and the witness pair ---------------------------

void criterion_consistency_ordering() {
    RunConfig cfg;
    cfg.geometry = GridGeometry(8, 8, 1.0, 2.0);
    cfg.num_samples = 200;
    cfg.num_joints = 3;
    cfg.seed = 606;
    cfg.predictor.mode = PredictorMode::small_model;
    cfg.predictor.model_width = 24;
    cfg.predictor.learning_rate = 0.02;
    cfg.predictor.steps = 60;
    cfg.record_every = 1;
    cfg.loss.sinkhorn.iterations = 200;

    auto data = generate_dataset(cfg.num_samples, cfg.geometry, cfg.num_joints, cfg.seed);
    RunResult matching = train(data, cfg);

    RunConfig mse_cfg = cfg;
    mse_cfg.loss.kind = LossKind::mse_gaussian;
    RunResult mse = train(data, mse_cfg);

    Fig1Witness witness = fig1_witness(GridGeometry(16, 16), {7.25, 7.25, true}, {});
    bool witness_ok = witness.found && witness.mse2 < witness.mse1 && witness.err2 > witness.err1;

    bool ordered = matching.trace.inconsistency_rate < mse.trace.inconsistency_rate;
    report(6, "consistency ordering + witness", ordered && witness_ok,
           fmt("inconsistency_rate matching = %.3f < mse_gaussian = %.3f; witness ",
               matching.trace.inconsistency_rate, mse.trace.inconsistency_rate) +
               (witness_ok ? "found and verified" : "MISSING"));
}

// --- 7: ablation orderings ---------------------------------------------------

void criterion_ablations() {
    // the loss is a mean over samples, so the learning rate scales with n to
    // keep the per-sample step size fixed (direct logits are independent)
    RunConfig base;
    base.num_samples = 20;
    base.num_joints = 1;
    base.seed = 707;
    base.predictor.steps = 300;
    base.predictor.learning_rate = 10.0;
    base.record_every = 50;
    base.loss.sinkhorn.lambda = 3.0;
    base.loss.sinkhorn.iterations = 300;

    auto demander_runs = run_ablation(AblationAxis::demander_mode, base);
    double sub = demander_runs[0].final_metrics.mean_error;
    double naive = demander_runs[1].final_metrics.mean_error;

    // iteration sweep on a problem where the budget matters: larger lambda
    // slows Sinkhorn convergence, so 500/1000/1500 genuinely differ
    RunConfig iter_base = base;
    iter_base.num_samples = 10;
    iter_base.predictor.steps = 200;
    iter_base.predictor.learning_rate = 5.0;
    iter_base.loss.sinkhorn.lambda = 60.0;
    auto iter_runs = run_ablation(AblationAxis::sinkhorn_iterations, iter_base);
    double m500 = iter_runs[0].final_metrics.mean_error;
    double m1000 = iter_runs[1].final_metrics.mean_error;
    double m1500 = iter_runs[2].final_metrics.mean_error;
    double gap_hi = std::abs(m1500 - m1000);
    double gap_lo = std::abs(m1000 - m500);

    bool ok = sub < naive && gap_hi <= gap_lo;
    report(7, "ablation orderings", ok,
           fmt("subpixel %.3f < naive %.3f; ", sub, naive) +
               fmt("|m1500-m1000| = %.4g <= |m1000-m500| = %.4g", gap_hi, gap_lo));
}

// --- 8: determinism of trace.csv --------------------------------------------

void criterion_determinism() {
    RunConfig cfg;
    cfg.num_samples = 3;
    cfg.num_joints = 2;
    cfg.seed = 808;
    cfg.predictor.steps = 12;
    cfg.loss.sinkhorn.iterations = 150;
    auto data = generate_dataset(cfg.num_samples, cfg.geometry, cfg.num_joints, cfg.seed);

    auto trace_bytes = [&](Exec exec) {
        RunResult r = train(data, cfg, exec);
        std::ostringstream out;
        out << "step,loss,error\n";
        for (const auto& st : r.trace.steps) {
            char buf[80];
            std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", st.step, st.loss, st.error);
            out << buf;
        }
        return out.str();
    };
    std::string a = trace_bytes(Exec::parallel);
    std::string b = trace_bytes(Exec::parallel);
    std::string c = trace_bytes(Exec::serial);
    bool ok = a == b && a == c;
    report(8, "trace determinism", ok,
           ok ? "parallel/parallel and parallel/serial traces byte-identical"
              : "traces differ between identical runs");
}

}  // namespace

int main() {
    now_seconds();  // pin the clock origin
    criterion_sinkhorn_agreement();
    criterion_gradients();
    criterion_roundtrip();
    criterion_decomposition();
    criterion_subpixel_convergence();
    criterion_consistency_ordering();
    criterion_ablations();
    criterion_determinism();
    if (failures) {
        std::printf("%d of 8 criteria FAILED\n", failures);
        return 1;
    }
    std::printf("all 8 criteria passed\n");
    return 0;
}
