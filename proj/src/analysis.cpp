#include "otmatch/analysis.hpp"

#include <cmath>

namespace otmatch {

namespace {

double inner(const Heatmap& a, const Heatmap& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.values().size(); ++i) s += a.values()[i] * b.values()[i];
    return s;
}

double sq_dist(const Heatmap& a, const Heatmap& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.values().size(); ++i) {
        double d = a.values()[i] - b.values()[i];
        s += d * d;
    }
    return s;
}

}  // namespace

DecompositionReport verify_decomposition(const std::vector<DecompositionSample>& batch) {
    if (batch.empty())
        throw std::invalid_argument("verify_decomposition: empty batch");
    const auto convention = batch.front().convention;
    for (const auto& s : batch) {
        if (s.convention != convention)
            throw ConventionError("verify_decomposition: mixed Gaussian peak conventions");
        if (!(s.predicted.geometry() == batch.front().predicted.geometry()))
            throw std::invalid_argument("verify_decomposition: mixed geometries");
    }

    DecompositionReport rep;
    double risk_gau = 0.0;
    const double inv = 1.0 / batch.size();
    for (const auto& s : batch) {
        rep.lhs += sq_dist(s.predicted, s.dot) * inv;
        risk_gau += sq_dist(s.predicted, s.gaussian) * inv;
        rep.inner_gau += inner(s.predicted, s.gaussian) * inv;
        rep.inner_dot += inner(s.predicted, s.dot) * inv;
        rep.constant_C += sq_dist(s.gaussian, s.dot) * inv;
    }
    rep.rhs = risk_gau + 2.0 * rep.inner_gau - 2.0 * rep.inner_dot - rep.constant_C;
    rep.residual = std::abs(rep.lhs - rep.rhs);
    return rep;
}

ConsistencyTrace trace_consistency(const std::vector<TraceStep>& steps) {
    if (steps.size() < 2)
        throw std::invalid_argument("trace_consistency: need at least 2 recorded steps");
    ConsistencyTrace trace;
    trace.steps = steps;
    int inconsistent = 0;
    const int pairs = static_cast<int>(steps.size()) - 1;
    for (int i = 0; i < pairs; ++i) {
        bool loss_down = steps[i + 1].loss < steps[i].loss;
        bool error_up = steps[i + 1].error > steps[i].error;
        if (loss_down && error_up) ++inconsistent;
    }
    trace.inconsistency_rate = static_cast<double>(inconsistent) / pairs;
    return trace;
}

Fig1Witness fig1_witness(const GridGeometry& geom, const Keypoint& raw,
                         const GaussianSpec& spec) {
    Keypoint kp = clamp_keypoint(raw, geom);
    if (!kp.visible)
        throw EncodingError("fig1_witness: keypoint is not visible");

    std::vector<Keypoint> joints{kp};
    const double g = geom.pixel_size;

    auto mse_vs_gaussian = [&](const Heatmap& pred) {
        PoseInstance inst(joints, {pred});
        return mse_loss(inst, MseTarget::gaussian, spec, Exec::serial).total;
    };
    auto argmax_error = [&](const Heatmap& pred) {
        DecodedJoint d = decode_argmax(pred);
        return std::hypot(d.x - kp.x, d.y - kp.y);
    };

    Fig1Witness witness;
    // #1: a spike at the dot pixel, too tall to match the Gaussian's shape but
    // located correctly. #2: an exact-shape Gaussian blob displaced >= 2 sigma.
    for (double amplitude : {2.0, 3.0, 4.0, 5.0, 6.0, 8.0}) {
        Heatmap h1 = build_dot_heatmap(kp, geom);
        for (int row = 0; row < geom.height; ++row)
            for (int col = 0; col < geom.width; ++col)
                h1.at(row, col) *= amplitude;

        for (double offset_mult : {2.0, 2.5, 3.0}) {
            double delta = offset_mult * spec.sigma * g;
            // try the four axis directions that keep the shifted blob in-grid
            const std::pair<double, double> dirs[4] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
            for (auto [dx, dy] : dirs) {
                Keypoint shifted{kp.x + dx * delta, kp.y + dy * delta, true};
                if (shifted.x < 0 || shifted.x > geom.max_x() || shifted.y < 0 ||
                    shifted.y > geom.max_y())
                    continue;
                Heatmap h2 = build_gaussian_heatmap(shifted, geom, spec);
                double mse1 = mse_vs_gaussian(h1);
                double mse2 = mse_vs_gaussian(h2);
                double err1 = argmax_error(h1);
                double err2 = argmax_error(h2);
                if (mse2 < mse1 && err2 > err1) {
                    witness.found = true;
                    witness.correctly_located = h1;
                    witness.offset_blob = h2;
                    witness.mse1 = mse1;
                    witness.mse2 = mse2;
                    witness.err1 = err1;
                    witness.err2 = err2;
                    return witness;
                }
            }
        }
    }
    return witness;  // found = false: search failed within bounds
}

}  // namespace otmatch
