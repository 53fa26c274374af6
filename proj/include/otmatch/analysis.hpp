#pragma once

#include <optional>
#include <vector>

#include "otmatch/decode.hpp"
#include "otmatch/encoders.hpp"
#include "otmatch/grid.hpp"
#include "otmatch/loss.hpp"

namespace otmatch {

/// One sample for the risk-decomposition check: a predicted heatmap, the
/// Gaussian-smoothed target, and the dot-annotated target for the same joint.
struct DecompositionSample {
    Heatmap predicted;
    Heatmap gaussian;
    Heatmap dot;
    GaussianPeakConvention convention;
};

struct DecompositionReport {
    double lhs = 0.0;         // E ||H_pred - H_dot||^2
    double rhs = 0.0;
    double residual = 0.0;    // |lhs - rhs|
    double constant_C = 0.0;  // E ||H_Gau - H_dot||^2
    double inner_gau = 0.0;   // E <H_pred, H_Gau>
    double inner_dot = 0.0;   // E <H_pred, H_dot>
};

/// Evaluates both sides of the MSE risk decomposition as empirical means.
/// Throws ConventionError if the batch mixes Gaussian peak conventions.
DecompositionReport verify_decomposition(const std::vector<DecompositionSample>& batch);

struct TraceStep {
    int step = 0;
    double loss = 0.0;
    double error = 0.0;  // mean localization error at this step
};

struct ConsistencyTrace {
    std::vector<TraceStep> steps;
    double inconsistency_rate = 0.0;  // fraction of consecutive pairs where
                                      // loss strictly fell and error strictly rose
};

ConsistencyTrace trace_consistency(const std::vector<TraceStep>& steps);

/// A constructed pair of predicted heatmaps showing that a smaller MSE
/// against the Gaussian target can coincide with a larger localization error.
struct Fig1Witness {
    bool found = false;
    std::optional<Heatmap> correctly_located;  // #1: right place, poor shape
    std::optional<Heatmap> offset_blob;        // #2: good shape, offset >= 2 sigma
    double mse1 = 0.0;
    double mse2 = 0.0;
    double err1 = 0.0;
    double err2 = 0.0;
};

Fig1Witness fig1_witness(const GridGeometry& geom, const Keypoint& kp,
                         const GaussianSpec& spec);

}  // namespace otmatch
