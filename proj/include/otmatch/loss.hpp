#pragma once

#include <variant>
#include <vector>

#include "otmatch/encoders.hpp"
#include "otmatch/grid.hpp"
#include "otmatch/transport.hpp"

namespace otmatch {

/// Per-joint losses, their sum over unmasked joints, and the gradient grid
/// with respect to each heatmap. Masked joints (invisible or degenerate)
/// carry zero gradients and are excluded from the total.
struct LossReport {
    std::vector<double> per_joint;
    double total = 0.0;
    std::vector<std::vector<double>> gradients;  // one grid per joint, row-major
    std::vector<bool> masked;
};

/// Distribution-matching loss: per joint, suppliers from the heatmap,
/// demanders from the dot annotation, L2 cost, entropic EMD via Sinkhorn.
/// Gradients flow through the unrolled scaling loop, the L1 normalization,
/// and the relu (subgradient 0 at 0).
LossReport matching_loss(const PoseInstance& instance, DemanderMode mode,
                         const SinkhornConfig& cfg, Exec exec = Exec::parallel);

enum class MseTarget { gaussian, dot };

/// Pixel-wise squared-L2 baseline against a constructed target heatmap.
LossReport mse_loss(const PoseInstance& instance, MseTarget target,
                    const GaussianSpec& spec = {}, Exec exec = Exec::parallel);

}  // namespace otmatch
