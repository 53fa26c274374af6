#pragma once

#include <map>
#include <vector>

#include "otmatch/grid.hpp"

namespace otmatch {

struct DecodedJoint {
    double x = 0.0;
    double y = 0.0;
    int window_col = 0;  // origin of the chosen 2x2 block (expectation decoder)
    int window_row = 0;
};

struct DecodedPose {
    std::vector<DecodedJoint> coords;                       // heatmap coordinates
    std::vector<std::pair<double, double>> image_coords;    // scaled by r
};

struct LocalizationMetrics {
    std::vector<double> per_joint_error;  // heatmap pixels; -1 for invisible GT
    double mean_error = 0.0;
    std::map<double, double> pck_at;
};

/// Expectation decoder: relu, pick the 2x2 window with the largest sum
/// (ties toward the smallest row, then column), normalize the four values to
/// 1 and return the mass-weighted mean of the four pixel centers.
DecodedJoint decode_expectation(const Heatmap& h);

/// Baseline decoder: center of the max-value pixel, row-major tie-break.
DecodedJoint decode_argmax(const Heatmap& h);

DecodedPose decode_pose(const std::vector<Heatmap>& heatmaps, bool expectation);

inline const std::vector<double>& default_pck_thresholds() {
    static const std::vector<double> t{0.1, 0.25, 0.5, 1.0};
    return t;
}

LocalizationMetrics evaluate(const DecodedPose& decoded, const std::vector<Keypoint>& gt,
                             const std::vector<double>& thresholds = default_pck_thresholds());

}  // namespace otmatch
