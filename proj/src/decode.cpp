#include "otmatch/decode.hpp"

#include <algorithm>
#include <cmath>

namespace otmatch {

DecodedJoint decode_expectation(const Heatmap& h) {
    const auto& geom = h.geometry();
    const int w = geom.width, hh = geom.height;

    auto relu = [&](int row, int col) { return std::max(h.at(row, col), 0.0); };

    // best 2x2 window by relu-sum; ties toward smallest row then column
    double best = -1.0;
    int br = -1, bc = -1;
    for (int row = 0; row + 1 < hh; ++row) {
        for (int col = 0; col + 1 < w; ++col) {
            double s = relu(row, col) + relu(row, col + 1) + relu(row + 1, col) +
                       relu(row + 1, col + 1);
            if (s > best) {
                best = s;
                br = row;
                bc = col;
            }
        }
    }
    if (!(best > 0.0))
        throw DegenerateDecodeError("decode_expectation: heatmap has no positive mass");

    DecodedJoint out;
    out.window_col = bc;
    out.window_row = br;
    double x = 0.0, y = 0.0;
    for (int dr = 0; dr < 2; ++dr) {
        for (int dc = 0; dc < 2; ++dc) {
            double m = relu(br + dr, bc + dc) / best;
            auto [px, py] = pixel_center(geom, bc + dc, br + dr);
            x += m * px;
            y += m * py;
        }
    }
    out.x = x;
    out.y = y;
    return out;
}

DecodedJoint decode_argmax(const Heatmap& h) {
    const auto& geom = h.geometry();
    int best = 0;
    for (int i = 1; i < geom.num_pixels(); ++i)
        if (h.values()[i] > h.values()[best]) best = i;
    DecodedJoint out;
    out.window_col = best % geom.width;
    out.window_row = best / geom.width;
    auto [px, py] = pixel_center(geom, out.window_col, out.window_row);
    out.x = px;
    out.y = py;
    return out;
}

DecodedPose decode_pose(const std::vector<Heatmap>& heatmaps, bool expectation) {
    DecodedPose pose;
    for (const auto& h : heatmaps) {
        DecodedJoint j = expectation ? decode_expectation(h) : decode_argmax(h);
        double r = h.geometry().image_scale;
        pose.coords.push_back(j);
        pose.image_coords.emplace_back(j.x * r, j.y * r);
    }
    return pose;
}

LocalizationMetrics evaluate(const DecodedPose& decoded, const std::vector<Keypoint>& gt,
                             const std::vector<double>& thresholds) {
    if (decoded.coords.size() != gt.size())
        throw std::invalid_argument("evaluate: length mismatch");
    LocalizationMetrics metrics;
    metrics.per_joint_error.assign(gt.size(), -1.0);
    double sum = 0.0;
    int visible = 0;
    for (size_t k = 0; k < gt.size(); ++k) {
        if (!gt[k].visible) continue;
        double err = std::hypot(decoded.coords[k].x - gt[k].x, decoded.coords[k].y - gt[k].y);
        metrics.per_joint_error[k] = err;
        sum += err;
        ++visible;
    }
    if (visible == 0)
        throw EmptyLossError("evaluate: no visible ground-truth joints");
    metrics.mean_error = sum / visible;
    for (double t : thresholds) {
        int ok = 0;
        for (size_t k = 0; k < gt.size(); ++k)
            if (gt[k].visible && metrics.per_joint_error[k] <= t) ++ok;
        metrics.pck_at[t] = static_cast<double>(ok) / visible;
    }
    return metrics;
}

}  // namespace otmatch
