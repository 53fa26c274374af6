#pragma once

#include <string>
#include <vector>

#include "otmatch/grid.hpp"

namespace otmatch {

// Heatmap text format: first line "H W g", then H lines of W space-separated
// decimal reals, row 0 first.
Heatmap read_heatmap(const std::string& path);
void write_heatmap(const Heatmap& h, const std::string& path);
std::string heatmap_to_string(const Heatmap& h);
Heatmap heatmap_from_string(const std::string& text);

// Keypoint file: JSON array of objects {x, y, visible}.
std::vector<Keypoint> read_keypoints(const std::string& path);
void write_keypoints(const std::vector<Keypoint>& kps, const std::string& path);
std::string keypoints_to_json(const std::vector<Keypoint>& kps);
std::vector<Keypoint> keypoints_from_json(const std::string& text);

}  // namespace otmatch
