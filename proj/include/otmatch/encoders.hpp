#pragma once

#include <vector>

#include "otmatch/grid.hpp"

namespace otmatch {

/// Discrete distribution over pixel centers built from a predicted heatmap
/// (relu then L1 normalization). `degenerate` marks the uniform fallback used
/// when the relu image had no mass.
struct SupplierSet {
    std::vector<double> masses;                          // length H*W, sums to 1
    std::vector<std::pair<double, double>> locations;    // row-major pixel centers
    bool degenerate = false;
};

/// Discrete distribution representing a dot annotation: four bilinear masses
/// on a 2x2 pixel block (sub-pixel variant) or one unit mass at the
/// containing pixel center (naive variant).
struct DemanderSet {
    std::vector<double> masses;
    std::vector<std::pair<double, double>> locations;
};

enum class DemanderMode { subpixel, naive };

enum class GaussianPeakConvention {
    peak_one_at_dot_pixel,  // Gaussian centered on the dot-containing pixel center
    subpixel_centered,      // Gaussian centered on the raw sub-pixel dot
};

struct GaussianSpec {
    double sigma = 2.0;  // heatmap pixels
    GaussianPeakConvention convention = GaussianPeakConvention::peak_one_at_dot_pixel;
};

/// Index of the pixel containing a coordinate: nearest center, half-ties
/// broken toward the smaller index.
int containing_index(double coord, double pixel_size, int count);

SupplierSet build_suppliers(const Heatmap& h);

DemanderSet build_demanders_subpixel(const Keypoint& kp, const GridGeometry& geom);
DemanderSet build_demanders_naive(const Keypoint& kp, const GridGeometry& geom);
DemanderSet build_demanders(const Keypoint& kp, const GridGeometry& geom, DemanderMode mode);

Heatmap build_gaussian_heatmap(const Keypoint& kp, const GridGeometry& geom,
                               const GaussianSpec& spec);
Heatmap build_dot_heatmap(const Keypoint& kp, const GridGeometry& geom);

}  // namespace otmatch
