#include "otmatch/encoders.hpp"

#include <algorithm>
#include <cmath>

namespace otmatch {

namespace {

constexpr double kMassEps = 1e-12;

Keypoint require_visible_clamped(const Keypoint& kp, const GridGeometry& geom,
                                 const char* op) {
    if (!kp.visible)
        throw EncodingError(std::string(op) + ": keypoint is not visible; mask this joint");
    return clamp_keypoint(kp, geom);
}

}  // namespace

int containing_index(double coord, double pixel_size, int count) {
    // pixel i covers [i*g - g/2, i*g + g/2); half-ties go to the smaller index
    int idx = static_cast<int>(std::ceil(coord / pixel_size - 0.5));
    return std::clamp(idx, 0, count - 1);
}

SupplierSet build_suppliers(const Heatmap& h) {
    const auto& geom = h.geometry();
    const int n = geom.num_pixels();
    SupplierSet out;
    out.masses.resize(n);
    out.locations.resize(n);

    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        double v = h.values()[i];
        out.masses[i] = v > 0.0 ? v : 0.0;
        total += out.masses[i];
    }
    if (total < kMassEps) {
        std::fill(out.masses.begin(), out.masses.end(), 1.0 / n);
        out.degenerate = true;
    } else {
        for (double& m : out.masses) m /= total;
    }
    for (int row = 0; row < geom.height; ++row)
        for (int col = 0; col < geom.width; ++col)
            out.locations[row * geom.width + col] = pixel_center(geom, col, row);
    return out;
}

DemanderSet build_demanders_subpixel(const Keypoint& raw, const GridGeometry& geom) {
    Keypoint kp = require_visible_clamped(raw, geom, "build_demanders_subpixel");
    const double g = geom.pixel_size;

    // 2x2 block whose centers bracket the dot; shifted in at the far edge
    int c0 = static_cast<int>(std::floor(kp.x / g));
    int r0 = static_cast<int>(std::floor(kp.y / g));
    c0 = std::clamp(c0, 0, geom.width - 2);
    r0 = std::clamp(r0, 0, geom.height - 2);

    DemanderSet out;
    out.masses.reserve(4);
    out.locations.reserve(4);
    for (int dr = 0; dr < 2; ++dr) {
        for (int dc = 0; dc < 2; ++dc) {
            auto [cx, cy] = pixel_center(geom, c0 + dc, r0 + dr);
            double w = (g - std::abs(kp.x - cx)) * (g - std::abs(kp.y - cy)) / (g * g);
            out.masses.push_back(w);
            out.locations.emplace_back(cx, cy);
        }
    }
    return out;
}

DemanderSet build_demanders_naive(const Keypoint& raw, const GridGeometry& geom) {
    Keypoint kp = require_visible_clamped(raw, geom, "build_demanders_naive");
    int col = containing_index(kp.x, geom.pixel_size, geom.width);
    int row = containing_index(kp.y, geom.pixel_size, geom.height);
    DemanderSet out;
    out.masses.push_back(1.0);
    out.locations.push_back(pixel_center(geom, col, row));
    return out;
}

DemanderSet build_demanders(const Keypoint& kp, const GridGeometry& geom, DemanderMode mode) {
    return mode == DemanderMode::subpixel ? build_demanders_subpixel(kp, geom)
                                          : build_demanders_naive(kp, geom);
}

Heatmap build_gaussian_heatmap(const Keypoint& raw, const GridGeometry& geom,
                               const GaussianSpec& spec) {
    if (!(spec.sigma > 0.0))
        throw std::invalid_argument("build_gaussian_heatmap: sigma must be positive");
    Keypoint kp = require_visible_clamped(raw, geom, "build_gaussian_heatmap");

    double cx = kp.x, cy = kp.y;
    if (spec.convention == GaussianPeakConvention::peak_one_at_dot_pixel) {
        int col = containing_index(kp.x, geom.pixel_size, geom.width);
        int row = containing_index(kp.y, geom.pixel_size, geom.height);
        std::tie(cx, cy) = pixel_center(geom, col, row);
    }
    const double s2 = 2.0 * spec.sigma * spec.sigma * geom.pixel_size * geom.pixel_size;

    Heatmap out = Heatmap::zeros(geom);
    for (int row = 0; row < geom.height; ++row) {
        for (int col = 0; col < geom.width; ++col) {
            auto [px, py] = pixel_center(geom, col, row);
            double d2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
            out.at(row, col) = std::exp(-d2 / s2);
        }
    }
    return out;
}

Heatmap build_dot_heatmap(const Keypoint& raw, const GridGeometry& geom) {
    Keypoint kp = require_visible_clamped(raw, geom, "build_dot_heatmap");
    int col = containing_index(kp.x, geom.pixel_size, geom.width);
    int row = containing_index(kp.y, geom.pixel_size, geom.height);
    Heatmap out = Heatmap::zeros(geom);
    out.at(row, col) = 1.0;
    return out;
}

}  // namespace otmatch
