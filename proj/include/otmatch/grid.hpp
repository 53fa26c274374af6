#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace otmatch {

// Domain errors map to CLI exit code 1; usage errors to 2.
struct BalanceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EncodingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DegenerateDecodeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConventionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyLossError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
    DivergenceError(const std::string& what, int step_index)
        : std::runtime_error(what), step(step_index) {}
    int step;
};

/// Execution policy for batch-level kernels. `parallel` uses OpenMP over
/// independent joints/samples; results are reduced in index order so both
/// policies are bit-identical.
enum class Exec { serial, parallel };

/// Heatmap grid geometry. Pixel (col i, row j) has its center at
/// (i * pixel_size, j * pixel_size); the origin is the top-left pixel center.
struct GridGeometry {
    int width;
    int height;
    double pixel_size;   // g: distance between adjacent pixel centers
    double image_scale;  // r: input-image resolution / heatmap resolution

    GridGeometry(int w, int h, double g = 1.0, double r = 1.0)
        : width(w), height(h), pixel_size(g), image_scale(r) {
        if (w < 2 || h < 2)
            throw std::invalid_argument("GridGeometry: width and height must be >= 2");
        if (!(g > 0.0))
            throw std::invalid_argument("GridGeometry: pixel_size must be positive");
        if (!(r >= 1.0))
            throw std::invalid_argument("GridGeometry: image_scale must be >= 1");
    }

    int num_pixels() const { return width * height; }
    double max_x() const { return (width - 1) * pixel_size; }
    double max_y() const { return (height - 1) * pixel_size; }

    bool operator==(const GridGeometry& o) const {
        return width == o.width && height == o.height &&
               pixel_size == o.pixel_size && image_scale == o.image_scale;
    }
};

/// Sub-pixel 2D location in heatmap coordinates plus validity flag.
struct Keypoint {
    double x = 0.0;
    double y = 0.0;
    bool visible = true;
};

/// Center coordinates of pixel (col, row).
inline std::pair<double, double> pixel_center(const GridGeometry& geom, int col, int row) {
    if (col < 0 || col >= geom.width || row < 0 || row >= geom.height)
        throw std::out_of_range("pixel_center: index out of range");
    return {col * geom.pixel_size, row * geom.pixel_size};
}

/// Clamp a keypoint into the convex hull of pixel centers. Idempotent;
/// visibility is unchanged.
inline Keypoint clamp_keypoint(const Keypoint& kp, const GridGeometry& geom) {
    Keypoint out = kp;
    if (out.x < 0.0) out.x = 0.0;
    if (out.x > geom.max_x()) out.x = geom.max_x();
    if (out.y < 0.0) out.y = 0.0;
    if (out.y > geom.max_y()) out.y = geom.max_y();
    return out;
}

/// H x W grid of raw real values (may be negative). Row-major storage,
/// entry n = row * width + col.
class Heatmap {
public:
    Heatmap(GridGeometry geom, std::vector<double> values)
        : geom_(geom), values_(std::move(values)) {
        if (static_cast<int>(values_.size()) != geom_.num_pixels())
            throw std::invalid_argument("Heatmap: value count does not match geometry");
        for (double v : values_)
            if (!std::isfinite(v))
                throw std::invalid_argument("Heatmap: non-finite value");
    }

    static Heatmap zeros(const GridGeometry& geom) {
        return Heatmap(geom, std::vector<double>(geom.num_pixels(), 0.0));
    }

    const GridGeometry& geometry() const { return geom_; }
    const std::vector<double>& values() const { return values_; }
    double at(int row, int col) const { return values_[row * geom_.width + col]; }
    double& at(int row, int col) { return values_[row * geom_.width + col]; }
    int width() const { return geom_.width; }
    int height() const { return geom_.height; }

private:
    GridGeometry geom_;
    std::vector<double> values_;
};

/// K joints with their K heatmaps sharing one geometry.
struct PoseInstance {
    std::vector<Keypoint> joints;
    std::vector<Heatmap> heatmaps;

    PoseInstance(std::vector<Keypoint> j, std::vector<Heatmap> h)
        : joints(std::move(j)), heatmaps(std::move(h)) {
        if (joints.size() != heatmaps.size())
            throw std::invalid_argument("PoseInstance: joints/heatmaps length mismatch");
        if (heatmaps.empty())
            throw std::invalid_argument("PoseInstance: empty instance");
        for (const auto& h2 : heatmaps)
            if (!(h2.geometry() == heatmaps.front().geometry()))
                throw std::invalid_argument("PoseInstance: heatmaps must share one geometry");
    }

    int num_joints() const { return static_cast<int>(joints.size()); }
    const GridGeometry& geometry() const { return heatmaps.front().geometry(); }
};

/// splitmix64 step; used to derive independent per-sample/per-run streams
/// from one explicit 64-bit seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace otmatch
