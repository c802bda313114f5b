#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "ugp/geometry.hpp"

namespace ugp::bev {

struct Bounds {
    double x_min = 0.0, x_max = 1.0;
    double y_min = 0.0, y_max = 1.0;
};

/// Axis-aligned XY bounding box of the cloud.
Bounds cloud_bounds(const PointCloud &cloud);

struct Pixel {
    std::int64_t u = 0;
    std::int64_t v = 0;
    friend bool operator==(const Pixel &, const Pixel &) = default;
};

/// Binary occupancy raster; u indexes x (rows), v indexes y (columns).
class BevImage {
public:
    BevImage(Bounds bounds, std::size_t height, std::size_t width);

    [[nodiscard]] std::size_t height() const { return height_; }
    [[nodiscard]] std::size_t width() const { return width_; }
    [[nodiscard]] const Bounds &bounds() const { return bounds_; }
    [[nodiscard]] std::uint8_t at(std::size_t u, std::size_t v) const { return cells_[u * width_ + v]; }
    void set(std::size_t u, std::size_t v) { cells_[u * width_ + v] = 1; }
    [[nodiscard]] std::size_t occupied() const;

    /// Pixel of point p, with u = H / v = W clamped to the last row/column.
    /// Empty when p lies outside the bounds.
    [[nodiscard]] std::optional<Pixel> pixel_of(const Vec3 &p) const;

private:
    Bounds bounds_;
    std::size_t height_, width_;
    std::vector<std::uint8_t> cells_;
};

BevImage project_bev(const PointCloud &cloud, const Bounds &bounds, std::size_t height, std::size_t width);

inline constexpr int kDefaultBeta = 3;
inline constexpr std::size_t kDefaultResolution = 256;
inline constexpr std::size_t kPatchFeatureDim = 16;

/// Index of the pooled patch that contains pixel (u, v) after beta halvings.
Pixel patch_index(Pixel pixel, int beta);

/// H' x W' grid of d'-dimensional patch descriptors, row-major over patches.
struct PatchFeatureGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Eigen::MatrixXd features;  // (rows * cols) x dim

    [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
    [[nodiscard]] std::size_t flat(Pixel patch) const {
        return static_cast<std::size_t>(patch.u) * cols + static_cast<std::size_t>(patch.v);
    }
};

/// Per patch: occupancy density, row/column gradient energy, normalized
/// occupied-cell centroid offset (2), zero padding up to `dim`.
PatchFeatureGrid patch_features(const BevImage &image, int beta, std::size_t dim = kPatchFeatureDim);

/// Flat patch index per superpoint, or `sentinel` (== rows * cols) when the
/// superpoint falls outside the bounds.
struct PatchLookup {
    std::vector<std::size_t> index;
    std::size_t sentinel = 0;
};

PatchLookup superpoint_patch_lookup(const PointCloud &superpoints, const Bounds &bounds, std::size_t height,
                                    std::size_t width, int beta);

/// Binary PGM (P5), occupied pixels written as 255.
void write_pgm(const std::filesystem::path &path, const BevImage &image);

}  // namespace ugp::bev
