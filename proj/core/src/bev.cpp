#include "ugp/bev.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ugp/errors.hpp"

namespace ugp::bev {

namespace {

void check_bounds(const Bounds &b) {
    if (!(b.x_max > b.x_min) || !(b.y_max > b.y_min)) throw InvalidArgument("bev: degenerate bounds");
}

}  // namespace

Bounds cloud_bounds(const PointCloud &cloud) {
    if (cloud.empty()) throw InvalidArgument("bev: bounds of an empty cloud");
    Bounds b{cloud[0].x(), cloud[0].x(), cloud[0].y(), cloud[0].y()};
    for (const Vec3 &p : cloud.points) {
        b.x_min = std::min(b.x_min, p.x());
        b.x_max = std::max(b.x_max, p.x());
        b.y_min = std::min(b.y_min, p.y());
        b.y_max = std::max(b.y_max, p.y());
    }
    // A flat extent would make the raster degenerate; pad it.
    if (b.x_max - b.x_min < 1e-6) {
        b.x_min -= 0.5;
        b.x_max += 0.5;
    }
    if (b.y_max - b.y_min < 1e-6) {
        b.y_min -= 0.5;
        b.y_max += 0.5;
    }
    return b;
}

BevImage::BevImage(Bounds bounds, std::size_t height, std::size_t width)
    : bounds_(bounds), height_(height), width_(width), cells_(height * width, 0) {
    check_bounds(bounds);
    if (height == 0 || width == 0) throw InvalidArgument("bev: image dimensions must be >= 1");
}

std::size_t BevImage::occupied() const {
    return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

std::optional<Pixel> BevImage::pixel_of(const Vec3 &p) const {
    if (p.x() < bounds_.x_min || p.x() > bounds_.x_max || p.y() < bounds_.y_min || p.y() > bounds_.y_max)
        return std::nullopt;
    const auto h = static_cast<std::int64_t>(height_);
    const auto w = static_cast<std::int64_t>(width_);
    auto u = static_cast<std::int64_t>(
        std::floor((p.x() - bounds_.x_min) / (bounds_.x_max - bounds_.x_min) * static_cast<double>(height_)));
    auto v = static_cast<std::int64_t>(
        std::floor((p.y() - bounds_.y_min) / (bounds_.y_max - bounds_.y_min) * static_cast<double>(width_)));
    return Pixel{std::clamp<std::int64_t>(u, 0, h - 1), std::clamp<std::int64_t>(v, 0, w - 1)};
}

BevImage project_bev(const PointCloud &cloud, const Bounds &bounds, std::size_t height, std::size_t width) {
    BevImage image(bounds, height, width);
    for (const Vec3 &p : cloud.points)
        if (const auto px = image.pixel_of(p))
            image.set(static_cast<std::size_t>(px->u), static_cast<std::size_t>(px->v));
    return image;
}

Pixel patch_index(Pixel pixel, int beta) {
    if (beta < 0) throw InvalidArgument("patch_index: beta must be >= 0");
    return {pixel.u >> beta, pixel.v >> beta};
}

PatchFeatureGrid patch_features(const BevImage &image, int beta, std::size_t dim) {
    if (beta < 0) throw InvalidArgument("patch_features: beta must be >= 0");
    if (dim < 5) throw InvalidArgument("patch_features: feature dimension must be >= 5");
    const std::size_t side = std::size_t{1} << beta;
    if (image.height() % side != 0 || image.width() % side != 0)
        throw InvalidArgument("patch_features: image size not divisible by 2^beta");

    PatchFeatureGrid grid;
    grid.rows = image.height() / side;
    grid.cols = image.width() / side;
    grid.features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(grid.rows * grid.cols),
                                          static_cast<Eigen::Index>(dim));
    const double cells = static_cast<double>(side * side);
    const double pairs = static_cast<double>(side * (side - 1));
    const double half = 0.5 * static_cast<double>(side - 1);
    for (std::size_t pr = 0; pr < grid.rows; ++pr) {
        for (std::size_t pc = 0; pc < grid.cols; ++pc) {
            double occupied = 0.0, row_energy = 0.0, col_energy = 0.0, du = 0.0, dv = 0.0;
            for (std::size_t a = 0; a < side; ++a) {
                for (std::size_t b = 0; b < side; ++b) {
                    const std::size_t u = pr * side + a, v = pc * side + b;
                    const double value = image.at(u, v);
                    if (value > 0.0) {
                        occupied += 1.0;
                        du += static_cast<double>(a) - half;
                        dv += static_cast<double>(b) - half;
                    }
                    if (a + 1 < side) {
                        const double g = static_cast<double>(image.at(u + 1, v)) - value;
                        row_energy += g * g;
                    }
                    if (b + 1 < side) {
                        const double g = static_cast<double>(image.at(u, v + 1)) - value;
                        col_energy += g * g;
                    }
                }
            }
            auto row = grid.features.row(static_cast<Eigen::Index>(pr * grid.cols + pc));
            row(0) = occupied / cells;
            if (pairs > 0.0) {
                row(1) = row_energy / pairs;
                row(2) = col_energy / pairs;
            }
            if (occupied > 0.0) {
                row(3) = du / occupied / static_cast<double>(side);
                row(4) = dv / occupied / static_cast<double>(side);
            }
        }
    }
    return grid;
}

PatchLookup superpoint_patch_lookup(const PointCloud &superpoints, const Bounds &bounds, std::size_t height,
                                    std::size_t width, int beta) {
    const BevImage frame(bounds, height, width);
    const std::size_t side = std::size_t{1} << beta;
    const std::size_t cols = (width + side - 1) / side;
    const std::size_t rows = (height + side - 1) / side;
    PatchLookup lookup;
    lookup.sentinel = rows * cols;
    lookup.index.reserve(superpoints.size());
    for (const Vec3 &p : superpoints.points) {
        if (const auto px = frame.pixel_of(p)) {
            const Pixel patch = patch_index(*px, beta);
            lookup.index.push_back(static_cast<std::size_t>(patch.u) * cols + static_cast<std::size_t>(patch.v));
        } else {
            lookup.index.push_back(lookup.sentinel);
        }
    }
    return lookup;
}

void write_pgm(const std::filesystem::path &path, const BevImage &image) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write PGM: " + path.string());
    out << "P5\n" << image.width() << " " << image.height() << "\n255\n";
    for (std::size_t u = 0; u < image.height(); ++u)
        for (std::size_t v = 0; v < image.width(); ++v) out.put(static_cast<char>(image.at(u, v) ? 255 : 0));
}

}  // namespace ugp::bev
