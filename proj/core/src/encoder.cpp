#include "ugp/encoder.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "ugp/errors.hpp"

namespace ugp::encoder {

Eigen::VectorXd reference_descriptor(const Vec3 &center, std::span<const Vec3> neighbors, std::size_t dim) {
    if (dim < 14) throw InvalidArgument("reference_descriptor: dimension must be >= 14");
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    if (neighbors.empty()) return out;
    const double n = static_cast<double>(neighbors.size());

    Vec3 mean = Vec3::Zero();
    for (const Vec3 &p : neighbors) mean += p;
    mean /= n;
    Mat3 cov = Mat3::Zero();
    double z_sum = 0.0, z_sq = 0.0;
    Eigen::Matrix2d cov_xy = Eigen::Matrix2d::Zero();
    Eigen::Vector2d offset_sum = Eigen::Vector2d::Zero();
    for (const Vec3 &p : neighbors) {
        const Vec3 d = p - mean;
        cov.noalias() += d * d.transpose();
        const double dz = p.z() - center.z();
        z_sum += dz;
        z_sq += dz * dz;
        const Eigen::Vector2d o = (p - center).head<2>();
        cov_xy.noalias() += o * o.transpose();
        offset_sum += o;
    }
    cov /= n;
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov, Eigen::EigenvaluesOnly);
    Vec3 ev = eig.eigenvalues().cwiseMax(0.0);
    const double total = ev.sum();
    if (total > 0.0) {
        out(0) = ev(2) / total;
        out(1) = ev(1) / total;
        out(2) = ev(0) / total;
    }
    out(3) = std::log1p(n);
    const double z_mean = z_sum / n;
    out(4) = z_mean;
    out(5) = std::sqrt(std::max(0.0, z_sq / n - z_mean * z_mean));

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig_xy(cov_xy);
    Eigen::Vector2d axis = eig_xy.eigenvectors().col(1);
    if (axis.dot(offset_sum) < 0.0) axis = -axis;
    const Eigen::Vector2d side(-axis.y(), axis.x());
    constexpr int kBins = 8;
    std::array<double, kBins> hist{};
    std::size_t binned = 0;
    for (const Vec3 &p : neighbors) {
        const Eigen::Vector2d o = (p - center).head<2>();
        if (o.squaredNorm() == 0.0) continue;
        double angle = std::atan2(o.dot(side), o.dot(axis));
        if (angle < 0.0) angle += 2.0 * M_PI;
        const int bin = std::min(kBins - 1, static_cast<int>(angle / (2.0 * M_PI) * kBins));
        hist[static_cast<std::size_t>(bin)] += 1.0;
        ++binned;
    }
    if (binned > 0)
        for (int b = 0; b < kBins; ++b) out(6 + b) = hist[static_cast<std::size_t>(b)] / static_cast<double>(binned);
    return out;
}

std::size_t shape_bin_offset(const DescriptorChannels &channels) { return channels.multiscale ? 28 : 14; }

std::size_t min_descriptor_dim(const DescriptorChannels &channels) {
    return channels.shape_bins ? shape_bin_offset(channels) + 8 : channels.multiscale ? 28 : 14;
}

Eigen::Matrix<double, 8, 1> shape_bins(const Vec3 &center, std::span<const Vec3> neighbors) {
    Eigen::Matrix<double, 8, 1> out = Eigen::Matrix<double, 8, 1>::Zero();
    if (neighbors.empty()) return out;
    const double n = static_cast<double>(neighbors.size());
    double rmax = 0.0;
    for (const Vec3 &p : neighbors) rmax = std::max(rmax, (p - center).head<2>().norm());
    for (const Vec3 &p : neighbors) {
        const double r = (p - center).head<2>().norm() / (rmax + 1e-9);
        out(std::min(3, static_cast<int>(r * 4))) += 1.0 / n;
        const double dz = p.z() - center.z();
        out(4 + (dz < -1.0 ? 0 : dz < 0.0 ? 1 : dz < 1.0 ? 2 : 3)) += 1.0 / n;
    }
    return out;
}

Eigen::VectorXd extended_descriptor(const Vec3 &center, std::span<const Vec3> neighbors, std::size_t dim,
                                    const DescriptorChannels &channels) {
    if (dim < min_descriptor_dim(channels))
        throw InvalidArgument("extended_descriptor: dimension too small for the requested channels");
    Eigen::VectorXd out = reference_descriptor(center, neighbors, dim);
    if (channels.shape_bins)
        out.segment<8>(static_cast<Eigen::Index>(shape_bin_offset(channels))) = shape_bins(center, neighbors);
    return out;
}

PointEncoder reference_encoder(double radius, std::size_t dim, const DescriptorChannels &channels) {
    if (!(radius > 0.0)) throw InvalidArgument("reference_encoder: radius must be positive");
    if (dim < min_descriptor_dim(channels))
        throw InvalidArgument("reference_encoder: dimension too small for the requested channels");
    return [radius, dim, channels](const SuperpointSet &set) {
        Eigen::MatrixXd features(static_cast<Eigen::Index>(set.size()), static_cast<Eigen::Index>(dim));
        const GridIndex index(set.dense.points, radius);
        std::vector<Vec3> neighbors, inner;
        const bool filter = !set.ground.empty();
        for (std::size_t i = 0; i < set.size(); ++i) {
            const Vec3 &center = set.superpoints[i];
            neighbors.clear();
            for (const std::size_t j : index.radius_search(center, radius))
                if (!filter || !set.ground[j]) neighbors.push_back(set.dense[j]);
            auto row = features.row(static_cast<Eigen::Index>(i));
            row = extended_descriptor(center, neighbors, dim, channels).transpose();
            if (channels.multiscale) {
                inner.clear();
                for (const Vec3 &p : neighbors)
                    if ((p - center).norm() <= radius / 2) inner.push_back(p);
                row.segment(14, 14) = reference_descriptor(center, inner, dim).head(14).transpose();
            }
        }
        return features;
    };
}

Eigen::MatrixXd dense_descriptors(const PointCloud &dense, double radius, std::size_t dim) {
    if (!(radius > 0.0)) throw InvalidArgument("dense_descriptors: radius must be positive");
    Eigen::MatrixXd features(static_cast<Eigen::Index>(dense.size()), static_cast<Eigen::Index>(dim));
    const GridIndex index(dense.points, radius);
    std::vector<Vec3> neighbors;
    for (std::size_t i = 0; i < dense.size(); ++i) {
        neighbors.clear();
        for (const std::size_t j : index.radius_search(dense[i], radius)) neighbors.push_back(dense[j]);
        features.row(static_cast<Eigen::Index>(i)) = reference_descriptor(dense[i], neighbors, dim);
    }
    return features;
}

std::vector<std::uint8_t> ground_flags(const PointCloud &cloud, double cell, double clearance) {
    if (!(cell > 0.0)) throw InvalidArgument("ground_flags: cell must be positive");
    std::map<std::pair<std::int64_t, std::int64_t>, double> lowest;
    auto column = [cell](const Vec3 &p) {
        return std::pair{static_cast<std::int64_t>(std::floor(p.x() / cell)), static_cast<std::int64_t>(std::floor(p.y() / cell))};
    };
    for (const Vec3 &p : cloud.points) {
        auto [it, inserted] = lowest.try_emplace(column(p), p.z());
        if (!inserted) it->second = std::min(it->second, p.z());
    }
    std::vector<std::uint8_t> flags(cloud.size(), 0);
    for (std::size_t i = 0; i < cloud.size(); ++i)
        flags[i] = cloud[i].z() <= lowest.at(column(cloud[i])) + clearance ? 1 : 0;
    return flags;
}

SuperpointSet extract_superpoints(const PointCloud &cloud, const ExtractOptions &options) {
    return extract_superpoints(cloud, options,
                               reference_encoder(options.descriptor_radius, options.descriptor_dim, options.channels));
}

SuperpointSet extract_superpoints(const PointCloud &cloud, const ExtractOptions &options, const PointEncoder &encoder) {
    if (cloud.empty()) throw InvalidArgument("extract_superpoints: empty cloud");
    if (options.levels < 1) throw InvalidArgument("extract_superpoints: levels must be >= 1");
    if (!(options.base_voxel > 0.0)) throw InvalidArgument("extract_superpoints: base voxel must be positive");
    SuperpointSet set;
    set.dense = voxel_downsample(cloud, options.base_voxel);
    const double coarse = options.base_voxel * std::ldexp(1.0, options.levels - 1);
    if (options.ground_clearance > 0.0) set.ground = ground_flags(set.dense, options.ground_cell, options.ground_clearance);
    if (options.structure_superpoints && !set.ground.empty()) {
        PointCloud structure;
        for (std::size_t i = 0; i < set.dense.size(); ++i)
            if (!set.ground[i]) structure.points.push_back(set.dense[i]);
        set.superpoints = voxel_downsample(structure.empty() ? set.dense : structure, coarse);
    } else {
        set.superpoints = voxel_downsample(set.dense, coarse);
    }
    set.groups = point_to_node_assign(set.dense, set.superpoints, options.group_cap);
    set.features = encoder(set);
    if (set.features.rows() != static_cast<Eigen::Index>(set.size()))
        throw InvariantError("encoder returned a feature matrix with the wrong row count");
    if (!set.features.allFinite()) throw InvariantError("encoder produced non-finite features");
    return set;
}

Eigen::MatrixXd fuse(const Eigen::MatrixXd &features, const bev::PatchFeatureGrid &grid,
                     const bev::PatchLookup &lookup) {
    if (lookup.index.size() != static_cast<std::size_t>(features.rows()))
        throw InvalidArgument("fuse: lookup size does not match feature rows");
    const Eigen::Index d = features.cols();
    const auto patch_dim = static_cast<Eigen::Index>(grid.dim());
    const std::size_t patches = grid.rows * grid.cols;
    Eigen::MatrixXd fused = Eigen::MatrixXd::Zero(features.rows(), d + patch_dim);
    fused.leftCols(d) = features;
    for (std::size_t i = 0; i < lookup.index.size(); ++i) {
        const std::size_t k = lookup.index[i];
        if (k == lookup.sentinel && lookup.sentinel == patches) continue;
        if (k >= patches) throw InvalidArgument("fuse: patch index outside the feature grid");
        fused.row(static_cast<Eigen::Index>(i)).rightCols(patch_dim) = grid.features.row(static_cast<Eigen::Index>(k));
    }
    return fused;
}

}  // namespace ugp::encoder
