#pragma once

#include <Eigen/Core>
#include <functional>
#include <cstdint>
#include <span>
#include <vector>

#include "ugp/bev.hpp"
#include "ugp/geometry.hpp"

namespace ugp::encoder {

inline constexpr std::size_t kDescriptorDim = 32;
inline constexpr double kDescriptorRadius = 2.4;

/// Coarse superpoints anchored on a voxelized dense cloud.
struct SuperpointSet {
    PointCloud superpoints;
    PointCloud dense;
    GroupAssignment groups;
    Eigen::MatrixXd features;  // n x d
    std::vector<std::uint8_t> ground;  // per dense point; empty when ground filtering is off

    [[nodiscard]] std::size_t size() const { return superpoints.size(); }
};

/// Optional descriptor channels written into the zero padding.
struct DescriptorChannels {
    bool multiscale = false;  // [14..27]: base channels over the half-radius neighbourhood
    bool shape_bins = false;  // 8 slots after the used block: radial quartiles, then dz bins
};

/// First slot of the shape bins.
std::size_t shape_bin_offset(const DescriptorChannels &channels);
/// Smallest descriptor width that holds the requested channels.
std::size_t min_descriptor_dim(const DescriptorChannels &channels);

struct ExtractOptions {
    double base_voxel = 0.3;
    int levels = 5;
    std::size_t group_cap = kDefaultGroupCap;
    double descriptor_radius = kDescriptorRadius;
    std::size_t descriptor_dim = kDescriptorDim;
    double ground_clearance = 0.3;  // <= 0 keeps ground points in descriptor neighbourhoods
    double ground_cell = 10.0;
    bool structure_superpoints = false;  // superpoints from non-ground dense points only
    DescriptorChannels channels;
};

/// Flags points within `clearance` of the lowest point of their
/// `cell` x `cell` column.
std::vector<std::uint8_t> ground_flags(const PointCloud &cloud, double cell, double clearance);

/// Any map from a superpoint set to an n x d feature matrix.
using PointEncoder = std::function<Eigen::MatrixXd(const SuperpointSet &)>;

/// Geometric descriptor of a neighbourhood around `center`:
///   [0..2]  covariance eigenvalues, descending, normalized to sum 1
///   [3]     log(1 + count)
///   [4..5]  mean and std of (z - center.z)
///   [6..13] azimuthal occupancy histogram (fractions) in a frame whose
///           x-axis is the dominant horizontal direction of the offsets
/// zero-padded to `dim`. Invariant to translation and to rotation about z.
Eigen::VectorXd reference_descriptor(const Vec3 &center, std::span<const Vec3> neighbors,
                                     std::size_t dim = kDescriptorDim);

/// Fractions of neighbours per radial quartile (of the farthest horizontal
/// offset), then per dz bin (< -1, [-1, 0), [0, 1), >= 1 m).
Eigen::Matrix<double, 8, 1> shape_bins(const Vec3 &center, std::span<const Vec3> neighbors);

/// reference_descriptor plus shape bins when enabled. Throws InvalidArgument
/// when dim is below min_descriptor_dim(channels).
Eigen::VectorXd extended_descriptor(const Vec3 &center, std::span<const Vec3> neighbors, std::size_t dim,
                                    const DescriptorChannels &channels);

/// extended_descriptor at every superpoint, over non-ground dense points within `radius`.
PointEncoder reference_encoder(double radius = kDescriptorRadius, std::size_t dim = kDescriptorDim,
                               const DescriptorChannels &channels = {});

/// Reference descriptor of every dense point over its dense neighbours.
Eigen::MatrixXd dense_descriptors(const PointCloud &dense, double radius, std::size_t dim = kDescriptorDim);

/// dense = voxel(cloud, base); superpoints = voxel(dense, base * 2^(levels-1));
/// groups by point_to_node_assign; features by the reference encoder.
SuperpointSet extract_superpoints(const PointCloud &cloud, const ExtractOptions &options = {});
SuperpointSet extract_superpoints(const PointCloud &cloud, const ExtractOptions &options, const PointEncoder &encoder);

/// Row-wise concatenation [features | patch feature of lookup.index[i]];
/// sentinel lookups contribute a zero patch feature.
Eigen::MatrixXd fuse(const Eigen::MatrixXd &features, const bev::PatchFeatureGrid &grid,
                     const bev::PatchLookup &lookup);

}  // namespace ugp::encoder
