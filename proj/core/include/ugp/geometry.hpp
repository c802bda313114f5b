#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

namespace ugp {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Points = std::vector<Vec3>;

/// Dense 3D point set in meters. `intensity` is either empty or has one
/// entry per point.
struct PointCloud {
    Points points;
    std::vector<float> intensity;

    PointCloud() = default;
    explicit PointCloud(Points pts) : points(std::move(pts)) {}

    [[nodiscard]] std::size_t size() const { return points.size(); }
    [[nodiscard]] bool empty() const { return points.empty(); }
    [[nodiscard]] bool has_intensity() const { return !intensity.empty(); }
    const Vec3 &operator[](std::size_t i) const { return points[i]; }
};

/// Rigid motion p' = R p + t.
class RigidTransform {
public:
    RigidTransform() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
    /// Throws InvalidArgument unless R is a proper rotation within 1e-9.
    RigidTransform(const Mat3 &rotation, const Vec3 &translation);

    static RigidTransform identity() { return {}; }
    /// Projects an arbitrary 3x3 matrix onto SO(3) (nearest in Frobenius norm).
    static RigidTransform orthonormalized(const Mat3 &m, const Vec3 &translation);
    static RigidTransform from_axis_angle(const Vec3 &axis, double angle_rad, const Vec3 &translation);

    [[nodiscard]] const Mat3 &rotation() const { return rotation_; }
    [[nodiscard]] const Vec3 &translation() const { return translation_; }

    [[nodiscard]] Vec3 apply(const Vec3 &p) const { return rotation_ * p + translation_; }
    [[nodiscard]] RigidTransform inverse() const;
    /// (*this) ∘ other: applies `other` first.
    [[nodiscard]] RigidTransform operator*(const RigidTransform &other) const;
    [[nodiscard]] Eigen::Matrix4d matrix() const;

    static bool is_rotation(const Mat3 &m, double tol = 1e-9);

private:
    struct Unchecked {};
    RigidTransform(const Mat3 &r, const Vec3 &t, Unchecked) : rotation_(r), translation_(t) {}

    Mat3 rotation_;
    Vec3 translation_;
};

/// Dense-point groups anchored at superpoints. `node_of[p]` is the
/// superpoint owning dense point p, or -1 if p was dropped by the cap.
struct GroupAssignment {
    std::vector<std::vector<std::size_t>> groups;
    std::vector<std::int64_t> node_of;
};

inline constexpr std::size_t kDefaultGroupCap = 64;

/// Uniform hash grid over cubic cells for radius and nearest-neighbour queries.
class GridIndex {
public:
    GridIndex(std::span<const Vec3> points, double cell_size);

    /// Indices of points with ||p - center|| <= radius, ascending.
    [[nodiscard]] std::vector<std::size_t> radius_search(const Vec3 &center, double radius) const;
    [[nodiscard]] std::size_t radius_count(const Vec3 &center, double radius) const;
    /// Nearest point; ties go to the lowest index. Requires a non-empty index.
    [[nodiscard]] std::size_t nearest(const Vec3 &query) const;

    [[nodiscard]] double cell_size() const { return cell_; }

private:
    using Key = std::array<std::int64_t, 3>;
    struct KeyHash {
        std::size_t operator()(const Key &k) const noexcept;
    };
    Key key_of(const Vec3 &p) const;
    template <typename Fn>
    void visit_shell(const Key &center, std::int64_t ring, Fn &&fn) const;

    std::span<const Vec3> points_;
    double cell_;
    std::unordered_map<Key, std::vector<std::size_t>, KeyHash> cells_;
    Key lo_{}, hi_{};
};

/// Integer voxel coordinate of p for a grid anchored at the origin.
std::array<std::int64_t, 3> voxel_key(const Vec3 &p, double voxel);

/// One centroid per occupied voxel, ordered by first occurrence in the input.
PointCloud voxel_downsample(const PointCloud &cloud, double voxel);

/// Farthest point sampling. The first point is drawn uniformly using `seed`.
/// Returns the selected input indices in selection order.
std::vector<std::size_t> farthest_point_indices(const PointCloud &cloud, std::size_t count, std::uint64_t seed);
PointCloud farthest_point_sample(const PointCloud &cloud, std::size_t count, std::uint64_t seed);

PointCloud apply_transform(const PointCloud &cloud, const RigidTransform &transform);

/// Minimizes sum_i w_i ||R src_i + t - dst_i||^2 over SE(3).
/// Throws EstimationError("rank deficient") for collinear or coincident input.
RigidTransform weighted_kabsch(std::span<const Vec3> src, std::span<const Vec3> dst, std::span<const double> weights);
RigidTransform kabsch(std::span<const Vec3> src, std::span<const Vec3> dst);

/// Nearest-superpoint assignment (ties -> lowest superpoint index). Groups
/// larger than `cap` keep their `cap` nearest members, ordered by distance.
GroupAssignment point_to_node_assign(const PointCloud &dense, const PointCloud &supers,
                                     std::size_t cap = kDefaultGroupCap);

std::size_t neighborhood_count(const PointCloud &cloud, const Vec3 &center, double radius);

}  // namespace ugp
