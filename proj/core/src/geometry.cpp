#include "ugp/geometry.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>

#include "ugp/errors.hpp"
#include "ugp/rng.hpp"

namespace ugp {

RigidTransform::RigidTransform(const Mat3 &rotation, const Vec3 &translation)
    : rotation_(rotation), translation_(translation) {
    if (!is_rotation(rotation)) throw InvalidArgument("RigidTransform: matrix is not a proper rotation");
    if (!translation.allFinite()) throw InvalidArgument("RigidTransform: non-finite translation");
}

bool RigidTransform::is_rotation(const Mat3 &m, double tol) {
    if (!m.allFinite()) return false;
    if ((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
    return std::abs(m.determinant() - 1.0) <= tol;
}

RigidTransform RigidTransform::orthonormalized(const Mat3 &m, const Vec3 &translation) {
    if (!m.allFinite() || !translation.allFinite())
        throw InvalidArgument("RigidTransform: non-finite input");
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    const Mat3 r = svd.matrixU() * d * svd.matrixV().transpose();
    return {r, translation, Unchecked{}};
}

RigidTransform RigidTransform::from_axis_angle(const Vec3 &axis, double angle_rad, const Vec3 &translation) {
    const Mat3 r = Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
    return {r, translation, Unchecked{}};
}

RigidTransform RigidTransform::inverse() const {
    const Mat3 rt = rotation_.transpose();
    return {rt, -(rt * translation_), Unchecked{}};
}

RigidTransform RigidTransform::operator*(const RigidTransform &other) const {
    return {rotation_ * other.rotation_, rotation_ * other.translation_ + translation_, Unchecked{}};
}

Eigen::Matrix4d RigidTransform::matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation_;
    m.topRightCorner<3, 1>() = translation_;
    return m;
}

std::array<std::int64_t, 3> voxel_key(const Vec3 &p, double voxel) {
    return {static_cast<std::int64_t>(std::floor(p.x() / voxel)),
            static_cast<std::int64_t>(std::floor(p.y() / voxel)),
            static_cast<std::int64_t>(std::floor(p.z() / voxel))};
}

std::size_t GridIndex::KeyHash::operator()(const Key &k) const noexcept {
    std::uint64_t h = Rng::mix(static_cast<std::uint64_t>(k[0]));
    h = Rng::mix(h ^ static_cast<std::uint64_t>(k[1]));
    h = Rng::mix(h ^ static_cast<std::uint64_t>(k[2]));
    return static_cast<std::size_t>(h);
}

GridIndex::GridIndex(std::span<const Vec3> points, double cell_size) : points_(points), cell_(cell_size) {
    if (!(cell_size > 0.0)) throw InvalidArgument("GridIndex: cell size must be positive");
    constexpr auto kMax = std::numeric_limits<std::int64_t>::max();
    constexpr auto kMin = std::numeric_limits<std::int64_t>::min();
    lo_ = {kMax, kMax, kMax};
    hi_ = {kMin, kMin, kMin};
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Key k = key_of(points[i]);
        cells_[k].push_back(i);
        for (int a = 0; a < 3; ++a) {
            lo_[a] = std::min(lo_[a], k[a]);
            hi_[a] = std::max(hi_[a], k[a]);
        }
    }
}

GridIndex::Key GridIndex::key_of(const Vec3 &p) const { return voxel_key(p, cell_); }

template <typename Fn>
void GridIndex::visit_shell(const Key &c, std::int64_t ring, Fn &&fn) const {
    for (std::int64_t dx = -ring; dx <= ring; ++dx) {
        for (std::int64_t dy = -ring; dy <= ring; ++dy) {
            const bool edge_xy = std::abs(dx) == ring || std::abs(dy) == ring;
            const std::int64_t step = edge_xy ? 1 : 2 * ring;
            for (std::int64_t dz = -ring; dz <= ring; dz += (step == 0 ? 1 : step)) {
                const auto it = cells_.find({c[0] + dx, c[1] + dy, c[2] + dz});
                if (it != cells_.end()) fn(it->second);
            }
        }
    }
}

std::vector<std::size_t> GridIndex::radius_search(const Vec3 &center, double radius) const {
    std::vector<std::size_t> out;
    if (cells_.empty()) return out;
    const double r2 = radius * radius;
    const Key lo = key_of(center - Vec3::Constant(radius));
    const Key hi = key_of(center + Vec3::Constant(radius));
    for (std::int64_t x = std::max(lo[0], lo_[0]); x <= std::min(hi[0], hi_[0]); ++x)
        for (std::int64_t y = std::max(lo[1], lo_[1]); y <= std::min(hi[1], hi_[1]); ++y)
            for (std::int64_t z = std::max(lo[2], lo_[2]); z <= std::min(hi[2], hi_[2]); ++z) {
                const auto it = cells_.find({x, y, z});
                if (it == cells_.end()) continue;
                for (const std::size_t i : it->second)
                    if ((points_[i] - center).squaredNorm() <= r2) out.push_back(i);
            }
    std::sort(out.begin(), out.end());
    return out;
}

std::size_t GridIndex::radius_count(const Vec3 &center, double radius) const {
    std::size_t count = 0;
    if (cells_.empty()) return count;
    const double r2 = radius * radius;
    const Key lo = key_of(center - Vec3::Constant(radius));
    const Key hi = key_of(center + Vec3::Constant(radius));
    for (std::int64_t x = std::max(lo[0], lo_[0]); x <= std::min(hi[0], hi_[0]); ++x)
        for (std::int64_t y = std::max(lo[1], lo_[1]); y <= std::min(hi[1], hi_[1]); ++y)
            for (std::int64_t z = std::max(lo[2], lo_[2]); z <= std::min(hi[2], hi_[2]); ++z) {
                const auto it = cells_.find({x, y, z});
                if (it == cells_.end()) continue;
                for (const std::size_t i : it->second)
                    if ((points_[i] - center).squaredNorm() <= r2) ++count;
            }
    return count;
}

std::size_t GridIndex::nearest(const Vec3 &query) const {
    if (cells_.empty()) throw InvalidArgument("GridIndex::nearest on empty index");
    const Key c = key_of(query);
    std::int64_t max_ring = 0;
    for (int a = 0; a < 3; ++a) max_ring = std::max({max_ring, std::abs(c[a] - lo_[a]), std::abs(hi_[a] - c[a])});

    std::size_t best = std::numeric_limits<std::size_t>::max();
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::int64_t ring = 0; ring <= max_ring; ++ring) {
        visit_shell(c, ring, [&](const std::vector<std::size_t> &members) {
            for (const std::size_t i : members) {
                const double d2 = (points_[i] - query).squaredNorm();
                if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
                    best_d2 = d2;
                    best = i;
                }
            }
        });
        // Anything in ring+1 or beyond is at least ring*cell away.
        const double bound = static_cast<double>(ring) * cell_;
        if (best != std::numeric_limits<std::size_t>::max() && best_d2 < bound * bound) break;
    }
    return best;
}

namespace {

struct VoxelKeyHash {
    std::size_t operator()(const std::array<std::int64_t, 3> &k) const noexcept {
        std::uint64_t h = Rng::mix(static_cast<std::uint64_t>(k[0]));
        h = Rng::mix(h ^ static_cast<std::uint64_t>(k[1]));
        return static_cast<std::size_t>(Rng::mix(h ^ static_cast<std::uint64_t>(k[2])));
    }
};

}  // namespace

PointCloud voxel_downsample(const PointCloud &cloud, double voxel) {
    if (!(voxel > 0.0)) throw InvalidArgument("voxel_downsample: voxel must be positive");
    struct Acc {
        Vec3 sum = Vec3::Zero();
        double intensity = 0.0;
        std::size_t count = 0;
    };
    std::unordered_map<std::array<std::int64_t, 3>, std::size_t, VoxelKeyHash> slot;
    std::vector<Acc> acc;
    slot.reserve(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto [it, inserted] = slot.try_emplace(voxel_key(cloud[i], voxel), acc.size());
        if (inserted) acc.emplace_back();
        Acc &a = acc[it->second];
        a.sum += cloud[i];
        if (cloud.has_intensity()) a.intensity += cloud.intensity[i];
        ++a.count;
    }
    PointCloud out;
    out.points.reserve(acc.size());
    for (const Acc &a : acc) out.points.push_back(a.sum / static_cast<double>(a.count));
    if (cloud.has_intensity()) {
        out.intensity.reserve(acc.size());
        for (const Acc &a : acc) out.intensity.push_back(static_cast<float>(a.intensity / static_cast<double>(a.count)));
    }
    return out;
}

std::vector<std::size_t> farthest_point_indices(const PointCloud &cloud, std::size_t count, std::uint64_t seed) {
    if (count > cloud.size()) throw InvalidArgument("farthest_point_sample: insufficient points");
    if (count == 0) throw InvalidArgument("farthest_point_sample: count must be >= 1");
    const std::size_t n = cloud.size();
    std::vector<std::size_t> picked;
    picked.reserve(count);
    std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
    Rng rng(seed, "fps");
    std::size_t current = static_cast<std::size_t>(rng.below(n));
    for (std::size_t k = 0; k < count; ++k) {
        picked.push_back(current);
        min_d2[current] = -1.0;
        std::size_t next = 0;
        double next_d2 = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            if (min_d2[i] < 0.0) continue;
            const double d2 = (cloud[i] - cloud[current]).squaredNorm();
            if (d2 < min_d2[i]) min_d2[i] = d2;
            if (min_d2[i] > next_d2) {
                next_d2 = min_d2[i];
                next = i;
            }
        }
        current = next;
    }
    return picked;
}

PointCloud farthest_point_sample(const PointCloud &cloud, std::size_t count, std::uint64_t seed) {
    const auto idx = farthest_point_indices(cloud, count, seed);
    PointCloud out;
    out.points.reserve(idx.size());
    for (const std::size_t i : idx) out.points.push_back(cloud[i]);
    if (cloud.has_intensity())
        for (const std::size_t i : idx) out.intensity.push_back(cloud.intensity[i]);
    return out;
}

PointCloud apply_transform(const PointCloud &cloud, const RigidTransform &transform) {
    PointCloud out;
    out.points.reserve(cloud.size());
    for (const Vec3 &p : cloud.points) out.points.push_back(transform.apply(p));
    out.intensity = cloud.intensity;
    return out;
}

RigidTransform weighted_kabsch(std::span<const Vec3> src, std::span<const Vec3> dst, std::span<const double> weights) {
    if (src.size() != dst.size() || src.size() != weights.size())
        throw InvalidArgument("weighted_kabsch: size mismatch");
    double total = 0.0;
    Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (!(weights[i] >= 0.0)) throw InvalidArgument("weighted_kabsch: negative or NaN weight");
        total += weights[i];
        cs += weights[i] * src[i];
        cd += weights[i] * dst[i];
    }
    if (!(total > 0.0)) throw EstimationError("weighted_kabsch: rank deficient (zero total weight)");
    cs /= total;
    cd /= total;

    Mat3 h = Mat3::Zero();
    double spread = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (weights[i] == 0.0) continue;
        const Vec3 a = src[i] - cs;
        const Vec3 b = dst[i] - cd;
        h.noalias() += (weights[i] / total) * a * b.transpose();
        spread += (weights[i] / total) * (a.squaredNorm() + b.squaredNorm());
    }
    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 sv = svd.singularValues();
    if (!(spread > 0.0) || !(sv(1) > 1e-9 * spread)) throw EstimationError("weighted_kabsch: rank deficient");

    const Mat3 &u = svd.matrixU();
    const Mat3 &v = svd.matrixV();
    Mat3 d = Mat3::Identity();
    if ((v * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;
    const Mat3 r = v * d * u.transpose();
    return RigidTransform::orthonormalized(r, cd - r * cs);
}

RigidTransform kabsch(std::span<const Vec3> src, std::span<const Vec3> dst) {
    const std::vector<double> w(src.size(), 1.0);
    return weighted_kabsch(src, dst, w);
}

namespace {

double suggest_cell(std::span<const Vec3> pts) {
    if (pts.empty()) return 1.0;
    Vec3 lo = pts[0], hi = pts[0];
    for (const Vec3 &p : pts) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Vec3 ext = (hi - lo).cwiseMax(1e-6);
    // Target a handful of points per occupied cell on a roughly planar layout.
    const double area = std::max({ext.x() * ext.y(), ext.y() * ext.z(), ext.x() * ext.z(), 1e-6});
    return std::max(std::sqrt(area / static_cast<double>(pts.size())) * 2.0, 1e-3);
}

}  // namespace

GroupAssignment point_to_node_assign(const PointCloud &dense, const PointCloud &supers, std::size_t cap) {
    if (supers.empty()) throw InvalidArgument("point_to_node_assign: no superpoints");
    const GridIndex index(supers.points, suggest_cell(supers.points));
    std::vector<std::vector<std::pair<double, std::size_t>>> members(supers.size());
    for (std::size_t i = 0; i < dense.size(); ++i) {
        const std::size_t node = index.nearest(dense[i]);
        members[node].emplace_back((dense[i] - supers[node]).squaredNorm(), i);
    }
    GroupAssignment out;
    out.groups.resize(supers.size());
    out.node_of.assign(dense.size(), -1);
    for (std::size_t s = 0; s < supers.size(); ++s) {
        auto &m = members[s];
        std::sort(m.begin(), m.end());
        if (m.size() > cap) m.resize(cap);
        out.groups[s].reserve(m.size());
        for (const auto &[d2, i] : m) {
            out.groups[s].push_back(i);
            out.node_of[i] = static_cast<std::int64_t>(s);
        }
    }
    return out;
}

std::size_t neighborhood_count(const PointCloud &cloud, const Vec3 &center, double radius) {
    if (!(radius > 0.0)) throw InvalidArgument("neighborhood_count: radius must be positive");
    const double r2 = radius * radius;
    return static_cast<std::size_t>(std::count_if(cloud.points.begin(), cloud.points.end(),
                                                  [&](const Vec3 &p) { return (p - center).squaredNorm() <= r2; }));
}

}  // namespace ugp
