#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ugp/geometry.hpp"

namespace ugp::ingest {

// ---------------------------------------------------------------------------
// KITTI-format files
// ---------------------------------------------------------------------------

/// Reads a velodyne .bin scan: little-endian float32 (x, y, z, reflectance).
PointCloud load_scan(const std::filesystem::path &path);
void save_scan(const std::filesystem::path &path, const PointCloud &cloud);

/// Parses one KITTI pose line (12 reals, row-major 3x4) and orthonormalizes it.
RigidTransform parse_pose_line(const std::string &line, std::size_t line_number);

/// Per-scan LiDAR world poses: camera pose composed with the velodyne-to-camera
/// calibration (`Tr:` line of calib.txt).
std::vector<RigidTransform> load_poses(const std::filesystem::path &pose_path,
                                       const std::filesystem::path &calib_path);

/// Maps points of scan j into the frame of scan i: pose_i^-1 * pose_j.
RigidTransform relative_transform(const std::vector<RigidTransform> &poses, std::size_t i, std::size_t j);

// ---------------------------------------------------------------------------
// Pair manifests
// ---------------------------------------------------------------------------

/// One registration pair. `gt` maps points of scan `b` into the frame of
/// scan `a`, so `b` is the source cloud and `a` the target.
struct PairEntry {
    std::size_t a = 0;
    std::size_t b = 0;
    RigidTransform gt;
    int distance_class = 10;
    std::string path_a;
    std::string path_b;
    // Free-form provenance (perturbation kind, seed, ...) carried verbatim.
    std::string note;
};

using PairManifest = std::vector<PairEntry>;

/// Greedy sequential pairing: from anchor i, pick the first later scan whose
/// distance from i is >= min_distance. If that distance also stays within
/// min_distance + tolerance_band the pair is emitted and the next anchor is
/// that scan; otherwise the anchor advances by one.
PairManifest generate_pairs(const std::vector<RigidTransform> &poses, double min_distance, double tolerance_band);

std::string manifest_to_json(const PairManifest &manifest);
PairManifest manifest_from_json(const std::string &text);
void write_manifest(const std::filesystem::path &path, const PairManifest &manifest);
PairManifest read_manifest(const std::filesystem::path &path);

// ---------------------------------------------------------------------------
// Synthetic LiDAR scenes
// ---------------------------------------------------------------------------

/// Oriented box resting on the ground (walls are thin boxes).
struct Box {
    Vec3 center;
    Vec3 half_extent;
    double yaw = 0.0;
};

/// Vertical cylinder from z = 0 to `height`.
struct Pole {
    Eigen::Vector2d base;
    double radius = 0.2;
    double height = 5.0;
};

struct SyntheticWorld {
    double extent = 80.0;  // ground plane covers [-extent, extent]^2 at z = 0
    bool ground = true;
    std::vector<Box> boxes;
    std::vector<Pole> poles;
};

struct SyntheticSceneSpec {
    std::uint64_t seed = 0;
    double extent = 80.0;
    bool ground = true;
    std::size_t box_count = 60;
    std::size_t pole_count = 80;
    std::size_t wall_count = 20;
    RigidTransform sensor_a = RigidTransform::from_axis_angle(Vec3::UnitZ(), 0.0, Vec3(0, 0, 1.73));
    RigidTransform sensor_b = RigidTransform::from_axis_angle(Vec3::UnitZ(), 0.0, Vec3(0, 0, 1.73));
    double density_decay = 2.0;
    std::size_t beam_lines = 32;
    std::size_t azimuth_steps = 1024;
    double elevation_min_deg = -24.0;
    double elevation_max_deg = 2.0;
    double min_range = 2.0;
    double max_range = 70.0;
    bool occlusion = true;
};

struct SyntheticPair {
    PointCloud a;
    PointCloud b;
    RigidTransform gt;  // maps cloud a into cloud b's frame
    SyntheticWorld world;
};

/// Rejects specs with no geometry or non-physical parameters.
void validate(const SyntheticSceneSpec &spec);
SyntheticWorld build_world(const SyntheticSceneSpec &spec);
/// Ray-casts one scan from `sensor` (sensor-to-world pose); points are returned
/// in the sensor frame. `stream` selects the azimuth-jitter/thinning substream.
PointCloud cast_scan(const SyntheticWorld &world, const SyntheticSceneSpec &spec, const RigidTransform &sensor,
                     std::uint64_t stream);
SyntheticPair synth_scene(const SyntheticSceneSpec &spec);

/// Randomized registration scenario built on synth_scene.
struct SynthScenario {
    double baseline_min = 0.0;  // horizontal sensor displacement range, meters
    double baseline_max = 0.0;
    double sensor_yaw_deg = 0.0;  // max |yaw| difference between sensors
    double frame_rotation_deg = 0.0;  // extra random yaw applied to cloud b's frame
    double frame_translation = 0.0;   // max horizontal offset of cloud b's frame, meters
    double density_decay = 2.0;
    bool occlusion = true;
    std::size_t beam_lines = 32;
    std::size_t azimuth_steps = 1024;
};

SyntheticSceneSpec scenario_spec(std::uint64_t seed, const SynthScenario &scenario);
/// Returns (source, target, gt) with gt mapping source into target's frame.
SyntheticPair synth_pair(std::uint64_t seed, const SynthScenario &scenario);

// ---------------------------------------------------------------------------
// Perturbations
// ---------------------------------------------------------------------------

/// Adds per-coordinate N(0, sigma^2) noise clamped to [-3 sigma, 3 sigma].
PointCloud inject_noise(const PointCloud &cloud, double sigma, std::uint64_t seed);
/// Farthest point sampling down to exactly n points.
PointCloud sparsify(const PointCloud &cloud, std::size_t n, std::uint64_t seed);

}  // namespace ugp::ingest
