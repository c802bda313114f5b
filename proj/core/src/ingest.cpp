#include "ugp/ingest.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>

#include "ugp/errors.hpp"
#include "ugp/rng.hpp"

namespace ugp::ingest {

namespace {

float read_le_float(const unsigned char *bytes) {
    std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
                         (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
    return std::bit_cast<float>(bits);
}

void write_le_float(float value, unsigned char *bytes) {
    const auto bits = std::bit_cast<std::uint32_t>(value);
    bytes[0] = static_cast<unsigned char>(bits & 0xffu);
    bytes[1] = static_cast<unsigned char>((bits >> 8) & 0xffu);
    bytes[2] = static_cast<unsigned char>((bits >> 16) & 0xffu);
    bytes[3] = static_cast<unsigned char>((bits >> 24) & 0xffu);
}

std::vector<double> parse_reals(const std::string &text) {
    std::istringstream in(text);
    std::vector<double> values;
    std::string token;
    while (in >> token) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(token, &used);
        } catch (const std::exception &) {
            used = 0;
        }
        if (used != token.size()) throw DataError("not a number: '" + token + "'");
        values.push_back(v);
    }
    return values;
}

RigidTransform from_3x4(const std::vector<double> &v) {
    Mat3 r;
    r << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
    return RigidTransform::orthonormalized(r, Vec3(v[3], v[7], v[11]));
}

}  // namespace

PointCloud load_scan(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open scan: " + path.string());
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % 16 != 0)
        throw DataError("truncated scan: " + path.string() + " has " + std::to_string(bytes.size()) +
                        " bytes, not a multiple of 16");
    PointCloud cloud;
    const std::size_t n = bytes.size() / 16;
    cloud.points.reserve(n);
    cloud.intensity.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char *rec = bytes.data() + 16 * i;
        const float x = read_le_float(rec), y = read_le_float(rec + 4), z = read_le_float(rec + 8);
        const float w = read_le_float(rec + 12);
        if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
            throw DataError("invalid coordinate: " + path.string() + " point " + std::to_string(i));
        cloud.points.emplace_back(x, y, z);
        cloud.intensity.push_back(w);
    }
    return cloud;
}

void save_scan(const std::filesystem::path &path, const PointCloud &cloud) {
    std::vector<unsigned char> bytes(cloud.size() * 16);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        unsigned char *rec = bytes.data() + 16 * i;
        write_le_float(static_cast<float>(cloud[i].x()), rec);
        write_le_float(static_cast<float>(cloud[i].y()), rec + 4);
        write_le_float(static_cast<float>(cloud[i].z()), rec + 8);
        write_le_float(cloud.has_intensity() ? cloud.intensity[i] : 0.0f, rec + 12);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write scan: " + path.string());
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

RigidTransform parse_pose_line(const std::string &line, std::size_t line_number) {
    std::vector<double> v;
    try {
        v = parse_reals(line);
    } catch (const DataError &e) {
        throw DataError("pose line " + std::to_string(line_number) + ": " + e.what());
    }
    if (v.size() != 12)
        throw DataError("pose line " + std::to_string(line_number) + ": expected 12 values, got " +
                        std::to_string(v.size()));
    return from_3x4(v);
}

std::vector<RigidTransform> load_poses(const std::filesystem::path &pose_path,
                                       const std::filesystem::path &calib_path) {
    std::ifstream calib(calib_path);
    if (!calib) throw DataError("cannot open calibration: " + calib_path.string());
    std::optional<RigidTransform> velo_to_cam;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(calib, line)) {
        ++line_number;
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        const std::string key = line.substr(0, colon);
        if (key != "Tr" && key != "Tr_velo_to_cam") continue;
        const auto values = parse_reals(line.substr(colon + 1));
        if (values.size() != 12)
            throw DataError(calib_path.string() + ":" + std::to_string(line_number) + ": expected 12 values, got " +
                            std::to_string(values.size()));
        velo_to_cam = from_3x4(values);
    }
    if (!velo_to_cam) throw DataError(calib_path.string() + ": no 'Tr:' calibration line");

    std::ifstream poses_in(pose_path);
    if (!poses_in) throw DataError("cannot open poses: " + pose_path.string());
    std::vector<RigidTransform> poses;
    line_number = 0;
    while (std::getline(poses_in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            poses.push_back(parse_pose_line(line, line_number) * *velo_to_cam);
        } catch (const DataError &e) {
            throw DataError(pose_path.string() + ": " + e.what());
        }
    }
    return poses;
}

RigidTransform relative_transform(const std::vector<RigidTransform> &poses, std::size_t i, std::size_t j) {
    if (i >= poses.size() || j >= poses.size()) throw InvalidArgument("relative_transform: index out of range");
    return poses[i].inverse() * poses[j];
}

PairManifest generate_pairs(const std::vector<RigidTransform> &poses, double min_distance, double tolerance_band) {
    if (!(min_distance > 0.0)) throw InvalidArgument("generate_pairs: min_distance must be positive");
    if (!(tolerance_band >= 0.0)) throw InvalidArgument("generate_pairs: tolerance_band must be non-negative");
    PairManifest manifest;
    std::size_t anchor = 0;
    while (anchor + 1 < poses.size()) {
        std::optional<std::size_t> partner;
        double distance = 0.0;
        for (std::size_t j = anchor + 1; j < poses.size(); ++j) {
            distance = (poses[j].translation() - poses[anchor].translation()).norm();
            if (distance >= min_distance) {
                partner = j;
                break;
            }
        }
        if (!partner) break;
        if (distance <= min_distance + tolerance_band) {
            PairEntry e;
            e.a = anchor;
            e.b = *partner;
            e.gt = relative_transform(poses, anchor, *partner);
            e.distance_class = static_cast<int>(std::lround(min_distance));
            manifest.push_back(std::move(e));
            anchor = *partner;
        } else {
            ++anchor;
        }
    }
    return manifest;
}

std::string manifest_to_json(const PairManifest &manifest) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const PairEntry &e : manifest) {
        nlohmann::ordered_json j;
        j["a"] = e.a;
        j["b"] = e.b;
        j["distance_class"] = e.distance_class;
        const Mat3 &r = e.gt.rotation();
        j["R"] = {r(0, 0), r(0, 1), r(0, 2), r(1, 0), r(1, 1), r(1, 2), r(2, 0), r(2, 1), r(2, 2)};
        j["t"] = {e.gt.translation().x(), e.gt.translation().y(), e.gt.translation().z()};
        if (!e.path_a.empty()) j["path_a"] = e.path_a;
        if (!e.path_b.empty()) j["path_b"] = e.path_b;
        if (!e.note.empty()) j["note"] = e.note;
        arr.push_back(std::move(j));
    }
    return arr.dump(1) + "\n";
}

PairManifest manifest_from_json(const std::string &text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error &e) {
        throw DataError(std::string("manifest: ") + e.what());
    }
    if (!doc.is_array()) throw DataError("manifest: top-level value must be an array");
    PairManifest manifest;
    for (std::size_t k = 0; k < doc.size(); ++k) {
        const auto &j = doc[k];
        const std::string where = "manifest entry " + std::to_string(k);
        try {
            PairEntry e;
            e.a = j.at("a").get<std::size_t>();
            e.b = j.at("b").get<std::size_t>();
            e.distance_class = j.at("distance_class").get<int>();
            const auto r = j.at("R").get<std::vector<double>>();
            const auto t = j.at("t").get<std::vector<double>>();
            if (r.size() != 9 || t.size() != 3) throw DataError(where + ": R needs 9 values and t needs 3");
            Mat3 rot;
            rot << r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8];
            e.gt = RigidTransform(rot, Vec3(t[0], t[1], t[2]));
            e.path_a = j.value("path_a", "");
            e.path_b = j.value("path_b", "");
            e.note = j.value("note", "");
            manifest.push_back(std::move(e));
        } catch (const nlohmann::json::exception &ex) {
            throw DataError(where + ": " + ex.what());
        } catch (const InvalidArgument &ex) {
            throw DataError(where + ": " + ex.what());
        }
    }
    return manifest;
}

void write_manifest(const std::filesystem::path &path, const PairManifest &manifest) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write manifest: " + path.string());
    out << manifest_to_json(manifest);
}

PairManifest read_manifest(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return manifest_from_json(buf.str());
}

// ---------------------------------------------------------------------------
// Synthetic scenes

void validate(const SyntheticSceneSpec &spec) {
    if (!(spec.extent > 0.0)) throw InvalidArgument("synthetic scene: extent must be positive");
    if (!spec.ground && spec.box_count + spec.pole_count + spec.wall_count == 0)
        throw InvalidArgument("synthetic scene: empty geometry");
    if (!(spec.density_decay >= 0.0)) throw InvalidArgument("synthetic scene: density decay must be >= 0");
    if (spec.beam_lines == 0 || spec.azimuth_steps == 0) throw InvalidArgument("synthetic scene: no rays");
    if (!(spec.min_range > 0.0) || !(spec.max_range > spec.min_range))
        throw InvalidArgument("synthetic scene: invalid range limits");
    if (!(spec.elevation_max_deg >= spec.elevation_min_deg))
        throw InvalidArgument("synthetic scene: invalid elevation limits");
}

SyntheticWorld build_world(const SyntheticSceneSpec &spec) {
    validate(spec);
    SyntheticWorld world;
    world.extent = spec.extent;
    world.ground = spec.ground;
    Rng rng(spec.seed, "world");
    const Eigen::Vector2d sensors[2] = {spec.sensor_a.translation().head<2>(), spec.sensor_b.translation().head<2>()};
    constexpr double kClearance = 4.0;
    const double margin = std::min(5.0, spec.extent * 0.1);
    auto sample_xy = [&](double reach) {
        Eigen::Vector2d xy;
        for (int attempt = 0; attempt < 64; ++attempt) {
            xy = {rng.uniform(-spec.extent + margin, spec.extent - margin),
                  rng.uniform(-spec.extent + margin, spec.extent - margin)};
            if ((xy - sensors[0]).norm() > kClearance + reach && (xy - sensors[1]).norm() > kClearance + reach)
                break;
        }
        return xy;
    };
    for (std::size_t i = 0; i < spec.box_count; ++i) {
        Box b;
        b.half_extent = {rng.uniform(1.0, 4.0), rng.uniform(1.0, 4.0), rng.uniform(0.5, 3.0)};
        const Eigen::Vector2d xy = sample_xy(b.half_extent.head<2>().norm());
        b.center = {xy.x(), xy.y(), b.half_extent.z()};
        b.yaw = rng.uniform(0.0, M_PI);
        world.boxes.push_back(b);
    }
    for (std::size_t i = 0; i < spec.wall_count; ++i) {
        Box w;
        w.half_extent = {rng.uniform(5.0, 15.0), 0.15, rng.uniform(1.0, 2.5)};
        const Eigen::Vector2d xy = sample_xy(w.half_extent.x());
        w.center = {xy.x(), xy.y(), w.half_extent.z()};
        w.yaw = rng.uniform(0.0, M_PI);
        world.boxes.push_back(w);
    }
    for (std::size_t i = 0; i < spec.pole_count; ++i) {
        Pole p;
        p.radius = rng.uniform(0.1, 0.3);
        p.height = rng.uniform(3.0, 8.0);
        p.base = sample_xy(p.radius);
        world.poles.push_back(p);
    }
    return world;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Appends every ray parameter in (0, inf) where the ray crosses a surface.
void intersect_box(const Box &b, const Vec3 &o, const Vec3 &d, std::vector<double> &hits) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const Vec3 rel = o - b.center;
    const Vec3 lo(c * rel.x() + s * rel.y(), -s * rel.x() + c * rel.y(), rel.z());
    const Vec3 ld(c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z());
    double t_near = -kInf, t_far = kInf;
    for (int a = 0; a < 3; ++a) {
        if (ld[a] == 0.0) {
            if (std::abs(lo[a]) > b.half_extent[a]) return;
            continue;
        }
        double t1 = (-b.half_extent[a] - lo[a]) / ld[a];
        double t2 = (b.half_extent[a] - lo[a]) / ld[a];
        if (t1 > t2) std::swap(t1, t2);
        t_near = std::max(t_near, t1);
        t_far = std::min(t_far, t2);
    }
    if (t_near > t_far || t_far <= 0.0) return;
    if (t_near > 0.0) hits.push_back(t_near);
    hits.push_back(t_far);
}

void intersect_pole(const Pole &p, const Vec3 &o, const Vec3 &d, std::vector<double> &hits) {
    const Eigen::Vector2d oc = o.head<2>() - p.base;
    const Eigen::Vector2d dd = d.head<2>();
    const double a = dd.squaredNorm();
    if (a > 0.0) {
        const double b = 2.0 * oc.dot(dd);
        const double c = oc.squaredNorm() - p.radius * p.radius;
        const double disc = b * b - 4.0 * a * c;
        if (disc >= 0.0) {
            const double sq = std::sqrt(disc);
            for (const double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
                const double z = o.z() + t * d.z();
                if (t > 0.0 && z >= 0.0 && z <= p.height) hits.push_back(t);
            }
        }
    }
    if (d.z() != 0.0) {
        const double t = (p.height - o.z()) / d.z();
        if (t > 0.0 && (oc + t * dd).squaredNorm() <= p.radius * p.radius) hits.push_back(t);
    }
}

void intersect_ground(double extent, const Vec3 &o, const Vec3 &d, std::vector<double> &hits) {
    if (d.z() >= 0.0) return;
    const double t = -o.z() / d.z();
    if (t <= 0.0) return;
    const Vec3 p = o + t * d;
    if (std::abs(p.x()) <= extent && std::abs(p.y()) <= extent) hits.push_back(t);
}

}  // namespace

PointCloud cast_scan(const SyntheticWorld &world, const SyntheticSceneSpec &spec, const RigidTransform &sensor,
                     std::uint64_t stream) {
    validate(spec);
    Rng rng(spec.seed, "scan", stream);
    const RigidTransform to_sensor = sensor.inverse();
    const Vec3 origin = sensor.translation();
    const double gamma = spec.density_decay;
    // Ray casting already yields density ~ 1/d^2; thinning reshapes it to 1/d^gamma.
    const double norm_range = gamma >= 2.0 ? spec.min_range : spec.max_range;
    const double deg = M_PI / 180.0;
    PointCloud cloud;
    std::vector<double> hits;
    for (std::size_t beam = 0; beam < spec.beam_lines; ++beam) {
        const double frac = spec.beam_lines == 1 ? 0.0 : static_cast<double>(beam) / static_cast<double>(spec.beam_lines - 1);
        const double elevation = (spec.elevation_min_deg + frac * (spec.elevation_max_deg - spec.elevation_min_deg)) * deg;
        for (std::size_t k = 0; k < spec.azimuth_steps; ++k) {
            const double azimuth = 2.0 * M_PI * (static_cast<double>(k) + rng.uniform()) /
                                   static_cast<double>(spec.azimuth_steps);
            const Vec3 local(std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth),
                             std::sin(elevation));
            const Vec3 dir = sensor.rotation() * local;
            hits.clear();
            if (world.ground) intersect_ground(world.extent, origin, dir, hits);
            for (const Box &b : world.boxes) intersect_box(b, origin, dir, hits);
            for (const Pole &p : world.poles) intersect_pole(p, origin, dir, hits);
            std::sort(hits.begin(), hits.end());
            if (spec.occlusion && hits.size() > 1) hits.resize(1);
            for (const double t : hits) {
                const double keep_draw = rng.uniform();
                if (t < spec.min_range || t > spec.max_range) continue;
                const double keep = std::min(1.0, std::pow(t / norm_range, 2.0 - gamma));
                if (keep_draw >= keep) continue;
                cloud.points.push_back(to_sensor.apply(origin + t * dir));
            }
        }
    }
    return cloud;
}

SyntheticPair synth_scene(const SyntheticSceneSpec &spec) {
    SyntheticPair out;
    out.world = build_world(spec);
    out.a = cast_scan(out.world, spec, spec.sensor_a, 0);
    out.b = cast_scan(out.world, spec, spec.sensor_b, 1);
    out.gt = spec.sensor_b.inverse() * spec.sensor_a;
    return out;
}

SyntheticSceneSpec scenario_spec(std::uint64_t seed, const SynthScenario &scenario) {
    if (!(scenario.baseline_max >= scenario.baseline_min) || scenario.baseline_min < 0.0)
        throw InvalidArgument("synthetic scenario: invalid baseline range");
    Rng rng(seed, "scenario");
    SyntheticSceneSpec spec;
    spec.seed = seed;
    spec.density_decay = scenario.density_decay;
    spec.occlusion = scenario.occlusion;
    spec.beam_lines = scenario.beam_lines;
    spec.azimuth_steps = scenario.azimuth_steps;
    const double heading = rng.uniform(0.0, 2.0 * M_PI);
    const double baseline = rng.uniform(scenario.baseline_min, scenario.baseline_max);
    const double yaw = rng.uniform(-scenario.sensor_yaw_deg, scenario.sensor_yaw_deg) * M_PI / 180.0;
    const Vec3 a_pos(-0.5 * baseline * std::cos(heading), -0.5 * baseline * std::sin(heading), 1.73);
    const Vec3 b_pos(0.5 * baseline * std::cos(heading), 0.5 * baseline * std::sin(heading), 1.73);
    spec.sensor_a = RigidTransform::from_axis_angle(Vec3::UnitZ(), heading, a_pos);
    spec.sensor_b = RigidTransform::from_axis_angle(Vec3::UnitZ(), heading + yaw, b_pos);
    return spec;
}

SyntheticPair synth_pair(std::uint64_t seed, const SynthScenario &scenario) {
    SyntheticPair pair = synth_scene(scenario_spec(seed, scenario));
    Rng rng(seed, "frame");
    const double yaw = rng.uniform(-scenario.frame_rotation_deg, scenario.frame_rotation_deg) * M_PI / 180.0;
    Vec3 offset;
    do {
        offset = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), 0.0};
    } while (offset.squaredNorm() > 1.0);
    const RigidTransform frame = RigidTransform::from_axis_angle(Vec3::UnitZ(), yaw, offset * scenario.frame_translation);
    pair.b = apply_transform(pair.b, frame);
    pair.gt = frame * pair.gt;
    return pair;
}

PointCloud inject_noise(const PointCloud &cloud, double sigma, std::uint64_t seed) {
    if (!(sigma >= 0.0)) throw InvalidArgument("inject_noise: sigma must be >= 0");
    if (sigma == 0.0) return cloud;
    Rng rng(seed, "noise");
    PointCloud out = cloud;
    const double limit = 3.0 * sigma;
    for (Vec3 &p : out.points)
        for (int a = 0; a < 3; ++a) p[a] += std::clamp(sigma * rng.normal(), -limit, limit);
    return out;
}

PointCloud sparsify(const PointCloud &cloud, std::size_t n, std::uint64_t seed) {
    if (n > cloud.size()) throw InvalidArgument("sparsify: insufficient points");
    return farthest_point_sample(cloud, n, seed);
}

}  // namespace ugp::ingest
