#include "ugp_cli/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>
#include <sstream>
#include <thread>

#include "ugp/bev.hpp"
#include "ugp/errors.hpp"
#include "ugp/rng.hpp"

namespace ugp::cli {

using ordered_json = nlohmann::ordered_json;

namespace {

void ensure_dir(const fs::path &dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

std::string distance_tag(double d) {
    std::ostringstream s;
    s << d;
    return s.str();
}

ordered_json matrix_json(const RigidTransform &t) {
    const Eigen::Matrix4d m = t.matrix();
    ordered_json rows = ordered_json::array();
    for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
    return rows;
}

ordered_json number_or_null(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

std::string pair_stem(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "pair_%05zu", index);
    return buf;
}

struct PairRun {
    std::string record;
    std::string timing;
    bool failed = false;
};

PairRun run_pair(std::size_t index, const ingest::PairEntry &entry, const RegisterOptions &options) {
    ordered_json rec;
    rec["index"] = index;
    rec["a"] = entry.a;
    rec["b"] = entry.b;
    rec["distance_class"] = entry.distance_class;
    ordered_json timing;
    timing["index"] = index;

    const auto penalty = [&](const std::string &error) {
        // identity estimate, as for any pair without a transform
        const double rre = eval::rre(Mat3::Identity(), entry.gt.rotation());
        const double rte = eval::rte(Vec3::Zero(), entry.gt.translation());
        rec["status"] = "failed";
        rec["error"] = error;
        rec["estimated"] = false;
        rec["T"] = matrix_json(RigidTransform::identity());
        rec["rre"] = rre;
        rec["rte"] = rte;
        rec["rr_success"] = false;
    };

    PairRun run;
    const auto fail = [&](const std::string &error) {
        spdlog::warn("pair {}: {}", index, error);
        penalty(error);
        rec["pir"] = nullptr;
        rec["ir"] = nullptr;
        run.record = rec.dump();
        run.timing = timing.dump();
        run.failed = true;
        return run;
    };
    RegistrationResult result;
    try {
        const PointCloud target = ingest::load_scan(resolve_scan(options.manifest, entry.path_a));
        const PointCloud source = ingest::load_scan(resolve_scan(options.manifest, entry.path_b));
        result = register_pair(source, target, options.config);
    } catch (const DataError &e) {
        return fail(e.what());
    } catch (const EstimationError &e) {
        return fail(e.what());
    } catch (const InvalidArgument &e) {
        return fail(e.what());
    }

    const eval::MetricReport m = evaluate(result, entry.gt, options.config.thresholds);
    if (result.estimate) {
        rec["status"] = "ok";
        rec["estimated"] = true;
        rec["T"] = matrix_json(*result.estimate);
        rec["rre"] = m.rre;
        rec["rte"] = m.rte;
        rec["rr_success"] = m.rr_success;
    } else {
        spdlog::warn("pair {}: {}", index, result.error);
        penalty(result.error);
        run.failed = true;
    }
    rec["pir"] = result.coarse.empty() ? ordered_json(nullptr) : number_or_null(m.pir);
    rec["ir"] = result.dense.empty() ? ordered_json(nullptr) : number_or_null(m.ir);
    rec["coarse_matches"] = result.coarse.size();
    rec["dense_matches"] = result.dense.size();
    rec["mean_residual"] = number_or_null(mean_residual(result, entry.gt));

    const auto &t = result.timings;
    timing["encode_ms"] = t.encode_ms;
    timing["attention_ms"] = t.attention_ms;
    timing["matching_ms"] = t.matching_ms;
    timing["estimation_ms"] = t.estimation_ms;

    if (options.dump_correspondences) {
        const fs::path dir = options.out / "correspondences";
        auto coarse = open_out(dir / (pair_stem(index) + "_coarse.jsonl"));
        matching::write_jsonl(coarse, result.coarse);
        auto dense = open_out(dir / (pair_stem(index) + "_dense.jsonl"));
        matching::write_jsonl(dense, result.dense);
    }
    if (options.dump_bev) {
        const auto &b = options.config.bev;
        const fs::path dir = options.out / "bev";
        for (const auto &[set, side] : {std::pair{&result.source, "source"}, std::pair{&result.target, "target"}}) {
            const bev::Bounds bounds = bev::cloud_bounds(set->dense);
            bev::write_pgm(dir / (pair_stem(index) + "_" + side + ".pgm"),
                           bev::project_bev(set->dense, bounds, b.height, b.width));
        }
    }
    run.record = rec.dump();
    run.timing = timing.dump();
    return run;
}

ingest::PairManifest load_manifest(const fs::path &path) {
    spdlog::info("reading manifest {}", path.string());
    return ingest::read_manifest(path);
}

}  // namespace

fs::path resolve_scan(const fs::path &manifest, const std::string &path) {
    if (path.empty()) throw DataError("manifest entry has no scan path");
    const fs::path p(path);
    return p.is_absolute() ? p : manifest.parent_path() / p;
}

std::vector<fs::path> cmd_pairs(const PairsOptions &options) {
    if (options.distances.empty()) throw InvalidArgument("pairs: no distance classes");
    const fs::path scans_dir = options.dataset / "scans";
    if (!fs::is_directory(scans_dir)) throw DataError("pairs: missing directory " + scans_dir.string());
    std::vector<fs::path> scans;
    for (const auto &entry : fs::directory_iterator(scans_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".bin") scans.push_back(entry.path());
    std::sort(scans.begin(), scans.end());
    const auto poses = ingest::load_poses(options.dataset / "poses.txt", options.dataset / "calib.txt");
    if (poses.size() != scans.size())
        throw DataError("pairs: " + std::to_string(scans.size()) + " scans but " + std::to_string(poses.size()) +
                        " poses");

    ensure_dir(options.out);
    const fs::path out_abs = fs::absolute(options.out).lexically_normal();
    std::vector<fs::path> written;
    for (const double d : options.distances) {
        ingest::PairManifest manifest = ingest::generate_pairs(poses, d, options.band);
        for (auto &e : manifest) {
            e.path_a = fs::absolute(scans[e.a]).lexically_normal().lexically_relative(out_abs).generic_string();
            e.path_b = fs::absolute(scans[e.b]).lexically_normal().lexically_relative(out_abs).generic_string();
        }
        const fs::path path = options.out / ("pairs_" + distance_tag(d) + "m.json");
        ingest::write_manifest(path, manifest);
        spdlog::info("{}: {} pairs", path.string(), manifest.size());
        written.push_back(path);
    }
    return written;
}

std::size_t cmd_register(const RegisterOptions &options) {
    options.config.validate();
    if (options.jobs < 1) throw InvalidArgument("register: --jobs must be >= 1");
    const ingest::PairManifest manifest = load_manifest(options.manifest);
    ensure_dir(options.out);
    if (options.dump_correspondences) ensure_dir(options.out / "correspondences");
    if (options.dump_bev) ensure_dir(options.out / "bev");
    save_config(options.out / "config.json", options.config);

    std::vector<PairRun> runs(manifest.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr fatal;
    std::mutex fatal_mutex;
    auto worker = [&] {
        for (std::size_t k = next++; k < manifest.size(); k = next++) {
            try {
                runs[k] = run_pair(k, manifest[k], options);
                spdlog::debug("pair {} done", k);
            } catch (...) {
                std::lock_guard lock(fatal_mutex);
                if (!fatal) fatal = std::current_exception();
            }
        }
    };
    const unsigned jobs = std::min<std::size_t>(options.jobs, std::max<std::size_t>(manifest.size(), 1));
    std::vector<std::thread> pool;
    for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
    for (auto &t : pool) t.join();
    if (fatal) std::rethrow_exception(fatal);

    auto results = open_out(options.out / "results.jsonl");
    auto timings = open_out(options.out / "timings.jsonl");
    std::size_t failed = 0;
    for (const PairRun &r : runs) {
        results << r.record << '\n';
        timings << r.timing << '\n';
        failed += r.failed ? 1 : 0;
    }
    spdlog::info("registered {} pairs, {} failed", runs.size(), failed);
    return failed;
}

fs::path cmd_perturb(const PerturbOptions &options) {
    if (!options.sigma && !options.sparsify) throw InvalidArgument("perturb: give --sigma and/or --sparsify");
    if (options.sigma && !(*options.sigma >= 0.0)) throw InvalidArgument("perturb: sigma must be >= 0");
    if (options.sparsify && *options.sparsify == 0) throw InvalidArgument("perturb: sparsify count must be >= 1");
    ingest::PairManifest manifest = load_manifest(options.manifest);
    ensure_dir(options.out / "scans");

    std::ostringstream note;
    if (options.sigma) note << "noise sigma=" << *options.sigma << ' ';
    if (options.sparsify) note << "sparsify n=" << *options.sparsify << ' ';
    note << "seed=" << options.seed;

    std::map<std::size_t, std::string> done;
    auto materialize = [&](std::size_t index, const std::string &path) {
        if (const auto it = done.find(index); it != done.end()) return it->second;
        const std::string rel = "scans/scan_" + std::to_string(index) + ".bin";
        const fs::path src = resolve_scan(options.manifest, path);
        const fs::path dst = options.out / rel;
        const bool identity = !options.sparsify && options.sigma && *options.sigma == 0.0;
        if (identity) {
            std::error_code ec;
            fs::copy_file(src, dst, fs::copy_options::overwrite_existing, ec);
            if (ec) throw DataError("cannot copy " + src.string() + ": " + ec.message());
        } else {
            PointCloud cloud = ingest::load_scan(src);
            Rng rng(options.seed, "perturb", index);
            const std::uint64_t sparsify_seed = rng.next_u64();
            const std::uint64_t noise_seed = rng.next_u64();
            if (options.sparsify) cloud = ingest::sparsify(cloud, *options.sparsify, sparsify_seed);
            if (options.sigma && *options.sigma > 0.0) cloud = ingest::inject_noise(cloud, *options.sigma, noise_seed);
            ingest::save_scan(dst, cloud);
        }
        done.emplace(index, rel);
        return rel;
    };
    for (auto &e : manifest) {
        e.path_a = materialize(e.a, e.path_a);
        e.path_b = materialize(e.b, e.path_b);
        e.note = e.note.empty() ? note.str() : e.note + "; " + note.str();
    }
    const fs::path path = options.out / "manifest.json";
    ingest::write_manifest(path, manifest);
    return path;
}

fs::path cmd_stats(const StatsOptions &options) {
    options.config.validate();
    if (!(options.radius > 0.0) || !(options.tau > 0.0)) throw InvalidArgument("stats: radii must be positive");
    const ingest::PairManifest manifest = load_manifest(options.manifest);
    ensure_dir(options.out);

    encoder::ExtractOptions eo;
    eo.base_voxel = options.config.base_voxel;
    eo.levels = options.config.levels;
    eo.group_cap = options.config.group_cap;
    eo.ground_clearance = 0.0;
    const double node_spacing = eo.base_voxel * std::ldexp(1.0, eo.levels - 1);
    // features are not needed here
    const encoder::PointEncoder no_features = [](const encoder::SuperpointSet &set) {
        return Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(set.size()), 1);
    };

    const fs::path path = options.out / "stats.csv";
    auto csv = open_out(path);
    csv << "pair,source_node,target_node,nc_source,nc_target,overlap\n";
    csv.precision(10);
    for (std::size_t k = 0; k < manifest.size(); ++k) {
        const auto &e = manifest[k];
        const auto target = encoder::extract_superpoints(
            ingest::load_scan(resolve_scan(options.manifest, e.path_a)), eo, no_features);
        const auto source = encoder::extract_superpoints(
            ingest::load_scan(resolve_scan(options.manifest, e.path_b)), eo, no_features);
        const GridIndex target_nodes(target.superpoints.points, node_spacing);
        const auto nearest = [&](const Vec3 &p) {
            std::optional<std::size_t> best;
            double best_d = node_spacing;
            for (const std::size_t j : target_nodes.radius_search(p, node_spacing)) {
                const double d = (target.superpoints[j] - p).norm();
                if (d < best_d) {
                    best_d = d;
                    best = j;
                }
            }
            return best;
        };
        for (std::size_t i = 0; i < source.size(); ++i) {
            const auto j = nearest(e.gt.apply(source.superpoints[i]));
            if (!j) continue;
            Points gp, gq;
            for (const std::size_t p : source.groups.groups[i]) gp.push_back(source.dense[p]);
            for (const std::size_t q : target.groups.groups[*j]) gq.push_back(target.dense[q]);
            csv << k << ',' << i << ',' << *j << ','
                << neighborhood_count(source.dense, source.superpoints[i], options.radius) << ','
                << neighborhood_count(target.dense, target.superpoints[*j], options.radius) << ','
                << eval::overlap_degree(gp, gq, e.gt, options.tau) << '\n';
        }
    }

    ordered_json meta;
    meta["radius"] = options.radius;
    meta["tau"] = options.tau;
    meta["correspondence"] = "nearest target superpoint to the ground-truth image of each source superpoint, within the coarsest voxel size";
    meta["overlap_degree"] = "fraction of source group points whose ground-truth image has a target group point strictly within tau";
    open_out(options.out / "stats.json") << meta.dump(2) << '\n';
    return path;
}

fs::path cmd_synth(const SynthOptions &options) {
    if (options.count == 0) throw InvalidArgument("synth: count must be >= 1");
    ensure_dir(options.out / "scans");
    ingest::PairManifest manifest;
    for (std::size_t k = 0; k < options.count; ++k) {
        const std::uint64_t seed = options.seed + k;
        const ingest::SyntheticPair pair = ingest::synth_pair(seed, options.scenario);
        // manifest convention: gt maps scan b (source) into scan a (target)
        ingest::PairEntry e;
        e.a = 2 * k;
        e.b = 2 * k + 1;
        e.gt = pair.gt;
        e.distance_class = options.distance_class;
        e.path_a = "scans/" + pair_stem(k) + "_target.bin";
        e.path_b = "scans/" + pair_stem(k) + "_source.bin";
        e.note = "synthetic seed=" + std::to_string(seed);
        ingest::save_scan(options.out / e.path_a, pair.b);
        ingest::save_scan(options.out / e.path_b, pair.a);
        manifest.push_back(std::move(e));
    }
    const fs::path path = options.out / "manifest.json";
    ingest::write_manifest(path, manifest);
    return path;
}

}  // namespace ugp::cli
