#include "ugp/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "ugp/bev.hpp"
#include "ugp/errors.hpp"

namespace ugp {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(MaskMode mode) { return mode == MaskMode::Progressive ? "progressive" : "full"; }
std::string to_string(EstimatorKind kind) { return kind == EstimatorKind::Lgr ? "lgr" : "ransac"; }

MaskMode parse_mask_mode(const std::string &text) {
    if (text == "progressive") return MaskMode::Progressive;
    if (text == "full") return MaskMode::Full;
    throw InvalidArgument("unknown mask mode '" + text + "' (expected progressive or full)");
}

EstimatorKind parse_estimator(const std::string &text) {
    if (text == "lgr") return EstimatorKind::Lgr;
    if (text == "ransac") return EstimatorKind::Ransac;
    throw InvalidArgument("unknown estimator '" + text + "' (expected lgr or ransac)");
}

namespace {

std::string semantics_name(attention::MaskSemantics s) {
    return s == attention::MaskSemantics::Exclude ? "exclude" : "multiplicative";
}

attention::MaskSemantics parse_semantics(const std::string &text) {
    if (text == "exclude") return attention::MaskSemantics::Exclude;
    if (text == "multiplicative") return attention::MaskSemantics::Multiplicative;
    throw InvalidArgument("unknown mask semantics '" + text + "'");
}

// Reads the keys of one JSON object, rejecting anything it was not asked for.
class Reader {
public:
    Reader(const json &object, std::string where) : object_(object), where_(std::move(where)) {
        if (!object_.is_object()) throw InvalidArgument("config: " + where_ + " must be an object");
    }

    ~Reader() noexcept(false) {
        if (std::uncaught_exceptions() > 0) return;
        for (const auto &[key, value] : object_.items())
            if (!seen_.contains(key)) throw InvalidArgument("config: unknown key '" + path(key) + "'");
    }

    template <typename T>
    void get(const std::string &key, T &out) {
        seen_.insert(key);
        const auto it = object_.find(key);
        if (it == object_.end()) return;
        const json &v = *it;
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) fail(key, "a boolean");
            out = v.get<bool>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) fail(key, "a number");
            out = v.get<T>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) fail(key, "an integer");
            if constexpr (std::is_unsigned_v<T>) {
                if (v.is_number_unsigned() || v.get<std::int64_t>() >= 0)
                    out = v.get<T>();
                else
                    fail(key, "a non-negative integer");
            } else {
                out = v.get<T>();
            }
        } else {
            if (!v.is_string()) fail(key, "a string");
            out = v.get<std::string>();
        }
    }

    const json *child(const std::string &key) {
        seen_.insert(key);
        const auto it = object_.find(key);
        return it == object_.end() ? nullptr : &*it;
    }

    [[nodiscard]] std::string path(const std::string &key) const { return where_.empty() ? key : where_ + "." + key; }

private:
    [[noreturn]] void fail(const std::string &key, const char *what) const {
        throw InvalidArgument("config: '" + path(key) + "' must be " + what);
    }

    const json &object_;
    std::string where_;
    std::set<std::string> seen_;
};

void require(bool ok, const std::string &message) {
    if (!ok) throw InvalidArgument("config: " + message);
}

// Per-column zero mean, unit variance; constant columns become zero.
Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd &features) {
    Eigen::MatrixXd f = features.rowwise() - features.colwise().mean();
    for (Eigen::Index c = 0; c < f.cols(); ++c) {
        const double s = std::sqrt(f.col(c).squaredNorm() / static_cast<double>(f.rows()));
        if (s > 1e-9)
            f.col(c) /= s;
        else
            f.col(c).setZero();
    }
    return f;
}

double ms_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void PipelineConfig::validate() const {
    require(base_voxel > 0.0 && std::isfinite(base_voxel), "base_voxel must be positive");
    require(levels >= 1 && levels <= 16, "levels must be in [1, 16]");
    require(group_cap >= 1, "group_cap must be >= 1");
    require(bev.height >= 1 && bev.width >= 1, "bev resolution must be positive");
    require(bev.beta >= 0 && bev.beta < 16, "bev.beta must be in [0, 15]");
    require((bev.height >> bev.beta) >= 1 && (bev.width >> bev.beta) >= 1, "bev.beta halves the raster below one patch");
    require(bev.patch_dim >= 5, "bev.patch_dim must be >= 5");
    require(std::isfinite(bev.weight) && bev.weight >= 0.0, "bev.weight must be finite and >= 0");
    require(descriptor.dim >= encoder::min_descriptor_dim({descriptor.multiscale, descriptor.shape_bins}),
            "descriptor.dim too small for the enabled channels");
    require(descriptor.radius > 0.0, "descriptor.radius must be positive");
    require(std::isfinite(descriptor.ground_clearance), "descriptor.ground_clearance must be finite");
    require(descriptor.ground_cell > 0.0, "descriptor.ground_cell must be positive");
    require(descriptor.dense_radius > 0.0, "descriptor.dense_radius must be positive");
    require(descriptor.dense_scale > 0.0 && std::isfinite(descriptor.dense_scale), "descriptor.dense_scale must be positive");
    require(attention.dim >= 1, "attention.dim must be >= 1");
    require(attention.layers >= 1, "attention.layers must be >= 1");
    require(attention.sigma_d > 0.0, "attention.sigma_d must be positive");
    require(matching.k_c >= 1 && matching.k_f >= 1, "matching.k_c and matching.k_f must be >= 1");
    require(matching.sinkhorn_iterations >= 1, "matching.sinkhorn_iters must be >= 1");
    require(std::isfinite(matching.slack), "matching.slack must be finite");
    estimation::validate(estimator.params);
    require(thresholds.rre_deg > 0.0 && thresholds.rte_m > 0.0, "eval thresholds must be positive");
    require(thresholds.pir_tau > 0.0 && thresholds.ir_tau > 0.0, "eval radii must be positive");
}

PipelineConfig config_from_json(const std::string &text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error &e) {
        throw InvalidArgument(std::string("config: ") + e.what());
    }
    PipelineConfig c;
    {
        Reader r(root, "");
        r.get("base_voxel", c.base_voxel);
        r.get("levels", c.levels);
        r.get("group_cap", c.group_cap);
        if (const json *j = r.child("bev")) {
            Reader b(*j, "bev");
            b.get("height", c.bev.height);
            b.get("width", c.bev.width);
            b.get("beta", c.bev.beta);
            b.get("patch_dim", c.bev.patch_dim);
            b.get("weight", c.bev.weight);
        }
        if (const json *j = r.child("descriptor")) {
            Reader d(*j, "descriptor");
            d.get("dim", c.descriptor.dim);
            d.get("radius", c.descriptor.radius);
            d.get("ground_clearance", c.descriptor.ground_clearance);
            d.get("ground_cell", c.descriptor.ground_cell);
            d.get("dense_radius", c.descriptor.dense_radius);
            d.get("dense_scale", c.descriptor.dense_scale);
            d.get("standardize", c.descriptor.standardize);
            d.get("structure_superpoints", c.descriptor.structure_superpoints);
            d.get("multiscale", c.descriptor.multiscale);
            d.get("shape_bins", c.descriptor.shape_bins);
        }
        if (const json *j = r.child("attention")) {
            Reader a(*j, "attention");
            a.get("dim", c.attention.dim);
            a.get("layers", c.attention.layers);
            a.get("seed", c.attention.seed);
            a.get("sigma_d", c.attention.sigma_d);
            std::string mode = to_string(c.attention.mask_mode), sem = semantics_name(c.attention.semantics);
            a.get("mask_mode", mode);
            a.get("mask_semantics", sem);
            c.attention.mask_mode = parse_mask_mode(mode);
            c.attention.semantics = parse_semantics(sem);
        }
        if (const json *j = r.child("matching")) {
            Reader m(*j, "matching");
            m.get("k_c", c.matching.k_c);
            m.get("k_f", c.matching.k_f);
            m.get("sinkhorn_iters", c.matching.sinkhorn_iterations);
            m.get("slack", c.matching.slack);
        }
        if (const json *j = r.child("estimator")) {
            Reader e(*j, "estimator");
            std::string kind = to_string(c.estimator.kind);
            e.get("kind", kind);
            c.estimator.kind = parse_estimator(kind);
            auto &p = c.estimator.params;
            e.get("tau_a", p.acceptance_radius);
            e.get("refinement_iters", p.refinement_iterations);
            e.get("score_weighted", p.score_weighted);
            e.get("min_group_size", p.min_group_size);
            e.get("ransac_iters", p.ransac_iterations);
            e.get("inlier_radius", p.inlier_radius);
            e.get("seed", p.seed);
            e.get("ransac_local_sampling", p.ransac_local_sampling);
            e.get("ransac_group_consensus", p.ransac_group_consensus);
            e.get("ransac_local_optimization", p.ransac_local_optimization);
            e.get("verification_pool", p.verification_pool);
        }
        if (const json *j = r.child("eval")) {
            Reader t(*j, "eval");
            t.get("rre_deg", c.thresholds.rre_deg);
            t.get("rte_m", c.thresholds.rte_m);
            t.get("pir_tau", c.thresholds.pir_tau);
            t.get("ir_tau", c.thresholds.ir_tau);
        }
    }
    c.validate();
    return c;
}

std::string config_to_json(const PipelineConfig &c) {
    ordered_json j;
    j["base_voxel"] = c.base_voxel;
    j["levels"] = c.levels;
    j["group_cap"] = c.group_cap;
    j["bev"] = {{"height", c.bev.height}, {"width", c.bev.width}, {"beta", c.bev.beta},
                {"patch_dim", c.bev.patch_dim}, {"weight", c.bev.weight}};
    j["descriptor"] = {{"dim", c.descriptor.dim}, {"radius", c.descriptor.radius},
                       {"ground_clearance", c.descriptor.ground_clearance}, {"ground_cell", c.descriptor.ground_cell},
                       {"dense_radius", c.descriptor.dense_radius}, {"dense_scale", c.descriptor.dense_scale},
                       {"standardize", c.descriptor.standardize},
                       {"structure_superpoints", c.descriptor.structure_superpoints},
                       {"multiscale", c.descriptor.multiscale}, {"shape_bins", c.descriptor.shape_bins}};
    j["attention"] = {{"dim", c.attention.dim},         {"layers", c.attention.layers},
                      {"seed", c.attention.seed},       {"mask_mode", to_string(c.attention.mask_mode)},
                      {"sigma_d", c.attention.sigma_d}, {"mask_semantics", semantics_name(c.attention.semantics)}};
    j["matching"] = {{"k_c", c.matching.k_c}, {"k_f", c.matching.k_f},
                     {"sinkhorn_iters", c.matching.sinkhorn_iterations}, {"slack", c.matching.slack}};
    const auto &p = c.estimator.params;
    j["estimator"] = {{"kind", to_string(c.estimator.kind)},
                      {"tau_a", p.acceptance_radius},
                      {"refinement_iters", p.refinement_iterations},
                      {"score_weighted", p.score_weighted},
                      {"min_group_size", p.min_group_size},
                      {"ransac_iters", p.ransac_iterations},
                      {"inlier_radius", p.inlier_radius},
                      {"seed", p.seed},
                      {"ransac_local_sampling", p.ransac_local_sampling},
                      {"ransac_group_consensus", p.ransac_group_consensus},
                      {"ransac_local_optimization", p.ransac_local_optimization},
                      {"verification_pool", p.verification_pool}};
    j["eval"] = {{"rre_deg", c.thresholds.rre_deg}, {"rte_m", c.thresholds.rte_m},
                 {"pir_tau", c.thresholds.pir_tau}, {"ir_tau", c.thresholds.ir_tau}};
    return j.dump(2) + "\n";
}

PipelineConfig load_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("config: cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

void save_config(const std::filesystem::path &path, const PipelineConfig &config) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << config_to_json(config);
}

encoder::SuperpointSet encode_cloud(const PointCloud &cloud, const PipelineConfig &config, double *attention_ms) {
    encoder::ExtractOptions opts;
    opts.base_voxel = config.base_voxel;
    opts.levels = config.levels;
    opts.group_cap = config.group_cap;
    opts.descriptor_radius = config.descriptor.radius;
    opts.descriptor_dim = config.descriptor.dim;
    opts.ground_clearance = config.descriptor.ground_clearance;
    opts.ground_cell = config.descriptor.ground_cell;
    opts.structure_superpoints = config.descriptor.structure_superpoints;
    opts.channels = {config.descriptor.multiscale, config.descriptor.shape_bins};
    encoder::SuperpointSet set = encoder::extract_superpoints(cloud, opts);
    if (config.descriptor.standardize) set.features = standardize_columns(set.features);

    const bev::Bounds bounds = bev::cloud_bounds(set.dense);
    const bev::BevImage image = bev::project_bev(set.dense, bounds, config.bev.height, config.bev.width);
    const bev::PatchFeatureGrid grid = bev::patch_features(image, config.bev.beta, config.bev.patch_dim);
    const bev::PatchLookup lookup =
        bev::superpoint_patch_lookup(set.superpoints, bounds, config.bev.height, config.bev.width, config.bev.beta);
    Eigen::MatrixXd fused = encoder::fuse(set.features, grid, lookup);
    fused.rightCols(static_cast<Eigen::Index>(grid.dim())) *= config.bev.weight;

    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t width = static_cast<std::size_t>(fused.cols());
    const auto params = attention::AttentionParams::init(config.attention.dim, config.attention.layers,
                                                         config.attention.seed,
                                                         width == config.attention.dim ? 0 : width);
    const auto masks = config.attention.mask_mode == MaskMode::Progressive
                           ? attention::build_mask_stack(set.superpoints, config.attention.layers)
                           : attention::full_mask_stack(set.size(), config.attention.layers);
    const attention::GeometricEmbedding embedding(set.superpoints, config.attention.sigma_d, config.attention.dim);
    attention::LayerOptions options;
    options.semantics = config.attention.semantics;
    set.features = attention::progressive_stack(fused, masks, embedding, params, options);
    if (attention_ms) *attention_ms += ms_since(t0);
    return set;
}

namespace {

// Non-ground dense points (all of them when ground filtering is off).
Points structure_points(const encoder::SuperpointSet &set) {
    Points out;
    for (std::size_t k = 0; k < set.dense.size(); ++k)
        if (set.ground.empty() || !set.ground[k]) out.push_back(set.dense[k]);
    return out;
}

// Scaled unit descriptors for the dense points that belong to a matched group;
// other rows stay zero and are never read.
Eigen::MatrixXd dense_features(const encoder::SuperpointSet &set, const matching::CorrespondenceSet &coarse,
                               bool source_side, const PipelineConfig &config) {
    const auto dim = static_cast<Eigen::Index>(config.descriptor.dim);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(set.dense.size()), dim);
    std::vector<char> needed(set.dense.size(), 0);
    for (const auto &c : coarse.entries)
        for (std::size_t p : set.groups.groups[source_side ? c.i : c.j]) needed[p] = 1;
    const GridIndex index(set.dense.points, config.descriptor.dense_radius);
    std::vector<Vec3> neighbors;
    for (std::size_t p = 0; p < set.dense.size(); ++p) {
        if (!needed[p]) continue;
        neighbors.clear();
        for (std::size_t q : index.radius_search(set.dense[p], config.descriptor.dense_radius))
            neighbors.push_back(set.dense[q]);
        Eigen::VectorXd d = encoder::extended_descriptor(set.dense[p], neighbors, config.descriptor.dim,
                                                         {config.descriptor.multiscale, config.descriptor.shape_bins});
        const double norm = d.norm();
        if (norm > 0.0) d *= config.descriptor.dense_scale / norm;
        out.row(static_cast<Eigen::Index>(p)) = d.transpose();
    }
    return out;
}

}  // namespace

RegistrationResult register_pair(const PointCloud &source, const PointCloud &target, const PipelineConfig &config) {
    config.validate();
    RegistrationResult r;
    auto t0 = std::chrono::steady_clock::now();
    r.source = encode_cloud(source, config, &r.timings.attention_ms);
    r.target = encode_cloud(target, config, &r.timings.attention_ms);
    r.timings.encode_ms = ms_since(t0) - r.timings.attention_ms;

    t0 = std::chrono::steady_clock::now();
    const Eigen::MatrixXd fp = matching::normalize_unit(r.source.features);
    const Eigen::MatrixXd fq = matching::normalize_unit(r.target.features);
    r.coarse = matching::topk_superpoint_matches(
        matching::dual_normalize(matching::gaussian_correlation(fp, fq)), config.matching.k_c);
    matching::DenseMatchOptions dm;
    dm.k_f = config.matching.k_f;
    dm.sinkhorn_iterations = config.matching.sinkhorn_iterations;
    dm.slack_score = config.matching.slack;
    r.dense = matching::collect_dense(r.coarse, r.source.groups, r.target.groups,
                                      dense_features(r.source, r.coarse, true, config),
                                      dense_features(r.target, r.coarse, false, config), dm);
    r.timings.matching_ms = ms_since(t0);

    t0 = std::chrono::steady_clock::now();
    estimation::VerificationClouds verification;
    const bool verify = config.estimator.kind == EstimatorKind::Ransac && config.estimator.params.verification_pool > 0;
    if (verify) verification = {structure_points(r.source), structure_points(r.target)};
    try {
        r.estimate = config.estimator.kind == EstimatorKind::Lgr
                         ? estimation::lgr(r.dense, r.source.dense.points, r.target.dense.points, config.estimator.params)
                         : estimation::ransac(r.dense, r.source.dense.points, r.target.dense.points,
                                              config.estimator.params, verify ? &verification : nullptr);
    } catch (const EstimationError &e) {
        r.error = e.what();
    }
    r.timings.estimation_ms = ms_since(t0);
    return r;
}

eval::MetricReport evaluate(const RegistrationResult &result, const RigidTransform &gt,
                            const eval::Thresholds &thresholds) {
    eval::MetricReport m;
    if (!result.coarse.empty())
        m.pir = eval::pir(result.coarse, result.source.groups, result.target.groups, result.source.dense.points,
                          result.target.dense.points, gt, thresholds.pir_tau);
    if (!result.dense.empty())
        m.ir = eval::ir(result.dense, result.source.dense.points, result.target.dense.points, gt, thresholds.ir_tau);
    eval::score_transform(m, result.estimate.value_or(RigidTransform::identity()), gt, thresholds);
    if (!result.estimate) m.rr_success = false;
    m.timings = result.timings;
    return m;
}

double mean_residual(const RegistrationResult &result, const RigidTransform &gt) {
    if (result.dense.empty()) return std::numeric_limits<double>::quiet_NaN();
    double sum = 0.0;
    for (const auto &c : result.dense.entries)
        sum += (gt.apply(result.source.dense[c.i]) - result.target.dense[c.j]).norm();
    return sum / static_cast<double>(result.dense.size());
}

}  // namespace ugp
