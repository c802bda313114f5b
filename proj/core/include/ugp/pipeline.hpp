#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "ugp/attention.hpp"
#include "ugp/encoder.hpp"
#include "ugp/estimation.hpp"
#include "ugp/eval.hpp"
#include "ugp/matching.hpp"

namespace ugp {

enum class MaskMode { Progressive, Full };
enum class EstimatorKind { Lgr, Ransac };

std::string to_string(MaskMode mode);
std::string to_string(EstimatorKind kind);
MaskMode parse_mask_mode(const std::string &text);
EstimatorKind parse_estimator(const std::string &text);

struct BevConfig {
    std::size_t height = bev::kDefaultResolution;
    std::size_t width = bev::kDefaultResolution;
    int beta = bev::kDefaultBeta;
    std::size_t patch_dim = bev::kPatchFeatureDim;
    double weight = 1.0;  // scale applied to the patch block of the fused features
    friend bool operator==(const BevConfig &, const BevConfig &) = default;
};

struct DescriptorConfig {
    std::size_t dim = encoder::kDescriptorDim;
    double radius = encoder::kDescriptorRadius;
    double ground_clearance = 0.3;  // <= 0 disables ground filtering
    double ground_cell = 10.0;
    double dense_radius = 1.2;  // neighbourhood of the per-point descriptors
    double dense_scale = 8.0;   // unit dense descriptors are multiplied by this
    bool standardize = true;    // z-score each descriptor channel over the cloud
    bool structure_superpoints = false;
    bool multiscale = false;
    bool shape_bins = false;
    friend bool operator==(const DescriptorConfig &, const DescriptorConfig &) = default;
};

struct AttentionConfig {
    std::size_t dim = attention::kDefaultDim;
    int layers = attention::kDefaultLayers;
    std::uint64_t seed = 0;
    MaskMode mask_mode = MaskMode::Progressive;
    double sigma_d = attention::kDefaultSigmaD;
    attention::MaskSemantics semantics = attention::MaskSemantics::Exclude;
    friend bool operator==(const AttentionConfig &, const AttentionConfig &) = default;
};

struct MatchingConfig {
    std::size_t k_c = 64;
    std::size_t k_f = 2;
    int sinkhorn_iterations = 100;
    double slack = 0.0;
    friend bool operator==(const MatchingConfig &, const MatchingConfig &) = default;
};

struct EstimatorConfig {
    EstimatorKind kind = EstimatorKind::Lgr;
    estimation::EstimationConfig params;
    friend bool operator==(const EstimatorConfig &, const EstimatorConfig &) = default;
};

struct PipelineConfig {
    double base_voxel = 0.3;
    int levels = 5;
    std::size_t group_cap = kDefaultGroupCap;
    BevConfig bev;
    DescriptorConfig descriptor;
    AttentionConfig attention;
    MatchingConfig matching;
    EstimatorConfig estimator;
    eval::Thresholds thresholds;

    /// Throws InvalidArgument on any out-of-range field.
    void validate() const;

    friend bool operator==(const PipelineConfig &a, const PipelineConfig &b) {
        return a.base_voxel == b.base_voxel && a.levels == b.levels && a.group_cap == b.group_cap &&
               a.bev == b.bev && a.descriptor == b.descriptor && a.attention == b.attention &&
               a.matching == b.matching && a.estimator == b.estimator &&
               a.thresholds.rre_deg == b.thresholds.rre_deg && a.thresholds.rte_m == b.thresholds.rte_m &&
               a.thresholds.pir_tau == b.thresholds.pir_tau && a.thresholds.ir_tau == b.thresholds.ir_tau;
    }
};

/// Strict JSON: unknown keys and wrongly typed values are rejected, missing
/// keys keep their defaults.
PipelineConfig config_from_json(const std::string &text);
std::string config_to_json(const PipelineConfig &config);
PipelineConfig load_config(const std::filesystem::path &path);
void save_config(const std::filesystem::path &path, const PipelineConfig &config);

struct RegistrationResult {
    encoder::SuperpointSet source;
    encoder::SuperpointSet target;
    matching::CorrespondenceSet coarse;
    matching::CorrespondenceSet dense;
    std::optional<RigidTransform> estimate;
    std::string error;  // set when estimation failed
    eval::StageTimings timings;
};

/// Feature stage only: superpoint sets with fused, attention-mixed features.
/// `attention_ms`, when given, receives the time spent in the attention stack.
encoder::SuperpointSet encode_cloud(const PointCloud &cloud, const PipelineConfig &config,
                                    double *attention_ms = nullptr);

/// Full pipeline. `source` is mapped onto `target`. Estimation failures are
/// reported through `error`, not thrown.
RegistrationResult register_pair(const PointCloud &source, const PointCloud &target, const PipelineConfig &config);

/// Metrics of a result against ground truth. A missing estimate is scored
/// as the identity transform and never succeeds.
eval::MetricReport evaluate(const RegistrationResult &result, const RigidTransform &gt,
                            const eval::Thresholds &thresholds);

/// Mean ||T_gt(p_i) - q_j|| over the dense correspondences (NaN when empty).
double mean_residual(const RegistrationResult &result, const RigidTransform &gt);

}  // namespace ugp
