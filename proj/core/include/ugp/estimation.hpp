#pragma once

#include <cstdint>
#include <vector>

#include "ugp/geometry.hpp"
#include "ugp/matching.hpp"

namespace ugp::estimation {

struct EstimationConfig {
    double acceptance_radius = 0.6;  // meters
    int refinement_iterations = 5;
    bool score_weighted = true;      // false: inliers weighted 1
    std::size_t min_group_size = 3;
    std::size_t ransac_iterations = 50000;
    double inlier_radius = 0.6;      // meters
    std::uint64_t seed = 0;
    // RANSAC variants, all off by default
    bool ransac_local_sampling = false;      // 2nd and 3rd sample drawn from the anchor's group
    bool ransac_group_consensus = false;     // rank by number of groups with inliers, then inliers
    bool ransac_local_optimization = false;  // inlier refits of promising samples
    std::size_t verification_pool = 0;       // >0: re-rank this many best hypotheses by cloud overlap
    friend bool operator==(const EstimationConfig &, const EstimationConfig &) = default;
};

/// Validates radii and iteration counts; throws InvalidArgument.
void validate(const EstimationConfig &config);

struct LgrTrace {
    RigidTransform transform;
    std::size_t candidates = 0;       // groups that produced a transform
    std::size_t selected_group = 0;   // group id of the winning candidate
    std::vector<std::size_t> inlier_counts;  // after selection, then after each accepted refinement
};

/// Counts correspondences with ||T(src_i) - dst_j|| <= radius.
std::size_t count_inliers(const matching::CorrespondenceSet &set, const Points &src, const Points &dst,
                          const RigidTransform &transform, double radius);

/// Local-to-global registration: one weighted Kabsch candidate per
/// correspondence group (scores as weights), the candidate with the most
/// global inliers wins, then up to N_r inlier refits over all of C. A refit
/// that would lose inliers is rejected and refinement stops.
LgrTrace lgr_detailed(const matching::CorrespondenceSet &set, const Points &src, const Points &dst,
                      const EstimationConfig &config = {});
RigidTransform lgr(const matching::CorrespondenceSet &set, const Points &src, const Points &dst,
                   const EstimationConfig &config = {});

/// Point sets used to re-rank RANSAC hypotheses by overlap.
struct VerificationClouds {
    Points src;
    Points dst;
};

/// Points of src (every stride-th) with a dst point within radius after transform.
std::size_t overlap_count(const Points &src, const GridIndex &dst_index, const RigidTransform &transform,
                          double radius, std::size_t stride = 1);

/// 3-point RANSAC with a final Kabsch refit on the best consensus set.
/// With verification clouds and a nonzero pool, the pool's hypothesis with
/// the largest overlap_count wins instead of the top-ranked one.
RigidTransform ransac(const matching::CorrespondenceSet &set, const Points &src, const Points &dst,
                      const EstimationConfig &config = {}, const VerificationClouds *verification = nullptr);

}  // namespace ugp::estimation
