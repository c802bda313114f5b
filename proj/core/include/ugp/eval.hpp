#pragma once

#include <map>
#include <vector>

#include "ugp/geometry.hpp"
#include "ugp/matching.hpp"

namespace ugp::eval {

struct Thresholds {
    double rre_deg = 5.0;
    double rte_m = 2.0;
    double pir_tau = 0.6;
    double ir_tau = 1.0;
};

struct StageTimings {
    double encode_ms = 0.0;
    double attention_ms = 0.0;
    double matching_ms = 0.0;
    double estimation_ms = 0.0;
};

struct MetricReport {
    double pir = 0.0;
    double ir = 0.0;
    double rre = 0.0;  // degrees
    double rte = 0.0;  // meters
    bool rr_success = false;
    StageTimings timings;
};

/// Fraction of superpoint matches (i, j) for which some point of G_i^P,
/// mapped by T_gt, lies strictly within tau of some point of G_j^Q.
double pir(const matching::CorrespondenceSet &matches, const GroupAssignment &groups_p,
           const GroupAssignment &groups_q, const Points &dense_p, const Points &dense_q,
           const RigidTransform &gt, double tau = 0.6);

/// Fraction of dense pairs with ||T_gt(p_i) - q_j|| < tau1.
double ir(const matching::CorrespondenceSet &set, const Points &dense_p, const Points &dense_q,
          const RigidTransform &gt, double tau1 = 1.0);

/// Geodesic angle between two rotations, degrees in [0, 180].
/// Computed as atan2(|axis part|, (tr - 1) / 2), which equals the arccos
/// form but keeps full precision near 0 and 180.
double rre(const Mat3 &r_est, const Mat3 &r_gt);
double rte(const Vec3 &t_est, const Vec3 &t_gt);

bool rr_success(double rre_deg, double rte_m, const Thresholds &thresholds = {});

/// Fills rre/rte/rr_success of a report from an estimate and ground truth.
void score_transform(MetricReport &report, const RigidTransform &estimate, const RigidTransform &gt,
                     const Thresholds &thresholds = {});

/// One registration outcome. A failed estimation carries the errors of the
/// identity estimate and rr_success = false.
struct PairOutcome {
    int distance_class = 0;
    bool estimated = true;
    double rre = 0.0;
    double rte = 0.0;
    bool rr_success = false;
};

struct RecallSummary {
    std::map<int, double> per_class;
    double mrr = 0.0;
};

/// Per-class RR and their unweighted mean. Throws InvalidArgument on an
/// empty class list or an empty class.
RecallSummary rr_and_mrr(const std::map<int, std::vector<PairOutcome>> &by_class);
RecallSummary rr_and_mrr(const std::map<int, double> &per_class_rr);

struct ErrorSummary {
    double rre = 0.0;  // successful pairs only (NaN when none)
    double rte = 0.0;
    double rre_star = 0.0;  // every pair
    double rte_star = 0.0;
};

ErrorSummary starred_errors(const std::vector<PairOutcome> &outcomes);

/// Fraction of group_p points whose T_gt image has a group_q neighbour
/// strictly within tau. Empty groups give 0.
double overlap_degree(const Points &group_p, const Points &group_q, const RigidTransform &gt, double tau = 0.6);

}  // namespace ugp::eval
