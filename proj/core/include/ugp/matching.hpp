#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "ugp/geometry.hpp"

namespace ugp::matching {

enum class Level { Superpoint, Point };

struct Correspondence {
    std::size_t i = 0;  // index into the source (P) side
    std::size_t j = 0;  // index into the target (Q) side
    double score = 0.0;
    std::size_t group = 0;  // generating superpoint pair (position in the coarse set)
};

struct CorrespondenceSet {
    Level level = Level::Superpoint;
    std::vector<Correspondence> entries;

    [[nodiscard]] std::size_t size() const { return entries.size(); }
    [[nodiscard]] bool empty() const { return entries.empty(); }
};

/// Rows scaled to unit norm. Throws EstimationError("degenerate feature")
/// on an all-zero row.
Eigen::MatrixXd normalize_unit(const Eigen::MatrixXd &features);

/// s_ij = exp(-||p_i - q_j||^2).
Eigen::MatrixXd gaussian_correlation(const Eigen::MatrixXd &p, const Eigen::MatrixXd &q);

/// s_ij * s_ij / (row_sum_i * col_sum_j).
Eigen::MatrixXd dual_normalize(const Eigen::MatrixXd &scores);

/// The k largest entries (ties: lowest row-major index first), best first.
CorrespondenceSet topk_superpoint_matches(const Eigen::MatrixXd &scores, std::size_t k);

/// F_p F_q^T / sqrt(dim).
Eigen::MatrixXd local_cost(const Eigen::MatrixXd &p_features, const Eigen::MatrixXd &q_features, double dim);

/// (rows+1) x (cols+1) soft assignment; last row/column are slack.
struct AssignmentMatrix {
    Eigen::MatrixXd values;

    [[nodiscard]] Eigen::Index rows() const { return values.rows() - 1; }
    [[nodiscard]] Eigen::Index cols() const { return values.cols() - 1; }
};

/// Log-domain Sinkhorn on the cost augmented with a slack row and column
/// filled with `slack_score`. Real rows/columns target mass 1; the slack row
/// targets `cols` and the slack column `rows`. `violation_trace`, when given,
/// receives the max non-slack marginal violation after every sweep.
AssignmentMatrix sinkhorn(const Eigen::MatrixXd &cost, int iterations, double slack_score,
                          std::vector<double> *violation_trace = nullptr);

/// Max |sum - 1| over the non-slack rows and columns.
double marginal_violation(const AssignmentMatrix &assignment);

/// (i, j) survives iff j is among the k largest entries of row i and i among
/// the k largest of column j (non-slack part only). Row-major output order.
CorrespondenceSet mutual_topk(const AssignmentMatrix &assignment, std::size_t k);

struct DenseMatchOptions {
    std::size_t k_f = 2;
    int sinkhorn_iterations = 100;
    double slack_score = 0.0;
};

/// Local matching for every coarse pair, lifted to global dense indices and
/// merged. A dense pair produced by several coarse pairs keeps its highest
/// score (first coarse pair wins ties).
CorrespondenceSet collect_dense(const CorrespondenceSet &coarse, const GroupAssignment &groups_p,
                                const GroupAssignment &groups_q, const Eigen::MatrixXd &dense_p,
                                const Eigen::MatrixXd &dense_q, const DenseMatchOptions &options = {});

/// One JSON object per line: {"level","i","j","score"}.
void write_jsonl(std::ostream &out, const CorrespondenceSet &set);

std::string to_string(Level level);

}  // namespace ugp::matching
