#include "ugp/matching.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>

#include "ugp/errors.hpp"

namespace ugp::matching {

using Eigen::Index;
using Eigen::MatrixXd;

MatrixXd normalize_unit(const MatrixXd &features) {
    MatrixXd out(features.rows(), features.cols());
    for (Index i = 0; i < features.rows(); ++i) {
        const double norm = features.row(i).norm();
        if (!(norm > 0.0) || !std::isfinite(norm)) throw EstimationError("degenerate feature");
        out.row(i) = features.row(i) / norm;
    }
    return out;
}

MatrixXd gaussian_correlation(const MatrixXd &p, const MatrixXd &q) {
    if (p.cols() != q.cols()) throw InvalidArgument("gaussian_correlation: feature widths differ");
    MatrixXd out(p.rows(), q.rows());
    for (Index i = 0; i < p.rows(); ++i)
        for (Index j = 0; j < q.rows(); ++j) out(i, j) = std::exp(-(p.row(i) - q.row(j)).squaredNorm());
    return out;
}

MatrixXd dual_normalize(const MatrixXd &scores) {
    const Eigen::VectorXd row_sum = scores.rowwise().sum();
    const Eigen::RowVectorXd col_sum = scores.colwise().sum();
    MatrixXd out(scores.rows(), scores.cols());
    for (Index i = 0; i < scores.rows(); ++i)
        for (Index j = 0; j < scores.cols(); ++j)
            out(i, j) = (scores(i, j) / row_sum(i)) * (scores(i, j) / col_sum(j));
    return out;
}

CorrespondenceSet topk_superpoint_matches(const MatrixXd &scores, std::size_t k) {
    if (k == 0) throw InvalidArgument("topk_superpoint_matches: k must be >= 1");
    const auto cols = static_cast<std::size_t>(scores.cols());
    const std::size_t total = static_cast<std::size_t>(scores.rows()) * cols;
    const std::size_t take = std::min(k, total);
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto value = [&](std::size_t f) { return scores(static_cast<Index>(f / cols), static_cast<Index>(f % cols)); };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          const double va = value(a), vb = value(b);
                          return va > vb || (va == vb && a < b);
                      });
    CorrespondenceSet set;
    set.level = Level::Superpoint;
    for (std::size_t r = 0; r < take; ++r)
        set.entries.push_back({order[r] / cols, order[r] % cols, value(order[r]), r});
    return set;
}

MatrixXd local_cost(const MatrixXd &p_features, const MatrixXd &q_features, double dim) {
    if (p_features.cols() != q_features.cols()) throw InvalidArgument("local_cost: feature widths differ");
    if (!(dim > 0.0)) throw InvalidArgument("local_cost: dimension must be positive");
    return p_features * q_features.transpose() / std::sqrt(dim);
}

namespace {

double log_sum_exp(const Eigen::Ref<const Eigen::ArrayXd> &v) {
    const double top = v.maxCoeff();
    if (!std::isfinite(top)) return top;
    return top + std::log((v - top).exp().sum());
}

}  // namespace

double marginal_violation(const AssignmentMatrix &assignment) {
    const auto &a = assignment.values;
    const Index m = assignment.rows(), n = assignment.cols();
    double worst = 0.0;
    for (Index i = 0; i < m; ++i) worst = std::max(worst, std::abs(a.row(i).sum() - 1.0));
    for (Index j = 0; j < n; ++j) worst = std::max(worst, std::abs(a.col(j).sum() - 1.0));
    return worst;
}

AssignmentMatrix sinkhorn(const MatrixXd &cost, int iterations, double slack_score,
                          std::vector<double> *violation_trace) {
    if (iterations < 1) throw InvalidArgument("sinkhorn: iterations must be >= 1");
    if (!cost.allFinite() || !std::isfinite(slack_score)) throw InvalidArgument("sinkhorn: non-finite cost");
    const Index m = cost.rows(), n = cost.cols();
    Eigen::ArrayXXd z = Eigen::ArrayXXd::Constant(m + 1, n + 1, slack_score);
    z.topLeftCorner(m, n) = cost.array();

    Eigen::ArrayXd log_mu = Eigen::ArrayXd::Zero(m + 1);
    Eigen::ArrayXd log_nu = Eigen::ArrayXd::Zero(n + 1);
    log_mu(m) = std::log(static_cast<double>(std::max<Index>(n, 1)));
    log_nu(n) = std::log(static_cast<double>(std::max<Index>(m, 1)));
    Eigen::ArrayXd u = Eigen::ArrayXd::Zero(m + 1);
    Eigen::ArrayXd v = Eigen::ArrayXd::Zero(n + 1);

    AssignmentMatrix out;
    if (violation_trace) violation_trace->clear();
    for (int it = 0; it < iterations; ++it) {
        for (Index i = 0; i <= m; ++i) u(i) = log_mu(i) - log_sum_exp(z.row(i).transpose() + v);
        for (Index j = 0; j <= n; ++j) v(j) = log_nu(j) - log_sum_exp(z.col(j) + u);
        if (violation_trace) {
            out.values = (z.colwise() + u).rowwise() + v.transpose();
            out.values = out.values.array().exp().matrix();
            violation_trace->push_back(marginal_violation(out));
        }
    }
    out.values = ((z.colwise() + u).rowwise() + v.transpose()).exp().matrix();
    return out;
}

CorrespondenceSet mutual_topk(const AssignmentMatrix &assignment, std::size_t k) {
    if (k == 0) throw InvalidArgument("mutual_topk: k must be >= 1");
    const auto &a = assignment.values;
    const Index m = assignment.rows(), n = assignment.cols();
    // Rank of each entry within its row / column, ties to lower index.
    auto in_row_topk = [&](Index i, Index j) {
        std::size_t better = 0;
        for (Index c = 0; c < n && better < k; ++c)
            if (a(i, c) > a(i, j) || (a(i, c) == a(i, j) && c < j)) ++better;
        return better < k;
    };
    auto in_col_topk = [&](Index i, Index j) {
        std::size_t better = 0;
        for (Index r = 0; r < m && better < k; ++r)
            if (a(r, j) > a(i, j) || (a(r, j) == a(i, j) && r < i)) ++better;
        return better < k;
    };
    CorrespondenceSet set;
    set.level = Level::Point;
    for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < n; ++j)
            if (in_row_topk(i, j) && in_col_topk(i, j))
                set.entries.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), a(i, j), 0});
    return set;
}

CorrespondenceSet collect_dense(const CorrespondenceSet &coarse, const GroupAssignment &groups_p,
                                const GroupAssignment &groups_q, const MatrixXd &dense_p, const MatrixXd &dense_q,
                                const DenseMatchOptions &options) {
    if (dense_p.cols() != dense_q.cols()) throw InvalidArgument("collect_dense: feature widths differ");
    CorrespondenceSet out;
    out.level = Level::Point;
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> seen;
    const double dim = static_cast<double>(dense_p.cols());
    for (std::size_t c = 0; c < coarse.size(); ++c) {
        const Correspondence &pair = coarse.entries[c];
        if (pair.i >= groups_p.groups.size() || pair.j >= groups_q.groups.size())
            throw InvalidArgument("collect_dense: superpoint index out of range");
        const auto &gp = groups_p.groups[pair.i];
        const auto &gq = groups_q.groups[pair.j];
        if (gp.empty() || gq.empty()) continue;
        MatrixXd fp(static_cast<Index>(gp.size()), dense_p.cols());
        MatrixXd fq(static_cast<Index>(gq.size()), dense_q.cols());
        for (std::size_t r = 0; r < gp.size(); ++r) fp.row(static_cast<Index>(r)) = dense_p.row(static_cast<Index>(gp[r]));
        for (std::size_t r = 0; r < gq.size(); ++r) fq.row(static_cast<Index>(r)) = dense_q.row(static_cast<Index>(gq[r]));
        const AssignmentMatrix assignment =
            sinkhorn(local_cost(fp, fq, dim), options.sinkhorn_iterations, options.slack_score);
        for (const Correspondence &local : mutual_topk(assignment, options.k_f).entries) {
            const std::size_t gi = gp[local.i], gj = gq[local.j];
            const auto [it, inserted] = seen.try_emplace({gi, gj}, out.entries.size());
            if (inserted) {
                out.entries.push_back({gi, gj, local.score, c});
            } else if (local.score > out.entries[it->second].score) {
                out.entries[it->second].score = local.score;
                out.entries[it->second].group = c;
            }
        }
    }
    return out;
}

std::string to_string(Level level) { return level == Level::Superpoint ? "superpoint" : "point"; }

void write_jsonl(std::ostream &out, const CorrespondenceSet &set) {
    for (const Correspondence &c : set.entries) {
        nlohmann::ordered_json j;
        j["level"] = to_string(set.level);
        j["i"] = c.i;
        j["j"] = c.j;
        j["score"] = c.score;
        out << j.dump() << "\n";
    }
}

}  // namespace ugp::matching
