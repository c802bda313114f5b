#include "ugp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "ugp/errors.hpp"

namespace ugp::eval {

namespace {

bool groups_touch(const std::vector<std::size_t> &gp, const std::vector<std::size_t> &gq, const Points &dense_p,
                  const Points &dense_q, const RigidTransform &gt, double tau2) {
    for (std::size_t a : gp) {
        const Vec3 p = gt.apply(dense_p[a]);
        for (std::size_t b : gq)
            if ((p - dense_q[b]).squaredNorm() < tau2) return true;
    }
    return false;
}

}  // namespace

double pir(const matching::CorrespondenceSet &matches, const GroupAssignment &groups_p,
           const GroupAssignment &groups_q, const Points &dense_p, const Points &dense_q,
           const RigidTransform &gt, double tau) {
    if (matches.empty()) throw InvalidArgument("pir: no matches to score");
    const double tau2 = tau * tau;
    std::size_t hits = 0;
    for (const auto &m : matches.entries) {
        if (m.i >= groups_p.groups.size() || m.j >= groups_q.groups.size())
            throw InvalidArgument("pir: superpoint index out of range");
        if (groups_touch(groups_p.groups[m.i], groups_q.groups[m.j], dense_p, dense_q, gt, tau2)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(matches.size());
}

double ir(const matching::CorrespondenceSet &set, const Points &dense_p, const Points &dense_q,
          const RigidTransform &gt, double tau1) {
    if (set.empty()) throw InvalidArgument("ir: no correspondences to score");
    const double tau2 = tau1 * tau1;
    std::size_t hits = 0;
    for (const auto &c : set.entries) {
        if (c.i >= dense_p.size() || c.j >= dense_q.size()) throw InvalidArgument("ir: index out of range");
        if ((gt.apply(dense_p[c.i]) - dense_q[c.j]).squaredNorm() < tau2) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(set.size());
}

double rre(const Mat3 &r_est, const Mat3 &r_gt) {
    if (!RigidTransform::is_rotation(r_est, 1e-6) || !RigidTransform::is_rotation(r_gt, 1e-6))
        throw InvalidArgument("rre: invalid rotation");
    const Mat3 d = r_est.transpose() * r_gt;
    const double c = std::clamp((d.trace() - 1.0) / 2.0, -1.0, 1.0);
    const Vec3 axis(d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1));
    const double s = std::min(1.0, axis.norm() / 2.0);
    return std::atan2(s, c) * 180.0 / std::numbers::pi;
}

double rte(const Vec3 &t_est, const Vec3 &t_gt) { return (t_est - t_gt).norm(); }

bool rr_success(double rre_deg, double rte_m, const Thresholds &thresholds) {
    return rre_deg < thresholds.rre_deg && rte_m < thresholds.rte_m;
}

void score_transform(MetricReport &report, const RigidTransform &estimate, const RigidTransform &gt,
                     const Thresholds &thresholds) {
    report.rre = rre(estimate.rotation(), gt.rotation());
    report.rte = rte(estimate.translation(), gt.translation());
    report.rr_success = rr_success(report.rre, report.rte, thresholds);
}

RecallSummary rr_and_mrr(const std::map<int, std::vector<PairOutcome>> &by_class) {
    std::map<int, double> rates;
    for (const auto &[cls, outcomes] : by_class) {
        if (outcomes.empty()) throw InvalidArgument("rr_and_mrr: empty distance class");
        std::size_t ok = 0;
        for (const auto &o : outcomes) ok += o.rr_success ? 1 : 0;
        rates[cls] = static_cast<double>(ok) / static_cast<double>(outcomes.size());
    }
    return rr_and_mrr(rates);
}

RecallSummary rr_and_mrr(const std::map<int, double> &per_class_rr) {
    if (per_class_rr.empty()) throw InvalidArgument("rr_and_mrr: no distance classes");
    RecallSummary out;
    out.per_class = per_class_rr;
    double sum = 0.0;
    for (const auto &[cls, rate] : per_class_rr) sum += rate;
    out.mrr = sum / static_cast<double>(per_class_rr.size());
    return out;
}

ErrorSummary starred_errors(const std::vector<PairOutcome> &outcomes) {
    if (outcomes.empty()) throw InvalidArgument("starred_errors: no outcomes");
    ErrorSummary s;
    double rre_ok = 0.0, rte_ok = 0.0;
    std::size_t ok = 0;
    for (const auto &o : outcomes) {
        s.rre_star += o.rre;
        s.rte_star += o.rte;
        if (o.rr_success) {
            rre_ok += o.rre;
            rte_ok += o.rte;
            ++ok;
        }
    }
    const auto n = static_cast<double>(outcomes.size());
    s.rre_star /= n;
    s.rte_star /= n;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.rre = ok ? rre_ok / static_cast<double>(ok) : nan;
    s.rte = ok ? rte_ok / static_cast<double>(ok) : nan;
    return s;
}

double overlap_degree(const Points &group_p, const Points &group_q, const RigidTransform &gt, double tau) {
    if (group_p.empty() || group_q.empty()) return 0.0;
    const double tau2 = tau * tau;
    std::size_t hits = 0;
    for (const Vec3 &p : group_p) {
        const Vec3 x = gt.apply(p);
        for (const Vec3 &q : group_q)
            if ((x - q).squaredNorm() < tau2) {
                ++hits;
                break;
            }
    }
    return static_cast<double>(hits) / static_cast<double>(group_p.size());
}

}  // namespace ugp::eval
