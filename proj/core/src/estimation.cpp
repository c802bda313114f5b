#include "ugp/estimation.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <optional>

#include "ugp/errors.hpp"
#include "ugp/rng.hpp"

namespace ugp::estimation {

void validate(const EstimationConfig &config) {
    if (!(config.acceptance_radius > 0.0) || !(config.inlier_radius > 0.0))
        throw InvalidArgument("estimation: radii must be positive");
    if (config.refinement_iterations < 1 || config.ransac_iterations < 1)
        throw InvalidArgument("estimation: iteration counts must be >= 1");
    if (config.min_group_size < 3) throw InvalidArgument("estimation: groups need at least 3 correspondences");
}

namespace {

void check_indices(const matching::CorrespondenceSet &set, const Points &src, const Points &dst) {
    for (const auto &c : set.entries)
        if (c.i >= src.size() || c.j >= dst.size()) throw InvalidArgument("estimation: correspondence index out of range");
}

struct Fit {
    Points src, dst;
    std::vector<double> weights;
};

RigidTransform refit(const matching::CorrespondenceSet &set, const Points &src, const Points &dst,
                     const RigidTransform &current, const EstimationConfig &config) {
    Fit fit;
    const double r2 = config.acceptance_radius * config.acceptance_radius;
    for (const auto &c : set.entries) {
        if ((current.apply(src[c.i]) - dst[c.j]).squaredNorm() > r2) continue;
        fit.src.push_back(src[c.i]);
        fit.dst.push_back(dst[c.j]);
        fit.weights.push_back(config.score_weighted ? c.score : 1.0);
    }
    return weighted_kabsch(fit.src, fit.dst, fit.weights);
}

}  // namespace

std::size_t count_inliers(const matching::CorrespondenceSet &set, const Points &src, const Points &dst,
                          const RigidTransform &transform, double radius) {
    const double r2 = radius * radius;
    std::size_t count = 0;
    for (const auto &c : set.entries)
        if ((transform.apply(src[c.i]) - dst[c.j]).squaredNorm() <= r2) ++count;
    return count;
}

LgrTrace lgr_detailed(const matching::CorrespondenceSet &set, const Points &src, const Points &dst,
                      const EstimationConfig &config) {
    validate(config);
    check_indices(set, src, dst);
    std::map<std::size_t, Fit> groups;
    for (const auto &c : set.entries) {
        Fit &g = groups[c.group];
        g.src.push_back(src[c.i]);
        g.dst.push_back(dst[c.j]);
        g.weights.push_back(c.score);
    }

    LgrTrace trace;
    bool any_group = false;
    std::size_t best_count = 0;
    bool have_best = false;
    for (const auto &[group, fit] : groups) {
        if (fit.src.size() < config.min_group_size) continue;
        any_group = true;
        RigidTransform candidate;
        try {
            candidate = weighted_kabsch(fit.src, fit.dst, fit.weights);
        } catch (const EstimationError &) {
            continue;
        }
        ++trace.candidates;
        const std::size_t count = count_inliers(set, src, dst, candidate, config.acceptance_radius);
        if (!have_best || count > best_count) {
            have_best = true;
            best_count = count;
            trace.transform = candidate;
            trace.selected_group = group;
        }
    }
    if (!any_group) throw EstimationError("lgr: insufficient correspondences");
    if (!have_best) throw EstimationError("lgr: every candidate is rank deficient");

    trace.inlier_counts.push_back(best_count);
    for (int round = 0; round < config.refinement_iterations; ++round) {
        RigidTransform next;
        try {
            next = refit(set, src, dst, trace.transform, config);
        } catch (const EstimationError &) {
            break;
        }
        const std::size_t count = count_inliers(set, src, dst, next, config.acceptance_radius);
        if (count < trace.inlier_counts.back()) break;
        trace.transform = next;
        trace.inlier_counts.push_back(count);
    }
    return trace;
}

RigidTransform lgr(const matching::CorrespondenceSet &set, const Points &src, const Points &dst,
                   const EstimationConfig &config) {
    return lgr_detailed(set, src, dst, config).transform;
}

namespace {

struct Hypothesis {
    std::size_t score = 0;
    RigidTransform transform;
};

struct Consensus {
    std::size_t inliers = 0;
    std::size_t groups = 0;
    // group support first when requested, inlier count breaks ties
    [[nodiscard]] std::pair<std::size_t, std::size_t> key(bool by_groups) const {
        return by_groups ? std::pair{groups, inliers} : std::pair{inliers, std::size_t{0}};
    }
};

Consensus consensus(const matching::CorrespondenceSet &set, const Points &src, const Points &dst,
                    const RigidTransform &t, double radius, std::vector<std::uint8_t> &seen) {
    const double r2 = radius * radius;
    std::fill(seen.begin(), seen.end(), 0);
    Consensus c;
    for (const auto &e : set.entries) {
        if ((t.apply(src[e.i]) - dst[e.j]).squaredNorm() > r2) continue;
        ++c.inliers;
        if (e.group < seen.size() && !seen[e.group]) {
            seen[e.group] = 1;
            ++c.groups;
        }
    }
    return c;
}

std::optional<RigidTransform> inlier_refit(const matching::CorrespondenceSet &set, const Points &src,
                                           const Points &dst, const RigidTransform &t, double radius) {
    Points fs, fd;
    const double r2 = radius * radius;
    for (const auto &c : set.entries) {
        if ((t.apply(src[c.i]) - dst[c.j]).squaredNorm() > r2) continue;
        fs.push_back(src[c.i]);
        fd.push_back(dst[c.j]);
    }
    if (fs.size() < 3) return std::nullopt;
    try {
        return kabsch(fs, fd);
    } catch (const EstimationError &) {
        return std::nullopt;
    }
}

bool near(const RigidTransform &a, const RigidTransform &b) {
    return a.rotation().isApprox(b.rotation(), 1e-2) && (a.translation() - b.translation()).norm() < 1.0;
}

}  // namespace

std::size_t overlap_count(const Points &src, const GridIndex &dst_index, const RigidTransform &transform,
                          double radius, std::size_t stride) {
    if (stride == 0) throw InvalidArgument("overlap_count: stride must be >= 1");
    std::size_t count = 0;
    for (std::size_t k = 0; k < src.size(); k += stride)
        if (dst_index.radius_count(transform.apply(src[k]), radius) > 0) ++count;
    return count;
}

RigidTransform ransac(const matching::CorrespondenceSet &set, const Points &src, const Points &dst,
                      const EstimationConfig &config, const VerificationClouds *verification) {
    validate(config);
    check_indices(set, src, dst);
    const std::size_t n = set.size();
    if (n < 3) throw EstimationError("ransac: insufficient correspondences");

    std::size_t group_bound = 0;
    std::map<std::size_t, std::vector<std::size_t>> members;
    for (std::size_t k = 0; k < n; ++k) {
        members[set.entries[k].group].push_back(k);
        group_bound = std::max(group_bound, set.entries[k].group + 1);
    }
    std::vector<std::uint8_t> seen(group_bound, 0);
    const bool by_groups = config.ransac_group_consensus;
    const bool verify = verification != nullptr && config.verification_pool > 0;

    Rng rng(config.seed, "ransac");
    std::optional<RigidTransform> best;
    Consensus best_score;
    std::vector<Hypothesis> pool;
    std::array<Vec3, 3> s, d;
    for (std::size_t it = 0; it < config.ransac_iterations; ++it) {
        std::array<std::size_t, 3> pick{};
        pick[0] = rng.below(n);
        const auto &local = members[set.entries[pick[0]].group];
        if (config.ransac_local_sampling && local.size() >= 3) {
            do pick[1] = local[rng.below(local.size())]; while (pick[1] == pick[0]);
            do pick[2] = local[rng.below(local.size())]; while (pick[2] == pick[0] || pick[2] == pick[1]);
        } else {
            do pick[1] = rng.below(n); while (pick[1] == pick[0]);
            do pick[2] = rng.below(n); while (pick[2] == pick[0] || pick[2] == pick[1]);
        }
        for (std::size_t k = 0; k < 3; ++k) {
            s[k] = src[set.entries[pick[k]].i];
            d[k] = dst[set.entries[pick[k]].j];
        }
        RigidTransform model;
        try {
            model = kabsch(s, d);
        } catch (const EstimationError &) {
            continue;
        }
        Consensus score = consensus(set, src, dst, model, config.inlier_radius, seen);
        // local optimization: refit promising samples on their own inliers
        const bool promising = by_groups ? score.groups * 2 > best_score.groups : score.inliers * 2 > best_score.inliers;
        if (config.ransac_local_optimization && best && promising) {
            for (int round = 0; round < 3; ++round) {
                const auto next = inlier_refit(set, src, dst, model, config.inlier_radius);
                if (!next) break;
                const Consensus refined = consensus(set, src, dst, *next, config.inlier_radius, seen);
                if (refined.key(by_groups) <= score.key(by_groups)) break;
                model = *next;
                score = refined;
            }
        }
        if (!best || score.key(by_groups) > best_score.key(by_groups)) {
            best = model;
            best_score = score;
        }
        if (verify) {
            const std::size_t rank = by_groups ? score.groups * (n + 1) + score.inliers : score.inliers;
            auto dup = std::find_if(pool.begin(), pool.end(), [&](const Hypothesis &h) { return near(h.transform, model); });
            if (dup != pool.end()) {
                if (rank > dup->score) *dup = {rank, model};
            } else {
                pool.push_back({rank, model});
            }
            std::stable_sort(pool.begin(), pool.end(), [](const Hypothesis &a, const Hypothesis &b) { return a.score > b.score; });
            if (pool.size() > config.verification_pool) pool.pop_back();
        }
    }
    if (!best) throw EstimationError("ransac: every sample was degenerate");

    if (verify && !pool.empty()) {
        const GridIndex index(verification->dst, config.inlier_radius);
        std::size_t best_overlap = 0;
        for (const Hypothesis &h : pool) {
            const std::size_t overlap = overlap_count(verification->src, index, h.transform, config.inlier_radius, 2);
            if (overlap > best_overlap) {
                best_overlap = overlap;
                best = h.transform;
            }
        }
    }
    return inlier_refit(set, src, dst, *best, config.inlier_radius).value_or(*best);
}

}  // namespace ugp::estimation
