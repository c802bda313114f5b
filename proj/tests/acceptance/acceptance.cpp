// Acceptance criteria 1-11. One PASS/FAIL line per criterion; exit status 1 if any fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <quadmath.h>
#include <unistd.h>

#include "ugp/attention.hpp"
#include "ugp/estimation.hpp"
#include "ugp/eval.hpp"
#include "ugp/ingest.hpp"
#include "ugp/matching.hpp"
#include "ugp/pipeline.hpp"
#include "ugp/rng.hpp"
#include "ugp_cli/commands.hpp"

#include <spdlog/spdlog.h>

namespace fs = std::filesystem;
using namespace ugp;

namespace {

int failures = 0;

void report(int id, const char *name, bool pass, const std::string &detail) {
    std::printf("[%s] %2d %s: %s\n", pass ? "PASS" : "FAIL", id, name, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char *f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Points random_points(Rng &rng, std::size_t n, double extent) {
    Points p(n);
    for (auto &v : p) v = Vec3(rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-extent, extent));
    return p;
}

RigidTransform random_transform(Rng &rng, double max_angle, double max_t) {
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    return RigidTransform::from_axis_angle(axis, rng.uniform(-max_angle, max_angle),
                                           Vec3(rng.uniform(-max_t, max_t), rng.uniform(-max_t, max_t),
                                                rng.uniform(-max_t, max_t)));
}

Eigen::MatrixXd random_matrix(Rng &rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
    return m;
}

// ---------------------------------------------------------------------------

void criterion_masks() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(1, "acceptance-masks");
    constexpr int S = 3;
    std::size_t bad = 0, ties = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + rng.below(64);
        PointCloud cloud;
        // every other set sits on an integer lattice so that d_ij == k d_max / S happens exactly
        if (trial % 2 == 0) {
            cloud.points = random_points(rng, n, 30.0);
        } else {
            for (std::size_t i = 0; i < n; ++i)
                cloud.points.emplace_back(static_cast<double>(rng.below(10)), static_cast<double>(rng.below(4)), 0.0);
        }
        const auto stack = attention::build_mask_stack(cloud, S);
        if (stack.depth() != S) ++bad;
        for (std::size_t i = 0; i < n; ++i) {
            double dmax = 0.0;
            for (std::size_t j = 0; j < n; ++j) dmax = std::max(dmax, (cloud[i] - cloud[j]).norm());
            for (std::size_t j = 0; j < n; ++j) {
                const double d = (cloud[i] - cloud[j]).norm();
                for (int k = 1; k <= S; ++k) {
                    // exact in binary128: both products fit in 113 bits
                    const __float128 lhs = static_cast<__float128>(d) * S;
                    const __float128 rhs = static_cast<__float128>(dmax) * k;
                    const bool expected = lhs <= rhs;
                    if (lhs == rhs && k < S && d > 0.0) ++ties;
                    const auto &m = stack.layers[static_cast<std::size_t>(k - 1)];
                    const bool got = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) != 0;
                    if (got != expected) ++bad;
                    if (k < S && got && !stack.layers[static_cast<std::size_t>(k)](static_cast<Eigen::Index>(i),
                                                                                     static_cast<Eigen::Index>(j)))
                        ++bad;  // not nested
                }
                if (i == j && !stack.layers[0](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) ++bad;
                if (!stack.layers[S - 1](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) ++bad;
            }
        }
    }
    const double secs = seconds_since(t0);
    report(1, "mask correctness", bad == 0 && secs < 5.0,
           fmt("500 sets, %zu mismatches, %zu exact boundary ties checked, %.2f s (limit 5 s)", bad, ties, secs));
}

void criterion_masking_fidelity() {
    Rng rng(2, "acceptance-fidelity");
    std::size_t not_bitwise = 0;
    double worst_core = 0.0, worst_layer = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.below(24);
        const std::size_t d = 2 * (1 + rng.below(12));
        PointCloud cloud(random_points(rng, n, 20.0));
        const auto params = attention::AttentionParams::init(d, 1, 100 + trial).layers[0];
        const attention::GeometricEmbedding emb(cloud, 4.8, d);
        const Eigen::MatrixXd x = random_matrix(rng, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));

        const attention::Mask ones = attention::Mask::Ones(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        const Eigen::MatrixXd masked = attention::attention_layer(x, &ones, emb, params);
        const Eigen::MatrixXd plain = attention::attention_layer(x, nullptr, emb, params);
        if (!(masked.array() == plain.array()).all()) ++not_bitwise;

        attention::Mask diag = attention::Mask::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        diag.diagonal().setOnes();
        const Eigen::MatrixXd xv = x * params.wv;
        worst_core = std::max(worst_core, (attention::attention_core(x, &diag, emb, params) - xv).cwiseAbs().maxCoeff());
        const Eigen::MatrixXd expected = attention::sublayer(x, xv, params);
        worst_layer =
            std::max(worst_layer, (attention::attention_layer(x, &diag, emb, params) - expected).cwiseAbs().maxCoeff());
    }
    report(2, "masking fidelity", not_bitwise == 0 && worst_core <= 1e-12 && worst_layer <= 1e-12,
           fmt("all-ones vs unmasked: %zu/50 differ bitwise; diagonal: max |z - xW^V| %.2e, layer %.2e (limit 1e-12)",
               not_bitwise, worst_core, worst_layer));
}

// Binary128 forward pass of one layer, the finite-difference oracle. With
// two channels layer norm bends on a sqrt(eps) scale, which leaves no step
// size that double or long double differences resolve.
using Q = __float128;

struct MatQ {
    std::size_t rows = 0, cols = 0;
    std::vector<Q> v;

    MatQ() = default;
    MatQ(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0) {}
    explicit MatQ(const Eigen::MatrixXd &m) : MatQ(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())) {
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) (*this)(i, j) = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    Q &operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
    Q operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

MatQ mul(const MatQ &a, const MatQ &b) {
    MatQ c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t k = 0; k < a.cols; ++k)
            for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += a(i, k) * b(k, j);
    return c;
}

struct LayerQ {
    MatQ wq, wk, wv, wr, w1, b1, w2, b2, g1, c1, g2, c2;
};

LayerQ widen(const attention::LayerParams &p) {
    return {MatQ(p.wq),       MatQ(p.wk),       MatQ(p.wv),       MatQ(p.wr),       MatQ(p.w1),       MatQ(p.b1),
            MatQ(p.w2),       MatQ(p.b2),       MatQ(p.ln1_gain), MatQ(p.ln1_bias), MatQ(p.ln2_gain), MatQ(p.ln2_bias)};
}

MatQ layer_norm(const MatQ &s, const MatQ &gain, const MatQ &bias) {
    MatQ out(s.rows, s.cols);
    const Q d = static_cast<Q>(s.cols);
    for (std::size_t i = 0; i < s.rows; ++i) {
        Q mean = 0, var = 0;
        for (std::size_t j = 0; j < s.cols; ++j) mean += s(i, j);
        mean /= d;
        for (std::size_t j = 0; j < s.cols; ++j) var += (s(i, j) - mean) * (s(i, j) - mean);
        const Q inv = 1 / sqrtq(var / d + static_cast<Q>(1e-5));
        for (std::size_t j = 0; j < s.cols; ++j) out(i, j) = (s(i, j) - mean) * inv * gain(0, j) + bias(0, j);
    }
    return out;
}

struct Projection {
    MatQ q, k, v, g;  // g = q W^R^T, so q_i . (r_ij W^R) = r_ij . g_i
};

Projection project(const MatQ &x, const LayerQ &p) {
    Projection r{mul(x, p.wq), mul(x, p.wk), mul(x, p.wv), MatQ(x.rows, x.cols)};
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t c = 0; c < x.cols; ++c)
            for (std::size_t a = 0; a < x.cols; ++a) r.g(i, c) += r.q(i, a) * p.wr(c, a);
    return r;
}

MatQ finish(const MatQ &x, const Projection &pr, const LayerQ &p, const attention::GeometricEmbedding &emb,
            const attention::Mask *mask) {
    const std::size_t n = x.rows, d = x.cols;
    const MatQ &q = pr.q, &k = pr.k, &v = pr.v, &g = pr.g;
    MatQ s1 = x;
    std::vector<Q> e(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
        Q top = -HUGE_VALQ, sum = 0;
        const auto admitted = [&](std::size_t j) {
            return !mask || (*mask)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) != 0;
        };
        for (std::size_t j = 0; j < n; ++j) {
            const auto r = emb.at(i, j);
            Q dot = 0;
            for (std::size_t a = 0; a < d; ++a) dot += q(i, a) * k(j, a) + static_cast<Q>(r(static_cast<Eigen::Index>(a))) * g(i, a);
            e[j] = dot / sqrtq(static_cast<Q>(d));
            if (admitted(j) && e[j] > top) top = e[j];
        }
        for (std::size_t j = 0; j < n; ++j) sum += w[j] = admitted(j) ? expq(e[j] - top) : 0;
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t a = 0; a < d; ++a) s1(i, a) += w[j] / sum * v(j, a);
    }
    const MatQ y1 = layer_norm(s1, p.g1, p.c1);
    MatQ h = mul(y1, p.w1);
    for (std::size_t i = 0; i < h.rows; ++i)
        for (std::size_t j = 0; j < h.cols; ++j) {
            const Q u = h(i, j) + p.b1(0, j);
            h(i, j) = u / 2 * (1 + erfq(u / sqrtq(static_cast<Q>(2))));
        }
    MatQ s2 = mul(h, p.w2);
    for (std::size_t i = 0; i < s2.rows; ++i)
        for (std::size_t j = 0; j < s2.cols; ++j) s2(i, j) += y1(i, j) + p.b2(0, j);
    return layer_norm(s2, p.g2, p.c2);
}

void criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(3, "acceptance-gradients");
    double worst = 0.0, worst_forward = 0.0, worst_zero = 0.0;
    std::array<double, 2> worst_double{};  // plain double differences on the library: d >= 4, d == 2
    std::size_t zero_tensors = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(7);
        const std::size_t d = 2 * (1 + rng.below(8));
        PointCloud cloud(random_points(rng, n, 10.0));
        const auto params = attention::AttentionParams::init(d, 1, 500 + trial).layers[0];
        const attention::GeometricEmbedding emb(cloud, 4.8, d);
        const auto masks = attention::build_mask_stack(cloud, 3);
        const attention::Mask *mask = trial % 2 == 0 ? &masks.layers[0] : nullptr;
        const Eigen::MatrixXd x = random_matrix(rng, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
        const Eigen::MatrixXd g = random_matrix(rng, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));

        attention::LayerCache cache;
        const Eigen::MatrixXd out = attention::attention_layer(x, mask, emb, params, {}, &cache);
        const auto grads = attention::attention_layer_backward(cache, g, mask, emb, params);

        const LayerQ wide = widen(params);
        const MatQ xq(x);
        const MatQ gq(g);
        const Projection base = project(xq, wide);
        const MatQ reference = finish(xq, base, wide, emb, mask);
        for (std::size_t k = 0; k < reference.v.size(); ++k)
            worst_forward = std::max(worst_forward, std::abs(static_cast<double>(reference.v[k]) -
                                                             out(static_cast<Eigen::Index>(k / d), static_cast<Eigen::Index>(k % d))));
        const auto loss = [&](const MatQ &input, const Projection &pr) {
            const MatQ o = finish(input, pr, wide, emb, mask);
            Q l = 0;
            for (std::size_t k = 0; k < o.v.size(); ++k) l += o.v[k] * gq.v[k];
            return l;
        };
        // loss with entry (i, j) of one tensor moved by `delta`; weight moves are rank-1 updates of the projection
        enum Tensor { X, WQ, WK, WV, WR };
        const auto shifted = [&](Tensor t, std::size_t i, std::size_t j, Q delta) {
            if (t == X) {
                MatQ moved = xq;
                moved(i, j) += delta;
                return loss(moved, project(moved, wide));
            }
            Projection pr = base;
            for (std::size_t r = 0; r < n; ++r) {
                const Q dx = delta * xq(r, i);
                if (t == WQ) {
                    pr.q(r, j) += dx;
                    for (std::size_t c = 0; c < d; ++c) pr.g(r, c) += dx * wide.wr(c, j);
                } else if (t == WK) {
                    pr.k(r, j) += dx;
                } else if (t == WV) {
                    pr.v(r, j) += dx;
                } else {
                    pr.g(r, i) += delta * base.q(r, j);  // g = q W^R^T
                }
            }
            return loss(xq, pr);
        };
        // the same differences in double precision, straight through the library's forward pass
        attention::LayerParams pd = params;
        Eigen::MatrixXd xd = x;
        const auto double_check = [&](Eigen::MatrixXd &target, const Eigen::MatrixXd &analytic) {
            const auto loss_d = [&] { return (attention::attention_layer(xd, mask, emb, pd).array() * g.array()).sum(); };
            Eigen::MatrixXd numeric(target.rows(), target.cols());
            constexpr double h = 1e-6;
            for (Eigen::Index i = 0; i < target.size(); ++i) {
                const double keep = target.data()[i];
                target.data()[i] = keep + h;
                const double up = loss_d();
                target.data()[i] = keep - h;
                const double down = loss_d();
                target.data()[i] = keep;
                numeric.data()[i] = (up - down) / (2 * h);
            }
            if (analytic.isZero(0.0)) return;
            double &w = worst_double[d == 2 ? 1 : 0];
            w = std::max(w, (analytic - numeric).norm() / std::max(analytic.norm(), numeric.norm()));
        };
        double_check(xd, grads.x);
        double_check(pd.wq, grads.wq);
        double_check(pd.wk, grads.wk);
        double_check(pd.wv, grads.wv);
        double_check(pd.wr, grads.wr);

        const auto check = [&](Tensor t, const Eigen::MatrixXd &analytic) {
            Eigen::MatrixXd numeric(analytic.rows(), analytic.cols());
            const Q h = static_cast<Q>(1e-9);
            for (Eigen::Index i = 0; i < analytic.rows(); ++i)
                for (Eigen::Index j = 0; j < analytic.cols(); ++j) {
                    const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
                    numeric(i, j) = static_cast<double>((shifted(t, ui, uj, h) - shifted(t, ui, uj, -h)) / (2 * h));
                }
            if (analytic.isZero(0.0)) {
                // identically zero (e.g. every admitted row is a singleton); only the oracle's noise is left
                ++zero_tensors;
                worst_zero = std::max(worst_zero, numeric.norm());
                return;
            }
            worst = std::max(worst, (analytic - numeric).norm() / std::max(analytic.norm(), numeric.norm()));
        };
        check(X, grads.x);
        check(WQ, grads.wq);
        check(WK, grads.wk);
        check(WV, grads.wv);
        check(WR, grads.wr);
    }
    const double secs = seconds_since(t0);
    // with d = 2 layer norm saturates and the true gradients sit at the rounding floor of double differences
    report(3, "gradient check",
           worst < 1e-4 && worst_double[0] < 1e-4 && worst_zero < 1e-12 && worst_forward < 1e-12 && secs < 60.0,
           fmt("100 instances (n <= 8, even d <= 16): worst relative error %.2e against binary128 central differences "
               "(forward agrees to %.1e), %.2e against double central differences for d >= 4 (limit 1e-4); "
               "d = 2 double differences %.2e (ill-conditioned, reported); %zu identically zero tensors, oracle norm "
               "<= %.1e (limit 1e-12); %.2f s (limit 60 s)",
               worst, worst_forward, worst_double[0], worst_double[1], zero_tensors, worst_zero, secs));
}

void criterion_sinkhorn() {
    Rng rng(4, "acceptance-sinkhorn");
    double worst = 0.0;
    std::size_t increases = 0;
    double worst_increase = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const auto rows = static_cast<Eigen::Index>(1 + rng.below(64));
        const auto cols = static_cast<Eigen::Index>(1 + rng.below(64));
        const Eigen::MatrixXd cost = random_matrix(rng, rows, cols, rng.uniform(0.1, 3.0));
        std::vector<double> trace;
        const auto a = matching::sinkhorn(cost, 100, rng.uniform(-1.0, 1.0), &trace);
        Eigen::MatrixXd real = a.values.topLeftCorner(rows, cols + 1);
        double v = (real.rowwise().sum().array() - 1.0).abs().maxCoeff();
        real = a.values.topLeftCorner(rows + 1, cols);
        v = std::max(v, (real.colwise().sum().array() - 1.0).abs().maxCoeff());
        worst = std::max(worst, v);
        // a marginal sum of w + 1 terms near 1 carries up to (w + 1) eps of rounding
        const double floor = static_cast<double>(std::max(rows, cols) + 1) * std::numeric_limits<double>::epsilon();
        for (std::size_t k = 2; k < trace.size(); ++k)
            if (trace[k] > trace[k - 1] + floor) {
                ++increases;
            }
        for (std::size_t k = 2; k < trace.size(); ++k) worst_increase = std::max(worst_increase, trace[k] - trace[k - 1]);
    }
    report(4, "sinkhorn marginals", worst <= 1e-6 && increases == 0,
           fmt("200 costs up to 64x64, max marginal error %.2e (limit 1e-6), %zu violation increases after sweep 1 "
               "beyond summation rounding (largest raw increase %.1e)",
               worst, increases, worst_increase));
}

void criterion_kabsch_lgr() {
    Rng rng(5, "acceptance-kabsch");
    double worst_rre = 0.0, worst_rte = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 3 + rng.below(60);
        const Points src = random_points(rng, n, 20.0);
        const RigidTransform gt = random_transform(rng, M_PI, 50.0);
        Points dst;
        for (const auto &p : src) dst.push_back(gt.apply(p));
        const RigidTransform est = kabsch(src, dst);
        worst_rre = std::max(worst_rre, eval::rre(est.rotation(), gt.rotation()));
        worst_rte = std::max(worst_rte, eval::rte(est.translation(), gt.translation()));
    }

    // 20 groups of 10; 6 exact groups, 14 outlier groups (70%)
    std::size_t good = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const RigidTransform gt = random_transform(rng, M_PI, 20.0);
        Points src, dst;
        matching::CorrespondenceSet set;
        set.level = matching::Level::Point;
        std::vector<std::size_t> order(20);
        for (std::size_t g = 0; g < 20; ++g) order[g] = g;
        for (std::size_t g = 19; g > 0; --g) std::swap(order[g], order[rng.below(g + 1)]);
        for (std::size_t slot = 0; slot < 20; ++slot) {
            const std::size_t g = order[slot];
            const bool inlier = slot < 6;
            const Vec3 center(rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(-3, 3));
            for (int k = 0; k < 10; ++k) {
                const Vec3 p = center + Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
                src.push_back(p);
                dst.push_back(inlier ? gt.apply(p)
                                     : Vec3(rng.uniform(-40, 40), rng.uniform(-40, 40), rng.uniform(-5, 5)));
                set.entries.push_back({src.size() - 1, dst.size() - 1, rng.uniform(0.2, 1.0), g});
            }
        }
        const RigidTransform est = estimation::lgr(set, src, dst);
        if (eval::rre(est.rotation(), gt.rotation()) < 0.1 && eval::rte(est.translation(), gt.translation()) < 0.01)
            ++good;
    }
    report(5, "kabsch/lgr exactness",
           worst_rre < 1e-6 && worst_rte < 1e-9 && good >= 198,
           fmt("kabsch worst RRE %.2e deg (limit 1e-6), RTE %.2e m (limit 1e-9); LGR at 70%% outliers %zu/200 "
               "within 0.1 deg / 0.01 m (need 198)",
               worst_rre, worst_rte, good));
}

void criterion_metrics() {
    Rng rng(6, "acceptance-metrics");
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t np = 2 + rng.below(199), nq = 2 + rng.below(199);
        const RigidTransform gt = random_transform(rng, 0.3, 2.0);
        Points p = random_points(rng, np, 5.0), q;
        for (std::size_t k = 0; k < nq; ++k) {
            const Vec3 base = k < np ? gt.apply(p[k]) : Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
            q.push_back(base + Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.5);
        }
        const std::size_t groups = 1 + rng.below(8);
        GroupAssignment gp, gq;
        gp.groups.resize(groups);
        gq.groups.resize(groups);
        for (std::size_t k = 0; k < np; ++k) gp.groups[rng.below(groups)].push_back(k);
        for (std::size_t k = 0; k < nq; ++k) gq.groups[rng.below(groups)].push_back(k);
        matching::CorrespondenceSet coarse, dense;
        for (std::size_t k = 0; k < 1 + rng.below(20); ++k)
            coarse.entries.push_back({rng.below(groups), rng.below(groups), 1.0, k});
        for (std::size_t k = 0; k < 1 + rng.below(200); ++k)
            dense.entries.push_back({rng.below(np), rng.below(nq), 1.0, 0});

        std::size_t pir_hits = 0;
        for (const auto &c : coarse.entries) {
            bool hit = false;
            for (const std::size_t a : gp.groups[c.i])
                for (const std::size_t b : gq.groups[c.j])
                    if ((gt.apply(p[a]) - q[b]).norm() < 0.6) hit = true;
            pir_hits += hit ? 1 : 0;
        }
        std::size_t ir_hits = 0;
        for (const auto &c : dense.entries) ir_hits += (gt.apply(p[c.i]) - q[c.j]).norm() < 1.0 ? 1 : 0;
        const double pir_ref = static_cast<double>(pir_hits) / static_cast<double>(coarse.size());
        const double ir_ref = static_cast<double>(ir_hits) / static_cast<double>(dense.size());
        if (eval::pir(coarse, gp, gq, p, q, gt, 0.6) != pir_ref) ++mismatches;
        if (eval::ir(dense, p, q, gt, 1.0) != ir_ref) ++mismatches;
    }

    const RigidTransform base = random_transform(rng, M_PI, 1.0);
    const Mat3 offset = Eigen::AngleAxisd(M_PI / 6.0, Vec3::UnitZ()).toRotationMatrix();
    const double rre30 = eval::rre(base.rotation() * offset, base.rotation());

    const double below5 = std::nextafter(5.0, 0.0), below2 = std::nextafter(2.0, 0.0);
    const bool flips = eval::rr_success(below5, 1.0) && !eval::rr_success(5.0, 1.0) && eval::rr_success(1.0, below2) &&
                       !eval::rr_success(1.0, 2.0);
    report(6, "metric oracles", mismatches == 0 && std::abs(rre30 - 30.0) <= 1e-9 && flips,
           fmt("PIR/IR vs double loop: %zu mismatches over 100 instances; 30 deg z-offset gives %.12f deg; RR flips at "
               "5 deg / 2 m: %s",
               mismatches, rre30, flips ? "yes" : "no"));
}

void criterion_mrr() {
    const auto s = eval::rr_and_mrr(std::map<int, double>{{10, 0.998}, {20, 0.993}, {30, 0.968}, {40, 0.820}});
    const double pct = 100.0 * s.mrr;
    report(7, "mRR arithmetic", std::abs(pct - 94.5) <= 0.05,
           fmt("mRR %.4f%% (94.5%% within rounding to one decimal)", pct));
}

struct E2E {
    std::size_t success = 0;
    std::vector<double> residual;
    double seconds = 0.0;
};

E2E run_synthetic(const PipelineConfig &config, const ingest::SynthScenario &scenario, std::size_t count) {
    const auto t0 = std::chrono::steady_clock::now();
    E2E out;
    for (std::size_t seed = 0; seed < count; ++seed) {
        const auto pair = ingest::synth_pair(seed, scenario);
        const auto result = register_pair(pair.a, pair.b, config);
        out.success += evaluate(result, pair.gt, config.thresholds).rr_success ? 1 : 0;
        out.residual.push_back(mean_residual(result, pair.gt));
    }
    out.seconds = seconds_since(t0);
    return out;
}

void criterion_same_pose() {
    const PipelineConfig config = load_config(fs::path(UGP_CONFIG_DIR) / "synthetic_same_pose.json");
    ingest::SynthScenario scenario;
    scenario.frame_rotation_deg = 30.0;
    scenario.frame_translation = 10.0;
    const E2E r = run_synthetic(config, scenario, 50);
    report(8, "same-pose synthetic", config.estimator.kind == EstimatorKind::Lgr && r.success == 50 && r.seconds < 300.0,
           fmt("RR %zu/50 with LGR, %.1f s (limit 300 s)", r.success, r.seconds));
}

void criterion_cross_distance() {
    PipelineConfig config = load_config(fs::path(UGP_CONFIG_DIR) / "synthetic_cross_distance.json");
    ingest::SynthScenario scenario;
    scenario.baseline_min = 20.0;
    scenario.baseline_max = 40.0;
    scenario.frame_rotation_deg = 30.0;
    scenario.frame_translation = 10.0;
    scenario.density_decay = 2.0;
    scenario.occlusion = true;
    config.attention.mask_mode = MaskMode::Progressive;
    const E2E progressive = run_synthetic(config, scenario, 50);
    config.attention.mask_mode = MaskMode::Full;
    const E2E full = run_synthetic(config, scenario, 50);
    std::size_t not_worse = 0;
    double mean_p = 0.0, mean_f = 0.0;
    for (std::size_t k = 0; k < 50; ++k) {
        not_worse += progressive.residual[k] <= full.residual[k] ? 1 : 0;
        mean_p += progressive.residual[k] / 50.0;
        mean_f += full.residual[k] / 50.0;
    }
    // the residual comparison is reported, not gated
    report(9, "cross-distance synthetic", progressive.success >= 45,
           fmt("RR %zu/50 (need 45); full-mask RR %zu/50; soft: progressive residual <= full in %zu/50 seeds "
               "(target 30, %s), mean residual %.3f vs %.3f m",
               progressive.success, full.success, not_worse, not_worse >= 30 ? "met" : "not met", mean_p, mean_f));
}

double clipped_normal_std(double sigma, double c) {
    const double phi = std::exp(-0.5 * c * c) / std::sqrt(2.0 * M_PI);
    const double tail = 0.5 * std::erfc(c / std::sqrt(2.0));  // 1 - Phi(c)
    return sigma * std::sqrt((1.0 - 2.0 * tail) - 2.0 * c * phi + 2.0 * c * c * tail);
}

void criterion_perturbation() {
    Rng rng(10, "acceptance-noise");
    PointCloud cloud;
    for (int k = 0; k < 100000; ++k) cloud.points.emplace_back(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-3, 3));
    const double sigma = 0.05;
    const PointCloud noisy = ingest::inject_noise(cloud, sigma, 7);
    double max_delta = 0.0;
    std::size_t out_of_band = 0;
    std::array<double, 3> sum{}, sq{};
    for (std::size_t k = 0; k < cloud.size(); ++k)
        for (int a = 0; a < 3; ++a) {
            // x + clamp(e) rounds monotonically, so it must land in [fl(x - 3 sigma), fl(x + 3 sigma)]
            const double x = cloud[k][a];
            if (noisy[k][a] < x - 3 * sigma || noisy[k][a] > x + 3 * sigma) ++out_of_band;
            const double d = noisy[k][a] - x;
            max_delta = std::max(max_delta, std::abs(d));
            sum[static_cast<std::size_t>(a)] += d;
            sq[static_cast<std::size_t>(a)] += d * d;
        }
    const double expected = clipped_normal_std(sigma, 3.0);
    double worst_rel = 0.0;
    const double n = static_cast<double>(cloud.size());
    for (std::size_t a = 0; a < 3; ++a) {
        const double mean = sum[a] / n;
        const double std = std::sqrt(sq[a] / n - mean * mean);
        worst_rel = std::max(worst_rel, std::abs(std - expected) / expected);
    }

    const PointCloud scan = ingest::synth_pair(0, {}).a;
    const PointCloud sparse = ingest::sparsify(scan, 5000, 11);
    std::set<std::tuple<double, double, double>> input;
    for (const auto &p : scan.points) input.emplace(p.x(), p.y(), p.z());
    std::size_t outside = 0;
    for (const auto &p : sparse.points) outside += input.contains({p.x(), p.y(), p.z()}) ? 0 : 1;

    report(10, "perturbation harness", out_of_band == 0 && worst_rel < 0.05 && sparse.size() == 5000 && outside == 0,
           fmt("sigma 0.05: %zu coordinates outside x +- 3 sigma (max |delta| %.6f m), std off closed form by %.2f%% (limit 5%%); sparsify "
               "%zu -> %zu points, %zu not in input",
               out_of_band, max_delta, 100.0 * worst_rel, scan.size(), sparse.size(), outside));
}

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

void criterion_determinism() {
    const fs::path root = fs::temp_directory_path() / fmt("ugp_acceptance_%d", static_cast<int>(::getpid()));
    fs::remove_all(root);
    cli::SynthOptions syn;
    syn.count = 4;
    syn.scenario.baseline_min = 20.0;
    syn.scenario.baseline_max = 40.0;
    syn.scenario.frame_rotation_deg = 30.0;
    syn.scenario.frame_translation = 10.0;
    syn.out = root / "data";
    const fs::path manifest = cli::cmd_synth(syn);

    cli::RegisterOptions reg;
    reg.manifest = manifest;
    reg.config = load_config(fs::path(UGP_CONFIG_DIR) / "synthetic_cross_distance.json");
    reg.jobs = 2;
    reg.out = root / "run1";
    cli::cmd_register(reg);
    reg.out = root / "run2";
    cli::cmd_register(reg);
    const std::string a = slurp(root / "run1" / "results.jsonl"), b = slurp(root / "run2" / "results.jsonl");
    const std::size_t lines = static_cast<std::size_t>(std::count(a.begin(), a.end(), '\n'));
    report(11, "determinism", !a.empty() && a == b && lines == 4,
           fmt("two register runs (2 jobs, 4 pairs): results.jsonl %s, %zu bytes, %zu records",
               a == b ? "byte-identical" : "DIFFER", a.size(), lines));
    fs::remove_all(root);
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::warn);
    const std::vector<std::function<void()>> criteria = {
        criterion_masks,     criterion_masking_fidelity, criterion_gradients, criterion_sinkhorn,
        criterion_kabsch_lgr, criterion_metrics,         criterion_mrr,       criterion_same_pose,
        criterion_cross_distance, criterion_perturbation, criterion_determinism};
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        try {
            criteria[k]();
        } catch (const std::exception &e) {
            report(static_cast<int>(k + 1), "exception", false, e.what());
        }
    }
    std::printf("%d of %zu criteria failed\n", failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
