#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "ugp/attention.hpp"
#include "ugp/rng.hpp"

using namespace ugp;
using namespace ugp::attention;

namespace {

PointCloud random_cloud(Rng &rng, std::size_t n) {
    PointCloud c;
    for (std::size_t i = 0; i < n; ++i) c.points.emplace_back(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-2, 2));
    return c;
}

Eigen::MatrixXd random_matrix(Rng &rng, Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

}  // namespace

TEST(MaskStack, NestedAndLastLayerFull) {
    Rng rng(1);
    const auto cloud = random_cloud(rng, 40);
    const auto stack = build_mask_stack(cloud, 4);
    ASSERT_EQ(stack.depth(), 4u);
    EXPECT_TRUE((stack.layers.back().array() == 1).all());
    for (std::size_t k = 1; k < stack.depth(); ++k)
        EXPECT_TRUE((stack.layers[k - 1].array() <= stack.layers[k].array()).all());
    EXPECT_TRUE((stack.layers[0].diagonal().array() == 1).all());
}

TEST(MaskStack, FullStackAllOnes) {
    const auto s = full_mask_stack(5, 3);
    ASSERT_EQ(s.depth(), 3u);
    for (const auto &m : s.layers) EXPECT_TRUE((m.array() == 1).all());
}

TEST(Embedding, SinusoidalChannels) {
    const PointCloud c(Points{Vec3(0, 0, 0), Vec3(3, 4, 0)});
    const GeometricEmbedding emb(c, 4.8, 6);
    for (std::size_t ch = 0; ch < 3; ++ch) {
        const double w = std::pow(10000.0, -2.0 * static_cast<double>(ch) / 6.0);
        EXPECT_NEAR(emb.at(0, 1)(static_cast<Eigen::Index>(2 * ch)), std::sin(w * 5.0 / 4.8), 1e-12);
        EXPECT_NEAR(emb.at(0, 1)(static_cast<Eigen::Index>(2 * ch + 1)), std::cos(w * 5.0 / 4.8), 1e-12);
        EXPECT_NEAR(emb.at(1, 1)(static_cast<Eigen::Index>(2 * ch + 1)), 1.0, 1e-15);
    }
}

TEST(AttentionCore, MatchesExplicitSoftmax) {
    Rng rng(2);
    const std::size_t n = 7, d = 6;
    const auto cloud = random_cloud(rng, n);
    const auto p = AttentionParams::init(d, 1, 3).layers[0];
    const GeometricEmbedding emb(cloud, 4.8, d);
    const Eigen::MatrixXd x = random_matrix(rng, n, d);
    const auto masks = build_mask_stack(cloud, 3);
    const Eigen::MatrixXd q = x * p.wq, k = x * p.wk, v = x * p.wv;
    Eigen::MatrixXd expected(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        Eigen::VectorXd e(n);
        for (std::size_t j = 0; j < n; ++j) {
            const Eigen::RowVectorXd key = k.row(static_cast<Eigen::Index>(j)) + emb.at(i, j) * p.wr;
            e(static_cast<Eigen::Index>(j)) = q.row(static_cast<Eigen::Index>(i)).dot(key) / std::sqrt(double(d));
        }
        Eigen::VectorXd w(n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const bool on = masks.layers[0](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            w(static_cast<Eigen::Index>(j)) = on ? std::exp(e(static_cast<Eigen::Index>(j)) - e.maxCoeff()) : 0.0;
            z += w(static_cast<Eigen::Index>(j));
        }
        expected.row(static_cast<Eigen::Index>(i)) = (w / z).transpose() * v;
    }
    const Eigen::MatrixXd got = attention_core(x, &masks.layers[0], emb, p);
    EXPECT_LT((got - expected).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(AttentionCore, MultiplicativeSemanticsWeightsExcludedEntries) {
    Rng rng(3);
    const auto cloud = random_cloud(rng, 6);
    const auto p = AttentionParams::init(4, 1, 1).layers[0];
    const GeometricEmbedding emb(cloud, 4.8, 4);
    const Eigen::MatrixXd x = random_matrix(rng, 6, 4);
    Mask diag = Mask::Zero(6, 6);
    diag.diagonal().setOnes();
    Eigen::MatrixXd w;
    attention_core(x, &diag, emb, p, {MaskSemantics::Multiplicative}, &w);
    EXPECT_GT(w(0, 1), 0.0);
    attention_core(x, &diag, emb, p, {MaskSemantics::Exclude}, &w);
    EXPECT_EQ(w(0, 1), 0.0);
    EXPECT_NEAR(w.rowwise().sum().maxCoeff(), 1.0, 1e-12);
}

TEST(AttentionLayer, OutputRowsLayerNormalized) {
    Rng rng(4);
    const auto cloud = random_cloud(rng, 9);
    const auto p = AttentionParams::init(8, 1, 2).layers[0];
    const GeometricEmbedding emb(cloud, 4.8, 8);
    const Eigen::MatrixXd out = attention_layer(random_matrix(rng, 9, 8), nullptr, emb, p);
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        EXPECT_NEAR(out.row(i).mean(), 0.0, 1e-9);
        EXPECT_NEAR((out.row(i).array() - out.row(i).mean()).square().mean(), 1.0, 1e-3);
    }
}

TEST(AttentionLayer, BackwardMatchesFiniteDifferenceOnFeedForward) {
    Rng rng(5);
    const auto cloud = random_cloud(rng, 5);
    auto p = AttentionParams::init(4, 1, 8).layers[0];
    const GeometricEmbedding emb(cloud, 4.8, 4);
    const Eigen::MatrixXd x = random_matrix(rng, 5, 4), g = random_matrix(rng, 5, 4);
    LayerCache cache;
    attention_layer(x, nullptr, emb, p, {}, &cache);
    const auto grads = attention_layer_backward(cache, g, nullptr, emb, p);
    const auto loss = [&] { return (attention_layer(x, nullptr, emb, p).array() * g.array()).sum(); };
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < p.w1.size(); i += 3) {
        const double keep = p.w1.data()[i];
        p.w1.data()[i] = keep + h;
        const double up = loss();
        p.w1.data()[i] = keep - h;
        const double down = loss();
        p.w1.data()[i] = keep;
        EXPECT_NEAR(grads.w1.data()[i], (up - down) / (2 * h), 1e-6);
    }
}

TEST(AttentionParams, InitRangeAndDeterminism) {
    const auto a = AttentionParams::init(16, 2, 42), b = AttentionParams::init(16, 2, 42);
    ASSERT_EQ(a.layers.size(), 2u);
    EXPECT_TRUE(a.layers[1].wq.isApprox(b.layers[1].wq));
    EXPECT_LE(a.layers[0].wq.cwiseAbs().maxCoeff(), 0.25);
    EXPECT_FALSE(a.layers[0].wq.isApprox(AttentionParams::init(16, 2, 43).layers[0].wq));
}

TEST(AttentionParams, SaveLoadRoundTrip) {
    const auto a = AttentionParams::init(8, 3, 5, 12);
    const auto path = std::filesystem::temp_directory_path() / "ugp_attention_params.bin";
    a.save(path);
    const auto b = AttentionParams::load(path);
    EXPECT_EQ(b.dim, a.dim);
    ASSERT_EQ(b.layers.size(), 3u);
    EXPECT_EQ(b.layers[2].w2, a.layers[2].w2);
    EXPECT_EQ(b.input_projection, a.input_projection);
    std::filesystem::remove(path);
    std::filesystem::remove(path.string() + ".json");
}

TEST(ProgressiveStack, EqualsLayerByLayer) {
    Rng rng(6);
    const auto cloud = random_cloud(rng, 12);
    const auto params = AttentionParams::init(6, 3, 9);
    const GeometricEmbedding emb(cloud, 4.8, 6);
    const auto masks = build_mask_stack(cloud, 3);
    const Eigen::MatrixXd x = random_matrix(rng, 12, 6);
    Eigen::MatrixXd expected = x;
    for (std::size_t k = 0; k < 3; ++k) expected = attention_layer(expected, &masks.layers[k], emb, params.layers[k]);
    EXPECT_EQ(progressive_stack(x, masks, emb, params), expected);
}
