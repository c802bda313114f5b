#include <benchmark/benchmark.h>

#include "ugp/attention.hpp"
#include "ugp/estimation.hpp"
#include "ugp/ingest.hpp"
#include "ugp/matching.hpp"
#include "ugp/pipeline.hpp"
#include "ugp/rng.hpp"

using namespace ugp;

namespace {

const ingest::SyntheticPair &scan_pair() {
    static const ingest::SyntheticPair pair = [] {
        ingest::SynthScenario s;
        s.frame_rotation_deg = 30.0;
        s.frame_translation = 10.0;
        return ingest::synth_pair(0, s);
    }();
    return pair;
}

PointCloud random_cloud(std::size_t n, double extent, std::uint64_t seed) {
    Rng rng(seed);
    PointCloud c;
    for (std::size_t i = 0; i < n; ++i)
        c.points.emplace_back(rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-2, 2));
    return c;
}

void BM_VoxelDownsample(benchmark::State &state) {
    const auto &cloud = scan_pair().a;
    for (auto _ : state) benchmark::DoNotOptimize(voxel_downsample(cloud, 0.3));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(cloud.size()));
}
BENCHMARK(BM_VoxelDownsample)->Unit(benchmark::kMillisecond);

void BM_Sinkhorn(benchmark::State &state) {
    const auto n = state.range(0);
    Rng rng(1);
    Eigen::MatrixXd cost(n, n);
    for (Eigen::Index i = 0; i < cost.size(); ++i) cost.data()[i] = rng.normal();
    for (auto _ : state) benchmark::DoNotOptimize(matching::sinkhorn(cost, 100, 0.0));
}
BENCHMARK(BM_Sinkhorn)->Arg(16)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_AttentionLayer(benchmark::State &state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const std::size_t d = attention::kDefaultDim;
    const PointCloud cloud = random_cloud(n, 40.0, 2);
    const auto params = attention::AttentionParams::init(d, 1, 3).layers[0];
    const attention::GeometricEmbedding emb(cloud, attention::kDefaultSigmaD, d);
    const auto masks = attention::build_mask_stack(cloud, attention::kDefaultLayers);
    Rng rng(4);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    for (auto _ : state) benchmark::DoNotOptimize(attention::attention_layer(x, &masks.layers[0], emb, params));
}
BENCHMARK(BM_AttentionLayer)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_Estimators(benchmark::State &state) {
    const bool use_ransac = state.range(0) != 0;
    Rng rng(5);
    const auto gt = RigidTransform::from_axis_angle(Vec3::UnitZ(), 0.8, Vec3(3, -2, 0));
    Points src, dst;
    matching::CorrespondenceSet set;
    set.level = matching::Level::Point;
    for (std::size_t g = 0; g < 64; ++g)
        for (std::size_t k = 0; k < 8; ++k) {
            const Vec3 p(rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(0, 3));
            src.push_back(p);
            dst.push_back(g % 3 == 0 ? gt.apply(p) : Vec3(rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(0, 3)));
            set.entries.push_back({src.size() - 1, dst.size() - 1, rng.uniform(0.1, 1.0), g});
        }
    estimation::EstimationConfig config;
    config.ransac_iterations = 5000;
    for (auto _ : state)
        benchmark::DoNotOptimize(use_ransac ? estimation::ransac(set, src, dst, config)
                                            : estimation::lgr(set, src, dst, config));
    state.SetLabel(use_ransac ? "ransac 5000" : "lgr");
}
BENCHMARK(BM_Estimators)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_RegisterPair(benchmark::State &state) {
    const auto &pair = scan_pair();
    const PipelineConfig config;
    for (auto _ : state) benchmark::DoNotOptimize(register_pair(pair.a, pair.b, config));
}
BENCHMARK(BM_RegisterPair)->Unit(benchmark::kMillisecond)->Iterations(3);

}  // namespace

BENCHMARK_MAIN();
