#include <random>

#include <benchmark/benchmark.h>

#include "otmatch/loss.hpp"
#include "otmatch/transport.hpp"

namespace {

using namespace otmatch;

PoseInstance make_instance(int joints, int side, std::uint64_t seed) {
    GridGeometry geom(side, side);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.5, 1.0);
    std::uniform_real_distribution<double> uloc(0.0, geom.max_x());
    std::vector<Keypoint> kps;
    std::vector<Heatmap> maps;
    for (int k = 0; k < joints; ++k) {
        std::vector<double> values(geom.num_pixels());
        for (auto& v : values) v = gauss(rng);
        kps.push_back({uloc(rng), uloc(rng), true});
        maps.emplace_back(geom, values);
    }
    return PoseInstance(kps, maps);
}

void bm_matching_loss(benchmark::State& state, Exec exec) {
    PoseInstance inst = make_instance(static_cast<int>(state.range(0)), 8, 7);
    SinkhornConfig cfg;
    cfg.iterations = 200;
    for (auto _ : state) {
        LossReport report = matching_loss(inst, DemanderMode::subpixel, cfg, exec);
        benchmark::DoNotOptimize(report.total);
    }
}

void bm_sinkhorn(benchmark::State& state) {
    PoseInstance inst = make_instance(1, static_cast<int>(state.range(0)), 11);
    SupplierSet s = build_suppliers(inst.heatmaps[0]);
    DemanderSet d = build_demanders_subpixel(inst.joints[0], inst.geometry());
    CostMatrix c = build_cost(s, d);
    SinkhornConfig cfg;
    for (auto _ : state) {
        TransportPlan plan = sinkhorn(s, d, c, cfg);
        benchmark::DoNotOptimize(plan.objective);
    }
}

void bm_emd_exact(benchmark::State& state) {
    PoseInstance inst = make_instance(1, static_cast<int>(state.range(0)), 13);
    SupplierSet s = build_suppliers(inst.heatmaps[0]);
    DemanderSet d = build_demanders_subpixel(inst.joints[0], inst.geometry());
    CostMatrix c = build_cost(s, d);
    for (auto _ : state) {
        TransportPlan plan = emd_exact(s, d, c);
        benchmark::DoNotOptimize(plan.objective);
    }
}

}  // namespace

BENCHMARK_CAPTURE(bm_matching_loss, serial, Exec::serial)->Arg(4)->Arg(16);
BENCHMARK_CAPTURE(bm_matching_loss, parallel, Exec::parallel)->Arg(4)->Arg(16);
BENCHMARK(bm_sinkhorn)->Arg(8)->Arg(16);
BENCHMARK(bm_emd_exact)->Arg(8)->Arg(16);

BENCHMARK_MAIN();
