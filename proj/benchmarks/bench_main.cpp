#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "cmfl/losses.hpp"
#include "cmfl/metrics.hpp"
#include "cmfl/network.hpp"

using namespace cmfl;

namespace {

std::vector<HeadOutputs> random_heads(std::size_t n) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    std::vector<HeadOutputs> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = {u(rng), u(rng), u(rng), i % 2 ? Label::bonafide : Label::attack};
    return out;
}

struct Inputs {
    std::vector<Image> a, b;
    std::vector<BatchItem> items;
};

Inputs random_inputs(std::size_t n, std::size_t size) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u;
    Inputs in;
    for (std::size_t i = 0; i < n; ++i) {
        in.a.emplace_back(3, size, size);
        in.b.emplace_back(1, size, size);
        for (double& v : in.a.back().pixels) v = u(rng);
        for (double& v : in.b.back().pixels) v = u(rng);
    }
    for (std::size_t i = 0; i < n; ++i) in.items.push_back({&in.a[i], &in.b[i], Label::bonafide});
    return in;
}

}  // namespace

static void BM_BatchLoss(benchmark::State& state) {
    const auto heads = random_heads(static_cast<std::size_t>(state.range(0)));
    const LossParams params;
    for (auto _ : state) benchmark::DoNotOptimize(batch_loss(heads, params));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BatchLoss)->Arg(64)->Arg(4096);

static void BM_Forward(benchmark::State& state) {
    const ParameterSet params = init_network(NetworkConfig{});
    Inputs in = random_inputs(static_cast<std::size_t>(state.range(0)), 32);
    std::vector<const Image*> a, b;
    for (std::size_t i = 0; i < in.a.size(); ++i) {
        a.push_back(&in.a[i]);
        b.push_back(&in.b[i]);
    }
    for (auto _ : state) benchmark::DoNotOptimize(predict_scores(params, a, b, Head::joint));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_Backward(benchmark::State& state) {
    const ParameterSet params = init_network(NetworkConfig{});
    const Inputs in = random_inputs(static_cast<std::size_t>(state.range(0)), 32);
    const LossParams loss;
    for (auto _ : state) benchmark::DoNotOptimize(backward(params, in.items, loss));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Backward)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_ThresholdAtBpcer(benchmark::State& state) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u;
    std::vector<LabeledScore> scores;
    for (long i = 0; i < state.range(0); ++i) scores.push_back({u(rng), i % 2 ? Label::bonafide : Label::attack});
    for (auto _ : state) benchmark::DoNotOptimize(threshold_at_bpcer(scores, 0.01));
}
BENCHMARK(BM_ThresholdAtBpcer)->Arg(1000)->Arg(100000);

static void BM_BruteForceSweep(benchmark::State& state) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u;
    std::vector<LabeledScore> scores;
    for (long i = 0; i < state.range(0); ++i) scores.push_back({u(rng), i % 2 ? Label::bonafide : Label::attack});
    for (auto _ : state) benchmark::DoNotOptimize(brute_force_sweep(scores));
}
BENCHMARK(BM_BruteForceSweep)->Arg(200)->Arg(2000);

BENCHMARK_MAIN();
