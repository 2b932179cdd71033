#include <benchmark/benchmark.h>

#include <map>
#include <memory>
#include <random>

#include "safeshield/harness.hpp"
#include "safeshield/mlp.hpp"

namespace {

using namespace safeshield;
using geom::Matrix;
using geom::Vector;

const harness::SafetyStack& stack(env::EnvKind kind) {
    static std::map<env::EnvKind, std::unique_ptr<harness::SafetyStack>> cache;
    auto& slot = cache[kind];
    if (!slot)
        slot = std::make_unique<harness::SafetyStack>(
            harness::build_safety(harness::resolve_config({{"env.name", env::to_string(kind)}})));
    return *slot;
}

env::EnvKind kind_of(const benchmark::State& state) {
    return state.range(0) == 0 ? env::EnvKind::pendulum : env::EnvKind::quadrotor;
}

/// Interior states paired with uniform actions; roughly a mix of safe and unsafe proposals.
std::vector<std::pair<Vector, Vector>> workload(const harness::SafetyStack& st, int n) {
    safety::PolytopeSampler sampler(st.ctx->polytope(), st.problem.spec.equilibrium, 5);
    env::Rng rng(6);
    const auto& A = st.problem.spec.action_box;
    std::vector<std::pair<Vector, Vector>> out;
    for (int i = 0; i < n; ++i) {
        Vector a(A.dim());
        for (Eigen::Index j = 0; j < a.size(); ++j)
            a(j) = std::uniform_real_distribution<double>(A.lower()(j), A.upper()(j))(rng);
        out.emplace_back(sampler.next(), a);
    }
    return out;
}

void BM_Phi(benchmark::State& state) {
    const auto& st = stack(kind_of(state));
    const auto w = workload(st, 256);
    std::size_t i = 0;
    for (auto _ : state) {
        const auto& [s, a] = w[i++ % w.size()];
        benchmark::DoNotOptimize(st.ctx->phi(s, a));
    }
}
BENCHMARK(BM_Phi)->Arg(0)->Arg(1);

void BM_Project(benchmark::State& state) {
    const auto& st = stack(kind_of(state));
    const auto w = workload(st, 256);
    std::size_t i = 0;
    for (auto _ : state) {
        const auto& [s, a] = w[i++ % w.size()];
        benchmark::DoNotOptimize(shields::shield_project(*st.ctx, s, a));
    }
}
BENCHMARK(BM_Project)->Arg(0)->Arg(1);

void BM_MaskContinuous(benchmark::State& state) {
    const auto& st = stack(kind_of(state));
    const auto w = workload(st, 256);
    std::size_t i = 0;
    for (auto _ : state) {
        const auto& [s, a] = w[i++ % w.size()];
        benchmark::DoNotOptimize(shields::mask_continuous(*st.ctx, s, a));
    }
}
BENCHMARK(BM_MaskContinuous)->Arg(0)->Arg(1);

void BM_ReplaceSample(benchmark::State& state) {
    const auto& st = stack(kind_of(state));
    const auto w = workload(st, 256);
    env::Rng rng(7);
    std::size_t i = 0;
    for (auto _ : state) {
        const auto& [s, a] = w[i++ % w.size()];
        benchmark::DoNotOptimize(shields::shield_replace(*st.ctx, s, a, shields::ReplacementStrategy::sample, rng));
    }
}
BENCHMARK(BM_ReplaceSample)->Arg(0)->Arg(1);

void BM_LpMaximize(benchmark::State& state) {
    const auto& P = stack(env::EnvKind::quadrotor).ctx->polytope();
    env::Rng rng(8);
    std::normal_distribution<double> n;
    std::vector<Vector> dirs(64, Vector(P.dim()));
    for (auto& d : dirs)
        for (Eigen::Index j = 0; j < d.size(); ++j) d(j) = n(rng);
    std::size_t i = 0;
    for (auto _ : state) benchmark::DoNotOptimize(geom::maximize(P, dirs[i++ % dirs.size()]));
}
BENCHMARK(BM_LpMaximize);

void BM_MlpForwardBackward(benchmark::State& state) {
    const int width = static_cast<int>(state.range(0));
    const int batch = static_cast<int>(state.range(1));
    rl::Rng rng(9);
    const rl::Mlp net({8, width, width, 1}, rl::Activation::relu, rng);
    const Matrix X = Matrix::Random(8, batch);
    const Matrix up = Matrix::Ones(1, batch);
    for (auto _ : state) {
        rl::Mlp::Tape tape;
        net.forward(X, tape);
        benchmark::DoNotOptimize(net.backward(tape, up));
    }
    state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_MlpForwardBackward)->Args({32, 64})->Args({64, 64})->Args({64, 512});

void BM_InvariantSet(benchmark::State& state) {
    const auto config = harness::resolve_config({{"env.name", env::to_string(kind_of(state))}});
    for (auto _ : state) benchmark::DoNotOptimize(harness::build_safety(config));
}
BENCHMARK(BM_InvariantSet)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
