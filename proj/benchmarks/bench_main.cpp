#include <benchmark/benchmark.h>

#include "dirmlab/objectives.hpp"
#include "dirmlab/rng.hpp"
#include "dirmlab/scm.hpp"

namespace {

using namespace dirmlab;

void BM_SampleIntroExample(benchmark::State& state) {
  const ScmSpec spec = intro_example_spec(true);
  const auto n = static_cast<int>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample(spec, {}, n, seed++));
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_SampleIntroExample)->Arg(1000)->Arg(10000);

void BM_DirmPenaltyGradBeta(benchmark::State& state) {
  const ScmSpec spec = intro_example_spec(true);
  const auto n = static_cast<int>(state.range(0));
  std::vector<EnvironmentData> envs;
  const auto ivs = std::vector<Intervention>{{}, {}};
  for (std::size_t e = 0; e < ivs.size(); ++e)
    envs.push_back(sample(spec, ivs[e], n, 17 + e));
  const Model model = make_model(2, {}, Link::identity, 3);
  PenaltyDesc desc;
  for (auto _ : state) {
    benchmark::DoNotOptimize(penalty_grad_beta(model, envs, desc));
  }
  state.SetItemsProcessed(state.iterations() * n * 2);
}
BENCHMARK(BM_DirmPenaltyGradBeta)->Arg(1000)->Arg(10000);

void BM_PenaltyGradPhiHidden(benchmark::State& state) {
  SplitMix64 gen(5);
  std::vector<EnvironmentData> envs;
  for (int e = 0; e < 2; ++e) {
    EnvironmentData env;
    env.env_id = "env";
    env.feature_names = {"a", "b", "c"};
    env.x.resize(256, 3);
    env.y.resize(256);
    for (Eigen::Index i = 0; i < 256; ++i) {
      for (Eigen::Index j = 0; j < 3; ++j) env.x(i, j) = gen.normal();
      env.y[i] = gen.normal();
    }
    envs.push_back(std::move(env));
  }
  const Model model = make_model(3, {8, 8}, Link::identity, 11);
  PenaltyDesc desc;
  for (auto _ : state) {
    benchmark::DoNotOptimize(penalty_grad_phi(model, envs, desc));
  }
}
BENCHMARK(BM_PenaltyGradPhiHidden);

void BM_AffineSup(benchmark::State& state) {
  SplitMix64 gen(1);
  Eigen::VectorXd losses(4);
  for (Eigen::Index i = 0; i < 4; ++i) losses[i] = gen.uniform(0.0, 10.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(affine_sup(losses, 0.5));
  }
}
BENCHMARK(BM_AffineSup);

}  // namespace

BENCHMARK_MAIN();
