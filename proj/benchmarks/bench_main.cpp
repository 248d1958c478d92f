#include <benchmark/benchmark.h>

#include "cissl/bacon.hpp"
#include "cissl/config.hpp"
#include "cissl/datagen.hpp"
#include "cissl/model.hpp"
#include "cissl/ops.hpp"
#include "cissl/trainer.hpp"

using namespace cissl;

namespace {

Tensor2D random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor2D t(rows, cols);
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor2D a = random_matrix(n, n, rng);
  const Tensor2D b = random_matrix(n, n, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(16, 128)->Complexity(benchmark::oNCubed);

void BM_ForwardBackward(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  ModelShape shape;
  CisslModel model(shape, rng);
  const Tensor2D x = random_matrix(rows, shape.input_dim, rng);
  const HeadGrads g{random_matrix(rows, shape.num_classes, rng), random_matrix(rows, shape.num_classes, rng),
                    random_matrix(rows, shape.feature_dim(), rng)};
  for (auto _ : state) {
    model.zero_grad();
    const auto pass = forward(model, x);
    backward(model, pass, g);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Arg(64)->Arg(128)->Arg(512);

void BM_BaconLoss(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t classes = 6, dim = 32;
  Rng rng(3);
  const Tensor2D f = random_matrix(rows, dim, rng);
  Tensor2D probs(rows, classes);
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<double> logits(classes);
    for (auto& v : logits) v = rng.normal(0.0, 3.0);
    const auto p = softmax(logits);
    std::copy(p.begin(), p.end(), probs.row(i).begin());
  }
  std::vector<int> assigned(rows);
  for (std::size_t i = 0; i < rows; ++i) assigned[i] = static_cast<int>(argmax(probs.row(i)));
  const std::vector<std::uint8_t> participates(rows, 1);
  AnchorSet anchors;
  anchors.support.assign(classes, 1);
  for (std::size_t k = 0; k < classes; ++k) {
    std::vector<double> a(dim);
    for (auto& v : a) v = rng.normal();
    normalize_in_place(a);
    anchors.anchors.emplace_back(std::move(a));
  }
  const std::span<const int> labeled(assigned.data(), rows / 2);
  std::vector<std::vector<std::size_t>> negatives;
  for (std::size_t k = 0; k < classes; ++k) negatives.push_back(rns_negatives(k, probs, labeled, 0.5, 3));
  const std::vector<double> temps(classes, 0.08);
  ContrastiveBatch batch{&f, assigned, participates, &anchors, &negatives, temps, 0.1};
  for (auto _ : state) benchmark::DoNotOptimize(bacon_loss(batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BaconLoss)->Arg(128)->Arg(512);

void BM_TrainStep(benchmark::State& state) {
  ExperimentConfig cfg;
  cfg.train.method = static_cast<Method>(state.range(0));
  cfg.train.warmup_iters = 0;
  const auto ds = make_dataset(cfg.data);
  TrainState ts = init_state(cfg);
  for (auto _ : state) {
    if (ts.iter == cfg.train.total_iters) ts = init_state(cfg);
    benchmark::DoNotOptimize(train_step(ts, ds, cfg));
  }
}
BENCHMARK(BM_TrainStep)->DenseRange(0, 2)->ArgNames({"method"});

}  // namespace

BENCHMARK_MAIN();
