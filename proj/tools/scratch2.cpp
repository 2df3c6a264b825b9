// Bucket timing for one training step's phases. Throwaway.
#include <malloc.h>

#include <chrono>
#include <cstdio>

#include "headlens/babel.hpp"
#include "headlens/trainer.hpp"

using namespace headlens;
using Clock = std::chrono::steady_clock;

static double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int main() {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
  CorpusConfig cc;
  cc.seed = 42;
  auto corpus = sample_corpus(cc);
  ModelConfig mc;
  mc.vocab_size = corpus.layout.vocab_size();
  mc.seed = 42;
  auto weights = init_weights(mc);
  TrainConfig tc;
  tc.seed = 42;

  auto params = weights.parameters();
  AdamState adam = AdamState::init(params, tc.lr);
  Rng rng(seed_stream(tc.seed, "train"));

  double t_fwd = 0, t_ce = 0, t_bwd = 0, t_merge = 0, t_adam = 0, t_batch = 0, t_alloc = 0;
  int steps = 30;
  auto t_all = Clock::now();
  for (int step = 1; step <= steps; ++step) {
    auto t0 = Clock::now();
    auto rows = make_batch(corpus, rng, tc);
    t_batch += since(t0);

    double total_weight = 0.0;
    for (const auto& row : rows)
      for (double m : row.mask) total_weight += m;

    t0 = Clock::now();
    for (auto& p : params) p->alloc_grad();
    t_alloc += since(t0);

    for (const auto& row : rows) {
      std::vector<int> input(row.tokens.begin(), row.tokens.end() - 1);
      std::vector<int> targets(row.tokens.begin() + 1, row.tokens.end());
      double row_weight = 0.0;
      for (double m : row.mask) row_weight += m;

      Tape tape;
      t0 = Clock::now();
      auto res = forward(weights, input, {}, &tape, false);
      t_fwd += since(t0);
      t0 = Clock::now();
      TensorPtr loss = cross_entropy(&tape, res.logits, targets, row.mask);
      t_ce += since(t0);
      t0 = Clock::now();
      tape.backward(loss, row_weight / total_weight);
      t_bwd += since(t0);
      t0 = Clock::now();
      for (auto& p : params) {
        const DVec* g = tape.grad_of(p);
        if (!g) continue;
        for (std::size_t j = 0; j < p->grad.size(); ++j) p->grad[j] += (*g)[j];
      }
      t_merge += since(t0);
    }
    t0 = Clock::now();
    adam_step(params, adam);
    t_adam += since(t0);
  }
  double total = since(t_all);
  std::printf("total %.3f s/step\n", total / steps);
  std::printf("batch %.1f ms  alloc %.1f  fwd %.1f  ce %.1f  bwd %.1f  merge %.1f  adam %.1f  (per step)\n",
              1e3 * t_batch / steps, 1e3 * t_alloc / steps, 1e3 * t_fwd / steps, 1e3 * t_ce / steps,
              1e3 * t_bwd / steps, 1e3 * t_merge / steps, 1e3 * t_adam / steps);
  return 0;
}
