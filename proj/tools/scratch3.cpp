// Forward-path cost breakdown. Throwaway.
#include <malloc.h>

#include <chrono>
#include <cstdio>

#include "headlens/babel.hpp"
#include "headlens/trainer.hpp"

using namespace headlens;
using Clock = std::chrono::steady_clock;

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
  Rng rng(seed_stream(tc.seed, "train"));
  auto rows = make_batch(corpus, rng, tc);

  int reps = 40;
  // inference forward, no trace
  auto t0 = Clock::now();
  for (int r = 0; r < reps; ++r)
    for (const auto& row : rows) {
      std::vector<int> input(row.tokens.begin(), row.tokens.end() - 1);
      auto res = forward(weights, input, {}, nullptr, false);
    }
  double inf = std::chrono::duration<double>(Clock::now() - t0).count() / reps;

  // taped forward
  t0 = Clock::now();
  for (int r = 0; r < reps; ++r)
    for (const auto& row : rows) {
      std::vector<int> input(row.tokens.begin(), row.tokens.end() - 1);
      Tape tape;
      auto res = forward(weights, input, {}, &tape, false);
    }
  double fwd_tape = std::chrono::duration<double>(Clock::now() - t0).count() / reps;

  // taped forward + CE + backward
  t0 = Clock::now();
  for (int r = 0; r < reps; ++r)
    for (const auto& row : rows) {
      std::vector<int> input(row.tokens.begin(), row.tokens.end() - 1);
      std::vector<int> targets(row.tokens.begin() + 1, row.tokens.end());
      Tape tape;
      auto res = forward(weights, input, {}, &tape, false);
      TensorPtr loss = cross_entropy(&tape, res.logits, targets, row.mask);
      tape.backward(loss, 1.0);
    }
  double full = std::chrono::duration<double>(Clock::now() - t0).count() / reps;

  std::printf("batch inference fwd: %.1f ms | taped fwd: %.1f ms | fwd+bwd: %.1f ms\n", 1e3 * inf,
              1e3 * fwd_tape, 1e3 * full);
  return 0;
}
