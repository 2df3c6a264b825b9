// Throwaway timing harness used while sizing the trainer. Not shipped.
#include <malloc.h>

#include <chrono>
#include <cstdio>

#include "headlens/babel.hpp"
#include "headlens/trainer.hpp"

using namespace headlens;

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
  CorpusConfig cc;
  cc.seed = 42;
  auto corpus = sample_corpus(cc);
  std::printf("corpus: %zu dev / %zu devtest, vocab %d\n", corpus.dev_ids.size(), corpus.devtest_ids.size(),
              corpus.layout.vocab_size());

  ModelConfig mc;
  mc.vocab_size = corpus.layout.vocab_size();
  mc.seed = 42;
  auto weights = init_weights(mc);

  TrainConfig tc;
  tc.seed = 42;
  tc.steps = argc > 1 ? std::atoi(argv[1]) : 50;
  tc.target_exact_match = argc > 2 ? std::atof(argv[2]) : 0.0;
  if (argc > 3) tc.lr = std::atof(argv[3]);
  if (argc > 4) tc.seed = std::strtoull(argv[4], nullptr, 10);

  auto t0 = std::chrono::steady_clock::now();
  auto summary = train(weights, corpus, tc, [&](int step, double loss) {
    if (step % 250 == 0) {
      double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("step %5d  loss %.4f  (%.3f s/step)\n", step, loss, secs / step);
      std::fflush(stdout);
    }
  });
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("ran %d steps in %.1f s (%.3f s/step), final loss %.4f, probe EM %.3f\n", summary.steps_run, secs,
              secs / summary.steps_run, summary.final_loss, summary.probe_exact_match);
  for (auto [s, em] : summary.probe_history) std::printf("  probe @%d: %.4f\n", s, em);
  save_weights("/tmp/toy_weights.hlns", weights);
  return 0;
}
