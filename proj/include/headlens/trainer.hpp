#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "headlens/contrast.hpp"
#include "headlens/model.hpp"

namespace headlens {

struct TrainConfig {
  int steps = 20000;
  int batch = 16;
  double lr = 3e-4;
  int warmup = 500;
  // Cosine decay to lr_floor between the two step marks; constant outside.
  // A constant rate keeps the late phase too noisy to hold exact-match.
  int lr_decay_start = 3000;
  int lr_decay_end = 6000;
  double lr_floor = 0.05;
  int k_min = 1;
  int k_max = 5;
  double instructed_fraction = 0.25;
  bool mask_all_answers = true;  // false: only the final answer carries loss
  std::uint64_t seed = 0;
  int log_every = 100;
  // Evaluation-driven stopping; target <= 0 disables and runs all steps.
  int eval_start = 2000;
  int eval_every = 250;
  int eval_prompts = 64;
  double target_exact_match = 0.98;
};

struct TrainRow {
  std::vector<int> tokens;   // prompt + answer continuation
  std::vector<double> mask;  // length tokens-1, weights over next-token targets
};

std::vector<TrainRow> make_batch(const ParallelCorpus& corpus, Rng& rng, const TrainConfig& config);

struct TrainSummary {
  int steps_run = 0;
  double final_loss = 0.0;
  double probe_exact_match = 0.0;  // last early-stop probe, -1 if never run
  std::vector<std::pair<int, double>> loss_history;
  std::vector<std::pair<int, double>> probe_history;
};

// Adam on the masked objective; deterministic under (seed, config, corpus).
TrainSummary train(ModelWeights& weights, const ParallelCorpus& corpus, const TrainConfig& config,
                   const std::function<void(int, double)>& progress = {});

// Mean exact match of greedy k-shot translations over devtest queries with
// dev-sampled demonstrations, cycling through the given directions.
double evaluate_icl(const ModelWeights& weights, const ParallelCorpus& corpus,
                    const std::vector<Direction>& directions, int k, int n_queries, std::uint64_t seed);

}  // namespace headlens
