#pragma once

#include <string>
#include <vector>

#include "headlens/babel.hpp"

namespace headlens {

struct Direction {
  int src = 0;
  int tgt = 1;

  bool operator==(const Direction&) const = default;
  std::string name() const { return std::to_string(src) + "-" + std::to_string(tgt); }
};

struct PromptInstance {
  std::vector<int> demo_ids;
  int query_id = 0;
  int k = 0;
};

// Demo targets corrupted two ways around the same clean prompt: wrong
// language but right meaning (lang), right language but wrong meaning (mt).
struct PromptTriplet {
  std::vector<int> clean;
  std::vector<int> corrupt_lang;
  std::vector<int> corrupt_mt;
  std::vector<int> query;  // source-side query tokens
  std::vector<int> truth;  // target tokens + EOS
  int instance_id = 0;
};

struct CorruptOptions {
  bool per_prompt_distractor = false;   // one distractor language for the whole prompt
  bool equivalence_derangement = false; // swap targets within the demo group (k >= 2)
};

std::vector<PromptInstance> partition_instances(const ParallelCorpus& corpus, int k, Rng& rng);

std::vector<int> build_clean(const ParallelCorpus& corpus, const PromptInstance& inst, Direction dir);
std::vector<int> corrupt_language(const ParallelCorpus& corpus, const PromptInstance& inst, Direction dir,
                                  Rng& rng, const CorruptOptions& opt = {});
std::vector<int> corrupt_equivalence(const ParallelCorpus& corpus, const PromptInstance& inst, Direction dir,
                                     Rng& rng, const CorruptOptions& opt = {});

std::vector<int> build_zero_anon(const VocabLayout& layout, const std::vector<int>& query_tokens);
std::vector<int> build_zero_instructed(const VocabLayout& layout, Direction dir,
                                       const std::vector<int>& query_tokens);

PromptTriplet make_triplet(const ParallelCorpus& corpus, const PromptInstance& inst, Direction dir, Rng& rng,
                           const CorruptOptions& opt = {});

std::string triplets_to_jsonl(const std::vector<PromptTriplet>& triplets, Direction dir);

}  // namespace headlens
