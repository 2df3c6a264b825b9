#pragma once

#include <string>
#include <vector>

#include "headlens/babel.hpp"
#include "headlens/tensor.hpp"

namespace headlens {

// Corpus-level BLEU over token sequences, n-grams up to 4, single reference
// per hypothesis, add-one smoothing on modified precisions for n >= 2.
double bleu(const std::vector<std::vector<int>>& hypotheses, const std::vector<std::vector<int>>& references);

struct LanguageAccuracy {
  double fraction = 0.0;
  bool pass = false;
};

// Share of content tokens (any language block) that land in the target
// block; specials and tags are ignored. No content at all fails.
LanguageAccuracy language_accuracy(const std::vector<int>& generated, const VocabLayout& layout, int tgt_lang,
                                   double tau = 0.9);

bool exact_match(const std::vector<int>& generated, const std::vector<int>& reference);
double token_accuracy(const std::vector<int>& generated, const std::vector<int>& reference);

struct SimilarityMatrix {
  std::vector<std::string> labels;
  std::vector<double> values;  // row-major, labels.size() squared

  double at(std::size_t r, std::size_t c) const { return values[r * labels.size() + c]; }
};

SimilarityMatrix cosine_matrix(const std::vector<std::pair<std::string, std::vector<double>>>& vectors);
std::string similarity_to_csv(const SimilarityMatrix& m);

struct DecodeResult {
  std::vector<std::pair<int, double>> top;  // (token id, logit), descending
};

// Project a residual-space vector through the unembedding and keep the top-k
// tokens; ties break toward smaller ids.
DecodeResult decode_vector(const TensorPtr& unembed, const std::vector<double>& v, int k);

struct EvalReport {
  double bleu = 0.0;
  double exact_match = 0.0;
  double token_accuracy = 0.0;
  double language_fraction = 0.0;  // mean in-block share
  double language_pass = 0.0;      // share of prompts passing tau
  int prompts = 0;
};

}  // namespace headlens
