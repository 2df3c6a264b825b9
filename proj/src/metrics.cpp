#include "headlens/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <sstream>

namespace headlens {

namespace {

// n-gram key packed from up to 4 token ids.
using Gram = std::array<int, 4>;

std::map<Gram, int> count_ngrams(const std::vector<int>& seq, int n) {
  std::map<Gram, int> counts;
  if (static_cast<int>(seq.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= seq.size(); ++i) {
    Gram g = {-1, -1, -1, -1};
    for (int j = 0; j < n; ++j) g[static_cast<std::size_t>(j)] = seq[i + static_cast<std::size_t>(j)];
    counts[g] += 1;
  }
  return counts;
}

}  // namespace

double bleu(const std::vector<std::vector<int>>& hypotheses, const std::vector<std::vector<int>>& references) {
  if (hypotheses.empty()) throw data_error("bleu: no hypotheses");
  if (hypotheses.size() != references.size()) throw config_error("bleu: hypothesis/reference count mismatch");
  for (const auto& r : references)
    if (r.empty()) throw config_error("bleu: empty reference");

  double hyp_len = 0.0, ref_len = 0.0;
  double matched[5] = {0, 0, 0, 0, 0};
  double total[5] = {0, 0, 0, 0, 0};
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    hyp_len += static_cast<double>(hypotheses[i].size());
    ref_len += static_cast<double>(references[i].size());
    for (int n = 1; n <= 4; ++n) {
      auto hyp_counts = count_ngrams(hypotheses[i], n);
      auto ref_counts = count_ngrams(references[i], n);
      for (const auto& [gram, c] : hyp_counts) {
        total[n] += c;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matched[n] += std::min(c, it->second);
      }
    }
  }

  if (total[1] == 0.0 || matched[1] == 0.0) return 0.0;
  double log_sum = std::log(matched[1] / total[1]);
  for (int n = 2; n <= 4; ++n) log_sum += std::log((matched[n] + 1.0) / (total[n] + 1.0));
  double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / std::max(1.0, hyp_len));
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

LanguageAccuracy language_accuracy(const std::vector<int>& generated, const VocabLayout& layout, int tgt_lang,
                                   double tau) {
  if (tgt_lang < 0 || tgt_lang >= layout.languages) throw config_error("language_accuracy: bad target language");
  int content = 0, in_target = 0;
  for (int t : generated) {
    int block = layout.block_of(t);
    if (block < 0) continue;
    ++content;
    if (block == tgt_lang) ++in_target;
  }
  LanguageAccuracy out;
  if (content == 0) return out;  // fraction 0, fail
  out.fraction = static_cast<double>(in_target) / content;
  out.pass = out.fraction >= tau;
  return out;
}

bool exact_match(const std::vector<int>& generated, const std::vector<int>& reference) {
  if (reference.empty()) throw config_error("exact_match: empty reference");
  return generated == reference;
}

double token_accuracy(const std::vector<int>& generated, const std::vector<int>& reference) {
  if (reference.empty()) throw config_error("token_accuracy: empty reference");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < reference.size(); ++i)
    if (i < generated.size() && generated[i] == reference[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(reference.size());
}

SimilarityMatrix cosine_matrix(const std::vector<std::pair<std::string, std::vector<double>>>& vectors) {
  if (vectors.empty()) throw config_error("cosine_matrix: no vectors");
  std::vector<double> norms;
  for (const auto& [label, v] : vectors) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    if (n2 == 0.0) throw numeric_error("cosine_matrix: zero vector for " + label);
    norms.push_back(std::sqrt(n2));
  }
  SimilarityMatrix m;
  std::size_t n = vectors.size();
  m.values.assign(n * n, 0.0);
  for (const auto& [label, v] : vectors) m.labels.push_back(label);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto& a = vectors[i].second;
      const auto& b = vectors[j].second;
      if (a.size() != b.size()) throw config_error("cosine_matrix: vector length mismatch");
      double dot = 0.0;
      for (std::size_t t = 0; t < a.size(); ++t) dot += a[t] * b[t];
      m.values[i * n + j] = dot / (norms[i] * norms[j]);
    }
  }
  return m;
}

std::string similarity_to_csv(const SimilarityMatrix& m) {
  std::ostringstream os;
  os.precision(17);
  os << "label";
  for (const auto& l : m.labels) os << "," << l;
  os << "\n";
  std::size_t n = m.labels.size();
  for (std::size_t i = 0; i < n; ++i) {
    os << m.labels[i];
    for (std::size_t j = 0; j < n; ++j) os << "," << m.values[i * n + j];
    os << "\n";
  }
  return os.str();
}

DecodeResult decode_vector(const TensorPtr& unembed, const std::vector<double>& v, int k) {
  if (unembed->shape.size() != 2) throw config_error("decode_vector: unembedding must be 2-d");
  std::size_t d = unembed->shape[0], vocab = unembed->shape[1];
  if (v.size() != d) throw config_error("decode_vector: vector length mismatch");
  if (k < 1 || static_cast<std::size_t>(k) > vocab) throw config_error("decode_vector: k out of range");
  std::vector<double> logits(vocab, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const double* row = unembed->data.data() + i * vocab;
    for (std::size_t j = 0; j < vocab; ++j) logits[j] += v[i] * row[j];
  }
  std::vector<int> order(vocab);
  for (std::size_t j = 0; j < vocab; ++j) order[j] = static_cast<int>(j);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return logits[static_cast<std::size_t>(a)] > logits[static_cast<std::size_t>(b)]; });
  DecodeResult out;
  for (int i = 0; i < k; ++i) out.top.emplace_back(order[static_cast<std::size_t>(i)], logits[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
  return out;
}

}  // namespace headlens
