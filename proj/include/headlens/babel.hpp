#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "headlens/errors.hpp"
#include "headlens/rng.hpp"

namespace headlens {

// Token id plan for L languages over C shared concepts:
//   0..4           specials (PAD, Q, A, NL, EOS)
//   5 + l*C ..     per-language word block, C ids each
//   5 + L*C + l    language tag tokens
//   5 + L*C + L    the translate-instruction token
struct VocabLayout {
  int languages = 0;
  int concepts = 0;

  static constexpr int kPad = 0;
  static constexpr int kQ = 1;
  static constexpr int kA = 2;
  static constexpr int kNl = 3;
  static constexpr int kEos = 4;

  int block_base(int lang) const { return 5 + lang * concepts; }
  int tag(int lang) const { return 5 + languages * concepts + lang; }
  int trans() const { return 5 + languages * concepts + languages; }
  int vocab_size() const { return trans() + 1; }
  bool is_special(int token) const { return token >= 0 && token < 5; }
  bool in_block(int token, int lang) const {
    return token >= block_base(lang) && token < block_base(lang) + concepts;
  }
  // Language owning this token's block, or -1 for specials/tags/instruction.
  int block_of(int token) const {
    if (token < 5 || token >= 5 + languages * concepts) return -1;
    return (token - 5) / concepts;
  }
};

VocabLayout vocab_layout(int languages, int concepts);

// A language is a permutation of the concept space planted in its own block;
// language 0 is the identity.
struct LanguageSpec {
  int id = 0;
  std::vector<int> perm;      // concept -> slot within the block
  std::vector<int> inv_perm;  // slot -> concept
};

std::vector<LanguageSpec> build_languages(int languages, int concepts, Rng& rng);

struct CorpusConfig {
  int languages = 6;
  int concepts = 50;
  int len_min = 3;
  int len_max = 8;
  int sentences = 1024;
  double dev_fraction = 0.5;
  std::uint64_t seed = 0;
};

enum class Split { dev, devtest };

struct SentenceEntry {
  int id = 0;
  std::vector<int> concepts;
  Split split = Split::dev;
};

struct ParallelCorpus {
  CorpusConfig config;
  VocabLayout layout;
  std::vector<LanguageSpec> languages;
  std::vector<SentenceEntry> sentences;
  std::vector<int> dev_ids;
  std::vector<int> devtest_ids;

  const SentenceEntry& sentence(int id) const { return sentences[static_cast<std::size_t>(id)]; }
};

std::vector<int> render(const std::vector<int>& concepts, const LanguageSpec& lang, const VocabLayout& layout);

ParallelCorpus sample_corpus(const CorpusConfig& config);

std::string corpus_to_json(const ParallelCorpus& corpus);
ParallelCorpus corpus_from_json(const std::string& text);

}  // namespace headlens
