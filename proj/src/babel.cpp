#include "headlens/babel.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <numeric>

namespace headlens {

using ordered_json = nlohmann::ordered_json;

VocabLayout vocab_layout(int languages, int concepts) {
  if (languages < 1 || concepts < 1) throw config_error("vocab_layout: need at least one language and concept");
  VocabLayout layout;
  layout.languages = languages;
  layout.concepts = concepts;
  return layout;
}

std::vector<LanguageSpec> build_languages(int languages, int concepts, Rng& rng) {
  std::vector<LanguageSpec> out;
  out.reserve(static_cast<std::size_t>(languages));
  for (int l = 0; l < languages; ++l) {
    LanguageSpec spec;
    spec.id = l;
    spec.perm.resize(static_cast<std::size_t>(concepts));
    std::iota(spec.perm.begin(), spec.perm.end(), 0);
    if (l != 0) rng.shuffle(spec.perm);
    spec.inv_perm.resize(static_cast<std::size_t>(concepts));
    for (int c = 0; c < concepts; ++c) spec.inv_perm[static_cast<std::size_t>(spec.perm[static_cast<std::size_t>(c)])] = c;
    out.push_back(std::move(spec));
  }
  return out;
}

std::vector<int> render(const std::vector<int>& concepts, const LanguageSpec& lang, const VocabLayout& layout) {
  std::vector<int> tokens;
  tokens.reserve(concepts.size());
  int base = layout.block_base(lang.id);
  for (int c : concepts) {
    if (c < 0 || c >= layout.concepts) throw data_error("render: concept out of range");
    tokens.push_back(base + lang.perm[static_cast<std::size_t>(c)]);
  }
  return tokens;
}

ParallelCorpus sample_corpus(const CorpusConfig& config) {
  if (config.languages < 3) throw config_error("corpus: need at least 3 languages");
  if (config.concepts < 1) throw config_error("corpus: need at least 1 concept");
  if (config.len_min < 1 || config.len_max < config.len_min) throw config_error("corpus: bad length range");
  if (config.sentences < 1) throw config_error("corpus: need at least 1 sentence");
  if (config.dev_fraction < 0.0 || config.dev_fraction > 1.0) throw config_error("corpus: dev_fraction outside [0,1]");

  ParallelCorpus corpus;
  corpus.config = config;
  corpus.layout = vocab_layout(config.languages, config.concepts);

  Rng lang_rng(seed_stream(config.seed, "languages"));
  corpus.languages = build_languages(config.languages, config.concepts, lang_rng);

  Rng rng(seed_stream(config.seed, "sentences"));
  corpus.sentences.reserve(static_cast<std::size_t>(config.sentences));
  for (int i = 0; i < config.sentences; ++i) {
    SentenceEntry s;
    s.id = i;
    int len = rng.next_int(config.len_min, config.len_max);
    s.concepts.reserve(static_cast<std::size_t>(len));
    for (int j = 0; j < len; ++j) s.concepts.push_back(static_cast<int>(rng.next_below(static_cast<std::uint64_t>(config.concepts))));
    corpus.sentences.push_back(std::move(s));
  }

  Rng split_rng(seed_stream(config.seed, "split"));
  std::vector<int> order(static_cast<std::size_t>(config.sentences));
  std::iota(order.begin(), order.end(), 0);
  split_rng.shuffle(order);
  auto dev_count = static_cast<std::size_t>(std::llround(config.dev_fraction * config.sentences));
  for (std::size_t i = 0; i < order.size(); ++i) {
    int id = order[i];
    Split split = i < dev_count ? Split::dev : Split::devtest;
    corpus.sentences[static_cast<std::size_t>(id)].split = split;
  }
  for (const auto& s : corpus.sentences)
    (s.split == Split::dev ? corpus.dev_ids : corpus.devtest_ids).push_back(s.id);
  return corpus;
}

std::string corpus_to_json(const ParallelCorpus& corpus) {
  ordered_json j;
  j["config"] = {{"languages", corpus.config.languages}, {"concepts", corpus.config.concepts},
                 {"len_min", corpus.config.len_min},     {"len_max", corpus.config.len_max},
                 {"sentences", corpus.config.sentences}, {"dev_fraction", corpus.config.dev_fraction},
                 {"seed", corpus.config.seed}};
  j["languages"] = ordered_json::array();
  for (const auto& lang : corpus.languages) j["languages"].push_back({{"id", lang.id}, {"permutation", lang.perm}});
  j["sentences"] = ordered_json::array();
  for (const auto& s : corpus.sentences)
    j["sentences"].push_back(
        {{"id", s.id}, {"concepts", s.concepts}, {"split", s.split == Split::dev ? "dev" : "devtest"}});
  return j.dump(2) + "\n";
}

ParallelCorpus corpus_from_json(const std::string& text) {
  ordered_json j = ordered_json::parse(text);
  ParallelCorpus corpus;
  const auto& c = j.at("config");
  corpus.config.languages = c.at("languages").get<int>();
  corpus.config.concepts = c.at("concepts").get<int>();
  corpus.config.len_min = c.at("len_min").get<int>();
  corpus.config.len_max = c.at("len_max").get<int>();
  corpus.config.sentences = c.at("sentences").get<int>();
  corpus.config.dev_fraction = c.at("dev_fraction").get<double>();
  corpus.config.seed = c.at("seed").get<std::uint64_t>();
  corpus.layout = vocab_layout(corpus.config.languages, corpus.config.concepts);
  for (const auto& lj : j.at("languages")) {
    LanguageSpec spec;
    spec.id = lj.at("id").get<int>();
    spec.perm = lj.at("permutation").get<std::vector<int>>();
    spec.inv_perm.resize(spec.perm.size());
    for (std::size_t s = 0; s < spec.perm.size(); ++s) spec.inv_perm[static_cast<std::size_t>(spec.perm[s])] = static_cast<int>(s);
    corpus.languages.push_back(std::move(spec));
  }
  for (const auto& sj : j.at("sentences")) {
    SentenceEntry s;
    s.id = sj.at("id").get<int>();
    s.concepts = sj.at("concepts").get<std::vector<int>>();
    s.split = sj.at("split").get<std::string>() == "dev" ? Split::dev : Split::devtest;
    corpus.sentences.push_back(std::move(s));
  }
  for (const auto& s : corpus.sentences)
    (s.split == Split::dev ? corpus.dev_ids : corpus.devtest_ids).push_back(s.id);
  return corpus;
}

}  // namespace headlens
