#include <doctest.h>

#include <algorithm>
#include <set>

#include "headlens/contrast.hpp"

using namespace headlens;

namespace {

ParallelCorpus small_corpus(int sentences = 40, int languages = 6, std::uint64_t seed = 11) {
  CorpusConfig cfg;
  cfg.languages = languages;
  cfg.concepts = 10;
  cfg.len_min = 2;
  cfg.len_max = 4;
  cfg.sentences = sentences;
  cfg.dev_fraction = 0.5;
  cfg.seed = seed;
  return sample_corpus(cfg);
}

bool contains_token(const std::vector<int>& tokens, int t) {
  return std::find(tokens.begin(), tokens.end(), t) != tokens.end();
}

}  // namespace

TEST_SUITE("contrast") {

TEST_CASE("partition sizes follow the group rule") {
  auto corpus = small_corpus(24);  // 12 dev sentences
  Rng rng(1);
  auto a = partition_instances(corpus, 5, rng);
  CHECK(a.size() == 2);
  std::set<int> used;
  for (const auto& inst : a) {
    used.insert(inst.demo_ids.begin(), inst.demo_ids.end());
    used.insert(inst.query_id);
  }
  CHECK(used.size() == 12);

  auto corpus13 = small_corpus(26);  // 13 dev sentences -> one discarded
  Rng rng2(1);
  auto b = partition_instances(corpus13, 5, rng2);
  CHECK(b.size() == 2);
}

TEST_CASE("partition never reuses a sentence across instances") {
  auto corpus = small_corpus(60);
  Rng rng(9);
  auto instances = partition_instances(corpus, 4, rng);
  std::vector<int> all;
  for (const auto& inst : instances) {
    all.insert(all.end(), inst.demo_ids.begin(), inst.demo_ids.end());
    all.push_back(inst.query_id);
  }
  std::set<int> uniq(all.begin(), all.end());
  CHECK(uniq.size() == all.size());
}

TEST_CASE("partition needs k+1 dev sentences") {
  auto corpus = small_corpus(8);  // 4 dev
  Rng rng(2);
  try {
    partition_instances(corpus, 5, rng);
    FAIL("expected a throw");
  } catch (const Error& e) {
    CHECK(e.exit_code() == 3);
  }
}

TEST_CASE("clean prompt with k=0 degenerates to the bare template") {
  auto corpus = small_corpus();
  PromptInstance inst;
  inst.k = 0;
  inst.query_id = corpus.dev_ids[0];
  auto tokens = build_clean(corpus, inst, {0, 1});
  auto query = render(corpus.sentence(inst.query_id).concepts, corpus.languages[0], corpus.layout);
  std::vector<int> expect{VocabLayout::kQ};
  expect.insert(expect.end(), query.begin(), query.end());
  expect.push_back(VocabLayout::kNl);
  expect.push_back(VocabLayout::kA);
  CHECK(tokens == expect);
}

TEST_CASE("one-shot one-concept prompt matches the hand serialization") {
  // C=3, L=3; language 0 is the identity, so token = 5 + concept.
  CorpusConfig cfg;
  cfg.languages = 3;
  cfg.concepts = 3;
  cfg.len_min = 1;
  cfg.len_max = 1;
  cfg.sentences = 8;
  cfg.dev_fraction = 1.0;
  cfg.seed = 21;
  auto corpus = sample_corpus(cfg);
  PromptInstance inst;
  inst.k = 1;
  inst.demo_ids = {corpus.dev_ids[0]};
  inst.query_id = corpus.dev_ids[1];
  Direction dir{0, 1};
  auto tokens = build_clean(corpus, inst, dir);
  REQUIRE(tokens.size() == 11);

  int c_demo = corpus.sentence(inst.demo_ids[0]).concepts[0];
  int c_query = corpus.sentence(inst.query_id).concepts[0];
  const auto& l1 = corpus.languages[1];
  std::vector<int> expect{VocabLayout::kQ,  5 + c_demo,       VocabLayout::kNl, VocabLayout::kA,
                          corpus.layout.block_base(1) + l1.perm[static_cast<std::size_t>(c_demo)],
                          VocabLayout::kNl, VocabLayout::kNl, VocabLayout::kQ,  5 + c_query,
                          VocabLayout::kNl, VocabLayout::kA};
  CHECK(tokens == expect);
}

TEST_CASE("clean prompts carry no tag or instruction tokens") {
  auto corpus = small_corpus();
  Rng rng(3);
  auto instances = partition_instances(corpus, 5, rng);
  auto tokens = build_clean(corpus, instances[0], {2, 4});
  for (int l = 0; l < corpus.config.languages; ++l) CHECK(!contains_token(tokens, corpus.layout.tag(l)));
  CHECK(!contains_token(tokens, corpus.layout.trans()));
}

TEST_CASE("language corruption with three languages forces the only distractor") {
  auto corpus = small_corpus(40, 3);
  Rng prng(5);
  auto instances = partition_instances(corpus, 3, prng);
  Rng rng(7);
  auto tokens = corrupt_language(corpus, instances[0], {0, 1}, rng);
  // Demo targets must live in block 2; query side stays in block 0.
  int block2 = 0, block01 = 0;
  bool after_a = false;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    int t = tokens[i];
    if (t == VocabLayout::kA) after_a = true;
    if (t == VocabLayout::kQ) after_a = false;
    int b = corpus.layout.block_of(t);
    if (b < 0 || !after_a) continue;
    if (i >= tokens.size() - 1) continue;  // final A has no target yet
    if (b == 2) ++block2;
    if (b == 0 || b == 1) ++block01;
  }
  CHECK(block2 > 0);
  CHECK(block01 == 0);
}

TEST_CASE("language corruption keeps demo targets as translations") {
  auto corpus = small_corpus();
  Rng prng(5);
  auto instances = partition_instances(corpus, 4, prng);
  const auto& inst = instances[0];
  Direction dir{1, 2};
  Rng rng(13);
  auto tokens = corrupt_language(corpus, inst, dir, rng);

  // Walk the template: per demo, extract the target segment and map it back
  // through whichever language block it landed in.
  std::size_t off = 0;
  for (int d = 0; d < inst.k; ++d) {
    const auto& concepts = corpus.sentence(inst.demo_ids[static_cast<std::size_t>(d)]).concepts;
    std::size_t len = concepts.size();
    std::size_t y0 = off + 1 + len + 2;
    int block = corpus.layout.block_of(tokens[y0]);
    REQUIRE(block >= 0);
    CHECK(block != dir.src);
    CHECK(block != dir.tgt);
    const auto& lang = corpus.languages[static_cast<std::size_t>(block)];
    for (std::size_t j = 0; j < len; ++j) {
      int slot = tokens[y0 + j] - corpus.layout.block_base(block);
      CHECK(lang.inv_perm[static_cast<std::size_t>(slot)] == concepts[j]);
    }
    off = y0 + len + 2;
  }
}

TEST_CASE("language corruption requires a third language") {
  CorpusConfig cfg;
  cfg.languages = 3;
  cfg.concepts = 6;
  cfg.sentences = 30;
  cfg.seed = 2;
  auto corpus = sample_corpus(cfg);
  // With L=3 every direction still has one distractor, so corrupting works;
  // the error path needs a two-language roster, which the corpus refuses to
  // build. Validate via the direction check instead.
  Rng rng(1);
  PromptInstance inst;
  inst.k = 0;
  inst.query_id = corpus.dev_ids[0];
  CHECK_THROWS_AS(corrupt_language(corpus, inst, {1, 1}, rng), Error);
}

TEST_CASE("equivalence corruption never pairs a source with its own translation") {
  auto corpus = small_corpus(60);
  Rng prng(5);
  auto instances = partition_instances(corpus, 1, prng);
  Direction dir{0, 3};
  for (std::size_t i = 0; i < std::min<std::size_t>(instances.size(), 8); ++i) {
    Rng rng(100 + i);
    auto tokens = corrupt_equivalence(corpus, instances[i], dir, rng);
    const auto& inst = instances[i];
    const auto& own = corpus.sentence(inst.demo_ids[0]).concepts;
    std::size_t y0 = 1 + own.size() + 2;
    // Decode the replacement target back to concepts through the tgt block.
    const auto& lang = corpus.languages[static_cast<std::size_t>(dir.tgt)];
    std::vector<int> got;
    for (std::size_t j = y0; j < tokens.size(); ++j) {
      int b = corpus.layout.block_of(tokens[j]);
      if (b != dir.tgt) break;
      got.push_back(lang.inv_perm[static_cast<std::size_t>(tokens[j] - corpus.layout.block_base(b))]);
    }
    CHECK(got != own);
  }
}

TEST_CASE("equivalence corruption keeps targets in the target block") {
  auto corpus = small_corpus(60);
  Rng prng(5);
  auto instances = partition_instances(corpus, 4, prng);
  const auto& inst = instances[0];
  Direction dir{2, 5};
  Rng rng(17);
  auto tokens = corrupt_equivalence(corpus, inst, dir, rng);
  std::size_t off = 0;
  for (int d = 0; d < inst.k; ++d) {
    std::size_t len = corpus.sentence(inst.demo_ids[static_cast<std::size_t>(d)]).concepts.size();
    std::size_t y0 = off + 1 + len + 2;
    // Replacement sentences may differ in length; scan until the separator.
    std::size_t j = y0;
    while (tokens[j] != VocabLayout::kNl) {
      CHECK(corpus.layout.block_of(tokens[j]) == dir.tgt);
      ++j;
    }
    off = j + 2;
  }
}

TEST_CASE("equivalence replacements are distinct and exclude the query") {
  auto corpus = small_corpus(60);
  Rng prng(5);
  auto instances = partition_instances(corpus, 5, prng);
  const auto& inst = instances[0];
  Direction dir{0, 1};
  Rng rng(19);
  auto tokens = corrupt_equivalence(corpus, inst, dir, rng);

  // Corpus lookup oracle: recover each replacement's concept sequence and
  // match it against dev sentences by content.
  const auto& lang = corpus.languages[1];
  std::vector<std::vector<int>> replacements;
  std::size_t off = 0;
  for (int d = 0; d < inst.k; ++d) {
    std::size_t len = corpus.sentence(inst.demo_ids[static_cast<std::size_t>(d)]).concepts.size();
    std::size_t y0 = off + 1 + len + 2;
    std::vector<int> rep;
    std::size_t j = y0;
    while (tokens[j] != VocabLayout::kNl) {
      rep.push_back(lang.inv_perm[static_cast<std::size_t>(tokens[j] - corpus.layout.block_base(1))]);
      ++j;
    }
    CHECK(rep != corpus.sentence(inst.query_id).concepts);
    replacements.push_back(rep);
    off = j + 2;
  }
  std::set<std::vector<int>> uniq(replacements.begin(), replacements.end());
  CHECK(uniq.size() == replacements.size());
}

TEST_CASE("equivalence corruption needs 2k+1 dev sentences") {
  auto corpus = small_corpus(16);  // 8 dev, one short of 2*4+1
  Rng prng(5);
  auto instances = partition_instances(corpus, 4, prng);
  Rng rng(1);
  CHECK_THROWS_AS(corrupt_equivalence(corpus, instances[0], {0, 1}, rng), Error);
}

TEST_CASE("instruction-free zero-shot prompt") {
  auto layout = vocab_layout(3, 4);
  auto tokens = build_zero_anon(layout, {6, 7});
  CHECK(tokens == std::vector<int>{VocabLayout::kQ, 6, 7, VocabLayout::kNl, VocabLayout::kA});
  CHECK(build_zero_anon(layout, {}) == std::vector<int>{VocabLayout::kQ, VocabLayout::kNl, VocabLayout::kA});
}

TEST_CASE("instructed zero-shot prompt is fully forced") {
  auto layout = vocab_layout(3, 4);
  auto tokens = build_zero_instructed(layout, {0, 1}, {5});
  CHECK(tokens == std::vector<int>{layout.trans(), layout.tag(0), layout.tag(1), VocabLayout::kNl,
                                   VocabLayout::kQ, 5, VocabLayout::kNl, VocabLayout::kA});
  auto swapped = build_zero_instructed(layout, {1, 0}, {5});
  CHECK(swapped[1] == layout.tag(1));
  CHECK(swapped[2] == layout.tag(0));
  for (std::size_t i = 3; i < tokens.size(); ++i) CHECK(swapped[i] == tokens[i]);
  CHECK(tokens.size() == 1 + 7);  // |x| + 7
}

TEST_CASE("zero-shot equals a zero-demo clean prompt") {
  auto corpus = small_corpus();
  PromptInstance inst;
  inst.k = 0;
  inst.query_id = corpus.dev_ids[2];
  auto query = render(corpus.sentence(inst.query_id).concepts, corpus.languages[0], corpus.layout);
  CHECK(build_clean(corpus, inst, {0, 1}) == build_zero_anon(corpus.layout, query));
}

TEST_CASE("triplets share source sides, separators and query suffix") {
  auto corpus = small_corpus(60);
  Rng prng(5);
  auto instances = partition_instances(corpus, 5, prng);
  Rng rng(23);
  auto t = make_triplet(corpus, instances[0], {1, 4}, rng);

  REQUIRE(t.clean.size() >= t.query.size() + 3);
  // The final "Q x NL A" must be identical across all three prompts.
  std::size_t tail = t.query.size() + 3;
  auto suffix = [&](const std::vector<int>& v) {
    return std::vector<int>(v.end() - static_cast<std::ptrdiff_t>(tail), v.end());
  };
  CHECK(suffix(t.clean) == suffix(t.corrupt_lang));
  CHECK(suffix(t.clean) == suffix(t.corrupt_mt));

  // Source segments: the i-th Q...NL block matches position-wise.
  auto q_positions = [&](const std::vector<int>& v) {
    std::vector<std::size_t> qs;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v[i] == VocabLayout::kQ) qs.push_back(i);
    return qs;
  };
  auto qc = q_positions(t.clean), ql = q_positions(t.corrupt_lang);
  REQUIRE(qc.size() == ql.size());
  for (std::size_t i = 0; i < qc.size(); ++i) {
    std::size_t a = qc[i], b = ql[i];
    while (t.clean[a] != VocabLayout::kNl) {
      CHECK(t.clean[a] == t.corrupt_lang[b]);
      ++a;
      ++b;
    }
  }
  CHECK(t.truth.back() == VocabLayout::kEos);
  CHECK(t.truth.size() >= 2);
}

TEST_CASE("corruption draws are deterministic under the seed") {
  auto corpus = small_corpus(60);
  Rng prng(5);
  auto instances = partition_instances(corpus, 5, prng);
  Rng r1(99), r2(99);
  CHECK(make_triplet(corpus, instances[0], {0, 1}, r1).corrupt_lang ==
        make_triplet(corpus, instances[0], {0, 1}, r2).corrupt_lang);
}

TEST_CASE("jsonl export carries the audit fields") {
  auto corpus = small_corpus(60);
  Rng prng(5);
  auto instances = partition_instances(corpus, 2, prng);
  Rng rng(1);
  std::vector<PromptTriplet> ts{make_triplet(corpus, instances[0], {0, 1}, rng)};
  auto text = triplets_to_jsonl(ts, {0, 1});
  CHECK(text.find("\"direction\":\"0-1\"") != std::string::npos);
  CHECK(text.find("\"corrupt_mt\"") != std::string::npos);
  CHECK(text.back() == '\n');
}

}  // TEST_SUITE
