#include "headlens/contrast.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>

namespace headlens {

namespace {

void check_direction(const ParallelCorpus& corpus, Direction dir) {
  if (dir.src == dir.tgt) throw config_error("direction: src and tgt must differ");
  if (dir.src < 0 || dir.src >= corpus.config.languages || dir.tgt < 0 || dir.tgt >= corpus.config.languages)
    throw config_error("direction: language id out of range");
}

// Q x NL A y NL NL per demonstration, then Q x NL A.
std::vector<int> assemble(const VocabLayout& layout, const std::vector<std::vector<int>>& demo_srcs,
                          const std::vector<std::vector<int>>& demo_tgts, const std::vector<int>& query) {
  std::vector<int> out;
  for (std::size_t i = 0; i < demo_srcs.size(); ++i) {
    out.push_back(VocabLayout::kQ);
    out.insert(out.end(), demo_srcs[i].begin(), demo_srcs[i].end());
    out.push_back(VocabLayout::kNl);
    out.push_back(VocabLayout::kA);
    out.insert(out.end(), demo_tgts[i].begin(), demo_tgts[i].end());
    out.push_back(VocabLayout::kNl);
    out.push_back(VocabLayout::kNl);
  }
  out.push_back(VocabLayout::kQ);
  out.insert(out.end(), query.begin(), query.end());
  out.push_back(VocabLayout::kNl);
  out.push_back(VocabLayout::kA);
  return out;
}

std::vector<std::vector<int>> demo_sources(const ParallelCorpus& corpus, const PromptInstance& inst,
                                           Direction dir) {
  std::vector<std::vector<int>> srcs;
  srcs.reserve(inst.demo_ids.size());
  for (int id : inst.demo_ids)
    srcs.push_back(render(corpus.sentence(id).concepts, corpus.languages[static_cast<std::size_t>(dir.src)], corpus.layout));
  return srcs;
}

}  // namespace

std::vector<PromptInstance> partition_instances(const ParallelCorpus& corpus, int k, Rng& rng) {
  if (k < 0) throw config_error("partition: negative k");
  std::vector<int> ids = corpus.dev_ids;
  if (ids.size() < static_cast<std::size_t>(k + 1)) throw data_error("partition: dev split smaller than k+1");
  rng.shuffle(ids);
  std::size_t group = static_cast<std::size_t>(k + 1);
  std::size_t count = ids.size() / group;
  std::vector<PromptInstance> out;
  out.reserve(count);
  for (std::size_t g = 0; g < count; ++g) {
    PromptInstance inst;
    inst.k = k;
    inst.demo_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(g * group),
                         ids.begin() + static_cast<std::ptrdiff_t>(g * group + static_cast<std::size_t>(k)));
    inst.query_id = ids[g * group + static_cast<std::size_t>(k)];
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<int> build_clean(const ParallelCorpus& corpus, const PromptInstance& inst, Direction dir) {
  check_direction(corpus, dir);
  auto srcs = demo_sources(corpus, inst, dir);
  std::vector<std::vector<int>> tgts;
  tgts.reserve(inst.demo_ids.size());
  for (int id : inst.demo_ids)
    tgts.push_back(render(corpus.sentence(id).concepts, corpus.languages[static_cast<std::size_t>(dir.tgt)], corpus.layout));
  auto query = render(corpus.sentence(inst.query_id).concepts, corpus.languages[static_cast<std::size_t>(dir.src)], corpus.layout);
  return assemble(corpus.layout, srcs, tgts, query);
}

std::vector<int> corrupt_language(const ParallelCorpus& corpus, const PromptInstance& inst, Direction dir,
                                  Rng& rng, const CorruptOptions& opt) {
  check_direction(corpus, dir);
  std::vector<int> distractors;
  for (int l = 0; l < corpus.config.languages; ++l)
    if (l != dir.src && l != dir.tgt) distractors.push_back(l);
  if (distractors.empty()) throw config_error("corrupt_language: no language outside src/tgt");

  auto srcs = demo_sources(corpus, inst, dir);
  std::vector<std::vector<int>> tgts;
  tgts.reserve(inst.demo_ids.size());
  int fixed = opt.per_prompt_distractor && !inst.demo_ids.empty()
                  ? distractors[static_cast<std::size_t>(rng.next_below(distractors.size()))]
                  : -1;
  for (int id : inst.demo_ids) {
    int lang = opt.per_prompt_distractor ? fixed
                                         : distractors[static_cast<std::size_t>(rng.next_below(distractors.size()))];
    tgts.push_back(render(corpus.sentence(id).concepts, corpus.languages[static_cast<std::size_t>(lang)], corpus.layout));
  }
  auto query = render(corpus.sentence(inst.query_id).concepts, corpus.languages[static_cast<std::size_t>(dir.src)], corpus.layout);
  return assemble(corpus.layout, srcs, tgts, query);
}

std::vector<int> corrupt_equivalence(const ParallelCorpus& corpus, const PromptInstance& inst, Direction dir,
                                     Rng& rng, const CorruptOptions& opt) {
  check_direction(corpus, dir);
  auto srcs = demo_sources(corpus, inst, dir);
  std::vector<int> replacement_ids;

  if (opt.equivalence_derangement) {
    if (inst.k < 2) throw config_error("corrupt_equivalence: derangement needs k >= 2");
    // Cyclic shift: every demo gets another demo's target.
    replacement_ids.resize(inst.demo_ids.size());
    for (std::size_t i = 0; i < inst.demo_ids.size(); ++i)
      replacement_ids[i] = inst.demo_ids[(i + 1) % inst.demo_ids.size()];
  } else {
    if (corpus.dev_ids.size() < static_cast<std::size_t>(2 * inst.k + 1))
      throw data_error("corrupt_equivalence: dev split smaller than 2k+1");
    std::vector<int> pool;
    pool.reserve(corpus.dev_ids.size());
    for (int id : corpus.dev_ids)
      if (id != inst.query_id) pool.push_back(id);
    for (int own : inst.demo_ids) {
      // Uniform over the remaining pool minus this demo's own sentence.
      std::vector<int> eligible;
      eligible.reserve(pool.size());
      for (int id : pool)
        if (id != own) eligible.push_back(id);
      if (eligible.empty()) throw data_error("corrupt_equivalence: not enough distinct sentences");
      int pick = eligible[static_cast<std::size_t>(rng.next_below(eligible.size()))];
      replacement_ids.push_back(pick);
      pool.erase(std::find(pool.begin(), pool.end(), pick));
    }
  }

  std::vector<std::vector<int>> tgts;
  tgts.reserve(replacement_ids.size());
  for (int id : replacement_ids)
    tgts.push_back(render(corpus.sentence(id).concepts, corpus.languages[static_cast<std::size_t>(dir.tgt)], corpus.layout));
  auto query = render(corpus.sentence(inst.query_id).concepts, corpus.languages[static_cast<std::size_t>(dir.src)], corpus.layout);
  return assemble(corpus.layout, srcs, tgts, query);
}

std::vector<int> build_zero_anon(const VocabLayout& layout, const std::vector<int>& query_tokens) {
  return assemble(layout, {}, {}, query_tokens);
}

std::vector<int> build_zero_instructed(const VocabLayout& layout, Direction dir,
                                       const std::vector<int>& query_tokens) {
  std::vector<int> out = {layout.trans(), layout.tag(dir.src), layout.tag(dir.tgt), VocabLayout::kNl};
  auto body = assemble(layout, {}, {}, query_tokens);
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

PromptTriplet make_triplet(const ParallelCorpus& corpus, const PromptInstance& inst, Direction dir, Rng& rng,
                           const CorruptOptions& opt) {
  PromptTriplet t;
  t.instance_id = inst.query_id;
  t.clean = build_clean(corpus, inst, dir);
  t.corrupt_lang = corrupt_language(corpus, inst, dir, rng, opt);
  t.corrupt_mt = corrupt_equivalence(corpus, inst, dir, rng, opt);
  t.query = render(corpus.sentence(inst.query_id).concepts, corpus.languages[static_cast<std::size_t>(dir.src)], corpus.layout);
  t.truth = render(corpus.sentence(inst.query_id).concepts, corpus.languages[static_cast<std::size_t>(dir.tgt)], corpus.layout);
  t.truth.push_back(VocabLayout::kEos);
  return t;
}

std::string triplets_to_jsonl(const std::vector<PromptTriplet>& triplets, Direction dir) {
  std::string out;
  for (const auto& t : triplets) {
    nlohmann::ordered_json j;
    j["direction"] = dir.name();
    j["instance_id"] = t.instance_id;
    j["clean"] = t.clean;
    j["corrupt_lang"] = t.corrupt_lang;
    j["corrupt_mt"] = t.corrupt_mt;
    j["query"] = t.query;
    j["truth"] = t.truth;
    out += j.dump();
    out += "\n";
  }
  return out;
}

}  // namespace headlens
