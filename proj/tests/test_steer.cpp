#include <doctest.h>

#include <cmath>
#include <map>

#include "headlens/steer.hpp"

using namespace headlens;

namespace {

ParallelCorpus steer_corpus(std::uint64_t seed = 61) {
  CorpusConfig cfg;
  cfg.languages = 4;
  cfg.concepts = 8;
  cfg.len_min = 2;
  cfg.len_max = 3;
  cfg.sentences = 60;
  cfg.dev_fraction = 0.5;
  cfg.seed = seed;
  return sample_corpus(cfg);
}

ModelConfig tiny_model(const ParallelCorpus& corpus, std::uint64_t seed = 5) {
  ModelConfig mc;
  mc.n_layers = 2;
  mc.n_heads = 2;
  mc.d_model = 16;
  mc.d_mlp = 64;
  mc.vocab_size = corpus.layout.vocab_size();
  mc.max_seq = 128;
  mc.seed = seed;
  return mc;
}

MeanActivations fake_acts(const ModelConfig& mc, Rng& rng) {
  MeanActivations acts;
  acts.n_layers = mc.n_layers;
  acts.n_heads = mc.n_heads;
  acts.d_head = mc.d_head();
  acts.count = 1;
  acts.z.resize(static_cast<std::size_t>(mc.n_layers * mc.n_heads));
  for (auto& z : acts.z) {
    z.resize(static_cast<std::size_t>(mc.d_head()));
    for (auto& x : z) x = rng.next_normal();
  }
  return acts;
}

}  // namespace

TEST_SUITE("steer") {

TEST_CASE("a zero activation builds a zero vector") {
  auto corpus = steer_corpus();
  auto w = init_weights(tiny_model(corpus));
  MeanActivations acts;
  acts.n_layers = 2;
  acts.n_heads = 2;
  acts.d_head = 8;
  acts.count = 1;
  acts.z.assign(4, std::vector<double>(8, 0.0));
  auto vecs = build_vectors(w, acts, {{0, 1}}, {0, 1}, 5, CorruptionKind::lang);
  REQUIRE(vecs.size() == 1);
  for (double v : vecs[0].v) CHECK(v == 0.0);
}

TEST_CASE("a basis activation picks out one projection row") {
  auto corpus = steer_corpus();
  auto w = init_weights(tiny_model(corpus));
  MeanActivations acts;
  acts.n_layers = 2;
  acts.n_heads = 2;
  acts.d_head = 8;
  acts.count = 1;
  acts.z.assign(4, std::vector<double>(8, 0.0));
  acts.z[1][0] = 1.0;  // head (0,1), first coordinate
  auto vecs = build_vectors(w, acts, {{0, 1}}, {0, 1}, 5, CorruptionKind::lang);
  // Head 1 owns rows [8, 16) of wo; e0 picks row 8.
  for (int c = 0; c < 16; ++c)
    CHECK(vecs[0].v[static_cast<std::size_t>(c)] == w.layers[0].wo->at(8, static_cast<std::size_t>(c)));
}

TEST_CASE("vector equals an independent dot-product computation") {
  auto corpus = steer_corpus();
  auto w = init_weights(tiny_model(corpus));
  Rng rng(9);
  auto acts = fake_acts(w.config, rng);
  HeadId id{1, 0};
  auto vecs = build_vectors(w, acts, {id}, {2, 3}, 5, CorruptionKind::mt);
  const auto& z = acts.z_of(id);
  for (int c = 0; c < 16; ++c) {
    double expect = 0.0;
    for (int r = 0; r < 8; ++r) expect += z[static_cast<std::size_t>(r)] * w.layers[1].wo->at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
    CHECK(vecs[0].v[static_cast<std::size_t>(c)] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("missing head in the activation table is a lookup error") {
  auto corpus = steer_corpus();
  auto w = init_weights(tiny_model(corpus));
  Rng rng(9);
  auto acts = fake_acts(w.config, rng);
  CHECK_THROWS_AS(build_vectors(w, acts, {{5, 0}}, {0, 1}, 5, CorruptionKind::lang), Error);
}

TEST_CASE("steering with alpha zero reproduces the baseline exactly") {
  auto corpus = steer_corpus();
  auto w = init_weights(tiny_model(corpus));
  Rng rng(11);
  auto acts = fake_acts(w.config, rng);
  SteerPlan plan;
  plan.lang = build_vectors(w, acts, {{0, 0}}, {0, 1}, 5, CorruptionKind::lang);
  plan.equiv = build_vectors(w, acts, {{1, 1}}, {0, 1}, 5, CorruptionKind::mt);
  plan.alpha = 0.0;
  auto prompts = make_eval_prompts(corpus, {0, 1}, PromptStyle::anon, 4, 3);
  for (const auto& p : prompts) {
    auto base = generate_greedy(w, p.tokens, {}, 20, VocabLayout::kEos);
    auto steered = steered_generate(w, p.tokens, plan, 20, VocabLayout::kEos);
    CHECK(base == steered);
  }
}

TEST_CASE("an empty plan is a no-op") {
  auto corpus = steer_corpus();
  auto w = init_weights(tiny_model(corpus));
  SteerPlan plan;
  auto prompts = make_eval_prompts(corpus, {1, 0}, PromptStyle::anon, 2, 3);
  auto base = generate_greedy(w, prompts[0].tokens, {}, 20, VocabLayout::kEos);
  CHECK(steered_generate(w, prompts[0].tokens, plan, 20, VocabLayout::kEos) == base);
}

TEST_CASE("two vectors at one layer equal their single summed vector") {
  auto corpus = steer_corpus();
  auto w = init_weights(tiny_model(corpus));
  Rng rng(13);
  auto acts = fake_acts(w.config, rng);
  auto both = build_vectors(w, acts, {{0, 0}, {0, 1}}, {0, 1}, 5, CorruptionKind::lang);
  SteerPlan two;
  two.lang = both;
  two.alpha = 1.0;

  SteeringVector summed = both[0];
  for (std::size_t i = 0; i < summed.v.size(); ++i) summed.v[i] = both[0].v[i] + both[1].v[i];
  SteerPlan one;
  one.lang = {summed};
  one.alpha = 1.0;

  auto iv_two = plan_to_interventions(two, w.config);
  auto iv_one = plan_to_interventions(one, w.config);
  REQUIRE(iv_two.size() == 1);
  REQUIRE(iv_one.size() == 1);
  const auto& a = std::get<AddResidual>(iv_two[0]);
  const auto& b = std::get<AddResidual>(iv_one[0]);
  CHECK(a.layer == b.layer);
  CHECK(a.v == b.v);
}

TEST_CASE("the injected residual delta is alpha times the vector sum") {
  auto corpus = steer_corpus();
  auto w = init_weights(tiny_model(corpus));
  Rng rng(17);
  auto acts = fake_acts(w.config, rng);
  SteerPlan plan;
  plan.lang = build_vectors(w, acts, {{1, 0}, {1, 1}}, {0, 1}, 5, CorruptionKind::lang);
  plan.alpha = 2.0;

  std::vector<int> tokens{1, 2, 3, 4};
  auto base = forward(w, tokens);
  auto steered = forward(w, tokens, plan_to_interventions(plan, w.config), nullptr, true, 0);
  for (std::size_t p = 0; p < tokens.size(); ++p)
    for (int c = 0; c < 16; ++c) {
      double delta = steered.trace.residual[1]->at(p, static_cast<std::size_t>(c)) -
                     base.trace.residual[1]->at(p, static_cast<std::size_t>(c));
      double expect = plan.alpha * (plan.lang[0].v[static_cast<std::size_t>(c)] + plan.lang[1].v[static_cast<std::size_t>(c)]);
      CHECK(delta == doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("steering touches generated positions only") {
  auto corpus = steer_corpus();
  auto w = init_weights(tiny_model(corpus));
  Rng rng(19);
  auto acts = fake_acts(w.config, rng);
  SteerPlan plan;
  plan.lang = build_vectors(w, acts, {{0, 0}}, {0, 1}, 5, CorruptionKind::lang);
  plan.alpha = 3.0;
  std::vector<int> tokens{1, 2, 3, 4, 5};
  auto base = forward(w, tokens);
  // add_residual_from = 3: positions 0..2 are prompt, 3..4 steered.
  auto steered = forward(w, tokens, plan_to_interventions(plan, w.config), nullptr, true, 3);
  for (std::size_t p = 0; p < 3; ++p)
    for (int c = 0; c < 16; ++c)
      CHECK(steered.trace.residual[0]->at(p, static_cast<std::size_t>(c)) ==
            base.trace.residual[0]->at(p, static_cast<std::size_t>(c)));
  for (std::size_t p = 3; p < 5; ++p) {
    double diff = 0.0;
    for (int c = 0; c < 16; ++c)
      diff += std::abs(steered.trace.residual[0]->at(p, static_cast<std::size_t>(c)) -
                       base.trace.residual[0]->at(p, static_cast<std::size_t>(c)));
    CHECK(diff > 0.0);
  }
}

TEST_CASE("ablating an empty head set is the baseline") {
  auto corpus = steer_corpus();
  auto w = init_weights(tiny_model(corpus));
  auto prompts = make_eval_prompts(corpus, {0, 1}, PromptStyle::instructed, 2, 7);
  AblatePlan plan;
  Rng rng(1);
  auto gen = ablated_generate(w, prompts[0].tokens, plan, rng, 20, VocabLayout::kEos);
  CHECK(gen == generate_greedy(w, prompts[0].tokens, {}, 20, VocabLayout::kEos));
}

TEST_CASE("zeroing every head equals the attention-free model") {
  auto corpus = steer_corpus();
  auto w = init_weights(tiny_model(corpus));
  AblatePlan plan;
  for (int l = 0; l < 2; ++l)
    for (int h = 0; h < 2; ++h) plan.heads.push_back({l, h});
  auto prompts = make_eval_prompts(corpus, {0, 1}, PromptStyle::anon, 2, 7);
  Rng rng(1);
  auto gen = ablated_generate(w, prompts[0].tokens, plan, rng, 10, VocabLayout::kEos);

  // Oracle: greedy decode where each step ignores attention entirely.
  std::vector<int> tokens = prompts[0].tokens;
  std::vector<int> expect;
  for (int step = 0; step < 10; ++step) {
    std::vector<int> pos(tokens.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
    TensorPtr x = add(nullptr, rows_gather(nullptr, w.tok_emb, tokens), rows_gather(nullptr, w.pos_emb, pos));
    for (const auto& l : w.layers) {
      auto h2 = rmsnorm(nullptr, x, l.mlp_norm);
      x = add(nullptr, x, matmul(nullptr, silu(nullptr, matmul(nullptr, h2, l.w_in)), l.w_out));
    }
    auto logits = matmul(nullptr, rmsnorm(nullptr, x, w.final_norm), w.unembed);
    std::size_t vocab = static_cast<std::size_t>(w.config.vocab_size);
    const double* row = logits->data.data() + (tokens.size() - 1) * vocab;
    int best = 0;
    for (std::size_t j = 1; j < vocab; ++j)
      if (row[j] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
    tokens.push_back(best);
    expect.push_back(best);
    if (best == VocabLayout::kEos) break;
  }
  CHECK(gen == expect);
}

TEST_CASE("control draws are seeded and uniform over the grid") {
  auto corpus = steer_corpus();
  auto w = init_weights(tiny_model(corpus));
  Rng a(42), b(42);
  auto ha = draw_control_heads(a, w.config, 2);
  auto hb = draw_control_heads(b, w.config, 2);
  CHECK(ha == hb);

  // Frequency over many draws: every head near count * draws / total.
  std::map<HeadId, int> freq;
  Rng rng(7);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i)
    for (HeadId h : draw_control_heads(rng, w.config, 2)) freq[h] += 1;
  double expect = 2.0 * draws / 4.0;
  for (const auto& [h, c] : freq) {
    CHECK(c > expect * 0.9);
    CHECK(c < expect * 1.1);
  }
}

TEST_CASE("transfer plans mix provenance and validate inputs") {
  auto corpus = steer_corpus();
  auto w = init_weights(tiny_model(corpus));
  Rng rng(23);
  auto acts = fake_acts(w.config, rng);
  auto lang = build_vectors(w, acts, {{0, 0}}, {0, 1}, 5, CorruptionKind::lang);
  auto equiv = build_vectors(w, acts, {{1, 1}}, {2, 3}, 5, CorruptionKind::mt);
  auto plan = transfer_plan(lang, equiv, 1.0);
  CHECK(plan.lang[0].source_direction == Direction{0, 1});
  CHECK(plan.equiv[0].source_direction == Direction{2, 3});
  CHECK_THROWS_AS(transfer_plan({}, equiv, 1.0), Error);

  // Matched-direction transfer equals the plain combined plan.
  auto equiv_same = build_vectors(w, acts, {{1, 1}}, {0, 1}, 5, CorruptionKind::mt);
  auto matched = transfer_plan(lang, equiv_same, 1.0);
  SteerPlan combined;
  combined.lang = lang;
  combined.equiv = equiv_same;
  auto iva = plan_to_interventions(matched, w.config);
  auto ivb = plan_to_interventions(combined, w.config);
  REQUIRE(iva.size() == ivb.size());
  for (std::size_t i = 0; i < iva.size(); ++i)
    CHECK(std::get<AddResidual>(iva[i]).v == std::get<AddResidual>(ivb[i]).v);
}

TEST_CASE("eval prompt sets are deterministic per (direction, seed)") {
  auto corpus = steer_corpus();
  auto a = make_eval_prompts(corpus, {0, 1}, PromptStyle::anon, 6, 99);
  auto b = make_eval_prompts(corpus, {0, 1}, PromptStyle::anon, 6, 99);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].tokens == b[i].tokens);
    CHECK(a[i].truth == b[i].truth);
  }
  auto c = make_eval_prompts(corpus, {0, 1}, PromptStyle::anon, 6, 100);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) any_diff |= a[i].query_id != c[i].query_id;
  CHECK(any_diff);
}

TEST_CASE("control generations are reproducible across worker counts") {
  auto corpus = steer_corpus();
  auto w = init_weights(tiny_model(corpus));
  auto prompts = make_eval_prompts(corpus, {0, 1}, PromptStyle::instructed, 4, 5);
  setenv("HEADLENS_WORKERS", "1", 1);
  auto serial = run_ablated_control(w, prompts, 2, 77, 10);
  setenv("HEADLENS_WORKERS", "3", 1);
  auto parallel = run_ablated_control(w, prompts, 2, 77, 10);
  setenv("HEADLENS_WORKERS", "1", 1);
  CHECK(serial == parallel);
}

TEST_CASE("score_generations aggregates the metric set") {
  auto corpus = steer_corpus();
  auto prompts = make_eval_prompts(corpus, {0, 1}, PromptStyle::anon, 3, 15);
  std::vector<std::vector<int>> gens;
  for (const auto& p : prompts) gens.push_back(p.truth);
  auto r = score_generations(corpus.layout, 1, gens, prompts);
  CHECK(r.exact_match == 1.0);
  CHECK(r.bleu == doctest::Approx(100.0));
  CHECK(r.token_accuracy == 1.0);
  CHECK(r.language_pass == 1.0);
  CHECK(r.prompts == 3);
}

}  // TEST_SUITE
