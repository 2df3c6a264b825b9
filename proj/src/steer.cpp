#include "headlens/steer.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "headlens/parallel.hpp"

namespace headlens {

std::vector<SteeringVector> build_vectors(const ModelWeights& w, const MeanActivations& acts,
                                          const std::vector<HeadId>& heads, Direction source_direction, int k,
                                          CorruptionKind kind) {
  const ModelConfig& cfg = w.config;
  if (acts.n_layers != cfg.n_layers || acts.n_heads != cfg.n_heads)
    throw config_error("build_vectors: activations do not match model");
  std::vector<SteeringVector> out;
  out.reserve(heads.size());
  int dh = cfg.d_head();
  for (HeadId id : heads) {
    if (id.layer < 0 || id.layer >= cfg.n_layers || id.head < 0 || id.head >= cfg.n_heads)
      throw config_error("build_vectors: head out of range");
    const auto& z = acts.z_of(id);
    const TensorPtr& wo = w.layers[static_cast<std::size_t>(id.layer)].wo;
    SteeringVector sv;
    sv.head = id;
    sv.source_direction = source_direction;
    sv.k = k;
    sv.kind = kind;
    sv.v.assign(static_cast<std::size_t>(cfg.d_model), 0.0);
    // v = z_mean times the head's rows of the output projection.
    for (int r = 0; r < dh; ++r) {
      const double* row = wo->data.data() + static_cast<std::size_t>(id.head * dh + r) * static_cast<std::size_t>(cfg.d_model);
      double zr = z[static_cast<std::size_t>(r)];
      for (int c = 0; c < cfg.d_model; ++c) sv.v[static_cast<std::size_t>(c)] += zr * row[c];
    }
    out.push_back(std::move(sv));
  }
  return out;
}

std::vector<Intervention> plan_to_interventions(const SteerPlan& plan, const ModelConfig& cfg) {
  std::map<int, std::vector<double>> per_layer;
  auto fold = [&](const std::vector<SteeringVector>& vs) {
    for (const auto& sv : vs) {
      if (sv.v.size() != static_cast<std::size_t>(cfg.d_model)) throw config_error("steer plan: vector width mismatch");
      auto& acc = per_layer[sv.head.layer];
      if (acc.empty()) acc.assign(static_cast<std::size_t>(cfg.d_model), 0.0);
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += plan.alpha * sv.v[j];
    }
  };
  fold(plan.lang);
  fold(plan.equiv);
  std::vector<Intervention> out;
  for (auto& [layer, v] : per_layer) out.push_back(AddResidual{layer, std::move(v)});
  return out;
}

std::vector<int> steered_generate(const ModelWeights& w, const std::vector<int>& prompt, const SteerPlan& plan,
                                  int max_new, int eos_token) {
  return generate_greedy(w, prompt, plan_to_interventions(plan, w.config), max_new, eos_token);
}

std::vector<HeadId> draw_control_heads(Rng& rng, const ModelConfig& cfg, int count) {
  int total = cfg.n_layers * cfg.n_heads;
  if (count < 0 || count > total) throw config_error("control heads: count out of range");
  std::vector<HeadId> out;
  out.reserve(static_cast<std::size_t>(count));
  std::vector<bool> used(static_cast<std::size_t>(total), false);
  while (static_cast<int>(out.size()) < count) {
    int pick = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(total)));
    if (used[static_cast<std::size_t>(pick)]) continue;
    used[static_cast<std::size_t>(pick)] = true;
    out.push_back({pick / cfg.n_heads, pick % cfg.n_heads});
  }
  return out;
}

std::vector<int> ablated_generate(const ModelWeights& w, const std::vector<int>& prompt, const AblatePlan& plan,
                                  Rng& rng, int max_new, int eos_token) {
  std::vector<HeadId> heads = plan.control ? draw_control_heads(rng, w.config, plan.control_size) : plan.heads;
  std::vector<Intervention> iv;
  iv.reserve(heads.size());
  for (HeadId id : heads) iv.push_back(ZeroHead{id.layer, id.head});
  return generate_greedy(w, prompt, iv, max_new, eos_token);
}

SteerPlan transfer_plan(const std::vector<SteeringVector>& lang_vectors,
                        const std::vector<SteeringVector>& equiv_vectors, double alpha) {
  if (lang_vectors.empty() || equiv_vectors.empty()) throw config_error("transfer_plan: both vector sets required");
  SteerPlan plan;
  plan.lang = lang_vectors;
  plan.equiv = equiv_vectors;
  plan.alpha = alpha;
  return plan;
}

std::vector<EvalPrompt> make_eval_prompts(const ParallelCorpus& corpus, Direction dir, PromptStyle style, int n,
                                          std::uint64_t seed, int k) {
  if (static_cast<std::size_t>(n) > corpus.devtest_ids.size())
    throw data_error("eval prompts: devtest split smaller than requested count");
  Rng rng(seed_stream(seed, "eval:" + dir.name()));
  std::vector<int> queries = corpus.devtest_ids;
  rng.shuffle(queries);
  queries.resize(static_cast<std::size_t>(n));

  std::vector<EvalPrompt> out;
  out.reserve(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    EvalPrompt p;
    p.query_id = queries[i];
    auto query = render(corpus.sentence(p.query_id).concepts, corpus.languages[static_cast<std::size_t>(dir.src)],
                        corpus.layout);
    switch (style) {
      case PromptStyle::anon:
        p.tokens = build_zero_anon(corpus.layout, query);
        break;
      case PromptStyle::instructed:
        p.tokens = build_zero_instructed(corpus.layout, dir, query);
        break;
      case PromptStyle::fewshot: {
        PromptInstance inst;
        inst.k = k;
        while (static_cast<int>(inst.demo_ids.size()) < k) {
          int id = corpus.dev_ids[static_cast<std::size_t>(rng.next_below(corpus.dev_ids.size()))];
          if (std::find(inst.demo_ids.begin(), inst.demo_ids.end(), id) == inst.demo_ids.end())
            inst.demo_ids.push_back(id);
        }
        inst.query_id = p.query_id;
        p.tokens = build_clean(corpus, inst, dir);
        break;
      }
    }
    p.truth = render(corpus.sentence(p.query_id).concepts, corpus.languages[static_cast<std::size_t>(dir.tgt)],
                     corpus.layout);
    p.truth.push_back(VocabLayout::kEos);
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

std::vector<std::vector<int>> run_with(const ModelWeights& w, const std::vector<EvalPrompt>& prompts,
                                       const std::vector<Intervention>& iv, int max_new) {
  std::vector<std::vector<int>> gens(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t i) {
    gens[i] = generate_greedy(w, prompts[i].tokens, iv, max_new, VocabLayout::kEos);
  });
  return gens;
}

}  // namespace

std::vector<std::vector<int>> run_plain(const ModelWeights& w, const std::vector<EvalPrompt>& prompts, int max_new) {
  return run_with(w, prompts, {}, max_new);
}

std::vector<std::vector<int>> run_steered(const ModelWeights& w, const std::vector<EvalPrompt>& prompts,
                                          const SteerPlan& plan, int max_new) {
  return run_with(w, prompts, plan_to_interventions(plan, w.config), max_new);
}

std::vector<std::vector<int>> run_ablated(const ModelWeights& w, const std::vector<EvalPrompt>& prompts,
                                          const std::vector<HeadId>& heads, int max_new) {
  std::vector<Intervention> iv;
  iv.reserve(heads.size());
  for (HeadId id : heads) iv.push_back(ZeroHead{id.layer, id.head});
  return run_with(w, prompts, iv, max_new);
}

std::vector<std::vector<int>> run_ablated_control(const ModelWeights& w, const std::vector<EvalPrompt>& prompts,
                                                  int control_size, std::uint64_t seed, int max_new) {
  std::vector<std::vector<int>> gens(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t i) {
    Rng rng(seed_stream(seed, "control:" + std::to_string(i)));
    AblatePlan plan;
    plan.control = true;
    plan.control_size = control_size;
    gens[i] = ablated_generate(w, prompts[i].tokens, plan, rng, max_new, VocabLayout::kEos);
  });
  return gens;
}

EvalReport score_generations(const VocabLayout& layout, int tgt_lang,
                             const std::vector<std::vector<int>>& generations,
                             const std::vector<EvalPrompt>& prompts, double tau) {
  if (generations.size() != prompts.size()) throw config_error("score: generation/prompt count mismatch");
  if (prompts.empty()) throw data_error("score: no prompts");
  EvalReport report;
  report.prompts = static_cast<int>(prompts.size());
  std::vector<std::vector<int>> refs;
  refs.reserve(prompts.size());
  for (const auto& p : prompts) refs.push_back(p.truth);
  report.bleu = bleu(generations, refs);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    report.exact_match += exact_match(generations[i], prompts[i].truth) ? 1.0 : 0.0;
    report.token_accuracy += token_accuracy(generations[i], prompts[i].truth);
    auto lacc = language_accuracy(generations[i], layout, tgt_lang, tau);
    report.language_fraction += lacc.fraction;
    report.language_pass += lacc.pass ? 1.0 : 0.0;
  }
  double n = static_cast<double>(prompts.size());
  report.exact_match /= n;
  report.token_accuracy /= n;
  report.language_fraction /= n;
  report.language_pass /= n;
  return report;
}

IdentifyOutcome run_identify(const ModelWeights& w, const ParallelCorpus& corpus, const PipelineConfig& cfg) {
  Rng part_rng(seed_stream(cfg.seed, "partition:" + cfg.direction.name() + ":k" + std::to_string(cfg.k)));
  auto instances = partition_instances(corpus, cfg.k, part_rng);
  if (cfg.instances > 0 && static_cast<int>(instances.size()) > cfg.instances)
    instances.resize(static_cast<std::size_t>(cfg.instances));
  if (instances.empty()) throw data_error("identify: no instances available");

  std::vector<PromptTriplet> triplets;
  triplets.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    Rng rng(seed_stream(cfg.seed, "corrupt:" + cfg.direction.name() + ":" + std::to_string(i)));
    triplets.push_back(make_triplet(corpus, instances[i], cfg.direction, rng));
  }

  IdentifyOutcome out;
  SweepOptions opts;
  opts.strategy = cfg.strategy;
  opts.seed = seed_stream(cfg.seed, "sweep:" + cfg.direction.name());
  out.lang = sweep(w, triplets, CorruptionKind::lang, opts);
  out.mt = sweep(w, triplets, CorruptionKind::mt, opts);
  out.lang.matrix.direction = cfg.direction.name();
  out.mt.matrix.direction = cfg.direction.name();
  out.lang.matrix.k = cfg.k;
  out.mt.matrix.k = cfg.k;
  out.lang_heads = rank_heads(out.lang.matrix, HeadSelect::top(cfg.lang_heads));
  out.mt_heads = rank_heads(out.mt.matrix, HeadSelect::top(cfg.mt_heads));
  out.lang_vectors = build_vectors(w, out.lang.mean_acts, out.lang_heads, cfg.direction, cfg.k, CorruptionKind::lang);
  out.mt_vectors = build_vectors(w, out.mt.mean_acts, out.mt_heads, cfg.direction, cfg.k, CorruptionKind::mt);
  return out;
}

std::vector<AlphaPoint> alpha_sweep(const ModelWeights& w, const ParallelCorpus& corpus, const SteerPlan& base,
                                    const std::vector<double>& alphas, Direction dir, int eval_prompts,
                                    int max_new, std::uint64_t seed) {
  if (alphas.empty()) throw config_error("alpha_sweep: empty alpha list");
  auto prompts = make_eval_prompts(corpus, dir, PromptStyle::anon, eval_prompts, seed);
  std::vector<AlphaPoint> out;
  out.reserve(alphas.size());
  for (double a : alphas) {
    SteerPlan plan = base;
    plan.alpha = a;
    auto gens = run_steered(w, prompts, plan, max_new);
    out.push_back({a, score_generations(corpus.layout, dir.tgt, gens, prompts)});
  }
  return out;
}

namespace {

double top3_overlap(const std::vector<HeadId>& a, const std::vector<HeadId>& b) {
  std::set<HeadId> sa(a.begin(), a.begin() + std::min<std::size_t>(3, a.size()));
  std::set<HeadId> sb(b.begin(), b.begin() + std::min<std::size_t>(3, b.size()));
  std::size_t inter = 0;
  for (const auto& x : sa) inter += sb.count(x);
  return static_cast<double>(inter) / 3.0;
}

double positive_mass_share(const DeltaMatrix& m, const std::vector<HeadId>& top) {
  double total = 0.0;
  for (double v : m.mean) total += std::max(0.0, v);
  if (total <= 0.0) return 0.0;
  double got = 0.0;
  for (HeadId id : top) got += std::max(0.0, m.at(id));
  return got / total;
}

}  // namespace

std::vector<KshotPoint> kshot_sweep(const ModelWeights& w, const ParallelCorpus& corpus, PipelineConfig cfg,
                                    const std::vector<int>& k_list) {
  PipelineConfig ref_cfg = cfg;
  ref_cfg.k = 5;
  IdentifyOutcome ref = run_identify(w, corpus, ref_cfg);
  auto ref_lang = rank_heads(ref.lang.matrix, HeadSelect::top(3));
  auto ref_mt = rank_heads(ref.mt.matrix, HeadSelect::top(3));

  std::vector<KshotPoint> out;
  for (int k : k_list) {
    PipelineConfig kc = cfg;
    kc.k = k;
    IdentifyOutcome idk = run_identify(w, corpus, kc);
    KshotPoint p;
    p.k = k;
    p.lang_ranking = rank_heads(idk.lang.matrix, HeadSelect::percent(100));
    p.mt_ranking = rank_heads(idk.mt.matrix, HeadSelect::percent(100));
    p.top3_overlap_lang_vs_ref = top3_overlap(p.lang_ranking, ref_lang);
    p.top3_overlap_mt_vs_ref = top3_overlap(p.mt_ranking, ref_mt);
    p.positive_mass_lang = positive_mass_share(idk.lang.matrix, idk.lang_heads);
    p.positive_mass_mt = positive_mass_share(idk.mt.matrix, idk.mt_heads);

    SteerPlan plan;
    plan.lang = idk.lang_vectors;
    plan.equiv = idk.mt_vectors;
    plan.alpha = cfg.alpha;
    auto prompts = make_eval_prompts(corpus, cfg.direction, PromptStyle::anon, cfg.eval_prompts, cfg.seed);
    auto gens = run_steered(w, prompts, plan, cfg.max_new);
    p.steer = score_generations(corpus.layout, cfg.direction.tgt, gens, prompts);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<TokenposPoint> tokenpos_sweep(const ModelWeights& w, const ParallelCorpus& corpus, PipelineConfig cfg,
                                          const std::vector<PositionStrategy>& strategies) {
  std::vector<TokenposPoint> out;
  for (const auto& strat : strategies) {
    PipelineConfig sc = cfg;
    sc.strategy = strat;
    IdentifyOutcome ids = run_identify(w, corpus, sc);
    TokenposPoint p;
    p.strategy = strat.name();
    p.lang_ranking = rank_heads(ids.lang.matrix, HeadSelect::percent(100));
    p.mt_ranking = rank_heads(ids.mt.matrix, HeadSelect::percent(100));

    SteerPlan plan;
    plan.lang = ids.lang_vectors;
    plan.equiv = ids.mt_vectors;
    plan.alpha = cfg.alpha;
    auto prompts = make_eval_prompts(corpus, cfg.direction, PromptStyle::anon, cfg.eval_prompts, cfg.seed);
    auto gens = run_steered(w, prompts, plan, cfg.max_new);
    p.steer = score_generations(corpus.layout, cfg.direction.tgt, gens, prompts);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace headlens
