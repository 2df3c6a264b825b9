#include "headlens/trainer.hpp"

#include <algorithm>
#include <cmath>

namespace headlens {

namespace {

Direction draw_direction(Rng& rng, int languages) {
  int src = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(languages)));
  int t = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(languages - 1)));
  return {src, t >= src ? t + 1 : t};
}

std::vector<int> draw_distinct_dev_ids(Rng& rng, const ParallelCorpus& corpus, int count) {
  if (static_cast<std::size_t>(count) > corpus.dev_ids.size())
    throw data_error("make_batch: dev split smaller than requested sample");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(count));
  while (static_cast<int>(out.size()) < count) {
    int id = corpus.dev_ids[static_cast<std::size_t>(rng.next_below(corpus.dev_ids.size()))];
    if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
  }
  return out;
}

}  // namespace

std::vector<TrainRow> make_batch(const ParallelCorpus& corpus, Rng& rng, const TrainConfig& config) {
  if (config.k_min < 0 || config.k_max < config.k_min) throw config_error("make_batch: bad k range");
  std::vector<TrainRow> rows;
  rows.reserve(static_cast<std::size_t>(config.batch));
  for (int b = 0; b < config.batch; ++b) {
    bool instructed = rng.next_double() < config.instructed_fraction;
    Direction dir = draw_direction(rng, corpus.config.languages);

    TrainRow row;
    std::vector<std::pair<std::size_t, std::size_t>> answer_spans;  // token index ranges
    std::vector<int> prompt;
    if (instructed) {
      int query_id = draw_distinct_dev_ids(rng, corpus, 1)[0];
      auto query = render(corpus.sentence(query_id).concepts, corpus.languages[static_cast<std::size_t>(dir.src)],
                          corpus.layout);
      prompt = build_zero_instructed(corpus.layout, dir, query);
      row.tokens = prompt;
      auto answer = render(corpus.sentence(query_id).concepts, corpus.languages[static_cast<std::size_t>(dir.tgt)],
                           corpus.layout);
      answer.push_back(VocabLayout::kEos);
      answer_spans.emplace_back(row.tokens.size(), row.tokens.size() + answer.size());
      row.tokens.insert(row.tokens.end(), answer.begin(), answer.end());
    } else {
      int k = config.k_min + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(config.k_max - config.k_min + 1)));
      auto ids = draw_distinct_dev_ids(rng, corpus, k + 1);
      PromptInstance inst;
      inst.k = k;
      inst.demo_ids.assign(ids.begin(), ids.end() - 1);
      inst.query_id = ids.back();
      prompt = build_clean(corpus, inst, dir);
      row.tokens = prompt;
      auto answer = render(corpus.sentence(inst.query_id).concepts,
                           corpus.languages[static_cast<std::size_t>(dir.tgt)], corpus.layout);
      answer.push_back(VocabLayout::kEos);
      answer_spans.emplace_back(row.tokens.size(), row.tokens.size() + answer.size());
      row.tokens.insert(row.tokens.end(), answer.begin(), answer.end());

      if (config.mask_all_answers) {
        // Walk the template to find each demonstration's target span. The
        // trailing NL stays unmasked so end-of-answer supervision comes only
        // from final answers (always EOS-terminated).
        std::size_t off = 0;
        for (int d = 0; d < k; ++d) {
          std::size_t len = corpus.sentence(inst.demo_ids[static_cast<std::size_t>(d)]).concepts.size();
          std::size_t y_start = off + 1 + len + 2;  // Q, x, NL, A
          answer_spans.emplace_back(y_start, y_start + len);
          off = y_start + len + 2;  // y, NL, NL
        }
      }
    }

    row.mask.assign(row.tokens.size() - 1, 0.0);
    for (auto [s, e] : answer_spans)
      for (std::size_t j = s; j < e; ++j) row.mask[j - 1] = 1.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

struct ProbePrompt {
  std::vector<int> tokens;
  std::vector<int> truth;
};

// Fixed dev-only probe set for the early-stop criterion.
std::vector<ProbePrompt> build_probe(const ParallelCorpus& corpus, const TrainConfig& config) {
  std::vector<ProbePrompt> out;
  if (config.target_exact_match <= 0.0 || config.eval_every <= 0) return out;
  Rng rng(seed_stream(config.seed, "train-probe"));
  for (int i = 0; i < config.eval_prompts; ++i) {
    Direction dir = draw_direction(rng, corpus.config.languages);
    auto ids = draw_distinct_dev_ids(rng, corpus, 6);
    PromptInstance inst;
    inst.k = 5;
    inst.demo_ids.assign(ids.begin(), ids.end() - 1);
    inst.query_id = ids.back();
    ProbePrompt p;
    p.tokens = build_clean(corpus, inst, dir);
    p.truth = render(corpus.sentence(inst.query_id).concepts, corpus.languages[static_cast<std::size_t>(dir.tgt)],
                     corpus.layout);
    p.truth.push_back(VocabLayout::kEos);
    out.push_back(std::move(p));
  }
  return out;
}

double run_probe(const ModelWeights& w, const std::vector<ProbePrompt>& probe) {
  if (probe.empty()) return -1.0;
  int hits = 0;
  for (const auto& p : probe) {
    auto gen = generate_greedy(w, p.tokens, {}, static_cast<int>(p.truth.size()) + 4, VocabLayout::kEos);
    if (gen == p.truth) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(probe.size());
}

}  // namespace

TrainSummary train(ModelWeights& weights, const ParallelCorpus& corpus, const TrainConfig& config,
                   const std::function<void(int, double)>& progress) {
  TrainSummary summary;
  summary.probe_exact_match = -1.0;
  if (config.steps <= 0) return summary;

  auto params = weights.parameters();
  AdamState adam = AdamState::init(params, config.lr);
  Rng rng(seed_stream(config.seed, "train"));
  auto probe = build_probe(corpus, config);

  // Strictly sequential over steps and rows: bit-exact reruns.
  for (int step = 1; step <= config.steps; ++step) {
    auto rows = make_batch(corpus, rng, config);
    double total_weight = 0.0;
    for (const auto& row : rows)
      for (double m : row.mask) total_weight += m;

    for (auto& p : params) p->alloc_grad();
    double batch_loss = 0.0;
    for (const auto& row : rows) {
      std::vector<int> input(row.tokens.begin(), row.tokens.end() - 1);
      std::vector<int> targets(row.tokens.begin() + 1, row.tokens.end());
      double row_weight = 0.0;
      for (double m : row.mask) row_weight += m;

      Tape tape;
      auto res = forward(weights, input, {}, &tape, false);
      TensorPtr loss = cross_entropy(&tape, res.logits, targets, row.mask);
      batch_loss += loss->data[0] * row_weight / total_weight;
      tape.backward(loss, row_weight / total_weight);
      for (auto& p : params) {
        const DVec* g = tape.grad_of(p);
        if (!g) continue;
        for (std::size_t j = 0; j < p->grad.size(); ++j) p->grad[j] += (*g)[j];
      }
    }
    if (!std::isfinite(batch_loss)) throw numeric_error("training diverged at step " + std::to_string(step));

    double lr = config.lr * std::min(1.0, static_cast<double>(step) / std::max(1, config.warmup));
    if (config.lr_decay_end > config.lr_decay_start && step > config.lr_decay_start) {
      double t = std::min(1.0, static_cast<double>(step - config.lr_decay_start) /
                                   static_cast<double>(config.lr_decay_end - config.lr_decay_start));
      lr *= config.lr_floor + (1.0 - config.lr_floor) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
    }
    adam.lr = lr;
    adam_step(params, adam);

    summary.steps_run = step;
    summary.final_loss = batch_loss;
    if (step % config.log_every == 0 || step == 1) summary.loss_history.emplace_back(step, batch_loss);
    if (progress) progress(step, batch_loss);

    if (!probe.empty() && step >= config.eval_start && step % config.eval_every == 0) {
      summary.probe_exact_match = run_probe(weights, probe);
      summary.probe_history.emplace_back(step, summary.probe_exact_match);
      if (summary.probe_exact_match >= config.target_exact_match) break;
    }
  }
  return summary;
}

double evaluate_icl(const ModelWeights& weights, const ParallelCorpus& corpus,
                    const std::vector<Direction>& directions, int k, int n_queries, std::uint64_t seed) {
  if (directions.empty()) throw config_error("evaluate_icl: no directions");
  if (static_cast<std::size_t>(n_queries) > corpus.devtest_ids.size())
    throw data_error("evaluate_icl: devtest split smaller than requested queries");
  Rng rng(seed_stream(seed, "icl-eval"));
  std::vector<int> queries = corpus.devtest_ids;
  rng.shuffle(queries);
  queries.resize(static_cast<std::size_t>(n_queries));

  int hits = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    Direction dir = directions[i % directions.size()];
    PromptInstance inst;
    inst.k = k;
    inst.demo_ids = draw_distinct_dev_ids(rng, corpus, k);
    inst.query_id = queries[i];
    auto prompt = build_clean(corpus, inst, dir);
    auto truth = render(corpus.sentence(inst.query_id).concepts,
                        corpus.languages[static_cast<std::size_t>(dir.tgt)], corpus.layout);
    truth.push_back(VocabLayout::kEos);
    int budget = std::min(100, weights.config.max_seq - static_cast<int>(prompt.size()));
    if (budget < 1) throw data_error("evaluate_icl: prompt does not fit the model window");
    auto gen = generate_greedy(weights, prompt, {}, budget, VocabLayout::kEos);
    if (gen == truth) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n_queries);
}

}  // namespace headlens
