#include "headlens/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace headlens {

void ModelConfig::validate() const {
  if (n_layers < 0 || n_heads < 1 || d_model < 1) throw config_error("model: bad dimensions");
  if (d_model % n_heads != 0) throw config_error("model: d_model must be divisible by n_heads");
  if (vocab_size < 1) throw config_error("model: vocab_size unset");
  if (max_seq < 1) throw config_error("model: max_seq unset");
}

std::vector<TensorPtr> ModelWeights::parameters() const {
  std::vector<TensorPtr> out = {tok_emb, pos_emb};
  for (const auto& l : layers) {
    out.push_back(l.att_norm);
    out.push_back(l.wq);
    out.push_back(l.wk);
    out.push_back(l.wv);
    out.push_back(l.wo);
    out.push_back(l.mlp_norm);
    out.push_back(l.w_in);
    out.push_back(l.w_out);
  }
  out.push_back(final_norm);
  out.push_back(unembed);
  return out;
}

std::vector<std::pair<std::string, TensorPtr>> ModelWeights::named_tensors() const {
  std::vector<std::pair<std::string, TensorPtr>> out = {{"tok_emb", tok_emb}, {"pos_emb", pos_emb}};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    std::string p = "layer" + std::to_string(i) + ".";
    const auto& l = layers[i];
    out.emplace_back(p + "att_norm", l.att_norm);
    out.emplace_back(p + "wq", l.wq);
    out.emplace_back(p + "wk", l.wk);
    out.emplace_back(p + "wv", l.wv);
    out.emplace_back(p + "wo", l.wo);
    out.emplace_back(p + "mlp_norm", l.mlp_norm);
    out.emplace_back(p + "w_in", l.w_in);
    out.emplace_back(p + "w_out", l.w_out);
  }
  out.emplace_back("final_norm", final_norm);
  out.emplace_back("unembed", unembed);
  return out;
}

ModelWeights init_weights(const ModelConfig& config) {
  config.validate();
  Rng rng(seed_stream(config.seed, "init"));
  auto ones = [](std::size_t n) {
    return tensor_of({n}, DVec(n, 1.0));
  };
  std::size_t d = static_cast<std::size_t>(config.d_model);
  std::size_t dm = static_cast<std::size_t>(config.d_mlp);
  std::size_t v = static_cast<std::size_t>(config.vocab_size);
  double base_std = 0.02;
  // Residual-writing projections scaled down with depth, GPT-2 style.
  double resid_std = base_std / std::sqrt(2.0 * std::max(1, config.n_layers));

  ModelWeights w;
  w.config = config;
  w.tok_emb = tensor_randn({v, d}, base_std, rng);
  w.pos_emb = tensor_randn({static_cast<std::size_t>(config.max_seq), d}, base_std, rng);
  for (int l = 0; l < config.n_layers; ++l) {
    LayerWeights lw;
    lw.att_norm = ones(d);
    lw.wq = tensor_randn({d, d}, base_std, rng);
    lw.wk = tensor_randn({d, d}, base_std, rng);
    lw.wv = tensor_randn({d, d}, base_std, rng);
    lw.wo = tensor_randn({d, d}, resid_std, rng);
    lw.mlp_norm = ones(d);
    lw.w_in = tensor_randn({d, dm}, base_std, rng);
    lw.w_out = tensor_randn({dm, d}, resid_std, rng);
    w.layers.push_back(std::move(lw));
  }
  w.final_norm = ones(d);
  w.unembed = tensor_randn({d, v}, base_std, rng);
  return w;
}

namespace {

struct LayerPlan {
  std::vector<int> zero_heads;
  std::vector<const PatchHead*> patches;
  std::vector<double> add;  // summed AddResidual payload, empty if none
};

std::vector<LayerPlan> plan_interventions(const ModelConfig& cfg, const std::vector<Intervention>& iv,
                                          int seq_len) {
  std::vector<LayerPlan> plans(static_cast<std::size_t>(cfg.n_layers));
  std::set<std::tuple<int, int, int>> patched_at;
  for (const auto& i : iv) {
    if (const auto* p = std::get_if<PatchHead>(&i)) {
      if (p->layer < 0 || p->layer >= cfg.n_layers || p->head < 0 || p->head >= cfg.n_heads)
        throw config_error("intervention: head out of range");
      if (p->position < 0 || p->position >= seq_len) throw config_error("intervention: patch position out of range");
      if (p->z.size() != static_cast<std::size_t>(cfg.d_head())) throw config_error("intervention: patch width mismatch");
      if (!patched_at.insert({p->layer, p->head, p->position}).second)
        throw config_error("intervention: duplicate patch for one (layer, head, position)");
      plans[static_cast<std::size_t>(p->layer)].patches.push_back(p);
    } else if (const auto* zh = std::get_if<ZeroHead>(&i)) {
      if (zh->layer < 0 || zh->layer >= cfg.n_layers || zh->head < 0 || zh->head >= cfg.n_heads)
        throw config_error("intervention: head out of range");
      plans[static_cast<std::size_t>(zh->layer)].zero_heads.push_back(zh->head);
    } else if (const auto* ar = std::get_if<AddResidual>(&i)) {
      if (ar->layer < 0 || ar->layer >= cfg.n_layers) throw config_error("intervention: layer out of range");
      if (ar->v.size() != static_cast<std::size_t>(cfg.d_model)) throw config_error("intervention: vector width mismatch");
      auto& acc = plans[static_cast<std::size_t>(ar->layer)].add;
      if (acc.empty()) acc.assign(static_cast<std::size_t>(cfg.d_model), 0.0);
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += ar->v[j];
    }
  }
  return plans;
}

}  // namespace

ForwardResult forward(const ModelWeights& w, std::span<const int> tokens,
                      const std::vector<Intervention>& interventions, Tape* tape, bool want_trace,
                      int add_residual_from) {
  const ModelConfig& cfg = w.config;
  std::size_t seq = tokens.size();
  if (seq == 0) throw data_error("forward: empty token sequence");
  if (seq > static_cast<std::size_t>(cfg.max_seq)) throw data_error("forward: sequence longer than max_seq");
  for (int t : tokens)
    if (t < 0 || t >= cfg.vocab_size) throw data_error("forward: token id outside vocabulary");
  if (tape && !interventions.empty()) throw config_error("forward: interventions and tape are mutually exclusive");

  auto plans = plan_interventions(cfg, interventions, static_cast<int>(seq));

  std::vector<int> ids(tokens.begin(), tokens.end());
  std::vector<int> pos_ids(seq);
  std::iota(pos_ids.begin(), pos_ids.end(), 0);
  TensorPtr x = add(tape, rows_gather(tape, w.tok_emb, ids), rows_gather(tape, w.pos_emb, pos_ids));

  HookTrace trace;
  trace.n_layers = cfg.n_layers;
  trace.n_heads = cfg.n_heads;
  trace.d_head = cfg.d_head();
  trace.positions = static_cast<int>(seq);
  trace.patched.resize(static_cast<std::size_t>(cfg.n_layers));

  int dh = cfg.d_head();

  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights& lw = w.layers[static_cast<std::size_t>(l)];
    LayerPlan& plan = plans[static_cast<std::size_t>(l)];

    TensorPtr h = rmsnorm(tape, x, lw.att_norm);
    TensorPtr q = matmul(tape, h, lw.wq);
    TensorPtr k = matmul(tape, h, lw.wk);
    TensorPtr v = matmul(tape, h, lw.wv);
    TensorPtr z = attention_heads(tape, q, k, v, cfg.n_heads);

    for (int hd : plan.zero_heads) {
      for (std::size_t r = 0; r < seq; ++r)
        std::fill_n(z->data.begin() + static_cast<std::ptrdiff_t>(r * static_cast<std::size_t>(cfg.d_model) + static_cast<std::size_t>(hd * dh)), dh, 0.0);
    }
    for (const PatchHead* p : plan.patches) {
      double* dst = z->data.data() + static_cast<std::size_t>(p->position) * static_cast<std::size_t>(cfg.d_model) +
                    static_cast<std::size_t>(p->head * dh);
      std::copy(p->z.begin(), p->z.end(), dst);
      trace.patched[static_cast<std::size_t>(l)].emplace_back(p->head, p->position);
    }
    trace.z.push_back(z);

    TensorPtr attn_out = matmul(tape, z, lw.wo);
    x = add(tape, x, attn_out);

    if (!plan.add.empty()) {
      for (std::size_t r = static_cast<std::size_t>(std::max(0, add_residual_from)); r < seq; ++r) {
        double* row = x->data.data() + r * static_cast<std::size_t>(cfg.d_model);
        for (int j = 0; j < cfg.d_model; ++j) row[j] += plan.add[static_cast<std::size_t>(j)];
      }
    }
    if (want_trace) {
      auto snap = tensor_of(x->shape, x->data);
      trace.residual.push_back(snap);
    }

    TensorPtr h2 = rmsnorm(tape, x, lw.mlp_norm);
    TensorPtr mid = silu(tape, matmul(tape, h2, lw.w_in));
    TensorPtr mlp_out = matmul(tape, mid, lw.w_out);
    x = add(tape, x, mlp_out);
  }

  TensorPtr xf = rmsnorm(tape, x, w.final_norm);
  TensorPtr logits = matmul(tape, xf, w.unembed);
  return {logits, std::move(trace)};
}

std::vector<double> next_token_dist(const ModelWeights& w, std::span<const int> context,
                                    const std::vector<Intervention>& interventions, int add_residual_from) {
  if (context.empty()) throw data_error("next_token_dist: empty context");
  auto res = forward(w, context, interventions, nullptr, false, add_residual_from);
  std::size_t vocab = static_cast<std::size_t>(w.config.vocab_size);
  const double* row = res.logits->data.data() + (context.size() - 1) * vocab;
  std::vector<double> out(vocab);
  double mx = row[0];
  for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < vocab; ++j) {
    out[j] = std::exp(row[j] - mx);
    sum += out[j];
  }
  for (auto& p : out) p /= sum;
  return out;
}

double logprob_of(const ModelWeights& w, std::span<const int> context, int target,
                  const std::vector<Intervention>& interventions, int add_residual_from) {
  if (context.empty()) throw data_error("logprob_of: empty context");
  if (target < 0 || target >= w.config.vocab_size) throw data_error("logprob_of: target outside vocabulary");
  auto res = forward(w, context, interventions, nullptr, false, add_residual_from);
  std::size_t vocab = static_cast<std::size_t>(w.config.vocab_size);
  const double* row = res.logits->data.data() + (context.size() - 1) * vocab;
  double mx = row[0];
  for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < vocab; ++j) sum += std::exp(row[j] - mx);
  return row[target] - mx - std::log(sum);
}

std::vector<int> generate_greedy(const ModelWeights& w, std::span<const int> prompt,
                                 const std::vector<Intervention>& interventions, int max_new, int eos_token) {
  if (prompt.empty()) throw data_error("generate: empty prompt");
  if (prompt.size() + static_cast<std::size_t>(max_new) > static_cast<std::size_t>(w.config.max_seq))
    throw data_error("generate: prompt plus max_new exceeds max_seq");
  std::vector<int> tokens(prompt.begin(), prompt.end());
  int prompt_len = static_cast<int>(prompt.size());
  std::vector<int> out;
  std::size_t vocab = static_cast<std::size_t>(w.config.vocab_size);
  for (int step = 0; step < max_new; ++step) {
    auto res = forward(w, tokens, interventions, nullptr, false, prompt_len);
    const double* row = res.logits->data.data() + (tokens.size() - 1) * vocab;
    int best = 0;
    for (std::size_t j = 1; j < vocab; ++j)
      if (row[j] > row[best]) best = static_cast<int>(j);
    tokens.push_back(best);
    out.push_back(best);
    if (best == eos_token) break;
  }
  return out;
}

}  // namespace headlens
