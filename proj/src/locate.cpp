#include "headlens/locate.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "headlens/parallel.hpp"

namespace headlens {

std::string PositionStrategy::name() const {
  switch (kind) {
    case Kind::kl:
      return "kl";
    case Kind::random:
      return "random";
    case Kind::fixed:
      return "fixed" + std::to_string(fixed_index);
  }
  return "kl";
}

PositionStrategy PositionStrategy::parse(const std::string& s) {
  if (s == "kl") return kl();
  if (s == "random") return random();
  if (s.rfind("fixed", 0) == 0) return fixed(std::stoi(s.substr(5)));
  throw config_error("unknown position strategy: " + s);
}

namespace {

std::vector<int> with_prefix(const std::vector<int>& ctx, const std::vector<int>& truth, int upto) {
  std::vector<int> out = ctx;
  out.insert(out.end(), truth.begin(), truth.begin() + upto);
  return out;
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    d += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return d;
}

const std::vector<int>& corrupted_of(const PromptTriplet& t, CorruptionKind kind) {
  return kind == CorruptionKind::lang ? t.corrupt_lang : t.corrupt_mt;
}

}  // namespace

PositionChoice select_position(const ModelWeights& w, const std::vector<int>& clean,
                               const std::vector<int>& corrupted, const std::vector<int>& truth,
                               PositionStrategy strategy, Rng* rng) {
  if (truth.size() < 2) throw data_error("select_position: degenerate target (need at least 2 tokens)");
  int candidates = static_cast<int>(truth.size()) - 1;  // the final token's successor is out of scope

  PositionChoice choice;
  switch (strategy.kind) {
    case PositionStrategy::Kind::fixed:
      choice.i_star = std::clamp(strategy.fixed_index, 0, candidates - 1);
      return choice;
    case PositionStrategy::Kind::random: {
      if (!rng) throw config_error("select_position: random strategy needs an rng");
      choice.i_star = static_cast<int>(rng->next_below(static_cast<std::uint64_t>(candidates)));
      return choice;
    }
    case PositionStrategy::Kind::kl:
      break;
  }

  choice.divergences.resize(static_cast<std::size_t>(candidates));
  for (int i = 0; i < candidates; ++i) {
    auto p = next_token_dist(w, with_prefix(clean, truth, i));
    auto q = next_token_dist(w, with_prefix(corrupted, truth, i));
    choice.divergences[static_cast<std::size_t>(i)] = kl_divergence(p, q);
  }
  choice.i_star = 0;
  for (int i = 1; i < candidates; ++i)
    if (choice.divergences[static_cast<std::size_t>(i)] > choice.divergences[static_cast<std::size_t>(choice.i_star)])
      choice.i_star = i;
  return choice;
}

MeanActivations mean_clean_activation(const ModelWeights& w, const std::vector<PromptTriplet>& triplets,
                                      const std::vector<PositionChoice>& choices) {
  if (triplets.empty()) throw data_error("mean_clean_activation: no instances");
  if (triplets.size() != choices.size()) throw config_error("mean_clean_activation: choices misaligned");
  const ModelConfig& cfg = w.config;
  MeanActivations acts;
  acts.n_layers = cfg.n_layers;
  acts.n_heads = cfg.n_heads;
  acts.d_head = cfg.d_head();
  acts.count = static_cast<int>(triplets.size());
  acts.z.assign(static_cast<std::size_t>(cfg.n_layers * cfg.n_heads),
                std::vector<double>(static_cast<std::size_t>(cfg.d_head()), 0.0));

  for (std::size_t j = 0; j < triplets.size(); ++j) {
    auto ctx = with_prefix(triplets[j].clean, triplets[j].truth, choices[j].i_star);
    auto res = forward(w, ctx);
    int last = static_cast<int>(ctx.size()) - 1;
    for (int l = 0; l < cfg.n_layers; ++l)
      for (int h = 0; h < cfg.n_heads; ++h) {
        auto z = res.trace.head_z(l, h, last);
        auto& dst = acts.z[static_cast<std::size_t>(l * cfg.n_heads + h)];
        for (std::size_t t = 0; t < z.size(); ++t) dst[t] += z[t];
      }
  }
  for (auto& zv : acts.z)
    for (auto& x : zv) x /= static_cast<double>(acts.count);
  return acts;
}

double patch_delta(const ModelWeights& w, const std::vector<int>& corrupted_ctx, int y_target, HeadId head,
                   const std::vector<double>& z_mean) {
  int last = static_cast<int>(corrupted_ctx.size()) - 1;
  double base = logprob_of(w, corrupted_ctx, y_target);
  double patched = logprob_of(w, corrupted_ctx, y_target,
                              {PatchHead{head.layer, head.head, last, z_mean}});
  return patched - base;
}

SweepResult sweep(const ModelWeights& w, const std::vector<PromptTriplet>& triplets, CorruptionKind kind,
                  const SweepOptions& options) {
  if (triplets.empty()) throw data_error("sweep: no instances");
  const ModelConfig& cfg = w.config;
  std::size_t n = triplets.size();
  std::size_t heads = static_cast<std::size_t>(cfg.n_layers * cfg.n_heads);

  // Pass 1: position per instance, then activations at the chosen prefix.
  std::vector<PositionChoice> choices(n);
  parallel_for(n, [&](std::size_t j) {
    Rng rng(seed_stream(options.seed, "pos:" + std::to_string(j)));
    choices[j] = select_position(w, triplets[j].clean, corrupted_of(triplets[j], kind), triplets[j].truth,
                                 options.strategy, &rng);
  });

  std::vector<std::vector<std::vector<double>>> inst_z(n);
  parallel_for(n, [&](std::size_t j) {
    const auto& base_ctx = options.identity_test ? corrupted_of(triplets[j], kind) : triplets[j].clean;
    auto ctx = with_prefix(base_ctx, triplets[j].truth, choices[j].i_star);
    auto res = forward(w, ctx);
    int last = static_cast<int>(ctx.size()) - 1;
    inst_z[j].resize(heads);
    for (int l = 0; l < cfg.n_layers; ++l)
      for (int h = 0; h < cfg.n_heads; ++h) {
        auto z = res.trace.head_z(l, h, last);
        inst_z[j][static_cast<std::size_t>(l * cfg.n_heads + h)].assign(z.begin(), z.end());
      }
  });

  MeanActivations acts;
  acts.n_layers = cfg.n_layers;
  acts.n_heads = cfg.n_heads;
  acts.d_head = cfg.d_head();
  acts.count = static_cast<int>(n);
  acts.z.assign(heads, std::vector<double>(static_cast<std::size_t>(cfg.d_head()), 0.0));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t hh = 0; hh < heads; ++hh)
      for (std::size_t t = 0; t < acts.z[hh].size(); ++t) acts.z[hh][t] += inst_z[j][hh][t];
  for (auto& zv : acts.z)
    for (auto& x : zv) x /= static_cast<double>(n);

  // Pass 2: patch every head on every instance.
  std::vector<std::vector<double>> deltas(n, std::vector<double>(heads, 0.0));
  parallel_for(n, [&](std::size_t j) {
    auto ctx = with_prefix(corrupted_of(triplets[j], kind), triplets[j].truth, choices[j].i_star);
    int target = triplets[j].truth[static_cast<std::size_t>(choices[j].i_star)];
    int last = static_cast<int>(ctx.size()) - 1;
    double base = logprob_of(w, ctx, target);
    for (int l = 0; l < cfg.n_layers; ++l)
      for (int h = 0; h < cfg.n_heads; ++h) {
        std::size_t hh = static_cast<std::size_t>(l * cfg.n_heads + h);
        double patched = logprob_of(w, ctx, target, {PatchHead{l, h, last, acts.z[hh]}});
        deltas[j][hh] = patched - base;
      }
  });

  SweepResult out;
  out.mean_acts = std::move(acts);
  out.choices = std::move(choices);
  out.matrix.kind = kind;
  out.matrix.n_layers = cfg.n_layers;
  out.matrix.n_heads = cfg.n_heads;
  out.matrix.per_instance = std::move(deltas);
  out.matrix.strategy = options.strategy.name();
  out.matrix.seed = options.seed;
  out.matrix.mean.assign(heads, 0.0);
  for (const auto& row : out.matrix.per_instance)
    for (std::size_t hh = 0; hh < heads; ++hh) out.matrix.mean[hh] += row[hh];
  for (auto& x : out.matrix.mean) x /= static_cast<double>(n);
  return out;
}

std::vector<HeadId> rank_heads(const DeltaMatrix& matrix, HeadSelect select) {
  int total = matrix.n_layers * matrix.n_heads;
  int count = 0;
  if (select.mode == HeadSelect::Mode::count) {
    count = static_cast<int>(select.value);
    if (count < 1 || count > total) throw config_error("rank_heads: count out of range");
  } else {
    if (select.value <= 0.0 || select.value > 100.0) throw config_error("rank_heads: percent outside (0, 100]");
    count = static_cast<int>(std::ceil(select.value / 100.0 * total));
  }
  std::vector<HeadId> order;
  order.reserve(static_cast<std::size_t>(total));
  for (int l = 0; l < matrix.n_layers; ++l)
    for (int h = 0; h < matrix.n_heads; ++h) order.push_back({l, h});
  std::stable_sort(order.begin(), order.end(), [&](HeadId a, HeadId b) { return matrix.at(a) > matrix.at(b); });
  order.resize(static_cast<std::size_t>(count));
  return order;
}

double jaccard(const std::set<HeadId>& a, const std::set<HeadId>& b) {
  if (a.empty() && b.empty()) throw numeric_error("jaccard: both sets empty");
  std::size_t inter = 0;
  for (const auto& x : a) inter += b.count(x);
  std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

DeltaMatrix aggregate_directions(const std::vector<DeltaMatrix>& matrices) {
  if (matrices.empty()) throw data_error("aggregate: no matrices");
  DeltaMatrix out;
  out.kind = matrices[0].kind;
  out.n_layers = matrices[0].n_layers;
  out.n_heads = matrices[0].n_heads;
  out.direction = "mean";
  out.strategy = matrices[0].strategy;
  out.k = matrices[0].k;
  out.seed = matrices[0].seed;
  std::size_t heads = static_cast<std::size_t>(out.n_layers * out.n_heads);
  for (const auto& m : matrices) {
    if (m.kind != out.kind) throw config_error("aggregate: mixed corruption kinds");
    if (m.n_layers != out.n_layers || m.n_heads != out.n_heads) throw config_error("aggregate: shape mismatch");
    out.per_instance.push_back(m.mean);
  }
  out.mean.assign(heads, 0.0);
  for (const auto& row : out.per_instance)
    for (std::size_t hh = 0; hh < heads; ++hh) out.mean[hh] += row[hh];
  for (auto& x : out.mean) x /= static_cast<double>(out.per_instance.size());
  return out;
}

std::string delta_to_csv(const DeltaMatrix& matrix) {
  std::ostringstream os;
  os.precision(17);
  os << "layer,head,mean_delta,n_instances\n";
  for (int l = 0; l < matrix.n_layers; ++l)
    for (int h = 0; h < matrix.n_heads; ++h)
      os << l << "," << h << "," << matrix.at({l, h}) << "," << matrix.per_instance.size() << "\n";
  return os.str();
}

std::string delta_sidecar_json(const DeltaMatrix& matrix, const std::vector<PositionChoice>& choices) {
  nlohmann::ordered_json j;
  j["corruption"] = corruption_name(matrix.kind);
  j["direction"] = matrix.direction;
  j["strategy"] = matrix.strategy;
  j["k"] = matrix.k;
  j["seed"] = matrix.seed;
  j["positions"] = nlohmann::ordered_json::array();
  for (const auto& c : choices) j["positions"].push_back(c.i_star);
  return j.dump(2) + "\n";
}

std::string delta_to_svg(const DeltaMatrix& matrix) {
  const int cell = 26, margin_left = 64, margin_top = 40, legend = 56;
  int width = margin_left + matrix.n_heads * cell + 20;
  int height = margin_top + matrix.n_layers * cell + legend;
  double peak = 1e-12;
  for (double v : matrix.mean) peak = std::max(peak, std::abs(v));

  auto color = [&](double v) {
    double t = std::clamp(v / peak, -1.0, 1.0);
    int r, g, b;
    if (t >= 0) {  // white -> red
      r = 255;
      g = b = static_cast<int>(std::lround(255 * (1.0 - t)));
    } else {  // white -> blue
      b = 255;
      r = g = static_cast<int>(std::lround(255 * (1.0 + t)));
    }
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return std::string(buf);
  };

  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  os << "<text x=\"" << margin_left << "\" y=\"16\" font-family=\"monospace\" font-size=\"12\">delta "
     << corruption_name(matrix.kind) << " " << matrix.direction << "</text>\n";
  for (int h = 0; h < matrix.n_heads; ++h)
    os << "<text x=\"" << margin_left + h * cell + cell / 2 << "\" y=\"" << margin_top - 6
       << "\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"middle\">H" << h << "</text>\n";
  for (int l = 0; l < matrix.n_layers; ++l) {
    os << "<text x=\"" << margin_left - 8 << "\" y=\"" << margin_top + l * cell + cell / 2 + 4
       << "\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"end\">L" << l << "</text>\n";
    for (int h = 0; h < matrix.n_heads; ++h) {
      os << "<rect x=\"" << margin_left + h * cell << "\" y=\"" << margin_top + l * cell << "\" width=\"" << cell
         << "\" height=\"" << cell << "\" fill=\"" << color(matrix.at({l, h}))
         << "\" stroke=\"#808080\" stroke-width=\"0.5\"/>\n";
    }
  }
  os << "<text x=\"" << margin_left << "\" y=\"" << margin_top + matrix.n_layers * cell + 24
     << "\" font-family=\"monospace\" font-size=\"10\">scale +/- " << peak << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace headlens
