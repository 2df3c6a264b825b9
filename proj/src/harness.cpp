#include "headlens/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace headlens {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// ---------------------------------------------------------------------------
// config

ordered_json RunConfig::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["corpus"] = {{"languages", corpus.languages}, {"concepts", corpus.concepts},   {"len_min", corpus.len_min},
                 {"len_max", corpus.len_max},     {"sentences", corpus.sentences}, {"dev_fraction", corpus.dev_fraction}};
  j["model"] = {{"layers", model_layers}, {"heads", model_heads}, {"d_model", model_d_model}, {"max_seq", model_max_seq}};
  j["train"] = {{"steps", train.steps},
                {"batch", train.batch},
                {"lr", train.lr},
                {"warmup", train.warmup},
                {"lr_decay_start", train.lr_decay_start},
                {"lr_decay_end", train.lr_decay_end},
                {"lr_floor", train.lr_floor},
                {"k_min", train.k_min},
                {"k_max", train.k_max},
                {"instructed_fraction", train.instructed_fraction},
                {"mask_all_answers", train.mask_all_answers},
                {"log_every", train.log_every},
                {"eval_start", train.eval_start},
                {"eval_every", train.eval_every},
                {"eval_prompts", train.eval_prompts},
                {"target_exact_match", train.target_exact_match}};
  j["identify"] = {{"k", k}, {"strategy", strategy}, {"instances_per_direction", instances_per_direction}};
  j["heads"] = {{"language", language_heads}, {"translation", translation_heads}};
  j["eval"] = {{"alpha", alpha}, {"max_new", max_new}, {"prompts", eval_prompts}, {"control_seeds", control_seeds}};
  j["directions"] = ordered_json::array();
  for (auto d : directions) j["directions"].push_back({d.src, d.tgt});
  j["sweeps"] = {{"alphas", sweep_alphas},
                 {"kshots", sweep_kshots},
                 {"strategies", sweep_strategies},
                 {"eval_prompts", sweep_eval_prompts}};
  j["decode"] = {{"top_k", decode_top_k}};
  return j;
}

RunConfig RunConfig::from_json(const ordered_json& j) {
  RunConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  const auto& cj = j.at("corpus");
  c.corpus.languages = cj.at("languages").get<int>();
  c.corpus.concepts = cj.at("concepts").get<int>();
  c.corpus.len_min = cj.at("len_min").get<int>();
  c.corpus.len_max = cj.at("len_max").get<int>();
  c.corpus.sentences = cj.at("sentences").get<int>();
  c.corpus.dev_fraction = cj.at("dev_fraction").get<double>();
  c.corpus.seed = seed_stream(c.seed, "corpus");
  const auto& mj = j.at("model");
  c.model_layers = mj.at("layers").get<int>();
  c.model_heads = mj.at("heads").get<int>();
  c.model_d_model = mj.at("d_model").get<int>();
  c.model_max_seq = mj.at("max_seq").get<int>();
  const auto& tj = j.at("train");
  c.train.steps = tj.at("steps").get<int>();
  c.train.batch = tj.at("batch").get<int>();
  c.train.lr = tj.at("lr").get<double>();
  c.train.warmup = tj.at("warmup").get<int>();
  c.train.lr_decay_start = tj.at("lr_decay_start").get<int>();
  c.train.lr_decay_end = tj.at("lr_decay_end").get<int>();
  c.train.lr_floor = tj.at("lr_floor").get<double>();
  c.train.k_min = tj.at("k_min").get<int>();
  c.train.k_max = tj.at("k_max").get<int>();
  c.train.instructed_fraction = tj.at("instructed_fraction").get<double>();
  c.train.mask_all_answers = tj.at("mask_all_answers").get<bool>();
  c.train.log_every = tj.at("log_every").get<int>();
  c.train.eval_start = tj.at("eval_start").get<int>();
  c.train.eval_every = tj.at("eval_every").get<int>();
  c.train.eval_prompts = tj.at("eval_prompts").get<int>();
  c.train.target_exact_match = tj.at("target_exact_match").get<double>();
  c.train.seed = seed_stream(c.seed, "train-stage");
  const auto& ij = j.at("identify");
  c.k = ij.at("k").get<int>();
  c.strategy = ij.at("strategy").get<std::string>();
  c.instances_per_direction = ij.at("instances_per_direction").get<int>();
  const auto& hj = j.at("heads");
  c.language_heads = hj.at("language").get<int>();
  c.translation_heads = hj.at("translation").get<int>();
  const auto& ej = j.at("eval");
  c.alpha = ej.at("alpha").get<double>();
  c.max_new = ej.at("max_new").get<int>();
  c.eval_prompts = ej.at("prompts").get<int>();
  c.control_seeds = ej.at("control_seeds").get<int>();
  c.directions.clear();
  for (const auto& dj : j.at("directions")) {
    if (!dj.is_array() || dj.size() != 2) throw config_error("directions entries must be [src, tgt] pairs");
    c.directions.push_back({dj[0].get<int>(), dj[1].get<int>()});
  }
  if (c.directions.empty()) throw config_error("directions list is empty");
  const auto& sj = j.at("sweeps");
  c.sweep_alphas = sj.at("alphas").get<std::vector<double>>();
  c.sweep_kshots = sj.at("kshots").get<std::vector<int>>();
  c.sweep_strategies = sj.at("strategies").get<std::vector<std::string>>();
  c.sweep_eval_prompts = sj.at("eval_prompts").get<int>();
  c.decode_top_k = j.at("decode").at("top_k").get<int>();
  return c;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig mc;
  mc.n_layers = model_layers;
  mc.n_heads = model_heads;
  mc.d_model = model_d_model;
  mc.d_mlp = 4 * model_d_model;
  mc.vocab_size = vocab_layout(corpus.languages, corpus.concepts).vocab_size();
  mc.max_seq = model_max_seq;
  mc.seed = seed_stream(seed, "model");
  return mc;
}

PipelineConfig RunConfig::pipeline_config(Direction dir) const {
  PipelineConfig pc;
  pc.direction = dir;
  pc.k = k;
  pc.instances = instances_per_direction;
  pc.lang_heads = language_heads;
  pc.mt_heads = translation_heads;
  pc.alpha = alpha;
  pc.eval_prompts = sweep_eval_prompts;
  pc.max_new = max_new;
  pc.seed = seed;
  pc.strategy = PositionStrategy::parse(strategy);
  return pc;
}

std::string RunConfig::config_hash() const {
  std::uint64_t h = fnv1a64(to_json().dump());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ordered_json merge_json(const ordered_json& base, const ordered_json& over) {
  if (!base.is_object() || !over.is_object()) return over;
  ordered_json out = base;
  for (auto it = over.begin(); it != over.end(); ++it) {
    if (out.contains(it.key()))
      out[it.key()] = merge_json(out[it.key()], it.value());
    else
      out[it.key()] = it.value();
  }
  return out;
}

void set_json_path(ordered_json& doc, const std::string& dotted_key, const std::string& value) {
  ordered_json* node = &doc;
  std::string key = dotted_key;
  for (std::size_t dot = key.find('.'); dot != std::string::npos; dot = key.find('.')) {
    std::string head = key.substr(0, dot);
    key = key.substr(dot + 1);
    if (!node->contains(head)) (*node)[head] = ordered_json::object();
    node = &(*node)[head];
  }
  // Values parse as JSON when they can (numbers, bools, arrays), else string.
  ordered_json parsed = ordered_json::parse(value, nullptr, false);
  (*node)[key] = parsed.is_discarded() ? ordered_json(value) : parsed;
}

RunConfig load_run_config(const std::string& config_file,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
  ordered_json doc = RunConfig{}.to_json();
  if (!config_file.empty()) {
    std::ifstream is(config_file);
    if (!is) throw data_error("missing config file: " + config_file);
    ordered_json user = ordered_json::parse(is, nullptr, false);
    if (user.is_discarded()) throw config_error("config file is not valid JSON: " + config_file);
    doc = merge_json(doc, user);
  }
  for (const auto& [key, value] : overrides) set_json_path(doc, key, value);
  try {
    return RunConfig::from_json(doc);
  } catch (const ordered_json::exception& e) {
    throw config_error(std::string("bad config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// files and manifest

void atomic_write_file(const fs::path& path, std::string_view bytes) {
  fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw data_error("cannot open for write: " + tmp.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw data_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("missing artifact: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string fnv1a64_file_hex(const fs::path& path) {
  std::uint64_t h = fnv1a64(read_file(path));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void manifest_update(const fs::path& out, const RunConfig& config, const std::string& stage,
                     const std::vector<fs::path>& artifacts, double wall_s) {
  fs::path mpath = out / "manifest.json";
  ordered_json m;
  if (fs::exists(mpath)) {
    m = ordered_json::parse(read_file(mpath), nullptr, false);
    if (m.is_discarded()) m = ordered_json::object();
  }
  m["tool"] = "headlens 1.0";
  m["config_hash"] = config.config_hash();
  if (!m.contains("stages")) m["stages"] = ordered_json::object();
  ordered_json entry;
  entry["artifacts"] = ordered_json::object();
  for (const auto& a : artifacts) entry["artifacts"][fs::relative(a, out).generic_string()] = fnv1a64_file_hex(a);
  entry["wall_s"] = wall_s;
  m["stages"][stage] = entry;
  atomic_write_file(mpath, m.dump(2) + "\n");
}

namespace {

struct StageTimer {
  Clock::time_point start = Clock::now();
  double seconds() const { return std::chrono::duration<double>(Clock::now() - start).count(); }
};

ParallelCorpus load_corpus_artifact(const fs::path& out) { return corpus_from_json(read_file(out / "corpus.json")); }

ModelWeights load_weights_artifact(const fs::path& out) {
  fs::path p = out / "weights.hlns";
  if (!fs::exists(p)) throw data_error("missing artifact: " + p.string() + " (run train first)");
  return load_weights(p);
}

ordered_json report_to_json(const EvalReport& r) {
  return ordered_json{{"bleu", r.bleu},
                      {"exact_match", r.exact_match},
                      {"token_accuracy", r.token_accuracy},
                      {"language_fraction", r.language_fraction},
                      {"language_pass", r.language_pass},
                      {"prompts", r.prompts}};
}

ordered_json heads_to_json(const std::vector<HeadId>& heads) {
  ordered_json a = ordered_json::array();
  for (auto h : heads) a.push_back({h.layer, h.head});
  return a;
}

fs::path meanacts_path(const fs::path& out, Direction d, CorruptionKind kind) {
  return out / "identify" / ("meanacts_" + d.name() + "_" + corruption_name(kind) + ".hlns");
}

fs::path delta_path(const fs::path& out, Direction d, CorruptionKind kind, const char* ext) {
  return out / "identify" / ("delta_" + d.name() + "_" + corruption_name(kind) + ext);
}

void save_sweep_artifacts(const fs::path& out, const RunConfig& config, Direction d, CorruptionKind kind,
                          const SweepResult& res, std::vector<fs::path>& artifacts) {
  DeltaMatrix m = res.matrix;
  atomic_write_file(delta_path(out, d, kind, ".csv"), delta_to_csv(m));
  atomic_write_file(delta_path(out, d, kind, ".json"), delta_sidecar_json(m, res.choices));
  atomic_write_file(delta_path(out, d, kind, ".svg"), delta_to_svg(m));
  artifacts.push_back(delta_path(out, d, kind, ".csv"));
  artifacts.push_back(delta_path(out, d, kind, ".json"));
  artifacts.push_back(delta_path(out, d, kind, ".svg"));

  TensorFile tf;
  tf.config = config.model_config();
  for (int l = 0; l < res.mean_acts.n_layers; ++l)
    for (int h = 0; h < res.mean_acts.n_heads; ++h) {
      HeadId id{l, h};
      DVec z(res.mean_acts.z_of(id).begin(), res.mean_acts.z_of(id).end());
      tf.tensors.emplace_back("mean_z/" + id.name(),
                              tensor_of({static_cast<std::size_t>(res.mean_acts.d_head)}, std::move(z)));
    }
  DVec mean(m.mean.begin(), m.mean.end());
  tf.tensors.emplace_back("delta_mean", tensor_of({static_cast<std::size_t>(m.n_layers), static_cast<std::size_t>(m.n_heads)}, std::move(mean)));
  save_tensor_file(meanacts_path(out, d, kind), tf);
  artifacts.push_back(meanacts_path(out, d, kind));
}

DeltaMatrix load_delta_csv(const fs::path& path, CorruptionKind kind, const std::string& direction) {
  std::istringstream is(read_file(path));
  std::string line;
  std::getline(is, line);
  if (line != "layer,head,mean_delta,n_instances") throw data_error("bad delta csv header in " + path.string());
  DeltaMatrix m;
  m.kind = kind;
  m.direction = direction;
  std::map<std::pair<int, int>, double> cells;
  int max_l = -1, max_h = -1;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string f;
    std::getline(ls, f, ',');
    int l = std::stoi(f);
    std::getline(ls, f, ',');
    int h = std::stoi(f);
    std::getline(ls, f, ',');
    double v = std::stod(f);
    cells[{l, h}] = v;
    max_l = std::max(max_l, l);
    max_h = std::max(max_h, h);
  }
  m.n_layers = max_l + 1;
  m.n_heads = max_h + 1;
  m.mean.assign(static_cast<std::size_t>(m.n_layers * m.n_heads), 0.0);
  for (const auto& [lh, v] : cells) m.mean[static_cast<std::size_t>(lh.first * m.n_heads + lh.second)] = v;
  return m;
}

MeanActivations load_mean_acts(const fs::path& path, const ModelConfig& mc) {
  TensorFile tf = load_tensor_file(path);
  MeanActivations acts;
  acts.n_layers = mc.n_layers;
  acts.n_heads = mc.n_heads;
  acts.d_head = mc.d_head();
  acts.count = 1;
  acts.z.assign(static_cast<std::size_t>(mc.n_layers * mc.n_heads),
                std::vector<double>(static_cast<std::size_t>(mc.d_head()), 0.0));
  for (const auto& [name, tensor] : tf.tensors) {
    if (name.rfind("mean_z/L", 0) != 0) continue;
    auto hpos = name.find('H');
    int l = std::stoi(name.substr(8, hpos - 8));
    int h = std::stoi(name.substr(hpos + 1));
    acts.z[static_cast<std::size_t>(l * mc.n_heads + h)].assign(tensor->data.begin(), tensor->data.end());
  }
  return acts;
}

struct VectorSets {
  std::map<std::string, std::vector<SteeringVector>> lang;  // keyed by direction name
  std::map<std::string, std::vector<SteeringVector>> mt;
};

VectorSets load_vector_sets(const fs::path& out, const ModelConfig& mc) {
  fs::path vpath = out / "vectors.hlns";
  fs::path jpath = out / "vectors.json";
  if (!fs::exists(vpath) || !fs::exists(jpath))
    throw data_error("missing artifact: " + vpath.string() + " (run vectors first)");
  TensorFile tf = load_tensor_file(vpath);
  std::map<std::string, TensorPtr> by_name(tf.tensors.begin(), tf.tensors.end());
  ordered_json meta = ordered_json::parse(read_file(jpath));
  VectorSets sets;
  for (auto it = meta.at("directions").begin(); it != meta.at("directions").end(); ++it) {
    const std::string& dname = it.key();
    Direction dir{std::stoi(dname.substr(0, dname.find('-'))), std::stoi(dname.substr(dname.find('-') + 1))};
    for (const char* kind : {"lang", "mt"}) {
      for (const auto& hj : it.value().at(kind)) {
        SteeringVector sv;
        sv.head = {hj.at("layer").get<int>(), hj.at("head").get<int>()};
        sv.source_direction = dir;
        sv.k = meta.at("k").get<int>();
        sv.kind = std::string(kind) == "lang" ? CorruptionKind::lang : CorruptionKind::mt;
        std::string tname = std::string(kind) + "/" + dname + "/" + sv.head.name();
        auto found = by_name.find(tname);
        if (found == by_name.end()) throw data_error("vectors file missing tensor " + tname);
        sv.v.assign(found->second->data.begin(), found->second->data.end());
        (std::string(kind) == "lang" ? sets.lang : sets.mt)[dname].push_back(std::move(sv));
      }
    }
  }
  return sets;
}

// Dominant-block accounting for transfer cells.
struct FollowStats {
  int passing = 0;
  int follow = 0;
};

FollowStats follow_stats(const VocabLayout& layout, int expect_lang, const std::vector<std::vector<int>>& gens,
                         double tau = 0.9) {
  FollowStats fsr;
  for (const auto& g : gens) {
    std::map<int, int> counts;
    int content = 0;
    for (int t : g) {
      int b = layout.block_of(t);
      if (b < 0) continue;
      ++content;
      counts[b] += 1;
    }
    if (content == 0) continue;
    auto best = std::max_element(counts.begin(), counts.end(),
                                 [](const auto& a, const auto& b) { return a.second < b.second; });
    if (static_cast<double>(best->second) / content < tau) continue;
    fsr.passing += 1;
    if (best->first == expect_lang) fsr.follow += 1;
  }
  return fsr;
}

}  // namespace

// ---------------------------------------------------------------------------
// commands

void cmd_gen_corpus(const RunConfig& config, const fs::path& out) {
  StageTimer timer;
  auto corpus = sample_corpus(config.corpus);
  atomic_write_file(out / "corpus.json", corpus_to_json(corpus));
  manifest_update(out, config, "gen-corpus", {out / "corpus.json"}, timer.seconds());
}

void cmd_train(const RunConfig& config, const fs::path& out) {
  StageTimer timer;
  auto corpus = load_corpus_artifact(out);
  auto weights = init_weights(config.model_config());
  auto summary = train(weights, corpus, config.train);
  save_weights(out / "weights.hlns", weights);

  double icl5 = evaluate_icl(weights, corpus, config.directions, 5, std::min<int>(128, static_cast<int>(corpus.devtest_ids.size())),
                             seed_stream(config.seed, "icl-final"));
  ordered_json ck;
  ck["config"] = config.to_json()["train"];
  ck["steps_run"] = summary.steps_run;
  ck["final_loss"] = summary.final_loss;
  ck["probe_exact_match"] = summary.probe_exact_match;
  ck["icl_exact_match_5shot"] = icl5;
  ck["loss_history"] = ordered_json::array();
  for (auto [s, l] : summary.loss_history) ck["loss_history"].push_back({s, l});
  ck["probe_history"] = ordered_json::array();
  for (auto [s, e] : summary.probe_history) ck["probe_history"].push_back({s, e});
  atomic_write_file(out / "checkpoint.json", ck.dump(2) + "\n");
  manifest_update(out, config, "train", {out / "weights.hlns", out / "checkpoint.json"}, timer.seconds());
}

void cmd_identify(const RunConfig& config, const fs::path& out) {
  StageTimer timer;
  auto corpus = load_corpus_artifact(out);
  auto weights = load_weights_artifact(out);
  std::vector<fs::path> artifacts;
  std::vector<DeltaMatrix> lang_mats, mt_mats;
  for (Direction d : config.directions) {
    auto pc = config.pipeline_config(d);
    // Persist the triplets the sweeps actually consumed.
    Rng part_rng(seed_stream(pc.seed, "partition:" + d.name() + ":k" + std::to_string(pc.k)));
    auto instances = partition_instances(corpus, pc.k, part_rng);
    if (pc.instances > 0 && static_cast<int>(instances.size()) > pc.instances)
      instances.resize(static_cast<std::size_t>(pc.instances));
    if (instances.empty()) throw data_error("identify: no instances for direction " + d.name());
    std::vector<PromptTriplet> triplets;
    for (std::size_t i = 0; i < instances.size(); ++i) {
      Rng rng(seed_stream(pc.seed, "corrupt:" + d.name() + ":" + std::to_string(i)));
      triplets.push_back(make_triplet(corpus, instances[i], d, rng));
    }
    fs::path tpath = out / "identify" / ("triplets_" + d.name() + ".jsonl");
    atomic_write_file(tpath, triplets_to_jsonl(triplets, d));
    artifacts.push_back(tpath);

    IdentifyOutcome outc = run_identify(weights, corpus, pc);
    save_sweep_artifacts(out, config, d, CorruptionKind::lang, outc.lang, artifacts);
    save_sweep_artifacts(out, config, d, CorruptionKind::mt, outc.mt, artifacts);
    lang_mats.push_back(outc.lang.matrix);
    mt_mats.push_back(outc.mt.matrix);
  }
  for (auto kind : {CorruptionKind::lang, CorruptionKind::mt}) {
    DeltaMatrix agg = aggregate_directions(kind == CorruptionKind::lang ? lang_mats : mt_mats);
    fs::path base = out / "identify" / (std::string("delta_mean_") + corruption_name(kind));
    atomic_write_file(base.string() + ".csv", delta_to_csv(agg));
    atomic_write_file(base.string() + ".json", delta_sidecar_json(agg, {}));
    atomic_write_file(base.string() + ".svg", delta_to_svg(agg));
    artifacts.push_back(base.string() + ".csv");
    artifacts.push_back(base.string() + ".json");
    artifacts.push_back(base.string() + ".svg");
  }
  manifest_update(out, config, "identify", artifacts, timer.seconds());
}

void cmd_vectors(const RunConfig& config, const fs::path& out) {
  StageTimer timer;
  auto corpus = load_corpus_artifact(out);
  auto weights = load_weights_artifact(out);
  ModelConfig mc = weights.config;

  TensorFile tf;
  tf.config = mc;
  ordered_json meta;
  meta["k"] = config.k;
  meta["alpha_default"] = config.alpha;
  meta["directions"] = ordered_json::object();
  for (Direction d : config.directions) {
    ordered_json dj;
    for (auto kind : {CorruptionKind::lang, CorruptionKind::mt}) {
      fs::path dcsv = delta_path(out, d, kind, ".csv");
      if (!fs::exists(dcsv)) throw data_error("missing artifact: " + dcsv.string() + " (run identify first)");
      DeltaMatrix m = load_delta_csv(dcsv, kind, d.name());
      MeanActivations acts = load_mean_acts(meanacts_path(out, d, kind), mc);
      int count = kind == CorruptionKind::lang ? config.language_heads : config.translation_heads;
      auto heads = rank_heads(m, HeadSelect::top(count));
      auto vecs = build_vectors(weights, acts, heads, d, config.k, kind);
      ordered_json hj = ordered_json::array();
      for (std::size_t i = 0; i < heads.size(); ++i) {
        hj.push_back({{"layer", heads[i].layer}, {"head", heads[i].head}, {"delta", m.at(heads[i])}});
        DVec v(vecs[i].v.begin(), vecs[i].v.end());
        tf.tensors.emplace_back(std::string(corruption_name(kind)) + "/" + d.name() + "/" + heads[i].name(),
                                tensor_of({static_cast<std::size_t>(mc.d_model)}, std::move(v)));
      }
      dj[corruption_name(kind)] = hj;
    }
    meta["directions"][d.name()] = dj;
  }
  save_tensor_file(out / "vectors.hlns", tf);
  atomic_write_file(out / "vectors.json", meta.dump(2) + "\n");
  manifest_update(out, config, "vectors", {out / "vectors.hlns", out / "vectors.json"}, timer.seconds());
}

void cmd_steer(const RunConfig& config, const fs::path& out) {
  StageTimer timer;
  auto corpus = load_corpus_artifact(out);
  auto weights = load_weights_artifact(out);
  auto sets = load_vector_sets(out, weights.config);

  ordered_json result;
  result["alpha"] = config.alpha;
  result["directions"] = ordered_json::object();
  for (Direction d : config.directions) {
    auto prompts = make_eval_prompts(corpus, d, PromptStyle::anon, config.eval_prompts, config.seed);
    auto instr = make_eval_prompts(corpus, d, PromptStyle::instructed, config.eval_prompts, config.seed);

    SteerPlan combined;
    combined.lang = sets.lang.at(d.name());
    combined.equiv = sets.mt.at(d.name());
    combined.alpha = config.alpha;
    SteerPlan lang_only = combined;
    lang_only.equiv.clear();
    SteerPlan equiv_only = combined;
    equiv_only.lang.clear();

    std::map<std::string, std::vector<std::vector<int>>> gens;
    gens["baseline"] = run_plain(weights, prompts, config.max_new);
    gens["lang_only"] = run_steered(weights, prompts, lang_only, config.max_new);
    gens["equiv_only"] = run_steered(weights, prompts, equiv_only, config.max_new);
    gens["combined"] = run_steered(weights, prompts, combined, config.max_new);
    gens["instructed"] = run_plain(weights, instr, config.max_new);

    ordered_json dj;
    for (const char* variant : {"baseline", "lang_only", "equiv_only", "combined", "instructed"}) {
      const auto& pr = std::string(variant) == "instructed" ? instr : prompts;
      dj[variant] = report_to_json(score_generations(corpus.layout, d.tgt, gens.at(variant), pr));
    }
    ordered_json gj;
    for (const auto& [variant, g] : gens) gj[variant] = g;
    dj["generations"] = gj;
    result["directions"][d.name()] = dj;
  }
  atomic_write_file(out / "steer.json", result.dump(2) + "\n");
  manifest_update(out, config, "steer", {out / "steer.json"}, timer.seconds());
}

void cmd_ablate(const RunConfig& config, const fs::path& out) {
  StageTimer timer;
  auto corpus = load_corpus_artifact(out);
  auto weights = load_weights_artifact(out);
  auto sets = load_vector_sets(out, weights.config);

  ordered_json result;
  result["directions"] = ordered_json::object();
  for (Direction d : config.directions) {
    auto prompts = make_eval_prompts(corpus, d, PromptStyle::instructed, config.eval_prompts, config.seed);
    std::vector<HeadId> lang_heads, mt_heads;
    for (const auto& sv : sets.lang.at(d.name())) lang_heads.push_back(sv.head);
    for (const auto& sv : sets.mt.at(d.name())) mt_heads.push_back(sv.head);
    std::vector<HeadId> unioned = lang_heads;
    for (HeadId h : mt_heads)
      if (std::find(unioned.begin(), unioned.end(), h) == unioned.end()) unioned.push_back(h);
    int control_size = static_cast<int>(lang_heads.size() + mt_heads.size());

    ordered_json dj;
    dj["heads"] = {{"lang", heads_to_json(lang_heads)}, {"mt", heads_to_json(mt_heads)}};
    dj["baseline"] = report_to_json(score_generations(corpus.layout, d.tgt, run_plain(weights, prompts, config.max_new), prompts));
    dj["ablate_union"] = report_to_json(score_generations(corpus.layout, d.tgt, run_ablated(weights, prompts, unioned, config.max_new), prompts));
    dj["ablate_lang"] = report_to_json(score_generations(corpus.layout, d.tgt, run_ablated(weights, prompts, lang_heads, config.max_new), prompts));
    dj["ablate_mt"] = report_to_json(score_generations(corpus.layout, d.tgt, run_ablated(weights, prompts, mt_heads, config.max_new), prompts));

    ordered_json controls = ordered_json::array();
    EvalReport control_mean;
    for (int s = 0; s < config.control_seeds; ++s) {
      std::uint64_t cs = seed_stream(config.seed, "ablate-control:" + d.name() + ":" + std::to_string(s));
      auto gens = run_ablated_control(weights, prompts, control_size, cs, config.max_new);
      EvalReport r = score_generations(corpus.layout, d.tgt, gens, prompts);
      controls.push_back(report_to_json(r));
      control_mean.bleu += r.bleu / config.control_seeds;
      control_mean.exact_match += r.exact_match / config.control_seeds;
      control_mean.token_accuracy += r.token_accuracy / config.control_seeds;
      control_mean.language_fraction += r.language_fraction / config.control_seeds;
      control_mean.language_pass += r.language_pass / config.control_seeds;
      control_mean.prompts = r.prompts;
    }
    dj["control"] = controls;
    dj["control_mean"] = report_to_json(control_mean);
    result["directions"][d.name()] = dj;
  }
  atomic_write_file(out / "ablate.json", result.dump(2) + "\n");
  manifest_update(out, config, "ablate", {out / "ablate.json"}, timer.seconds());
}

void cmd_transfer(const RunConfig& config, const fs::path& out) {
  StageTimer timer;
  auto corpus = load_corpus_artifact(out);
  auto weights = load_weights_artifact(out);
  auto sets = load_vector_sets(out, weights.config);

  ordered_json result;
  result["grid"] = ordered_json::object();
  std::ostringstream csv;
  csv.precision(17);
  csv << "lang_dir,equiv_dir,exact_match,bleu,language_pass,passing,follow\n";
  for (Direction d1 : config.directions) {
    auto prompts = make_eval_prompts(corpus, d1, PromptStyle::anon, config.eval_prompts, config.seed);
    ordered_json row;
    for (Direction d2 : config.directions) {
      SteerPlan plan = transfer_plan(sets.lang.at(d1.name()), sets.mt.at(d2.name()), config.alpha);
      auto gens = run_steered(weights, prompts, plan, config.max_new);
      EvalReport r = score_generations(corpus.layout, d1.tgt, gens, prompts);
      FollowStats fsr = follow_stats(corpus.layout, d1.tgt, gens);
      row[d2.name()] = {{"exact_match", r.exact_match},
                        {"bleu", r.bleu},
                        {"language_pass", r.language_pass},
                        {"passing", fsr.passing},
                        {"follow", fsr.follow}};
      csv << d1.name() << "," << d2.name() << "," << r.exact_match << "," << r.bleu << "," << r.language_pass
          << "," << fsr.passing << "," << fsr.follow << "\n";
    }
    result["grid"][d1.name()] = row;
  }
  atomic_write_file(out / "transfer.json", result.dump(2) + "\n");
  atomic_write_file(out / "transfer.csv", csv.str());
  manifest_update(out, config, "transfer", {out / "transfer.json", out / "transfer.csv"}, timer.seconds());
}

void cmd_sweep_alpha(const RunConfig& config, const fs::path& out) {
  StageTimer timer;
  auto corpus = load_corpus_artifact(out);
  auto weights = load_weights_artifact(out);
  auto sets = load_vector_sets(out, weights.config);
  Direction d = config.directions.front();

  SteerPlan base;
  base.lang = sets.lang.at(d.name());
  base.equiv = sets.mt.at(d.name());
  auto points = alpha_sweep(weights, corpus, base, config.sweep_alphas, d, config.sweep_eval_prompts,
                            config.max_new, config.seed);
  std::ostringstream csv;
  csv.precision(17);
  csv << "alpha,bleu,exact_match,token_accuracy,language_fraction,language_pass\n";
  for (const auto& p : points)
    csv << p.alpha << "," << p.report.bleu << "," << p.report.exact_match << "," << p.report.token_accuracy << ","
        << p.report.language_fraction << "," << p.report.language_pass << "\n";
  atomic_write_file(out / "sweep_alpha.csv", csv.str());
  manifest_update(out, config, "sweep-alpha", {out / "sweep_alpha.csv"}, timer.seconds());
}

void cmd_sweep_kshot(const RunConfig& config, const fs::path& out) {
  StageTimer timer;
  auto corpus = load_corpus_artifact(out);
  auto weights = load_weights_artifact(out);
  Direction d = config.directions.front();
  auto points = kshot_sweep(weights, corpus, config.pipeline_config(d), config.sweep_kshots);

  std::ostringstream csv;
  csv.precision(17);
  csv << "k,top1_lang_layer,top1_lang_head,top1_mt_layer,top1_mt_head,overlap3_lang,overlap3_mt,steer_exact,steer_bleu\n";
  ordered_json rows = ordered_json::array();
  for (const auto& p : points) {
    csv << p.k << "," << p.lang_ranking[0].layer << "," << p.lang_ranking[0].head << "," << p.mt_ranking[0].layer
        << "," << p.mt_ranking[0].head << "," << p.top3_overlap_lang_vs_ref << "," << p.top3_overlap_mt_vs_ref
        << "," << p.steer.exact_match << "," << p.steer.bleu << "\n";
    rows.push_back({{"k", p.k},
                    {"lang_ranking", heads_to_json(p.lang_ranking)},
                    {"mt_ranking", heads_to_json(p.mt_ranking)},
                    {"overlap3_lang", p.top3_overlap_lang_vs_ref},
                    {"overlap3_mt", p.top3_overlap_mt_vs_ref},
                    {"positive_mass_lang", p.positive_mass_lang},
                    {"positive_mass_mt", p.positive_mass_mt},
                    {"steer", report_to_json(p.steer)}});
  }
  atomic_write_file(out / "sweep_kshot.csv", csv.str());
  ordered_json j;
  j["direction"] = d.name();
  j["rows"] = rows;
  atomic_write_file(out / "sweep_kshot.json", j.dump(2) + "\n");
  manifest_update(out, config, "sweep-kshot", {out / "sweep_kshot.csv", out / "sweep_kshot.json"}, timer.seconds());
}

void cmd_sweep_tokenpos(const RunConfig& config, const fs::path& out) {
  StageTimer timer;
  auto corpus = load_corpus_artifact(out);
  auto weights = load_weights_artifact(out);
  Direction d = config.directions.front();
  std::vector<PositionStrategy> strategies;
  for (const auto& s : config.sweep_strategies) strategies.push_back(PositionStrategy::parse(s));
  auto points = tokenpos_sweep(weights, corpus, config.pipeline_config(d), strategies);

  std::ostringstream csv;
  csv.precision(17);
  csv << "strategy,top1_lang_layer,top1_lang_head,top1_mt_layer,top1_mt_head,steer_exact,steer_bleu\n";
  ordered_json rows = ordered_json::array();
  for (const auto& p : points) {
    csv << p.strategy << "," << p.lang_ranking[0].layer << "," << p.lang_ranking[0].head << ","
        << p.mt_ranking[0].layer << "," << p.mt_ranking[0].head << "," << p.steer.exact_match << ","
        << p.steer.bleu << "\n";
    rows.push_back({{"strategy", p.strategy},
                    {"lang_ranking", heads_to_json(p.lang_ranking)},
                    {"mt_ranking", heads_to_json(p.mt_ranking)},
                    {"steer", report_to_json(p.steer)}});
  }
  // Pairwise top-3 overlap between strategies, per corruption.
  ordered_json overlaps;
  for (const char* kind : {"lang", "mt"}) {
    ordered_json mat = ordered_json::array();
    for (const auto& a : points) {
      ordered_json r = ordered_json::array();
      for (const auto& b : points) {
        const auto& ra = std::string(kind) == "lang" ? a.lang_ranking : a.mt_ranking;
        const auto& rb = std::string(kind) == "lang" ? b.lang_ranking : b.mt_ranking;
        std::set<HeadId> sa(ra.begin(), ra.begin() + 3), sb(rb.begin(), rb.begin() + 3);
        std::size_t inter = 0;
        for (const auto& x : sa) inter += sb.count(x);
        r.push_back(static_cast<double>(inter) / 3.0);
      }
      mat.push_back(r);
    }
    overlaps[kind] = mat;
  }
  atomic_write_file(out / "sweep_tokenpos.csv", csv.str());
  ordered_json j;
  j["direction"] = d.name();
  j["rows"] = rows;
  j["top3_overlap"] = overlaps;
  atomic_write_file(out / "sweep_tokenpos.json", j.dump(2) + "\n");
  manifest_update(out, config, "sweep-tokenpos", {out / "sweep_tokenpos.csv", out / "sweep_tokenpos.json"},
                  timer.seconds());
}

namespace {

HeadId modal_top1(const std::vector<HeadId>& tops) {
  std::map<HeadId, int> counts;
  for (HeadId h : tops) counts[h] += 1;
  HeadId best = tops.front();
  int best_count = 0;
  for (const auto& [h, c] : counts)
    if (c > best_count) {
      best = h;
      best_count = c;
    }
  return best;
}

}  // namespace

void cmd_similarity(const RunConfig& config, const fs::path& out) {
  StageTimer timer;
  auto corpus = load_corpus_artifact(out);
  auto weights = load_weights_artifact(out);
  ModelConfig mc = weights.config;

  std::vector<fs::path> artifacts;
  for (auto kind : {CorruptionKind::lang, CorruptionKind::mt}) {
    std::vector<HeadId> tops;
    for (Direction d : config.directions) {
      DeltaMatrix m = load_delta_csv(delta_path(out, d, kind, ".csv"), kind, d.name());
      tops.push_back(rank_heads(m, HeadSelect::top(1)).front());
    }
    // The most frequent top-1 head gives every direction a vector in the
    // same head's output space.
    HeadId head = modal_top1(tops);
    std::vector<std::pair<std::string, std::vector<double>>> labeled;
    for (Direction d : config.directions) {
      MeanActivations acts = load_mean_acts(meanacts_path(out, d, kind), mc);
      auto vecs = build_vectors(weights, acts, {head}, d, config.k, kind);
      labeled.emplace_back(d.name(), vecs.front().v);
    }
    SimilarityMatrix sim = cosine_matrix(labeled);
    fs::path p = out / (std::string("similarity_") + corruption_name(kind) + ".csv");
    atomic_write_file(p, similarity_to_csv(sim));
    artifacts.push_back(p);
  }
  manifest_update(out, config, "similarity", artifacts, timer.seconds());
}

void cmd_decode(const RunConfig& config, const fs::path& out) {
  StageTimer timer;
  auto corpus = load_corpus_artifact(out);
  auto weights = load_weights_artifact(out);
  auto sets = load_vector_sets(out, weights.config);

  ordered_json result;
  result["top_k"] = config.decode_top_k;
  result["directions"] = ordered_json::object();
  for (Direction d : config.directions) {
    ordered_json dj;
    for (const char* kind : {"lang", "mt"}) {
      const auto& vecs = std::string(kind) == "lang" ? sets.lang.at(d.name()) : sets.mt.at(d.name());
      const SteeringVector& sv = vecs.front();  // highest-delta head
      DecodeResult dec = decode_vector(weights.unembed, sv.v, config.decode_top_k);
      ordered_json items = ordered_json::array();
      int in_target = 0;
      for (auto [token, logit] : dec.top) {
        int block = corpus.layout.block_of(token);
        if (block == d.tgt) ++in_target;
        items.push_back({{"token", token}, {"logit", logit}, {"block", block}});
      }
      dj[kind] = {{"head", {sv.head.layer, sv.head.head}}, {"top", items}, {"in_target_block", in_target}};
    }
    result["directions"][d.name()] = dj;
  }
  atomic_write_file(out / "decode.json", result.dump(2) + "\n");
  manifest_update(out, config, "decode", {out / "decode.json"}, timer.seconds());
}

void cmd_report(const RunConfig& config, const fs::path& out) {
  StageTimer timer;
  ordered_json report;
  report["config"] = config.to_json();
  report["config_hash"] = config.config_hash();

  auto corpus = load_corpus_artifact(out);
  report["corpus"] = {{"sentences", corpus.config.sentences},
                      {"dev", corpus.dev_ids.size()},
                      {"devtest", corpus.devtest_ids.size()},
                      {"vocab", corpus.layout.vocab_size()}};
  report["train"] = ordered_json::parse(read_file(out / "checkpoint.json"));

  // Identification summary: per-direction top heads, positive-mass share of
  // the top two, and the overlap of the top-25% sets.
  ordered_json ident;
  int total_heads = config.model_layers * config.model_heads;
  auto mass_top = [&](const DeltaMatrix& m, int n) {
    double total = 0.0;
    for (double v : m.mean) total += std::max(0.0, v);
    if (total <= 0.0) return 0.0;
    double got = 0.0;
    for (HeadId h : rank_heads(m, HeadSelect::top(n))) got += std::max(0.0, m.at(h));
    return got / total;
  };
  for (Direction d : config.directions) {
    DeltaMatrix ml = load_delta_csv(delta_path(out, d, CorruptionKind::lang, ".csv"), CorruptionKind::lang, d.name());
    DeltaMatrix mm = load_delta_csv(delta_path(out, d, CorruptionKind::mt, ".csv"), CorruptionKind::mt, d.name());
    auto top25l = rank_heads(ml, HeadSelect::percent(25));
    auto top25m = rank_heads(mm, HeadSelect::percent(25));
    ident[d.name()] = {
        {"lang_top3", heads_to_json(rank_heads(ml, HeadSelect::top(std::min(3, total_heads))))},
        {"mt_top3", heads_to_json(rank_heads(mm, HeadSelect::top(std::min(3, total_heads))))},
        {"mass_top2_lang", mass_top(ml, 2)},
        {"mass_top2_mt", mass_top(mm, 2)},
        {"jaccard_top25", jaccard(std::set<HeadId>(top25l.begin(), top25l.end()),
                                  std::set<HeadId>(top25m.begin(), top25m.end()))}};
  }
  DeltaMatrix agg_l = load_delta_csv(out / "identify" / "delta_mean_lang.csv", CorruptionKind::lang, "mean");
  DeltaMatrix agg_m = load_delta_csv(out / "identify" / "delta_mean_mt.csv", CorruptionKind::mt, "mean");
  auto a25l = rank_heads(agg_l, HeadSelect::percent(25));
  auto a25m = rank_heads(agg_m, HeadSelect::percent(25));
  ident["aggregate"] = {{"lang_top3", heads_to_json(rank_heads(agg_l, HeadSelect::top(std::min(3, total_heads))))},
                        {"mt_top3", heads_to_json(rank_heads(agg_m, HeadSelect::top(std::min(3, total_heads))))},
                        {"mass_top2_lang", mass_top(agg_l, 2)},
                        {"mass_top2_mt", mass_top(agg_m, 2)},
                        {"jaccard_top25", jaccard(std::set<HeadId>(a25l.begin(), a25l.end()),
                                                  std::set<HeadId>(a25m.begin(), a25m.end()))}};
  report["identify"] = ident;

  // Steering / ablation summaries with cross-direction means.
  ordered_json steer_doc = ordered_json::parse(read_file(out / "steer.json"));
  ordered_json steer_sum;
  std::map<std::string, double> steer_means;
  for (const char* variant : {"baseline", "lang_only", "equiv_only", "combined", "instructed"}) {
    double em = 0.0;
    for (Direction d : config.directions)
      em += steer_doc["directions"][d.name()][variant]["exact_match"].get<double>();
    steer_means[variant] = em / static_cast<double>(config.directions.size());
    steer_sum[variant] = {{"mean_exact_match", steer_means[variant]}};
  }
  report["steer"] = {{"summary", steer_sum}, {"directions", steer_doc["directions"]}};
  // Keep report.json lean: drop raw generations (they stay in steer.json).
  for (auto& [dname, dj] : report["steer"]["directions"].items()) dj.erase("generations");

  ordered_json ablate_doc = ordered_json::parse(read_file(out / "ablate.json"));
  ordered_json ablate_sum;
  for (const char* variant : {"baseline", "ablate_union", "ablate_lang", "ablate_mt", "control_mean"}) {
    double em = 0.0, lp = 0.0;
    for (Direction d : config.directions) {
      em += ablate_doc["directions"][d.name()][variant]["exact_match"].get<double>();
      lp += ablate_doc["directions"][d.name()][variant]["language_pass"].get<double>();
    }
    ablate_sum[variant] = {{"mean_exact_match", em / static_cast<double>(config.directions.size())},
                           {"mean_language_pass", lp / static_cast<double>(config.directions.size())}};
  }
  report["ablate"] = {{"summary", ablate_sum}, {"directions", ablate_doc["directions"]}};

  // Transfer: matched vs mismatched retention plus language-follow rate.
  ordered_json transfer_doc = ordered_json::parse(read_file(out / "transfer.json"));
  double matched = 0.0, mismatched = 0.0;
  int mismatched_cells = 0, passing = 0, follow = 0;
  for (Direction d1 : config.directions) {
    for (Direction d2 : config.directions) {
      const auto& cell = transfer_doc["grid"][d1.name()][d2.name()];
      double em = cell["exact_match"].get<double>();
      if (d1.name() == d2.name())
        matched += em;
      else {
        mismatched += em;
        ++mismatched_cells;
      }
      passing += cell["passing"].get<int>();
      follow += cell["follow"].get<int>();
    }
  }
  matched /= static_cast<double>(config.directions.size());
  mismatched /= std::max(1, mismatched_cells);
  report["transfer"] = {{"matched_mean_exact", matched},
                        {"mismatched_mean_exact", mismatched},
                        {"retention", matched > 0.0 ? mismatched / matched : 0.0},
                        {"language_follow_rate", passing > 0 ? static_cast<double>(follow) / passing : 0.0},
                        {"grid", transfer_doc["grid"]}};

  // Sweep curves as recorded.
  report["sweeps"] = {{"alpha_csv", read_file(out / "sweep_alpha.csv")},
                      {"kshot", ordered_json::parse(read_file(out / "sweep_kshot.json"))},
                      {"tokenpos", ordered_json::parse(read_file(out / "sweep_tokenpos.json"))}};

  // Similarity off-diagonal means.
  auto offdiag_mean = [&](const fs::path& p) {
    std::istringstream is(read_file(p));
    std::string line;
    std::getline(is, line);
    std::vector<std::vector<double>> rows;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string f;
      std::getline(ls, f, ',');
      std::vector<double> row;
      while (std::getline(ls, f, ',')) row.push_back(std::stod(f));
      rows.push_back(row);
    }
    double sum = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < rows.size(); ++j)
        if (i != j) {
          sum += rows[i][j];
          ++n;
        }
    return n > 0 ? sum / n : 0.0;
  };
  report["similarity"] = {{"lang_offdiag_mean", offdiag_mean(out / "similarity_lang.csv")},
                          {"mt_offdiag_mean", offdiag_mean(out / "similarity_mt.csv")}};

  ordered_json decode_doc = ordered_json::parse(read_file(out / "decode.json"));
  report["decode"] = decode_doc;

  atomic_write_file(out / "report.json", report.dump(2) + "\n");
  manifest_update(out, config, "report", {out / "report.json"}, timer.seconds());
}

}  // namespace headlens
