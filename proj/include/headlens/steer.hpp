#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "headlens/locate.hpp"
#include "headlens/metrics.hpp"

namespace headlens {

// Residual-space direction owned by one head: its mean activation pushed
// through that head's slice of the output projection.
struct SteeringVector {
  HeadId head;
  std::vector<double> v;  // d_model
  Direction source_direction;
  int k = 0;
  CorruptionKind kind = CorruptionKind::lang;
};

std::vector<SteeringVector> build_vectors(const ModelWeights& w, const MeanActivations& acts,
                                          const std::vector<HeadId>& heads, Direction source_direction, int k,
                                          CorruptionKind kind);

struct SteerPlan {
  std::vector<SteeringVector> lang;
  std::vector<SteeringVector> equiv;
  double alpha = 1.0;
};

// One AddResidual per hooked layer; vectors are summed in plan order and
// scaled by alpha before injection.
std::vector<Intervention> plan_to_interventions(const SteerPlan& plan, const ModelConfig& cfg);

std::vector<int> steered_generate(const ModelWeights& w, const std::vector<int>& prompt, const SteerPlan& plan,
                                  int max_new, int eos_token);

struct AblatePlan {
  std::vector<HeadId> heads;  // targeted mode
  bool control = false;       // draw a fresh same-size set per generation
  int control_size = 0;
};

std::vector<int> ablated_generate(const ModelWeights& w, const std::vector<int>& prompt, const AblatePlan& plan,
                                  Rng& rng, int max_new, int eos_token);

std::vector<HeadId> draw_control_heads(Rng& rng, const ModelConfig& cfg, int count);

SteerPlan transfer_plan(const std::vector<SteeringVector>& lang_vectors,
                        const std::vector<SteeringVector>& equiv_vectors, double alpha);

// ---- evaluation over devtest prompts ----

enum class PromptStyle { anon, instructed, fewshot };

struct EvalPrompt {
  std::vector<int> tokens;
  std::vector<int> truth;  // target rendering + EOS
  int query_id = 0;
};

std::vector<EvalPrompt> make_eval_prompts(const ParallelCorpus& corpus, Direction dir, PromptStyle style, int n,
                                          std::uint64_t seed, int k = 5);

std::vector<std::vector<int>> run_plain(const ModelWeights& w, const std::vector<EvalPrompt>& prompts, int max_new);
std::vector<std::vector<int>> run_steered(const ModelWeights& w, const std::vector<EvalPrompt>& prompts,
                                          const SteerPlan& plan, int max_new);
std::vector<std::vector<int>> run_ablated(const ModelWeights& w, const std::vector<EvalPrompt>& prompts,
                                          const std::vector<HeadId>& heads, int max_new);
// Control ablation; head sets are resampled per generation from a per-prompt
// substream so parallel and serial runs agree.
std::vector<std::vector<int>> run_ablated_control(const ModelWeights& w, const std::vector<EvalPrompt>& prompts,
                                                  int control_size, std::uint64_t seed, int max_new);

EvalReport score_generations(const VocabLayout& layout, int tgt_lang,
                             const std::vector<std::vector<int>>& generations,
                             const std::vector<EvalPrompt>& prompts, double tau = 0.9);

// ---- parameter sweeps over the identify + steer pipeline ----

struct PipelineConfig {
  Direction direction;
  int k = 5;
  int instances = 16;
  int lang_heads = 2;
  int mt_heads = 2;
  double alpha = 1.0;
  int eval_prompts = 32;
  int max_new = 100;
  std::uint64_t seed = 0;
  PositionStrategy strategy = PositionStrategy::kl();
};

// Identification + vector building for one direction at one shot count.
struct IdentifyOutcome {
  SweepResult lang;
  SweepResult mt;
  std::vector<HeadId> lang_heads;
  std::vector<HeadId> mt_heads;
  std::vector<SteeringVector> lang_vectors;
  std::vector<SteeringVector> mt_vectors;
};

IdentifyOutcome run_identify(const ModelWeights& w, const ParallelCorpus& corpus, const PipelineConfig& cfg);

struct AlphaPoint {
  double alpha = 0.0;
  EvalReport report;
};

std::vector<AlphaPoint> alpha_sweep(const ModelWeights& w, const ParallelCorpus& corpus, const SteerPlan& base,
                                    const std::vector<double>& alphas, Direction dir, int eval_prompts,
                                    int max_new, std::uint64_t seed);

struct KshotPoint {
  int k = 0;
  std::vector<HeadId> lang_ranking;
  std::vector<HeadId> mt_ranking;
  double top3_overlap_lang_vs_ref = 0.0;
  double top3_overlap_mt_vs_ref = 0.0;
  double positive_mass_lang = 0.0;
  double positive_mass_mt = 0.0;
  EvalReport steer;
};

std::vector<KshotPoint> kshot_sweep(const ModelWeights& w, const ParallelCorpus& corpus, PipelineConfig cfg,
                                    const std::vector<int>& k_list);

struct TokenposPoint {
  std::string strategy;
  std::vector<HeadId> lang_ranking;
  std::vector<HeadId> mt_ranking;
  EvalReport steer;
};

std::vector<TokenposPoint> tokenpos_sweep(const ModelWeights& w, const ParallelCorpus& corpus, PipelineConfig cfg,
                                          const std::vector<PositionStrategy>& strategies);

}  // namespace headlens
