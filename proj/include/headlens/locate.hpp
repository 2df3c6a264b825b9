#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "headlens/contrast.hpp"
#include "headlens/model.hpp"

namespace headlens {

struct HeadId {
  int layer = 0;
  int head = 0;
  auto operator<=>(const HeadId&) const = default;
  std::string name() const { return "L" + std::to_string(layer) + "H" + std::to_string(head); }
};

enum class CorruptionKind { lang, mt };
inline const char* corruption_name(CorruptionKind k) { return k == CorruptionKind::lang ? "lang" : "mt"; }

struct PositionStrategy {
  enum class Kind { kl, fixed, random } kind = Kind::kl;
  int fixed_index = 0;

  static PositionStrategy kl() { return {Kind::kl, 0}; }
  static PositionStrategy fixed(int i) { return {Kind::fixed, i}; }
  static PositionStrategy random() { return {Kind::random, 0}; }
  std::string name() const;
  static PositionStrategy parse(const std::string& s);
};

struct PositionChoice {
  int i_star = 0;
  std::vector<double> divergences;  // one per candidate position (KL only)
};

struct MeanActivations {
  int n_layers = 0;
  int n_heads = 0;
  int d_head = 0;
  int count = 0;
  std::vector<std::vector<double>> z;  // indexed layer * n_heads + head

  const std::vector<double>& z_of(HeadId id) const { return z[static_cast<std::size_t>(id.layer * n_heads + id.head)]; }
};

struct DeltaMatrix {
  CorruptionKind kind = CorruptionKind::lang;
  std::string direction;  // "s-t" or "mean"
  int n_layers = 0;
  int n_heads = 0;
  std::vector<double> mean;                       // layer-major
  std::vector<std::vector<double>> per_instance;  // per instance, layer-major
  std::string strategy;
  int k = 0;
  std::uint64_t seed = 0;

  double at(HeadId id) const { return mean[static_cast<std::size_t>(id.layer * n_heads + id.head)]; }
};

// Teacher-forced token position selection between a clean and a corrupted
// context; KL mode scans every answer prefix and keeps the argmax.
PositionChoice select_position(const ModelWeights& w, const std::vector<int>& clean,
                               const std::vector<int>& corrupted, const std::vector<int>& truth,
                               PositionStrategy strategy, Rng* rng = nullptr);

MeanActivations mean_clean_activation(const ModelWeights& w, const std::vector<PromptTriplet>& triplets,
                                      const std::vector<PositionChoice>& choices);

// Log-probability change from substituting one head's activation at the
// final context position.
double patch_delta(const ModelWeights& w, const std::vector<int>& corrupted_ctx, int y_target, HeadId head,
                   const std::vector<double>& z_mean);

struct SweepOptions {
  PositionStrategy strategy = PositionStrategy::kl();
  std::uint64_t seed = 0;      // feeds the random strategy only
  bool identity_test = false;  // average corrupted-run activations instead of clean
};

struct SweepResult {
  DeltaMatrix matrix;
  MeanActivations mean_acts;
  std::vector<PositionChoice> choices;
};

SweepResult sweep(const ModelWeights& w, const std::vector<PromptTriplet>& triplets, CorruptionKind kind,
                  const SweepOptions& options = {});

struct HeadSelect {
  enum class Mode { count, percent } mode = Mode::count;
  double value = 1;

  static HeadSelect top(int n) { return {Mode::count, static_cast<double>(n)}; }
  static HeadSelect percent(double p) { return {Mode::percent, p}; }
};

std::vector<HeadId> rank_heads(const DeltaMatrix& matrix, HeadSelect select);

double jaccard(const std::set<HeadId>& a, const std::set<HeadId>& b);

DeltaMatrix aggregate_directions(const std::vector<DeltaMatrix>& matrices);

std::string delta_to_csv(const DeltaMatrix& matrix);
std::string delta_sidecar_json(const DeltaMatrix& matrix, const std::vector<PositionChoice>& choices);
std::string delta_to_svg(const DeltaMatrix& matrix);

}  // namespace headlens
