#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "headlens/steer.hpp"
#include "headlens/trainer.hpp"

namespace headlens {

using ordered_json = nlohmann::ordered_json;

struct RunConfig {
  std::uint64_t seed = 42;
  CorpusConfig corpus;
  int model_layers = 4;
  int model_heads = 4;
  int model_d_model = 128;
  int model_max_seq = 256;
  TrainConfig train;
  int k = 5;
  std::string strategy = "kl";
  int instances_per_direction = 16;
  int language_heads = 2;
  int translation_heads = 2;
  double alpha = 1.0;
  int max_new = 100;
  int eval_prompts = 64;
  int control_seeds = 3;
  std::vector<Direction> directions = {{0, 1}, {1, 0}, {0, 2}, {2, 0}};
  std::vector<double> sweep_alphas = {-1, 0, 0.5, 1, 2, 3, 8};
  std::vector<int> sweep_kshots = {0, 1, 2, 3, 5};
  std::vector<std::string> sweep_strategies = {"fixed0", "fixed2", "fixed4", "random", "kl"};
  int sweep_eval_prompts = 32;
  int decode_top_k = 10;

  ordered_json to_json() const;
  static RunConfig from_json(const ordered_json& j);
  ModelConfig model_config() const;
  PipelineConfig pipeline_config(Direction dir) const;
  std::string config_hash() const;
};

// Defaults overlaid with a config file overlaid with --key.path overrides.
ordered_json merge_json(const ordered_json& base, const ordered_json& over);
void set_json_path(ordered_json& doc, const std::string& dotted_key, const std::string& value);
RunConfig load_run_config(const std::string& config_file, const std::vector<std::pair<std::string, std::string>>& overrides);

void atomic_write_file(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);
std::string fnv1a64_file_hex(const std::filesystem::path& path);

// Stage bookkeeping in <out>/manifest.json: artifact hashes and wall time.
void manifest_update(const std::filesystem::path& out, const RunConfig& config, const std::string& stage,
                     const std::vector<std::filesystem::path>& artifacts, double wall_s);

// Commands. Each throws headlens::Error on failure; the CLI maps exit codes.
void cmd_gen_corpus(const RunConfig& config, const std::filesystem::path& out);
void cmd_train(const RunConfig& config, const std::filesystem::path& out);
void cmd_identify(const RunConfig& config, const std::filesystem::path& out);
void cmd_vectors(const RunConfig& config, const std::filesystem::path& out);
void cmd_steer(const RunConfig& config, const std::filesystem::path& out);
void cmd_ablate(const RunConfig& config, const std::filesystem::path& out);
void cmd_transfer(const RunConfig& config, const std::filesystem::path& out);
void cmd_sweep_alpha(const RunConfig& config, const std::filesystem::path& out);
void cmd_sweep_kshot(const RunConfig& config, const std::filesystem::path& out);
void cmd_sweep_tokenpos(const RunConfig& config, const std::filesystem::path& out);
void cmd_similarity(const RunConfig& config, const std::filesystem::path& out);
void cmd_decode(const RunConfig& config, const std::filesystem::path& out);
void cmd_report(const RunConfig& config, const std::filesystem::path& out);

}  // namespace headlens
