#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "headlens/tensor.hpp"

namespace headlens {

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 128;
  int d_mlp = 512;
  int vocab_size = 0;
  int max_seq = 256;
  std::uint64_t seed = 0;

  int d_head() const { return d_model / n_heads; }
  void validate() const;
};

struct LayerWeights {
  TensorPtr att_norm;  // [d]
  TensorPtr wq, wk, wv;  // [d x d]
  TensorPtr wo;          // [d x d]; head h owns rows [h*d_head, (h+1)*d_head)
  TensorPtr mlp_norm;    // [d]
  TensorPtr w_in;        // [d x d_mlp]
  TensorPtr w_out;       // [d_mlp x d]
};

struct ModelWeights {
  ModelConfig config;
  TensorPtr tok_emb;     // [V x d]
  TensorPtr pos_emb;     // [max_seq x d]
  std::vector<LayerWeights> layers;
  TensorPtr final_norm;  // [d]
  TensorPtr unembed;     // [d x V]

  std::vector<TensorPtr> parameters() const;
  std::vector<std::pair<std::string, TensorPtr>> named_tensors() const;
};

ModelWeights init_weights(const ModelConfig& config);

// Substitute one head's pre-projection output at one position.
struct PatchHead {
  int layer = 0;
  int head = 0;
  int position = 0;
  std::vector<double> z;  // d_head
};

// Zero one head's output at every position.
struct ZeroHead {
  int layer = 0;
  int head = 0;
};

// Add v to the residual stream right after this layer's attention output,
// at positions >= the caller-supplied boundary (generation start).
struct AddResidual {
  int layer = 0;
  std::vector<double> v;  // d_model
};

using Intervention = std::variant<PatchHead, ZeroHead, AddResidual>;

struct HookTrace {
  int n_layers = 0;
  int n_heads = 0;
  int d_head = 0;
  int positions = 0;
  std::vector<TensorPtr> z;         // per layer, [T x d_model], heads side by side
  std::vector<TensorPtr> residual;  // per layer, [T x d_model], after attention add
  std::vector<std::vector<std::pair<int, int>>> patched;  // per layer: (head, position)

  std::span<const double> head_z(int layer, int head, int pos) const {
    const auto& t = z[static_cast<std::size_t>(layer)];
    return {t->data.data() + static_cast<std::size_t>(pos) * static_cast<std::size_t>(n_heads) * static_cast<std::size_t>(d_head) +
                static_cast<std::size_t>(head) * static_cast<std::size_t>(d_head),
            static_cast<std::size_t>(d_head)};
  }
};

struct ForwardResult {
  TensorPtr logits;  // [T x V]
  HookTrace trace;
};

// Causal forward pass. Interventions require tape == nullptr; AddResidual
// applies only at positions >= add_residual_from.
ForwardResult forward(const ModelWeights& w, std::span<const int> tokens,
                      const std::vector<Intervention>& interventions = {}, Tape* tape = nullptr,
                      bool want_trace = true, int add_residual_from = 0);

std::vector<double> next_token_dist(const ModelWeights& w, std::span<const int> context,
                                    const std::vector<Intervention>& interventions = {},
                                    int add_residual_from = 0);

double logprob_of(const ModelWeights& w, std::span<const int> context, int target,
                  const std::vector<Intervention>& interventions = {}, int add_residual_from = 0);

// Greedy decode; returns generated tokens including the stop token when hit.
std::vector<int> generate_greedy(const ModelWeights& w, std::span<const int> prompt,
                                 const std::vector<Intervention>& interventions, int max_new, int eos_token);

// Binary tensor container shared by checkpoints and steering-vector files.
struct TensorFile {
  ModelConfig config;
  std::vector<std::pair<std::string, TensorPtr>> tensors;
};

void save_tensor_file(const std::filesystem::path& path, const TensorFile& file);
TensorFile load_tensor_file(const std::filesystem::path& path);

void save_weights(const std::filesystem::path& path, const ModelWeights& w);
ModelWeights load_weights(const std::filesystem::path& path);

}  // namespace headlens
