#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "headlens/errors.hpp"
#include "headlens/rng.hpp"

namespace headlens {

// Tensor buffer allocator with two jobs: skip value-initialization on
// resize (op outputs are always fully overwritten), and pin every buffer to
// 64-byte alignment. The alignment is not an optimization: Eigen's kernels
// peel differently for different pointer alignments, so heap-dependent
// alignment would make identical calls differ in the last bits.
template <typename T>
struct uninit_alloc {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;

  uninit_alloc() = default;
  template <typename U>
  uninit_alloc(const uninit_alloc<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(kAlign))); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t(kAlign)); }

  template <typename U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }

  template <typename U>
  bool operator==(const uninit_alloc<U>&) const {
    return true;
  }
};

using DVec = std::vector<double, uninit_alloc<double>>;

// Dense row-major 64-bit tensor. `grad` is empty until a caller (trainer,
// grad_check) fills it; when present it has the same element count as data.
struct Tensor {
  std::vector<std::size_t> shape;
  DVec data;
  DVec grad;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  void alloc_grad() { grad.assign(data.size(), 0.0); }
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr tensor_zeros(std::vector<std::size_t> shape);
TensorPtr tensor_uninit(std::vector<std::size_t> shape);
TensorPtr tensor_of(std::vector<std::size_t> shape, DVec data);
TensorPtr tensor_randn(std::vector<std::size_t> shape, double stddev, Rng& rng);

// Reverse-mode tape. One tape per forward call; never shared across threads.
// Gradient buffers live in the tape (slot-indexed), so the same parameter
// tensor can participate in many concurrent graphs.
class Tape {
 public:
  int slot(const TensorPtr& t);
  DVec& grad(int s) { return grads_[static_cast<std::size_t>(s)]; }
  void record(std::function<void(Tape&)> step) { steps_.push_back(std::move(step)); }

  // Seeds d(loss)/d(loss) = seed and runs recorded steps in reverse.
  void backward(const TensorPtr& loss, double seed = 1.0);

  // Gradient buffer for t, or nullptr if t never entered this graph.
  const DVec* grad_of(const TensorPtr& t) const;

 private:
  std::vector<std::function<void(Tape&)>> steps_;
  std::unordered_map<const Tensor*, int> slots_;
  std::vector<DVec> grads_;
  std::vector<TensorPtr> owned_;
};

// All ops run the forward math unconditionally and record a backward step
// only when tape != nullptr.
TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b);
// a [m x k] times b^T where b is [n x k].
TensorPtr matmul_nt(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(Tape* tape, const TensorPtr& a, double c);
TensorPtr rows_gather(Tape* tape, const TensorPtr& table, const std::vector<int>& ids);
TensorPtr slice_cols(Tape* tape, const TensorPtr& x, std::size_t c0, std::size_t c1);
TensorPtr concat_cols(Tape* tape, const std::vector<TensorPtr>& parts);
TensorPtr softmax_rows(Tape* tape, const TensorPtr& x);
// Row i is normalized over columns [0, i]; columns above the diagonal are 0.
TensorPtr softmax_causal(Tape* tape, const TensorPtr& scores);
// Fused causal multi-head attention over q/k/v [T x d], d_head = d/n_heads
// contiguous column slices per head. Returns z [T x d] (pre output
// projection), scores scaled by 1/sqrt(d_head).
TensorPtr attention_heads(Tape* tape, const TensorPtr& q, const TensorPtr& k, const TensorPtr& v, int n_heads);
TensorPtr rmsnorm(Tape* tape, const TensorPtr& x, const TensorPtr& gain);
TensorPtr silu(Tape* tape, const TensorPtr& x);
// Mask-weighted mean negative log-likelihood over rows; scalar result.
TensorPtr cross_entropy(Tape* tape, const TensorPtr& logits, const std::vector<int>& targets,
                        const std::vector<double>& mask);

struct AdamState {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static AdamState init(const std::vector<TensorPtr>& params, double lr);
};

// Bias-corrected Adam update reading each param's .grad.
void adam_step(const std::vector<TensorPtr>& params, AdamState& state);

// Compares reverse-mode gradients of f against central differences on up to
// max_coords sampled coordinates. Error per coordinate is
// |a - n| / max(1, |a|, |n|); returns the worst one.
double grad_check(const std::function<TensorPtr(Tape*)>& f, const std::vector<TensorPtr>& params,
                  double h, std::size_t max_coords, Rng& rng);

}  // namespace headlens
