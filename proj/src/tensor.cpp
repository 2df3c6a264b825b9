#include "headlens/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <set>

namespace headlens {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using MapC = Eigen::Map<const EMat>;

MapC cmat(const Tensor& t) {
  return MapC(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

MapM gmat(DVec& g, std::size_t r, std::size_t c) {
  return MapM(g.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

void require_2d(const TensorPtr& t, const char* what) {
  if (t->shape.size() != 2) throw config_error(std::string(what) + ": expected a 2-d tensor");
}

}  // namespace

TensorPtr tensor_zeros(std::vector<std::size_t> shape) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data.assign(t->numel(), 0.0);
  return t;
}

TensorPtr tensor_uninit(std::vector<std::size_t> shape) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data.resize(t->numel());
  return t;
}

TensorPtr tensor_of(std::vector<std::size_t> shape, DVec data) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data = std::move(data);
  if (t->numel() != t->data.size()) throw config_error("tensor_of: shape does not match data length");
  return t;
}

TensorPtr tensor_randn(std::vector<std::size_t> shape, double stddev, Rng& rng) {
  auto t = tensor_zeros(std::move(shape));
  for (auto& x : t->data) x = stddev * rng.next_normal();
  return t;
}

int Tape::slot(const TensorPtr& t) {
  auto it = slots_.find(t.get());
  if (it != slots_.end()) return it->second;
  int s = static_cast<int>(grads_.size());
  slots_.emplace(t.get(), s);
  grads_.emplace_back(t->data.size(), 0.0);
  owned_.push_back(t);
  return s;
}

void Tape::backward(const TensorPtr& loss, double seed) {
  if (loss->numel() != 1) throw config_error("backward: loss must be scalar");
  auto it = slots_.find(loss.get());
  if (it == slots_.end()) throw config_error("backward: loss is not part of this graph");
  grads_[static_cast<std::size_t>(it->second)][0] += seed;
  for (auto step = steps_.rbegin(); step != steps_.rend(); ++step) (*step)(*this);
}

const DVec* Tape::grad_of(const TensorPtr& t) const {
  auto it = slots_.find(t.get());
  if (it == slots_.end()) return nullptr;
  return &grads_[static_cast<std::size_t>(it->second)];
}

TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a->shape[1] != b->shape[0]) throw config_error("matmul: inner dimensions do not match");
  std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
  auto out = tensor_uninit({m, n});
  gmat(out->data, m, n).noalias() = cmat(*a) * cmat(*b);
  if (tape) {
    int sa = tape->slot(a), sb = tape->slot(b), so = tape->slot(out);
    tape->record([a, b, sa, sb, so, m, k, n](Tape& t) {
      MapC go(t.grad(so).data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
      gmat(t.grad(sa), m, k).noalias() += go * cmat(*b).transpose();
      gmat(t.grad(sb), k, n).noalias() += cmat(*a).transpose() * go;
    });
  }
  return out;
}

TensorPtr matmul_nt(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  if (a->shape[1] != b->shape[1]) throw config_error("matmul_nt: inner dimensions do not match");
  std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[0];
  auto out = tensor_uninit({m, n});
  gmat(out->data, m, n).noalias() = cmat(*a) * cmat(*b).transpose();
  if (tape) {
    int sa = tape->slot(a), sb = tape->slot(b), so = tape->slot(out);
    tape->record([a, b, sa, sb, so, m, k, n](Tape& t) {
      MapC go(t.grad(so).data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
      gmat(t.grad(sa), m, k).noalias() += go * cmat(*b);
      gmat(t.grad(sb), n, k).noalias() += go.transpose() * cmat(*a);
    });
  }
  return out;
}

TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->shape != b->shape) throw config_error("add: shape mismatch");
  auto out = tensor_uninit(a->shape);
  for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
  if (tape) {
    int sa = tape->slot(a), sb = tape->slot(b), so = tape->slot(out);
    tape->record([sa, sb, so](Tape& t) {
      auto& go = t.grad(so);
      auto& ga = t.grad(sa);
      auto& gb = t.grad(sb);
      for (std::size_t i = 0; i < go.size(); ++i) {
        ga[i] += go[i];
        gb[i] += go[i];
      }
    });
  }
  return out;
}

TensorPtr scale(Tape* tape, const TensorPtr& a, double c) {
  auto out = tensor_uninit(a->shape);
  for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] * c;
  if (tape) {
    int sa = tape->slot(a), so = tape->slot(out);
    tape->record([sa, so, c](Tape& t) {
      auto& go = t.grad(so);
      auto& ga = t.grad(sa);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += c * go[i];
    });
  }
  return out;
}

TensorPtr rows_gather(Tape* tape, const TensorPtr& table, const std::vector<int>& ids) {
  require_2d(table, "rows_gather");
  std::size_t rows = table->shape[0], d = table->shape[1];
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= rows) throw data_error("rows_gather: id out of range");
  auto out = tensor_uninit({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table->data.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d, out->data.begin() + static_cast<std::ptrdiff_t>(i * d));
  if (tape) {
    int st = tape->slot(table), so = tape->slot(out);
    tape->record([st, so, ids, d](Tape& t) {
      auto& go = t.grad(so);
      auto& gt = t.grad(st);
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) gt[static_cast<std::size_t>(ids[i]) * d + j] += go[i * d + j];
    });
  }
  return out;
}

TensorPtr slice_cols(Tape* tape, const TensorPtr& x, std::size_t c0, std::size_t c1) {
  require_2d(x, "slice_cols");
  if (c0 >= c1 || c1 > x->shape[1]) throw config_error("slice_cols: bad column range");
  std::size_t rows = x->shape[0], cols = x->shape[1], w = c1 - c0;
  auto out = tensor_uninit({rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x->data.begin() + static_cast<std::ptrdiff_t>(r * cols + c0), w,
                out->data.begin() + static_cast<std::ptrdiff_t>(r * w));
  if (tape) {
    int sx = tape->slot(x), so = tape->slot(out);
    tape->record([sx, so, rows, cols, c0, w](Tape& t) {
      auto& go = t.grad(so);
      auto& gx = t.grad(sx);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) gx[r * cols + c0 + j] += go[r * w + j];
    });
  }
  return out;
}

TensorPtr concat_cols(Tape* tape, const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw config_error("concat_cols: no parts");
  std::size_t rows = parts[0]->shape[0], total = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p->shape[0] != rows) throw config_error("concat_cols: row mismatch");
    total += p->shape[1];
  }
  auto out = tensor_uninit({rows, total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::size_t w = p->shape[1];
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p->data.begin() + static_cast<std::ptrdiff_t>(r * w), w,
                  out->data.begin() + static_cast<std::ptrdiff_t>(r * total + off));
    off += w;
  }
  if (tape) {
    std::vector<int> sp;
    sp.reserve(parts.size());
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
      sp.push_back(tape->slot(p));
      widths.push_back(p->shape[1]);
    }
    int so = tape->slot(out);
    tape->record([sp, so, widths, rows, total](Tape& t) {
      auto& go = t.grad(so);
      std::size_t off2 = 0;
      for (std::size_t pi = 0; pi < sp.size(); ++pi) {
        auto& gp = t.grad(sp[pi]);
        std::size_t w = widths[pi];
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < w; ++j) gp[r * w + j] += go[r * total + off2 + j];
        off2 += w;
      }
    });
  }
  return out;
}

TensorPtr softmax_rows(Tape* tape, const TensorPtr& x) {
  require_2d(x, "softmax_rows");
  for (double v : x->data)
    if (std::isnan(v)) throw numeric_error("softmax_rows: NaN input");
  std::size_t rows = x->shape[0], cols = x->shape[1];
  auto out = tensor_uninit(x->shape);
  for (std::size_t r = 0; r < rows; ++r) {
    Eigen::Map<const Eigen::ArrayXd> in(x->data.data() + r * cols, static_cast<Eigen::Index>(cols));
    Eigen::Map<Eigen::ArrayXd> o(out->data.data() + r * cols, static_cast<Eigen::Index>(cols));
    o = (in - in.maxCoeff()).exp();
    o /= o.sum();
  }
  if (tape) {
    int sx = tape->slot(x), so = tape->slot(out);
    tape->record([out, sx, so, rows, cols](Tape& t) {
      auto& go = t.grad(so);
      auto& gx = t.grad(sx);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = out->data.data() + r * cols;
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += go[r * cols + j] * y[j];
        for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] += y[j] * (go[r * cols + j] - dot);
      }
    });
  }
  return out;
}

TensorPtr softmax_causal(Tape* tape, const TensorPtr& scores) {
  require_2d(scores, "softmax_causal");
  if (scores->shape[0] != scores->shape[1]) throw config_error("softmax_causal: square matrix required");
  std::size_t n = scores->shape[0];
  auto out = tensor_zeros(scores->shape);
  for (std::size_t r = 0; r < n; ++r) {
    auto w = static_cast<Eigen::Index>(r + 1);
    Eigen::Map<const Eigen::ArrayXd> in(scores->data.data() + r * n, w);
    Eigen::Map<Eigen::ArrayXd> o(out->data.data() + r * n, w);
    o = (in - in.maxCoeff()).exp();
    o /= o.sum();
  }
  if (tape) {
    int sx = tape->slot(scores), so = tape->slot(out);
    tape->record([out, sx, so, n](Tape& t) {
      auto& go = t.grad(so);
      auto& gx = t.grad(sx);
      for (std::size_t r = 0; r < n; ++r) {
        const double* y = out->data.data() + r * n;
        double dot = 0.0;
        for (std::size_t j = 0; j <= r; ++j) dot += go[r * n + j] * y[j];
        for (std::size_t j = 0; j <= r; ++j) gx[r * n + j] += y[j] * (go[r * n + j] - dot);
      }
    });
  }
  return out;
}

TensorPtr attention_heads(Tape* tape, const TensorPtr& q, const TensorPtr& k, const TensorPtr& v, int n_heads) {
  require_2d(q, "attention_heads");
  if (q->shape != k->shape || q->shape != v->shape) throw config_error("attention_heads: q/k/v shape mismatch");
  std::size_t seq = q->shape[0], d = q->shape[1];
  if (n_heads < 1 || d % static_cast<std::size_t>(n_heads) != 0)
    throw config_error("attention_heads: d not divisible by n_heads");
  std::size_t dh = d / static_cast<std::size_t>(n_heads);
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  using Stride = Eigen::OuterStride<>;
  using HeadMap = Eigen::Map<EMat, 0, Stride>;
  using CHeadMap = Eigen::Map<const EMat, 0, Stride>;
  auto head_view = [&](const TensorPtr& t, std::size_t h) {
    return CHeadMap(t->data.data() + h * dh, static_cast<Eigen::Index>(seq), static_cast<Eigen::Index>(dh),
                    Stride(static_cast<Eigen::Index>(d)));
  };

  auto out = tensor_uninit({seq, d});
  // Attention weights are kept for backward; upper triangles stay zero.
  auto probs = std::make_shared<DVec>(static_cast<std::size_t>(n_heads) * seq * seq, 0.0);
  EMat scores(static_cast<Eigen::Index>(seq), static_cast<Eigen::Index>(seq));
  for (std::size_t h = 0; h < static_cast<std::size_t>(n_heads); ++h) {
    scores.noalias() = head_view(q, h) * head_view(k, h).transpose() * inv_sqrt;
    double* pb = probs->data() + h * seq * seq;
    for (std::size_t r = 0; r < seq; ++r) {
      auto wd = static_cast<Eigen::Index>(r + 1);
      Eigen::Map<Eigen::ArrayXd> o(pb + r * seq, wd);
      o = (Eigen::Map<const Eigen::ArrayXd>(scores.data() + r * seq, wd) -
           scores.row(static_cast<Eigen::Index>(r)).head(wd).maxCoeff())
              .exp();
      o /= o.sum();
    }
    MapC pm(pb, static_cast<Eigen::Index>(seq), static_cast<Eigen::Index>(seq));
    HeadMap(out->data.data() + h * dh, static_cast<Eigen::Index>(seq), static_cast<Eigen::Index>(dh),
            Stride(static_cast<Eigen::Index>(d)))
        .noalias() = pm * head_view(v, h);
  }

  if (tape) {
    int sq = tape->slot(q), sk = tape->slot(k), sv = tape->slot(v), so = tape->slot(out);
    tape->record([q, k, v, probs, sq, sk, sv, so, seq, d, dh, n_heads, inv_sqrt](Tape& t) {
      auto head_view2 = [&](const TensorPtr& tp, std::size_t h) {
        return CHeadMap(tp->data.data() + h * dh, static_cast<Eigen::Index>(seq), static_cast<Eigen::Index>(dh),
                        Stride(static_cast<Eigen::Index>(d)));
      };
      auto grad_view = [&](DVec& g, std::size_t h) {
        return HeadMap(g.data() + h * dh, static_cast<Eigen::Index>(seq), static_cast<Eigen::Index>(dh),
                       Stride(static_cast<Eigen::Index>(d)));
      };
      EMat dprobs(static_cast<Eigen::Index>(seq), static_cast<Eigen::Index>(seq));
      EMat dscores(static_cast<Eigen::Index>(seq), static_cast<Eigen::Index>(seq));
      for (std::size_t h = 0; h < static_cast<std::size_t>(n_heads); ++h) {
        const double* pb = probs->data() + h * seq * seq;
        MapC pm(pb, static_cast<Eigen::Index>(seq), static_cast<Eigen::Index>(seq));
        CHeadMap dz(t.grad(so).data() + h * dh, static_cast<Eigen::Index>(seq), static_cast<Eigen::Index>(dh),
                    Stride(static_cast<Eigen::Index>(d)));
        grad_view(t.grad(sv), h).noalias() += pm.transpose() * dz;
        dprobs.noalias() = dz * head_view2(v, h).transpose();
        dscores.setZero();
        for (std::size_t r = 0; r < seq; ++r) {
          auto wd = static_cast<Eigen::Index>(r + 1);
          Eigen::Map<const Eigen::ArrayXd> pr(pb + r * seq, wd);
          Eigen::Map<const Eigen::ArrayXd> dp(dprobs.data() + r * seq, wd);
          double dot = (pr * dp).sum();
          Eigen::Map<Eigen::ArrayXd>(dscores.data() + r * seq, wd) = pr * (dp - dot) * inv_sqrt;
        }
        grad_view(t.grad(sq), h).noalias() += dscores * head_view2(k, h);
        grad_view(t.grad(sk), h).noalias() += dscores.transpose() * head_view2(q, h);
      }
    });
  }
  return out;
}

TensorPtr rmsnorm(Tape* tape, const TensorPtr& x, const TensorPtr& gain) {
  require_2d(x, "rmsnorm");
  std::size_t rows = x->shape[0], d = x->shape[1];
  if (gain->numel() != d) throw config_error("rmsnorm: gain length mismatch");
  constexpr double kEps = 1e-5;
  auto out = tensor_uninit(x->shape);
  std::vector<double> inv_rms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x->data.data() + r * d;
    double ms = 0.0;
    for (std::size_t j = 0; j < d; ++j) ms += in[j] * in[j];
    ms = ms / static_cast<double>(d) + kEps;
    double inv = 1.0 / std::sqrt(ms);
    inv_rms[r] = inv;
    double* o = out->data.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) o[j] = in[j] * gain->data[j] * inv;
  }
  if (tape) {
    int sx = tape->slot(x), sg = tape->slot(gain), so = tape->slot(out);
    tape->record([x, gain, inv_rms, sx, sg, so, rows, d](Tape& t) {
      auto& go = t.grad(so);
      auto& gx = t.grad(sx);
      auto& gg = t.grad(sg);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x->data.data() + r * d;
        const double* dy = go.data() + r * d;
        double inv = inv_rms[r];
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += dy[j] * gain->data[j] * in[j];
        double coef = s * inv * inv * inv / static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          gx[r * d + j] += dy[j] * gain->data[j] * inv - in[j] * coef;
          gg[j] += dy[j] * in[j] * inv;
        }
      }
    });
  }
  return out;
}

TensorPtr silu(Tape* tape, const TensorPtr& x) {
  auto out = tensor_uninit(x->shape);
  using Arr = Eigen::Map<Eigen::ArrayXd>;
  using CArr = Eigen::Map<const Eigen::ArrayXd>;
  auto n = static_cast<Eigen::Index>(x->data.size());
  CArr xin(x->data.data(), n);
  // y = x * sigmoid(x); the sigmoid is recomputed in backward.
  Arr(out->data.data(), n) = xin / (1.0 + (-xin).exp());
  if (tape) {
    int sx = tape->slot(x), so = tape->slot(out);
    tape->record([x, sx, so, n](Tape& t) {
      CArr xv(x->data.data(), n);
      CArr go(t.grad(so).data(), n);
      Eigen::ArrayXd sig = 1.0 / (1.0 + (-xv).exp());
      Arr(t.grad(sx).data(), n) += go * sig * (1.0 + xv * (1.0 - sig));
    });
  }
  return out;
}

TensorPtr cross_entropy(Tape* tape, const TensorPtr& logits, const std::vector<int>& targets,
                        const std::vector<double>& mask) {
  require_2d(logits, "cross_entropy");
  std::size_t rows = logits->shape[0], vocab = logits->shape[1];
  if (targets.size() != rows || mask.size() != rows)
    throw config_error("cross_entropy: targets/mask length mismatch");
  double weight = 0.0;
  for (double w : mask) {
    if (w < 0.0) throw config_error("cross_entropy: negative mask weight");
    weight += w;
  }
  if (weight == 0.0) throw data_error("cross_entropy: empty loss (all-zero mask)");
  for (std::size_t r = 0; r < rows; ++r)
    if (mask[r] > 0.0 && (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab))
      throw data_error("cross_entropy: target id out of vocabulary");

  // Row log-sum-exp, reused by backward.
  std::vector<double> lse(rows);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (mask[r] == 0.0) continue;
    Eigen::Map<const Eigen::ArrayXd> in(logits->data.data() + r * vocab, static_cast<Eigen::Index>(vocab));
    double mx = in.maxCoeff();
    lse[r] = mx + std::log((in - mx).exp().sum());
    total += mask[r] * (lse[r] - in[static_cast<Eigen::Index>(targets[r])]);
  }
  auto out = tensor_of({1}, {total / weight});
  if (tape) {
    int sl = tape->slot(logits), so = tape->slot(out);
    tape->record([logits, targets, mask, lse, weight, sl, so, rows, vocab](Tape& t) {
      double seed = t.grad(so)[0];
      auto& gl = t.grad(sl);
      for (std::size_t r = 0; r < rows; ++r) {
        if (mask[r] == 0.0) continue;
        Eigen::Map<const Eigen::ArrayXd> in(logits->data.data() + r * vocab, static_cast<Eigen::Index>(vocab));
        Eigen::Map<Eigen::ArrayXd> g(gl.data() + r * vocab, static_cast<Eigen::Index>(vocab));
        double w = seed * mask[r] / weight;
        g += w * (in - lse[r]).exp();
        g[static_cast<Eigen::Index>(targets[r])] -= w;
      }
    });
  }
  return out;
}

AdamState AdamState::init(const std::vector<TensorPtr>& params, double lr_in) {
  AdamState s;
  s.lr = lr_in;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const auto& p : params) {
    s.m.emplace_back(p->data.size(), 0.0);
    s.v.emplace_back(p->data.size(), 0.0);
  }
  return s;
}

void adam_step(const std::vector<TensorPtr>& params, AdamState& state) {
  if (state.m.size() != params.size()) throw config_error("adam_step: state does not match params");
  state.step += 1;
  double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    if (p.grad.size() != p.data.size()) throw config_error("adam_step: param grad missing");
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      double g = p.grad[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      p.data[j] -= state.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.eps);
    }
  }
}

double grad_check(const std::function<TensorPtr(Tape*)>& f, const std::vector<TensorPtr>& params,
                  double h, std::size_t max_coords, Rng& rng) {
  Tape tape;
  TensorPtr loss = f(&tape);
  if (loss->numel() != 1) throw config_error("grad_check: function must be scalar-valued");
  if (!std::isfinite(loss->data[0])) throw numeric_error("grad_check: non-finite function value");
  tape.backward(loss);

  std::size_t total = 0;
  for (const auto& p : params) total += p->data.size();
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  if (total <= max_coords) {
    for (std::size_t pi = 0; pi < params.size(); ++pi)
      for (std::size_t j = 0; j < params[pi]->data.size(); ++j) coords.emplace_back(pi, j);
  } else {
    std::set<std::uint64_t> seen;
    while (coords.size() < max_coords) {
      std::uint64_t flat = rng.next_below(total);
      if (!seen.insert(flat).second) continue;
      std::size_t pi = 0;
      while (flat >= params[pi]->data.size()) {
        flat -= params[pi]->data.size();
        ++pi;
      }
      coords.emplace_back(pi, static_cast<std::size_t>(flat));
    }
  }

  double worst = 0.0;
  for (auto [pi, j] : coords) {
    const DVec* g = tape.grad_of(params[pi]);
    double analytic = g ? (*g)[j] : 0.0;
    double saved = params[pi]->data[j];
    params[pi]->data[j] = saved + h;
    double up = f(nullptr)->data[0];
    params[pi]->data[j] = saved - h;
    double down = f(nullptr)->data[0];
    params[pi]->data[j] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) throw numeric_error("grad_check: non-finite function value");
    double numeric = (up - down) / (2.0 * h);
    double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

}  // namespace headlens
