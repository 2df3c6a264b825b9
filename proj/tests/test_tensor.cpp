#include <doctest.h>

#include <cmath>

#include "headlens/tensor.hpp"

using namespace headlens;

namespace {

// Brute-force triple loop, the reference for every matmul check.
TensorPtr naive_matmul(const TensorPtr& a, const TensorPtr& b) {
  std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
  auto out = tensor_zeros({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t kk = 0; kk < k; ++kk)
      for (std::size_t j = 0; j < n; ++j) out->data[i * n + j] += a->data[i * k + kk] * b->data[kk * n + j];
  return out;
}

TensorPtr random_tensor(std::vector<std::size_t> shape, Rng& rng) {
  auto t = tensor_zeros(std::move(shape));
  for (auto& x : t->data) x = rng.next_normal();
  return t;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("matmul identity") {
  auto eye = tensor_of({2, 2}, {1, 0, 0, 1});
  auto m = tensor_of({2, 2}, {1, 2, 3, 4});
  auto out = matmul(nullptr, eye, m);
  CHECK(out->data == DVec{1, 2, 3, 4});
}

TEST_CASE("matmul row times column") {
  auto a = tensor_of({1, 2}, {1, 0});
  auto b = tensor_of({2, 1}, {0, 5});
  CHECK(matmul(nullptr, a, b)->data == DVec{0});
}

TEST_CASE("matmul equals the naive triple loop") {
  Rng rng(11);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  auto fast = matmul(nullptr, a, b);
  auto slow = naive_matmul(a, b);
  for (std::size_t i = 0; i < fast->data.size(); ++i) CHECK(fast->data[i] == doctest::Approx(slow->data[i]).epsilon(1e-12));
}

TEST_CASE("matmul shape mismatch throws") {
  auto a = tensor_zeros({2, 3});
  auto b = tensor_zeros({2, 3});
  CHECK_THROWS_AS(matmul(nullptr, a, b), Error);
}

TEST_CASE("matmul associativity within 1e-9") {
  Rng rng(13);
  auto a = random_tensor({3, 5}, rng);
  auto b = random_tensor({5, 4}, rng);
  auto c = random_tensor({4, 6}, rng);
  auto left = matmul(nullptr, matmul(nullptr, a, b), c);
  auto right = matmul(nullptr, a, matmul(nullptr, b, c));
  for (std::size_t i = 0; i < left->data.size(); ++i) CHECK(std::abs(left->data[i] - right->data[i]) < 1e-9);
}

TEST_CASE("softmax of a constant row is uniform") {
  auto x = tensor_of({1, 4}, {0, 0, 0, 0});
  auto y = softmax_rows(nullptr, x);
  for (double v : y->data) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("softmax survives large logits") {
  auto x = tensor_of({1, 2}, {1000, 0});
  auto y = softmax_rows(nullptr, x);
  CHECK(y->data[0] == doctest::Approx(1.0));
  CHECK(y->data[1] == doctest::Approx(0.0));
  CHECK(std::isfinite(y->data[0]));
}

TEST_CASE("softmax of log weights recovers the weights") {
  auto x = tensor_of({1, 3}, {std::log(1.0), std::log(2.0), std::log(3.0)});
  auto y = softmax_rows(nullptr, x);
  CHECK(y->data[0] == doctest::Approx(1.0 / 6).epsilon(1e-14));
  CHECK(y->data[1] == doctest::Approx(2.0 / 6).epsilon(1e-14));
  CHECK(y->data[2] == doctest::Approx(3.0 / 6).epsilon(1e-14));
}

TEST_CASE("softmax rows sum to one for random inputs") {
  Rng rng(17);
  for (int rep = 0; rep < 20; ++rep) {
    auto x = random_tensor({5, 7}, rng);
    for (auto& v : x->data) v *= 50.0;
    auto y = softmax_rows(nullptr, x);
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) s += y->at(r, c);
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("softmax rejects NaN") {
  auto x = tensor_of({1, 2}, {std::nan(""), 0.0});
  CHECK_THROWS_AS(softmax_rows(nullptr, x), Error);
}

TEST_CASE("cross entropy of uniform logits is log vocab") {
  auto logits = tensor_zeros({3, 4});
  auto loss = cross_entropy(nullptr, logits, {0, 1, 3}, {1, 1, 1});
  CHECK(loss->data[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy saturates to zero on a confident hit") {
  auto logits = tensor_zeros({1, 5});
  logits->at(0, 2) = 40.0;
  auto loss = cross_entropy(nullptr, logits, {2}, {1});
  CHECK(loss->data[0] < 1e-12);
}

TEST_CASE("cross entropy agrees with an independent log-sum-exp oracle") {
  Rng rng(23);
  auto logits = random_tensor({4, 6}, rng);
  std::vector<int> targets{1, 5, 0, 3};
  std::vector<double> mask{1, 0.5, 0, 2};
  auto loss = cross_entropy(nullptr, logits, targets, mask);

  double expect = 0.0, wsum = 0.0;
  for (std::size_t r = 0; r < 4; ++r) {
    double mx = -1e300;
    for (std::size_t c = 0; c < 6; ++c) mx = std::max(mx, logits->at(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < 6; ++c) s += std::exp(logits->at(r, c) - mx);
    double nll = mx + std::log(s) - logits->at(r, static_cast<std::size_t>(targets[r]));
    expect += mask[r] * nll;
    wsum += mask[r];
  }
  CHECK(loss->data[0] == doctest::Approx(expect / wsum).epsilon(1e-12));
}

TEST_CASE("cross entropy rejects an all-zero mask") {
  auto logits = tensor_zeros({2, 3});
  CHECK_THROWS_AS(cross_entropy(nullptr, logits, {0, 1}, {0, 0}), Error);
}

TEST_CASE("adam with zero gradient leaves parameters untouched") {
  auto p = tensor_of({3}, {1.0, -2.0, 0.5});
  p->alloc_grad();
  auto state = AdamState::init({p}, 0.1);
  auto before = p->data;
  for (int i = 0; i < 5; ++i) adam_step({p}, state);
  CHECK(p->data == before);
}

TEST_CASE("adam descends on a quadratic") {
  auto x = tensor_of({1}, {1.0});
  auto state = AdamState::init({x}, 0.1);
  x->alloc_grad();
  x->grad[0] = 2.0 * x->data[0];
  adam_step({x}, state);
  CHECK(x->data[0] < 1.0);
}

TEST_CASE("adam converges on a shifted quadratic") {
  auto x = tensor_of({1}, {0.0});
  auto state = AdamState::init({x}, 0.1);
  for (int i = 0; i < 200; ++i) {
    x->alloc_grad();
    x->grad[0] = 2.0 * (x->data[0] - 3.0);
    adam_step({x}, state);
  }
  CHECK(std::abs(x->data[0] - 3.0) < 1e-2);
}

TEST_CASE("grad_check on a sum of squares") {
  auto x = tensor_of({1, 3}, {1.0, 2.0, 3.0});
  auto f = [&](Tape* tape) { return matmul_nt(tape, x, x); };  // x . x = sum of squares

  Tape tape;
  auto loss = f(&tape);
  CHECK(loss->data[0] == doctest::Approx(14.0));
  tape.backward(loss);
  const DVec* g = tape.grad_of(x);
  REQUIRE(g != nullptr);
  CHECK((*g)[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK((*g)[1] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK((*g)[2] == doctest::Approx(6.0).epsilon(1e-12));

  Rng coords(1);
  CHECK(grad_check(f, {x}, 1e-6, 3, coords) < 1e-8);
}

TEST_CASE("grad_check validates composite ops") {
  Rng rng(31);
  auto x = random_tensor({4, 6}, rng);
  auto gain = tensor_of({6}, {1.0, 0.9, 1.1, 1.0, 1.2, 0.8});
  auto w = random_tensor({6, 6}, rng);
  std::vector<int> targets{1, 4, 2, 0};
  std::vector<double> mask{1, 1, 0, 1};

  auto f = [&](Tape* tape) {
    auto h = rmsnorm(tape, x, gain);
    auto q = matmul(tape, h, w);
    auto z = attention_heads(tape, q, h, silu(tape, q), 2);
    return cross_entropy(tape, z, targets, mask);
  };
  Rng coords(7);
  double err = grad_check(f, {x, gain, w}, 1e-6, 60, coords);
  CHECK(err < 1e-5);
}

TEST_CASE("grad_check of a constant function returns zero") {
  auto x = tensor_of({2}, {1.0, 2.0});
  auto f = [&](Tape* tape) { return scale(tape, tensor_of({1}, {3.5}), 1.0); };
  Rng coords(3);
  CHECK(grad_check(f, {x}, 1e-6, 10, coords) == 0.0);
}

TEST_CASE("grad_check rejects non-finite losses") {
  auto x = tensor_of({1}, {1.0});
  auto f = [&](Tape* tape) { return scale(tape, tensor_of({1}, {std::nan("")}), 1.0); };
  Rng coords(3);
  CHECK_THROWS_AS(grad_check(f, {x}, 1e-6, 4, coords), Error);
}

TEST_CASE("softmax_causal zeroes the upper triangle and normalizes rows") {
  Rng rng(41);
  auto s = random_tensor({5, 5}, rng);
  auto p = softmax_causal(nullptr, s);
  for (std::size_t r = 0; r < 5; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      if (c > r) CHECK(p->at(r, c) == 0.0);
      sum += p->at(r, c);
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("attention_heads matches the per-slice composition") {
  Rng rng(43);
  auto q = random_tensor({6, 8}, rng);
  auto k = random_tensor({6, 8}, rng);
  auto v = random_tensor({6, 8}, rng);
  auto z = attention_heads(nullptr, q, k, v, 2);

  // Reference: slice per head, scaled causal softmax, weighted values.
  for (int head = 0; head < 2; ++head) {
    auto qh = slice_cols(nullptr, q, static_cast<std::size_t>(head * 4), static_cast<std::size_t>(head * 4 + 4));
    auto kh = slice_cols(nullptr, k, static_cast<std::size_t>(head * 4), static_cast<std::size_t>(head * 4 + 4));
    auto vh = slice_cols(nullptr, v, static_cast<std::size_t>(head * 4), static_cast<std::size_t>(head * 4 + 4));
    auto probs = softmax_causal(nullptr, scale(nullptr, matmul_nt(nullptr, qh, kh), 0.5));
    auto zh = matmul(nullptr, probs, vh);
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t c = 0; c < 4; ++c)
        CHECK(z->at(r, static_cast<std::size_t>(head * 4) + c) == doctest::Approx(zh->at(r, c)).epsilon(1e-12));
  }
}

}  // TEST_SUITE
