#include "doctest.h"

#include <cmath>
#include <cstring>
#include <numeric>

#include "plad/autograd.hpp"
#include "plad/rng.hpp"

using namespace plad;
using ag::Tensor;

namespace {

Tensor rnd(Rng& rng, int r, int c, double scale = 1.0) {
  std::vector<double> v(static_cast<size_t>(r) * c);
  for (auto& x : v) x = rng.gaussian() * scale;
  return Tensor::param(r, c, std::move(v));
}

// Gaussian values pushed away from zero so kinked ops see no sign flips
// under the finite-difference probe.
Tensor rnd_margin(Rng& rng, int r, int c, double margin) {
  std::vector<double> v(static_cast<size_t>(r) * c);
  for (auto& x : v) {
    x = rng.gaussian();
    x += (x >= 0.0 ? margin : -margin);
  }
  return Tensor::param(r, c, std::move(v));
}

Tensor rnd_positive(Rng& rng, int r, int c) {
  std::vector<double> v(static_cast<size_t>(r) * c);
  for (auto& x : v) x = 0.2 + std::fabs(rng.gaussian());
  return Tensor::param(r, c, std::move(v));
}

// All entries pairwise separated by much more than the FD step, so argmax
// selections cannot flip during probing.
Tensor rnd_distinct(Rng& rng, int r, int c) {
  const int n = r * c;
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = 0.05 * i + 0.001 * rng.gaussian();
  for (int i = n - 1; i > 0; --i) std::swap(v[i], v[rng.uniform_int(0, i)]);
  return Tensor::param(r, c, std::move(v));
}

}  // namespace

TEST_SUITE("autograd") {

TEST_CASE("matmul matches the textbook triple loop") {
  Rng rng(101);
  Tensor a = rnd(rng, 7, 5), b = rnd(rng, 5, 9);
  Tensor c = ag::matmul(a, b);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 9; ++j) {
      double s = 0.0;
      for (int k = 0; k < 5; ++k) s += a.value()[i * 5 + k] * b.value()[k * 9 + j];
      CHECK(c.value()[i * 9 + j] == doctest::Approx(s).epsilon(1e-14));
    }
}

TEST_CASE("softmax of equal logits is uniform and rows sum to one") {
  Tensor x = Tensor::constant(1, 3, {0.7, 0.7, 0.7});
  Tensor y = ag::softmax_rows(x);
  CHECK(y.value()[0] == y.value()[1]);
  CHECK(y.value()[1] == y.value()[2]);
  CHECK(std::fabs(y.value()[0] + y.value()[1] + y.value()[2] - 1.0) < 1e-12);

  Rng rng(7);
  Tensor z = ag::softmax_rows(rnd(rng, 20, 6, 3.0));
  for (int i = 0; i < 20; ++i) {
    double s = 0.0;
    for (int j = 0; j < 6; ++j) s += z.value()[i * 6 + j];
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("layer norm rows come out standardized") {
  Rng rng(8);
  const int r = 12, c = 16;
  Tensor x = rnd(rng, r, c, 2.0);
  Tensor gain = Tensor::constant(1, c, std::vector<double>(c, 1.0));
  Tensor bias = Tensor::constant(1, c, std::vector<double>(c, 0.0));
  Tensor y = ag::layer_norm_rows(x, gain, bias, 1e-12);
  for (int i = 0; i < r; ++i) {
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += y.value()[i * c + j];
    mu /= c;
    CHECK(std::fabs(mu) < 1e-10);
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = y.value()[i * c + j] - mu;
      var += d * d;
    }
    var /= c;
    CHECK(std::fabs(var - 1.0) < 1e-8);
  }
}

TEST_CASE("max pool routes gradient to the argmax only") {
  Tensor x = Tensor::param(4, 2, {1.0, 9.0,
                                  3.0, 2.0,
                                  5.0, 5.0,
                                  7.0, 1.0});
  Tensor y = ag::maxpool_rows(x, 4);
  CHECK(y.rows() == 1);
  CHECK(y.value()[0] == 7.0);
  CHECK(y.value()[1] == 9.0);
  ag::backward(ag::sum(y));
  const std::vector<double> want = {0, 1, 0, 0, 0, 0, 1, 0};
  for (int i = 0; i < 8; ++i) CHECK(x.grad()[i] == want[i]);
}

TEST_CASE("max pool breaks ties toward the lowest row index") {
  Tensor x = Tensor::param(3, 1, {2.0, 2.0, 2.0});
  ag::backward(ag::sum(ag::maxpool_rows(x, 3)));
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("cosine similarity of a vector with itself is one") {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor v = rnd(rng, 1, 8);
    CHECK(ag::cosine_sim(v, v).item() == doctest::Approx(1.0).epsilon(1e-12));
  }
  Tensor zero = Tensor::constant(1, 4, {0, 0, 0, 0});
  Tensor other = Tensor::constant(1, 4, {1, 2, 3, 4});
  CHECK(ag::cosine_sim(zero, other).item() == 0.0);
}

TEST_CASE("sum of a linear map has the expected exact gradient") {
  Rng rng(12);
  Tensor w = rnd(rng, 4, 3);
  Tensor x = rnd(rng, 3, 1);
  ag::backward(ag::sum(ag::matmul(w, x)));
  // d/dW_ij sum(Wx) = x_j, independent of the row
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(w.grad()[i * 3 + j] == doctest::Approx(x.value()[j]).epsilon(1e-15));
}

TEST_CASE("parameter the loss does not depend on gets an exactly zero gradient") {
  Rng rng(13);
  Tensor a = rnd(rng, 2, 2);
  Tensor b = rnd(rng, 2, 2);
  Tensor loss = ag::sum(ag::add(a, ag::scale(b, 0.0)));
  ag::backward(loss);
  for (double g : b.grad()) CHECK(g == 0.0);
}

TEST_CASE("repeated backward on the same root throws") {
  Tensor x = Tensor::param(1, 1, {2.0});
  Tensor loss = ag::mul(x, x);
  ag::backward(loss);
  CHECK_THROWS_AS(ag::backward(loss), std::runtime_error);
}

TEST_CASE("non-scalar backward root is rejected") {
  Tensor x = Tensor::param(2, 2, {1, 2, 3, 4});
  CHECK_THROWS_AS(ag::backward(ag::relu(x)), std::invalid_argument);
}

TEST_CASE("zero row through l2 normalize is flagged and has zero gradient") {
  Tensor x = Tensor::param(2, 3, {0.0, 0.0, 0.0, 3.0, 0.0, 4.0});
  bool zero_row = false;
  Tensor y = ag::l2_normalize_rows(x, &zero_row);
  CHECK(zero_row);
  CHECK(y.value()[0] == 0.0);
  CHECK(y.value()[1] == 0.0);
  CHECK(y.value()[2] == 0.0);
  CHECK(y.value()[3] == doctest::Approx(0.6));
  ag::backward(ag::sum(y));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 0.0);

  bool clean = false;
  ag::l2_normalize_rows(Tensor::constant(1, 2, {1.0, 1.0}), &clean);
  CHECK(!clean);
}

TEST_CASE("grad_check on x squared at 3 is tight") {
  Tensor x = Tensor::param(1, 1, {3.0});
  double err = ag::grad_check([&] { return ag::mul(x, x); }, {x});
  CHECK(err < 1e-8);
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("grad_check rejects step sizes outside its contract") {
  Tensor x = Tensor::param(1, 1, {1.0});
  auto f = [&] { return ag::mul(x, x); };
  CHECK_THROWS_AS(ag::grad_check(f, {x}, 1e-8), std::invalid_argument);
  CHECK_THROWS_AS(ag::grad_check(f, {x}, 1e-2), std::invalid_argument);
}

TEST_CASE("finite differences confirm every smooth primitive") {
  Rng rng(42);
  const double tol = 1e-6;

  SUBCASE("matmul and transpose") {
    Tensor a = rnd(rng, 4, 3), b = rnd(rng, 3, 5);
    double err = ag::grad_check(
        [&] { return ag::sum(ag::matmul(ag::transpose(ag::matmul(a, b)), a)); },
        {a, b});
    CHECK(err < tol);
  }
  SUBCASE("add, add_rowvec, affine, mul, div") {
    Tensor a = rnd(rng, 3, 4), b = rnd(rng, 3, 4), r = rnd(rng, 1, 4);
    Tensor d = rnd_positive(rng, 3, 4);
    double err = ag::grad_check(
        [&] {
          Tensor t = ag::add_rowvec(ag::add(a, b), r);
          t = ag::affine(t, 1.7, -0.3);
          return ag::sum(ag::div(ag::mul(t, b), d));
        },
        {a, b, r, d});
    CHECK(err < tol);
  }
  SUBCASE("concat and take_rows") {
    Tensor a = rnd(rng, 2, 3), b = rnd(rng, 2, 2), c = rnd(rng, 3, 5);
    double err = ag::grad_check(
        [&] {
          Tensor wide = ag::concat_cols({a, b});
          Tensor tall = ag::concat_rows({wide, c});
          return ag::sum(ag::mul(ag::take_rows(tall, 1, 3), ag::take_rows(tall, 2, 3)));
        },
        {a, b, c});
    CHECK(err < tol);
  }
  SUBCASE("softmax and logsumexp") {
    Tensor a = rnd(rng, 5, 7, 2.0);
    Tensor w = rnd(rng, 5, 7);
    double err = ag::grad_check(
        [&] {
          Tensor p = ag::softmax_rows(a);
          return ag::add(ag::sum(ag::mul(p, w)), ag::mean(ag::logsumexp_rows(a)));
        },
        {a, w});
    CHECK(err < tol);
  }
  SUBCASE("layer norm including gain and bias") {
    Tensor a = rnd(rng, 4, 6, 2.0);
    Tensor g = rnd_positive(rng, 1, 6), b = rnd(rng, 1, 6);
    Tensor w = rnd(rng, 4, 6);
    double err = ag::grad_check(
        [&] { return ag::sum(ag::mul(ag::layer_norm_rows(a, g, b), w)); },
        {a, g, b});
    CHECK(err < tol);
  }
  SUBCASE("gelu, sigmoid, log, powc") {
    Tensor a = rnd(rng, 3, 5);
    Tensor p = rnd_positive(rng, 3, 5);
    double err = ag::grad_check(
        [&] {
          Tensor t = ag::sigmoid(ag::gelu(a));
          return ag::sum(ag::mul(t, ag::log(ag::powc(p, 1.7))));
        },
        {a, p});
    CHECK(err < tol);
  }
  SUBCASE("l2 normalize and cosine similarity") {
    Tensor a = rnd(rng, 4, 6), b = rnd(rng, 4, 6), w = rnd(rng, 4, 6);
    double err = ag::grad_check(
        [&] {
          Tensor na = ag::l2_normalize_rows(a);
          return ag::add(ag::sum(ag::mul(na, w)), ag::cosine_sim(a, b));
        },
        {a, b, w});
    CHECK(err < tol);
  }
  SUBCASE("sparse combine") {
    ag::SparseMap map;
    map.out_rows = 3;
    map.rows = {{{0, 0.5}, {1, 0.5}}, {{2, 1.0}}, {{0, 0.25}, {3, 0.75}}};
    Tensor x = rnd(rng, 4, 1);
    Tensor w = rnd(rng, 3, 1);
    double err = ag::grad_check(
        [&] { return ag::sum(ag::mul(ag::sparse_combine(map, x), w)); }, {x});
    CHECK(err < tol);
  }
  SUBCASE("multihead attention") {
    Tensor q = rnd(rng, 5, 8), k = rnd(rng, 5, 8), v = rnd(rng, 5, 8);
    Tensor w = rnd(rng, 5, 8);
    double err = ag::grad_check(
        [&] { return ag::sum(ag::mul(ag::multihead_attention(q, k, v, 2), w)); },
        {q, k, v});
    CHECK(err < tol);
  }
}

TEST_CASE("finite differences confirm kinked primitives away from their kinks") {
  Rng rng(43);
  SUBCASE("relu") {
    Tensor a = rnd_margin(rng, 4, 5, 0.05);
    Tensor w = rnd(rng, 4, 5);
    CHECK(ag::grad_check([&] { return ag::sum(ag::mul(ag::relu(a), w)); }, {a}) < 1e-6);
  }
  SUBCASE("clamp keeps gradient inside and kills it outside") {
    Tensor inside = Tensor::param(1, 2, {0.3, -0.4});
    Tensor outside = Tensor::param(1, 2, {2.5, -3.0});
    CHECK(ag::grad_check([&] { return ag::sum(ag::clamp(inside, -1.0, 1.0)); },
                         {inside}) < 1e-8);
    ag::backward(ag::sum(ag::clamp(outside, -1.0, 1.0)));
    CHECK(outside.grad()[0] == 0.0);
    CHECK(outside.grad()[1] == 0.0);
  }
  SUBCASE("maxpool, max_all, topk_mean") {
    Tensor a = rnd_distinct(rng, 8, 3);
    Tensor w = rnd(rng, 2, 3);
    double err = ag::grad_check(
        [&] {
          Tensor pooled = ag::maxpool_rows(a, 4);
          Tensor s = ag::add(ag::max_all(a), ag::topk_mean(a, 5));
          return ag::add(ag::sum(ag::mul(pooled, w)), s);
        },
        {a});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("attention output is bitwise invariant to token reordering") {
  Rng rng(99);
  const int t = 16, d = 8, heads = 2;
  Tensor q = rnd(rng, t, d), k = rnd(rng, t, d), v = rnd(rng, t, d);
  Tensor out = ag::multihead_attention(q, k, v, heads);

  // random permutation of the token axis
  std::vector<int> perm(t);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = t - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, i)]);

  auto permute = [&](const Tensor& m) {
    std::vector<double> p(static_cast<size_t>(t) * d);
    for (int i = 0; i < t; ++i)
      std::memcpy(p.data() + static_cast<size_t>(i) * d,
                  m.value().data() + static_cast<size_t>(perm[i]) * d,
                  sizeof(double) * d);
    return Tensor::constant(t, d, std::move(p));
  };
  Tensor out_p = ag::multihead_attention(permute(q), permute(k), permute(v), heads);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j)
      CHECK(out.value()[static_cast<size_t>(perm[i]) * d + j] ==
            out_p.value()[static_cast<size_t>(i) * d + j]);
}

TEST_CASE("gradients accumulate across losses until cleared") {
  Tensor x = Tensor::param(1, 1, {5.0});
  ag::backward(ag::scale(x, 2.0));
  ag::backward(ag::scale(x, 3.0));
  CHECK(x.grad()[0] == 5.0);
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("a small composed network passes the gradient checker") {
  Rng rng(7);
  const int n = 6, din = 5, dh = 8;
  Tensor x = Tensor::constant(n, din, [&] {
    std::vector<double> v(n * din);
    for (auto& e : v) e = rng.gaussian();
    return v;
  }());
  Tensor w1 = rnd(rng, din, dh, 0.5), b1 = rnd(rng, 1, dh, 0.1);
  Tensor g = rnd_positive(rng, 1, dh), b = rnd(rng, 1, dh, 0.1);
  Tensor w2 = rnd(rng, dh, 3, 0.5);
  double err = ag::grad_check(
      [&] {
        Tensor h = ag::gelu(ag::add_rowvec(ag::matmul(x, w1), b1));
        h = ag::layer_norm_rows(h, g, b);
        Tensor logits = ag::matmul(h, w2);
        Tensor logp = ag::add(logits, ag::scale(ag::matmul(ag::logsumexp_rows(logits),
                                                           Tensor::constant(1, 3, {1, 1, 1})),
                                                -1.0));
        return ag::scale(ag::sum(ag::take_rows(ag::transpose(logp), 0, 1)), -1.0);
      },
      {w1, b1, g, b, w2});
  CHECK(err < 1e-5);
}

}  // TEST_SUITE
