#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "hpt/grad_check.hpp"
#include "hpt/ops.hpp"
#include "hpt/param.hpp"
#include "hpt/rng.hpp"
#include "hpt/tape.hpp"
#include "hpt/tensor.hpp"
#include "test_util.hpp"

using namespace hpt;
using hpt_test::bit_equal;
using hpt_test::random_tensor;

TEST_CASE("tensor construction validates shape against data") {
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{0}, 1.0), ShapeError);
  Tensor t(Shape{2, 3}, 0.5);
  CHECK(t.size() == 6);
  CHECK(t(1, 2) == 0.5);
  Tensor s = Tensor::scalar(4.0);
  CHECK(s.rank() == 0);
  CHECK(s.item() == 4.0);
}

TEST_CASE("non-finite values are rejected at op boundaries when checks are on") {
  const bool saved = finite_checks();
  set_finite_checks(true);
  CHECK_THROWS_AS(Tensor(Shape{2}, std::vector<double>{1.0, INFINITY}), ValueError);
  CHECK_THROWS_AS(Tensor(Shape{1}, std::vector<double>{NAN}), ValueError);
  set_finite_checks(false);
  CHECK_NOTHROW(Tensor(Shape{1}, std::vector<double>{INFINITY}));
  set_finite_checks(saved);
}

TEST_CASE("matmul identity and hand-multiplied cases") {
  Tensor eye(Shape{2, 2}, std::vector<double>{1, 0, 0, 1});
  Tensor b(Shape{2, 2}, std::vector<double>{3, 4, 5, 6});
  Tensor c = matmul(eye, b);
  CHECK(bit_equal(c.values(), b.values()));

  // 1x2 by 2x1: 1*3 + 2*4 = 11
  Tensor a(Shape{1, 2}, std::vector<double>{1, 2});
  Tensor v(Shape{2, 1}, std::vector<double>{3, 4});
  CHECK(matmul(a, v).item() == doctest::Approx(11.0).epsilon(1e-15));

  Tensor bad(Shape{2, 3}, 1.0);
  CHECK_THROWS_WITH_AS(matmul(bad, bad), doctest::Contains("[2x3]"), ShapeError);
}

TEST_CASE("elementwise op examples") {
  CHECK(exp(Tensor(Shape{1}, std::vector<double>{0.0}))(0) == 1.0);
  Tensor sq = square(Tensor(Shape{2}, std::vector<double>{-2, 3}));
  CHECK(sq(0) == 4.0);
  CHECK(sq(1) == 9.0);
  Tensor a(Shape{2}, std::vector<double>{1, 2});
  Tensor b(Shape{3}, std::vector<double>{1, 2, 3});
  CHECK_THROWS_AS(add(a, b), ShapeError);

  // scalar broadcast
  Tensor s = Tensor::scalar(2.0);
  Tensor m = mul(a, s);
  CHECK(m(0) == 2.0);
  CHECK(m(1) == 4.0);
  CHECK(scale(a, -1.0)(1) == -2.0);
  CHECK(neg(a)(0) == -1.0);
}

TEST_CASE("softmax symmetry, stability and closed form") {
  Tensor flat = softmax(Tensor(Shape{2}, std::vector<double>{0, 0}), 0);
  CHECK(flat(0) == doctest::Approx(0.5).epsilon(1e-15));

  Tensor huge = softmax(Tensor(Shape{2}, std::vector<double>{1000, 1000}), 0);
  CHECK(std::isfinite(huge(0)));
  CHECK(huge(0) == doctest::Approx(0.5).epsilon(1e-15));

  // closed form: e^0 / (e^0 + 3) = 1/4
  Tensor lng = softmax(Tensor(Shape{2}, std::vector<double>{0.0, std::log(3.0)}), 0);
  CHECK(lng(0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(lng(1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and shift invariance holds") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.index(5), d = 2 + rng.index(4);
    Tensor x = random_tensor(rng, {n, d}, -5, 5);
    Tensor s = softmax(x, 1);
    for (std::size_t i = 0; i < n; ++i) {
      double total = 0;
      for (std::size_t j = 0; j < d; ++j) total += s(i, j);
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
    const double c = rng.uniform(-3, 3);
    std::vector<double> shifted(x.values().begin(), x.values().end());
    for (double& v : shifted) v += c;
    Tensor s2 = softmax(Tensor(x.shape(), std::move(shifted)), 1);
    CHECK(hpt_test::max_abs_diff(s.values(), s2.values()) < 1e-12);
  }
}

TEST_CASE("reduce_mean over axes") {
  Tensor x(Shape{2, 2}, std::vector<double>{1, 3, 5, 7});
  Tensor m0 = reduce_mean(x, 0);
  CHECK(m0(0) == 3.0);  // (1+5)/2
  CHECK(m0(1) == 5.0);  // (3+7)/2

  Tensor c(Shape{3, 2}, 4.5);
  Tensor mc = reduce_mean(c, 1);
  for (std::size_t i = 0; i < 3; ++i) CHECK(mc(i) == 4.5);

  Tensor single(Shape{1, 3}, std::vector<double>{2, 4, 6});
  Tensor ms = reduce_mean(single, 0);
  CHECK(bit_equal(ms.values(), single.values()));

  CHECK_THROWS_AS(reduce_mean(x, 2), ShapeError);
}

TEST_CASE("layer_norm row cases") {
  Tensor gain(Shape{3}, 1.0);
  Tensor bias(Shape{3}, 0.0);
  Tensor flat = layer_norm(Tensor(Shape{1, 3}, 1.0), gain, bias);
  for (std::size_t j = 0; j < 3; ++j) CHECK(flat(0, j) == doctest::Approx(0.0).epsilon(1e-12));

  // row [-1, 1] has zero mean and unit variance; output is +-1/sqrt(1+eps)
  const double eps = 1e-5;
  Tensor g2(Shape{2}, 1.0), b2(Shape{2}, 0.0);
  Tensor pm = layer_norm(Tensor(Shape{1, 2}, std::vector<double>{-1, 1}), g2, b2, eps);
  const double expected = 1.0 / std::sqrt(1.0 + eps);
  CHECK(pm(0, 0) == doctest::Approx(-expected).epsilon(1e-14));
  CHECK(pm(0, 1) == doctest::Approx(expected).epsilon(1e-14));

  Tensor zero_gain(Shape{2}, 0.0);
  Tensor b3(Shape{2}, std::vector<double>{7, 8});
  Tensor biased = layer_norm(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3, 4}), zero_gain, b3);
  CHECK(biased(0, 0) == 7.0);
  CHECK(biased(1, 1) == 8.0);

  CHECK_THROWS_AS(layer_norm(Tensor(Shape{2, 3}, 1.0), g2, b2), ShapeError);
}

TEST_CASE("backward: sum of squares, reuse accumulation, scalar-root contract") {
  Parameter x("x", Tensor(Shape{2}, std::vector<double>{1, 2}));
  {
    Tape tape;
    Tensor loss = sum(square(x.value));
    tape.backward(loss);
  }
  CHECK(x.value.grad()[0] == 2.0);
  CHECK(x.value.grad()[1] == 4.0);

  Parameter p("p", Tensor::scalar(3.0));
  {
    Tape tape;
    Tensor r = add(p.value, p.value);
    tape.backward(r);
  }
  CHECK(p.value.grad()[0] == 2.0);

  {
    Tape tape;
    Tensor y = square(x.value);
    CHECK_THROWS_AS(tape.backward(y), ValueError);
  }
  {
    Tape tape;
    CHECK_THROWS_AS(tape.backward(Tensor::scalar(1.0)), ValueError);
  }
}

TEST_CASE("gradient accumulation scales with symmetric reuse count") {
  for (int k = 1; k <= 4; ++k) {
    Parameter p("p", Tensor(Shape{3}, std::vector<double>{0.5, -1.0, 2.0}));
    Tape tape;
    Tensor acc = square(p.value);
    Tensor total = sum(acc);
    for (int i = 1; i < k; ++i) total = add(total, sum(square(p.value)));
    tape.backward(total);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(p.value.grad()[j] == doctest::Approx(k * 2.0 * p.value(j)).epsilon(1e-14));
    }
  }
}

TEST_CASE("backward is bit-deterministic across runs") {
  auto run = [] {
    Rng rng(99);
    Parameter a("a", random_tensor(rng, {3, 4}));
    Parameter b("b", random_tensor(rng, {4, 2}));
    Tape tape;
    Tensor loss = sum(square(matmul(a.value, b.value)));
    tape.backward(loss);
    std::vector<double> out(a.value.grad().begin(), a.value.grad().end());
    out.insert(out.end(), b.value.grad().begin(), b.value.grad().end());
    return out;
  };
  CHECK(bit_equal(run(), run()));
}

TEST_CASE("grad_check closed-form and constant cases") {
  Parameter theta("theta", Tensor::scalar(3.0));
  const auto f = [&] { return square(theta.value); };
  CHECK(grad_check(f, std::vector<Parameter*>{&theta}) < 1e-9);

  Parameter unused("u", Tensor::scalar(1.0));
  const auto konst = [] { return Tensor::scalar(5.0); };
  CHECK(grad_check(konst, std::vector<Parameter*>{&unused}) == 0.0);
}

TEST_CASE("grad_check covers every tensor op on random small tensors") {
  Rng rng(2024);
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t m = 1 + rng.index(4), k = 1 + rng.index(4), n = 1 + rng.index(4);
    Parameter a("a", random_tensor(rng, {m, k}));
    Parameter b("b", random_tensor(rng, {k, n}));
    Parameter v("v", random_tensor(rng, {k}));
    Parameter s("s", Tensor::scalar(rng.uniform(0.5, 1.5)));
    std::vector<Parameter*> params{&a, &b, &v, &s};

    const auto f = [&] {
      Tensor prod = matmul(a.value, b.value);                     // m x n
      Tensor t = transpose(prod);                                 // n x m
      Tensor bc = broadcast_rows(v.value, m);                     // m x k
      Tensor mixed = mul(add(a.value, bc), s.value);              // m x k
      Tensor expd = exp(scale(mixed, 0.3));
      Tensor sm = softmax(t, 1);
      Tensor parts = add(sum(reduce_mean(sm, 0)), sum(reduce_sum(sm, 1)));
      Tensor rest = sum(square(sub(expd, neg(bc))));
      return add(add(parts, rest), sum(slice_cols(reshape(prod, {m, n}), 0, n)));
    };
    CHECK(grad_check(f, params) < 1e-5);
  }
}

TEST_CASE("grad_check covers layer_norm, slicing and concatenation") {
  Rng rng(31337);
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t n = 2 + rng.index(3), d = 2 + rng.index(4);
    Parameter x("x", random_tensor(rng, {n, d}));
    Parameter g("g", random_tensor(rng, {d}, 0.5, 1.5));
    Parameter b("b", random_tensor(rng, {d}));
    std::vector<Parameter*> params{&x, &g, &b};
    const auto f = [&] {
      Tensor ln = layer_norm(x.value, g.value, b.value);
      std::vector<Tensor> halves{slice_cols(ln, 0, 1), slice_rows(ln, 0, n)};
      halves[1] = slice_cols(halves[1], 0, d);
      Tensor cat = concat_cols(halves);
      return sum(square(cat));
    };
    CHECK(grad_check(f, params) < 1e-5);
  }
}

TEST_CASE("matmul chain gradients match finite differences") {
  Rng rng(12);
  Parameter a("a", random_tensor(rng, {2, 3}));
  Parameter b("b", random_tensor(rng, {3, 3}));
  Parameter c("c", random_tensor(rng, {3, 2}));
  const auto f = [&] { return sum(matmul(matmul(a.value, b.value), c.value)); };
  CHECK(grad_check(f, std::vector<Parameter*>{&a, &b, &c}) < 1e-5);
}

TEST_CASE("frozen inputs receive no gradient buffer") {
  Parameter w("w", Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3, 4}));
  w.set_trainable(false);
  Parameter x("x", Tensor(Shape{2, 2}, std::vector<double>{1, 0, 0, 1}));
  Tape tape;
  Tensor loss = sum(matmul(w.value, x.value));
  tape.backward(loss);
  CHECK(!w.value.has_grad());
  CHECK(x.value.has_grad());
}

TEST_CASE("tensor serialization round-trips and rejects corrupt streams") {
  Rng rng(5);
  Tensor t = random_tensor(rng, {3, 2, 4});
  std::stringstream buf;
  write_tensor(buf, t);
  Tensor back = read_tensor(buf);
  CHECK(back.shape() == t.shape());
  CHECK(bit_equal(back.values(), t.values()));

  std::stringstream bad("XXXXsome garbage");
  CHECK_THROWS_AS(read_tensor(bad), FormatError);

  std::stringstream trunc;
  write_tensor(trunc, t);
  std::string full = trunc.str();
  std::stringstream cut(full.substr(0, full.size() / 2));
  CHECK_THROWS_AS(read_tensor(cut), TruncationError);
}

TEST_CASE("fixed rng seed reproduces identical draws") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());
  Rng c(42), d(43);
  bool differ = false;
  for (int i = 0; i < 10; ++i) differ = differ || (c.uniform() != d.uniform());
  CHECK(differ);
}
