#include <doctest.h>

#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "semcom/autodiff.hpp"
#include "semcom/errors.hpp"

using namespace semcom;
using semcom::test::random_tensor;

namespace {

// Reduces a node to a scalar through fixed random weights so every entry
// receives a distinct upstream gradient.
Var weighted_sum(Graph& g, Var v, std::uint64_t seed) {
  const Tensor& val = g.value(v);
  return sum(g, mul(g, v, g.constant(random_tensor(val.rows, val.cols, seed + 1000))));
}

Tensor grad_tensor(const Tensor& t) { return Tensor(t.rows, t.cols, *t.grad); }

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("matmul forward examples") {
  Graph g;
  const Var a = g.constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  const Var i = g.constant(Tensor::from_rows({{1, 0}, {0, 1}}));
  CHECK(g.value(matmul(g, a, i)) == Tensor::from_rows({{1, 2}, {3, 4}}));
  const Var r = g.constant(Tensor::from_rows({{1, 2}}));
  const Var c = g.constant(Tensor::from_rows({{3}, {4}}));
  CHECK(g.value(matmul(g, r, c)) == Tensor::from_rows({{11}}));
}

TEST_CASE("matmul backward example") {
  Tensor a = Tensor::from_rows({{1, 2}});
  Tensor w = Tensor::from_rows({{3}, {4}});
  a.requires_grad = w.requires_grad = true;
  Graph g;
  g.backward(matmul(g, g.parameter(a), g.parameter(w)));
  CHECK(grad_tensor(a) == Tensor::from_rows({{3, 4}}));
  CHECK(grad_tensor(w) == Tensor::from_rows({{1}, {2}}));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Graph g;
  const Var a = g.constant(Tensor(2, 3));
  const Var b = g.constant(Tensor(2, 3));
  try {
    matmul(g, a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("add_bias examples") {
  Graph g;
  const Tensor a = Tensor::from_rows({{1, 1}, {2, 2}});
  const Var av = g.constant(a);
  CHECK(g.value(add_bias(g, av, g.constant(Tensor(1, 2)))) == a);
  CHECK(g.value(add_bias(g, av, g.constant(Tensor::from_rows({{0.5, -0.5}})))) ==
        Tensor::from_rows({{1.5, 0.5}, {2.5, 1.5}}));
  CHECK_THROWS_AS(add_bias(g, av, g.constant(Tensor(1, 3))), DimensionError);

  Tensor b = Tensor::from_rows({{0.5, -0.5}});
  b.requires_grad = true;
  Graph h;
  h.backward(sum(h, add_bias(h, h.constant(a), h.parameter(b))));
  CHECK(grad_tensor(b) == Tensor::from_rows({{2, 2}}));
}

TEST_CASE("relu examples") {
  Graph g;
  CHECK(g.value(relu(g, g.constant(Tensor::from_rows({{-1, 0, 2}})))) ==
        Tensor::from_rows({{0, 0, 2}}));
  const Tensor pos = Tensor::from_rows({{0.5, 3, 7}});
  CHECK(g.value(relu(g, g.constant(pos))) == pos);

  Tensor x = Tensor::from_rows({{-1, 0, 2}});
  x.requires_grad = true;
  Graph h;
  h.backward(sum(h, scale(h, relu(h, h.parameter(x)), 3.0)));
  CHECK(grad_tensor(x) == Tensor::from_rows({{0, 0, 3}}));
}

TEST_CASE("sigmoid examples") {
  Graph g;
  CHECK(g.value(sigmoid(g, g.constant(Tensor::from_rows({{0}})))).data[0] == 0.5);
  const Tensor& sat = g.value(sigmoid(g, g.constant(Tensor::from_rows({{100, -100}}))));
  CHECK(sat.data[0] == doctest::Approx(1.0));
  CHECK(sat.data[1] == doctest::Approx(0.0));
  CHECK(sat.data[1] > 0.0);
  CHECK(sat.all_finite());

  Tensor x = Tensor::from_rows({{0}});
  x.requires_grad = true;
  Graph h;
  h.backward(scale(h, sigmoid(h, h.parameter(x)), 2.0));
  CHECK(x.grad->at(0) == doctest::Approx(0.5));
}

TEST_CASE("sigmoid outputs stay inside the open unit interval") {
  Graph g;
  const Tensor& y = g.value(sigmoid(g, g.constant(random_tensor(20, 20, 3, -30, 30))));
  for (double v : y.data) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("softmax examples") {
  Graph g;
  const Tensor& u = g.value(softmax_rows(g, g.constant(Tensor(1, 3))));
  for (double v : u.data) CHECK(v == doctest::Approx(1.0 / 3.0));
  const Tensor& big = g.value(softmax_rows(g, g.constant(Tensor::from_rows({{1000, 0, 0}}))));
  CHECK(big.data[0] == doctest::Approx(1.0));
  CHECK(big.all_finite());
  const Tensor& p = g.value(softmax_rows(g, g.constant(Tensor::from_rows({{1, 2, 3}}))));
  CHECK(std::abs(p.data[0] - 0.09003) < 1e-5);
  CHECK(std::abs(p.data[1] - 0.24473) < 1e-5);
  CHECK(std::abs(p.data[2] - 0.66524) < 1e-5);
}

TEST_CASE("softmax rows sum to one") {
  Graph g;
  const Tensor& p = g.value(softmax_rows(g, g.constant(random_tensor(30, 15, 9, -20, 20))));
  for (std::size_t r = 0; r < p.rows; ++r) {
    const auto row = p.row(r);
    CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) < 1e-9);
  }
}

TEST_CASE("concat_cols examples") {
  Graph g;
  const Tensor x = random_tensor(3, 4, 1);
  const Var xv = g.constant(x);
  CHECK(g.value(concat_cols(g, std::vector<Var>{xv})) == x);
  const std::vector<Var> parts{g.constant(Tensor(2, 64)), g.constant(Tensor(2, 64)),
                               g.constant(Tensor(2, 15))};
  const Tensor& c = g.value(concat_cols(g, parts));
  CHECK(c.rows == 2);
  CHECK(c.cols == 143);
  CHECK_THROWS_AS(concat_cols(g, std::vector<Var>{g.constant(Tensor(2, 1)), g.constant(Tensor(3, 1))}),
                  DimensionError);

  Tensor a(1, 2), b(1, 3);
  a.requires_grad = b.requires_grad = true;
  Graph h;
  const Var cat = concat_cols(h, std::vector<Var>{h.parameter(a), h.parameter(b)});
  h.backward(sum(h, mul(h, cat, h.constant(Tensor::from_rows({{1, 2, 3, 4, 5}})))));
  CHECK(grad_tensor(a) == Tensor::from_rows({{1, 2}}));
  CHECK(grad_tensor(b) == Tensor::from_rows({{3, 4, 5}}));
}

TEST_CASE("batchnorm forward examples") {
  Tensor rm(1, 1, 0.0), rv(1, 1, 1.0);
  Graph g;
  const Var gamma = g.constant(Tensor(1, 1, 1.0));
  const Var beta = g.constant(Tensor(1, 1, 0.0));
  const Tensor& y = g.value(batchnorm(g, g.constant(Tensor::from_rows({{2}, {4}})), gamma, beta,
                                      Mode::train, rm, rv));
  const double scale_eps = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(y.data[0] == doctest::Approx(-scale_eps).epsilon(1e-12));
  CHECK(y.data[1] == doctest::Approx(scale_eps).epsilon(1e-12));
  CHECK(rm.data[0] == doctest::Approx(0.3));
  CHECK(rv.data[0] == doctest::Approx(0.9 + 0.1 * 1.0));

  // zero-mean, unit-variance column passes through up to epsilon
  Tensor rm2(1, 1, 0.0), rv2(1, 1, 1.0);
  const Tensor x = Tensor::from_rows({{-1}, {1}, {-1}, {1}});
  const Tensor& z = g.value(batchnorm(g, g.constant(x), gamma, beta, Mode::train, rm2, rv2));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(z.data[i] - x.data[i]) < 1e-5);
}

TEST_CASE("batchnorm eval uses running statistics and leaves them alone") {
  Tensor rm = Tensor::from_rows({{1.0, -2.0}});
  Tensor rv = Tensor::from_rows({{4.0, 0.25}});
  Graph g;
  const Var y = batchnorm(g, g.constant(Tensor::from_rows({{3.0, -1.0}})),
                          g.constant(Tensor(1, 2, 1.0)), g.constant(Tensor(1, 2, 0.0)),
                          Mode::eval, rm, rv);
  CHECK(g.value(y).data[0] == doctest::Approx(2.0 / std::sqrt(4.0 + 1e-5)));
  CHECK(g.value(y).data[1] == doctest::Approx(1.0 / std::sqrt(0.25 + 1e-5)));
  CHECK(rm == Tensor::from_rows({{1.0, -2.0}}));
  CHECK(rv == Tensor::from_rows({{4.0, 0.25}}));
}

TEST_CASE("batchnorm rejects a degenerate training batch") {
  Tensor rm(1, 2, 0.0), rv(1, 2, 1.0);
  Graph g;
  CHECK_THROWS_AS(batchnorm(g, g.constant(Tensor(1, 2)), g.constant(Tensor(1, 2, 1.0)),
                            g.constant(Tensor(1, 2)), Mode::train, rm, rv),
                  ContractError);
}

TEST_CASE("batchnorm backward matches finite differences on 4x3 input") {
  Tensor x = random_tensor(4, 3, 21);
  Tensor gamma = random_tensor(1, 3, 22, 0.5, 1.5);
  Tensor beta = random_tensor(1, 3, 23);
  Tensor rm(1, 3, 0.0), rv(1, 3, 1.0);
  x.requires_grad = gamma.requires_grad = beta.requires_grad = true;
  std::vector<Tensor*> inputs{&x, &gamma, &beta};
  const auto rep = grad_check(
      [&](Graph& g) {
        return weighted_sum(g,
                            batchnorm(g, g.parameter(x), g.parameter(gamma), g.parameter(beta),
                                      Mode::train, rm, rv),
                            5);
      },
      inputs, 1e-4);
  CHECK(rep.passed);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("backward examples") {
  Tensor x = random_tensor(3, 2, 4);
  x.requires_grad = true;
  Graph g;
  g.backward(sum(g, g.parameter(x)));
  CHECK(grad_tensor(x) == Tensor(3, 2, 1.0));

  Tensor y = Tensor::from_rows({{1, 2}});
  y.requires_grad = true;
  Graph h;
  const Var yv = h.parameter(y);
  h.backward(sum(h, mul(h, yv, yv)));
  CHECK(grad_tensor(y) == Tensor::from_rows({{2, 4}}));
}

TEST_CASE("diamond graph sums consumer gradients") {
  Tensor x = random_tensor(2, 3, 8);
  x.requires_grad = true;
  Graph g;
  const Var xv = g.parameter(x);
  const Var left = scale(g, xv, 2.0);
  const Var right = sigmoid(g, xv);
  g.backward(sum(g, add(g, left, right)));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x.data[i]));
    CHECK(x.grad->at(i) == doctest::Approx(2.0 + s * (1 - s)).epsilon(1e-12));
  }
}

TEST_CASE("backward zeroes gradients before accumulating") {
  Tensor x = random_tensor(2, 2, 12);
  x.requires_grad = true;
  for (int pass = 0; pass < 2; ++pass) {
    Graph g;
    g.backward(sum(g, g.parameter(x)));
  }
  CHECK(grad_tensor(x) == Tensor(2, 2, 1.0));
}

TEST_CASE("backward requires a scalar loss") {
  Graph g;
  CHECK_THROWS_AS(g.backward(g.constant(Tensor(2, 2))), ContractError);
}

TEST_CASE("ops reject non-finite results") {
  Graph g;
  const Var big = g.constant(Tensor(1, 1, 1e200));
  CHECK_THROWS_AS(mul(g, big, big), NumericError);
}

TEST_CASE("ops are bit-deterministic") {
  const Tensor a = random_tensor(5, 7, 31);
  const Tensor w = random_tensor(7, 3, 32);
  Graph g1, g2;
  const Tensor r1 = g1.value(softmax_rows(g1, matmul(g1, g1.constant(a), g1.constant(w))));
  const Tensor r2 = g2.value(softmax_rows(g2, matmul(g2, g2.constant(a), g2.constant(w))));
  CHECK(r1 == r2);
}

TEST_CASE("every op passes the finite-difference check at 20 random shapes") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    CounterRng shape_rng(seed, 5);
    const std::size_t n = 2 + shape_rng.below(4);
    const std::size_t i = 1 + shape_rng.below(5);
    const std::size_t o = 1 + shape_rng.below(5);
    Tensor a = random_tensor(n, i, seed * 10 + 1);
    Tensor b = random_tensor(n, i, seed * 10 + 2);
    Tensor w = random_tensor(i, o, seed * 10 + 3);
    Tensor bias = random_tensor(1, i, seed * 10 + 4);
    Tensor gamma = random_tensor(1, i, seed * 10 + 5, 0.5, 1.5);
    Tensor beta = random_tensor(1, i, seed * 10 + 6);
    for (Tensor* t : {&a, &b, &w, &bias, &gamma, &beta}) t->requires_grad = true;
    Tensor rm(1, i, 0.0), rv(1, i, 1.0);

    const auto check = [&](const char* name, std::vector<Tensor*> in, auto&& body) {
      CAPTURE(name);
      const auto rep = grad_check([&](Graph& g) { return weighted_sum(g, body(g), seed); }, in, 1e-4);
      CHECK(rep.passed);
      CHECK_FALSE(rep.non_finite);
      CHECK(rep.max_rel_error < 1e-4);
    };
    check("matmul", {&a, &w}, [&](Graph& g) { return matmul(g, g.parameter(a), g.parameter(w)); });
    check("add_bias", {&a, &bias},
          [&](Graph& g) { return add_bias(g, g.parameter(a), g.parameter(bias)); });
    check("relu", {&a}, [&](Graph& g) { return relu(g, g.parameter(a)); });
    check("sigmoid", {&a}, [&](Graph& g) { return sigmoid(g, g.parameter(a)); });
    check("softmax_rows", {&a}, [&](Graph& g) { return softmax_rows(g, g.parameter(a)); });
    check("concat_cols", {&a, &b}, [&](Graph& g) {
      return concat_cols(g, std::vector<Var>{g.parameter(a), g.parameter(b)});
    });
    check("add", {&a, &b}, [&](Graph& g) { return add(g, g.parameter(a), g.parameter(b)); });
    check("mul", {&a, &b}, [&](Graph& g) { return mul(g, g.parameter(a), g.parameter(b)); });
    check("scale", {&a}, [&](Graph& g) { return scale(g, g.parameter(a), -1.7); });
    check("batchnorm", {&a, &gamma, &beta}, [&](Graph& g) {
      return batchnorm(g, g.parameter(a), g.parameter(gamma), g.parameter(beta), Mode::train, rm,
                       rv);
    });
  }
}

TEST_CASE("grad_check on a single matmul is tight") {
  Tensor a = random_tensor(3, 4, 41), w = random_tensor(4, 2, 42);
  a.requires_grad = w.requires_grad = true;
  std::vector<Tensor*> in{&a, &w};
  const auto rep = grad_check(
      [&](Graph& g) { return weighted_sum(g, matmul(g, g.parameter(a), g.parameter(w)), 3); }, in,
      1e-6);
  CHECK(rep.passed);
  CHECK(rep.max_rel_error < 1e-6);
  CHECK(rep.entries_checked == a.size() + w.size());
}

TEST_CASE("grad_check on a full RB block") {
  Tensor x = random_tensor(6, 5, 51), w = random_tensor(5, 4, 52), b = random_tensor(1, 4, 53);
  Tensor gamma = random_tensor(1, 4, 54, 0.5, 1.5), beta = random_tensor(1, 4, 55);
  Tensor rm(1, 4, 0.0), rv(1, 4, 1.0);
  for (Tensor* t : {&x, &w, &b, &gamma, &beta}) t->requires_grad = true;
  std::vector<Tensor*> in{&x, &w, &b, &gamma, &beta};
  const auto rep = grad_check(
      [&](Graph& g) {
        const Var fc = add_bias(g, matmul(g, g.parameter(x), g.parameter(w)), g.parameter(b));
        const Var bn =
            batchnorm(g, fc, g.parameter(gamma), g.parameter(beta), Mode::train, rm, rv);
        return weighted_sum(g, relu(g, bn), 56);
      },
      in, 1e-4);
  CHECK(rep.passed);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("grad_check flags a wrong gradient") {
  Tensor x = random_tensor(2, 2, 61);
  x.requires_grad = true;
  std::vector<Tensor*> in{&x};
  const auto rep = grad_check(
      [&](Graph& g) {
        const Var xv = g.parameter(x);
        // forward is x^2 but the recorded backward claims d/dx = x
        const Tensor& v = g.value(xv);
        Tensor sq = v;
        for (double& e : sq.data) e *= e;
        const Var y = g.record("bad_square", sq, {xv}, [](const BackwardArgs& a) {
          for (std::size_t k = 0; k < a.upstream.size(); ++k) {
            a.in_grad[0]->data[k] += a.upstream.data[k] * a.in[0]->data[k];
          }
        });
        return sum(g, y);
      },
      in, 1e-4);
  CHECK_FALSE(rep.passed);
  CHECK(rep.max_rel_error > 0.1);
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
  Tensor p = random_tensor(2, 3, 71);
  const Tensor before = p;
  p.requires_grad = true;
  p.grad = std::vector<double>(p.size(), 0.0);
  AdamState st;
  std::vector<Tensor*> params{&p};
  adam_step(params, st);
  CHECK(p == before);
  CHECK(st.step_count == 1);
  p.grad = std::vector<double>(p.size(), 0.0);
  adam_step(params, st);
  CHECK(p == before);
  CHECK(st.step_count == 2);
}

TEST_CASE("adam first step moves by the learning rate") {
  Tensor p(1, 1, 0.0);
  p.requires_grad = true;
  p.grad = std::vector<double>{1.0};
  AdamState st;
  std::vector<Tensor*> params{&p};
  adam_step(params, st);
  CHECK(p.data[0] == doctest::Approx(-0.001).epsilon(1e-6));
  CHECK_FALSE(p.grad.has_value());
}

TEST_CASE("adam two steps follow a scalar trace") {
  const double g = 0.37, lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double x = 0.5, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
  }
  Tensor p(1, 1, 0.5);
  p.requires_grad = true;
  AdamState st;
  std::vector<Tensor*> params{&p};
  for (int t = 0; t < 2; ++t) {
    p.grad = std::vector<double>{g};
    adam_step(params, st);
  }
  CHECK(p.data[0] == doctest::Approx(x).epsilon(1e-14));
}

TEST_CASE("adam requires gradients") {
  Tensor p(1, 1, 0.0);
  p.requires_grad = true;
  AdamState st;
  std::vector<Tensor*> params{&p};
  CHECK_THROWS_AS(adam_step(params, st), ContractError);
}

}  // TEST_SUITE
