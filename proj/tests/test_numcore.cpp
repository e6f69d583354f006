#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "betoken/graph.hpp"
#include "betoken/rng.hpp"
#include "oracle.hpp"

using namespace betoken;
using numcore::Graph;
using numcore::GraphD;
using numcore::NodeId;
using numcore::Tensor;
using numcore::TensorD;

namespace {

TensorD random_tensor(std::vector<int> shape, RngStream& rng, double sd = 1.0) {
  TensorD t(std::move(shape));
  for (auto& v : t.data) v = rng.normal(0.0, sd);
  return t;
}

// FD check scaffold: rebuilds the graph from scratch per evaluation so the
// numerical route never touches backward().
struct GradProbe {
  TensorD x;
  std::function<double(GraphD&, NodeId)> loss_of;  // param node -> scalar node

  double eval() {
    GraphD g;
    const NodeId p = g.param(&x);
    return loss_of(g, p);
  }
  void check(double tol = 1e-4) {
    GraphD g;
    const NodeId p = g.param(&x);
    const double unused = loss_of(g, p);
    (void)unused;
    // loss_of returns the value; the node it built last is the loss. Instead
    // of guessing, callers use check_loss below.
  }
};

// Runs one FD-vs-analytic comparison. `build` appends the loss subgraph and
// returns its node.
void check_grad(TensorD& x, const std::function<NodeId(GraphD&, NodeId)>& build,
                double tol = 1e-4) {
  GraphD g;
  const NodeId p = g.param(&x);
  const NodeId loss = build(g, p);
  g.backward(loss);
  const TensorD analytic = g.grad(p);

  auto f = [&x, &build]() {
    GraphD g2;
    const NodeId p2 = g2.param(&x);
    return g2.val(build(g2, p2)).data[0];
  };
  const std::vector<double> numeric = oracle::finite_diff(f, x.data);
  REQUIRE(oracle::max_rel_err(analytic.data, numeric) < tol);
}

}  // namespace

TEST_CASE("tensor shape and data stay consistent") {
  TensorD t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK_THROWS_AS(TensorD::from({2, 2}, {1.0, 2.0, 3.0}), InvalidArgumentError);
  CHECK_THROWS_AS(TensorD({0, 3}), InvalidArgumentError);
}

TEST_CASE("row_softmax matches spec examples") {
  GraphD g;
  const NodeId x = g.value(TensorD::from({3}, {0.0, 0.0, 0.0}));
  const TensorD& y = g.val(g.row_softmax(x, 1.0));
  for (int i = 0; i < 3; ++i) CHECK(y.data[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  // Independent 64-bit evaluation of exp((x-max)/tau)/sum for [1,2,3], tau=2.
  const NodeId x2 = g.value(TensorD::from({3}, {1.0, 2.0, 3.0}));
  const TensorD& y2 = g.val(g.row_softmax(x2, 2.0));
  CHECK(y2.data[0] == doctest::Approx(0.18632372322584757702).epsilon(1e-12));
  CHECK(y2.data[1] == doctest::Approx(0.30719588571849839707).epsilon(1e-12));
  CHECK(y2.data[2] == doctest::Approx(0.50648039105565402590).epsilon(1e-12));
  const auto ref = oracle::softmax_ref(std::vector<double>{1.0, 2.0, 3.0}, 2.0);
  for (int i = 0; i < 3; ++i) CHECK(y2.data[i] == doctest::Approx(ref[i]).epsilon(1e-12));

  CHECK_THROWS_AS(g.row_softmax(x, 0.0), InvalidArgumentError);
  CHECK_THROWS_AS(g.row_softmax(x, -1.0), InvalidArgumentError);
}

TEST_CASE("row_softmax shift invariance, 1000 draws") {
  RngStream rng(81001);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = rng.uniform_int(2, 8);
    TensorD x = random_tensor({n}, rng, 3.0);
    TensorD shifted = x;
    const double c = rng.normal(0.0, 10.0);
    for (auto& v : shifted.data) v += c;
    const double tau = 0.5 + rng.next_unit() * 3.0;
    GraphD g;
    const TensorD& a = g.val(g.row_softmax(g.value(x), tau));
    const TensorD& b = g.val(g.row_softmax(g.value(shifted), tau));
    int arg_a = 0, arg_b = 0;
    for (int i = 0; i < n; ++i) {
      if (a.data[i] > a.data[arg_a]) arg_a = i;
      if (b.data[i] > b.data[arg_b]) arg_b = i;
      CHECK(std::abs(a.data[i] - b.data[i]) < 1e-6);
    }
    CHECK(arg_a == arg_b);
    double sum = 0;
    for (int i = 0; i < n; ++i) sum += a.data[i];
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("kl_divergence matches spec examples and stays non-negative") {
  GraphD g;
  const NodeId p = g.value(TensorD::from({2}, {0.5, 0.5}));
  CHECK(g.val(g.kl_divergence(p, p)).data[0] == doctest::Approx(0.0).epsilon(1e-12));

  const NodeId p2 = g.value(TensorD::from({2}, {1.0, 0.0}));
  const NodeId q2 = g.value(TensorD::from({2}, {0.5, 0.5}));
  CHECK(g.val(g.kl_divergence(p2, q2)).data[0] ==
        doctest::Approx(0.69314718055994530942).epsilon(1e-12));

  // Brute-force 64-bit summation oracle.
  const NodeId p3 = g.value(TensorD::from({3}, {0.7, 0.2, 0.1}));
  const NodeId q3 = g.value(TensorD::from({3}, {0.6, 0.3, 0.1}));
  CHECK(g.val(g.kl_divergence(p3, q3)).data[0] ==
        doctest::Approx(0.026812454257447936609).epsilon(1e-12));
  const std::vector<double> pv{0.7, 0.2, 0.1}, qv{0.6, 0.3, 0.1};
  CHECK(g.val(g.kl_divergence(p3, q3)).data[0] ==
        doctest::Approx(oracle::kl_ref(pv, qv)).epsilon(1e-12));

  const NodeId bad = g.value(TensorD::from({3}, {0.5, 0.2, 0.1}));
  CHECK_THROWS_AS(g.kl_divergence(bad, q3), InvalidArgumentError);
  const NodeId wrong_len = g.value(TensorD::from({2}, {0.5, 0.5}));
  CHECK_THROWS_AS(g.kl_divergence(wrong_len, q3), InvalidArgumentError);

  RngStream rng(4242);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = rng.uniform_int(2, 12);
    std::vector<double> zp(n), zq(n);
    for (auto& v : zp) v = rng.normal(0, 3);
    for (auto& v : zq) v = rng.normal(0, 3);
    const auto pr = oracle::softmax_ref(zp, 1.0);
    const auto qr = oracle::softmax_ref(zq, 1.0);
    GraphD g2;
    const double kl =
        g2.val(g2.kl_divergence(g2.value(TensorD::from({n}, std::vector<double>(pr))),
                                g2.value(TensorD::from({n}, std::vector<double>(qr)))))
            .data[0];
    CHECK(kl >= 0.0);
  }
}

TEST_CASE("kl_divergence(p,p) is zero within 1e-9 over random draws") {
  RngStream rng(515);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = rng.uniform_int(2, 16);
    std::vector<double> z(n);
    for (auto& v : z) v = rng.normal(0, 4);
    const auto p = oracle::softmax_ref(z, 1.0);
    GraphD g;
    const NodeId pn = g.value(TensorD::from({n}, std::vector<double>(p)));
    CHECK(std::abs(g.val(g.kl_divergence(pn, pn)).data[0]) < 1e-9);
  }
}

TEST_CASE("cross_entropy matches spec examples") {
  GraphD g;
  // Saturated logits: +20 on the target.
  TensorD sat({2, 4});
  sat.at(0, 1) = 20.0;
  sat.at(1, 3) = 20.0;
  CHECK(g.val(g.cross_entropy(g.value(sat), {1, 3})).data[0] < 1e-6);

  const NodeId uniform = g.value(TensorD({1, 4}));
  CHECK(g.val(g.cross_entropy(uniform, {2})).data[0] ==
        doctest::Approx(1.3862943611198906188).epsilon(1e-12));

  // Random small case, frozen from the 64-bit oracle.
  const NodeId logits = g.value(
      TensorD::from({2, 4}, {0.5, -1.25, 2.0, 0.125, -0.75, 1.5, 0.25, -2.0}));
  CHECK(g.val(g.cross_entropy(logits, {2, 0})).data[0] ==
        doctest::Approx(1.4747242150295878714).epsilon(1e-12));
  const std::vector<std::vector<double>> rows{{0.5, -1.25, 2.0, 0.125},
                                              {-0.75, 1.5, 0.25, -2.0}};
  const std::vector<int> targets{2, 0};
  CHECK(g.val(g.cross_entropy(logits, {2, 0})).data[0] ==
        doctest::Approx(oracle::cross_entropy_ref(rows, targets)).epsilon(1e-12));

  CHECK_THROWS_AS(g.cross_entropy(logits, {2, 7}), InvalidArgumentError);
  CHECK_THROWS_AS(g.cross_entropy(logits, {2}), InvalidArgumentError);
}

TEST_CASE("fused primitive examples") {
  GraphD g;
  // matmul(I, X) == X
  TensorD eye({2, 2});
  eye.at(0, 0) = eye.at(1, 1) = 1.0;
  const NodeId x = g.value(TensorD::from({2, 3}, {1, 2, 3, 4, 5, 6}));
  const TensorD& prod = g.val(g.matmul(g.value(eye), x));
  for (int i = 0; i < 6; ++i) CHECK(prod.data[i] == doctest::Approx(i + 1.0));
  CHECK_THROWS_AS(g.matmul(x, x), InvalidArgumentError);

  // layer_norm of a constant row is zero before the affine part.
  const NodeId c = g.value(TensorD({1, 4}, 3.25));
  const NodeId gain = g.value(TensorD({4}, 1.0));
  const NodeId bias = g.value(TensorD({4}, 0.0));
  const TensorD& normed = g.val(g.layer_norm(c, gain, bias));
  for (double v : normed.data) CHECK(std::abs(v) < 1e-9);

  // Single-position causal attention passes the value row through.
  RngStream rng(7);
  TensorD q = random_tensor({1, 8}, rng), k = random_tensor({1, 8}, rng),
          v = random_tensor({1, 8}, rng);
  const TensorD& attn = g.val(g.causal_attention(g.value(q), g.value(TensorD(k)), g.value(TensorD(v)), 2));
  for (int i = 0; i < 8; ++i) CHECK(attn.data[i] == doctest::Approx(v.data[i]).epsilon(1e-12));
}

TEST_CASE("backward on linear and null losses") {
  // loss = sum(e) -> grad all ones
  TensorD e = TensorD::from({2, 3}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6});
  GraphD g;
  const NodeId p = g.param(&e);
  g.backward(g.sum(p));
  for (double v : g.grad(p).data) CHECK(v == doctest::Approx(1.0));

  // loss = 0 * f(e) -> grad zero
  GraphD g2;
  const NodeId p2 = g2.param(&e);
  g2.backward(g2.scale(g2.sum(g2.gelu(p2)), 0.0));
  for (double v : g2.grad(p2).data) CHECK(v == 0.0);
}

TEST_CASE("graph rejects non-finite values and reports the node") {
  GraphD g;
  TensorD big({1, 2}, 1e308);
  const NodeId x = g.value(std::move(big));
  CHECK_THROWS_AS(g.add(x, x), NumericError);
}

TEST_CASE("gradient check: every primitive vs central differences, 100 seeds") {
  for (int seed = 0; seed < 100; ++seed) {
    RngStream rng(1000 + seed);
    const int m = rng.uniform_int(2, 4), k = rng.uniform_int(2, 4), n = rng.uniform_int(2, 4);

    // matmul, both operands
    {
      TensorD a = random_tensor({m, k}, rng);
      const TensorD b = random_tensor({k, n}, rng);
      check_grad(a, [&b](GraphD& g, NodeId p) { return g.sum(g.gelu(g.matmul(p, g.value(TensorD(b))))); });
      TensorD b2 = random_tensor({k, n}, rng);
      const TensorD a2 = random_tensor({m, k}, rng);
      check_grad(b2, [&a2](GraphD& g, NodeId p) { return g.sum(g.gelu(g.matmul(g.value(TensorD(a2)), p))); });
    }
    // fused matmul+bias: all three operands
    {
      TensorD a = random_tensor({m, k}, rng);
      const TensorD b = random_tensor({k, n}, rng);
      const TensorD bias = random_tensor({n}, rng);
      check_grad(a, [&](GraphD& g, NodeId p) {
        return g.sum(g.gelu(g.matmul_bias(p, g.value(TensorD(b)), g.value(TensorD(bias)))));
      });
      TensorD b2 = random_tensor({k, n}, rng);
      const TensorD a2 = random_tensor({m, k}, rng);
      check_grad(b2, [&](GraphD& g, NodeId p) {
        return g.sum(g.gelu(g.matmul_bias(g.value(TensorD(a2)), p, g.value(TensorD(bias)))));
      });
      TensorD bias2 = random_tensor({n}, rng);
      check_grad(bias2, [&](GraphD& g, NodeId p) {
        return g.sum(g.gelu(g.matmul_bias(g.value(TensorD(a2)), g.value(TensorD(b)), p)));
      });
    }
    // add / mul / scale / add_bias
    {
      TensorD a = random_tensor({m, n}, rng);
      const TensorD b = random_tensor({m, n}, rng);
      check_grad(a, [&b](GraphD& g, NodeId p) { return g.sum(g.gelu(g.add(p, g.value(TensorD(b))))); });
      TensorD c = random_tensor({m, n}, rng);
      check_grad(c, [&b](GraphD& g, NodeId p) { return g.sum(g.gelu(g.mul(p, g.value(TensorD(b))))); });
      TensorD d = random_tensor({m, n}, rng);
      check_grad(d, [](GraphD& g, NodeId p) { return g.sum(g.gelu(g.scale(p, -1.75))); });
      TensorD bias = random_tensor({n}, rng);
      const TensorD base = random_tensor({m, n}, rng);
      check_grad(bias, [&base](GraphD& g, NodeId p) {
        return g.sum(g.gelu(g.add_bias(g.value(TensorD(base)), p)));
      });
    }
    // gelu
    {
      TensorD x = random_tensor({m, n}, rng);
      check_grad(x, [](GraphD& g, NodeId p) { return g.sum(g.gelu(p)); });
    }
    // layer_norm: input, gain, bias
    {
      TensorD x = random_tensor({m, n}, rng);
      const TensorD gain = random_tensor({n}, rng, 0.5);
      const TensorD bias = random_tensor({n}, rng, 0.5);
      const TensorD probe = random_tensor({m, n}, rng);
      check_grad(x, [&](GraphD& g, NodeId p) {
        return g.sum(
            g.mul(g.layer_norm(p, g.value(TensorD(gain)), g.value(TensorD(bias))), g.value(TensorD(probe))));
      });
      TensorD gain2 = random_tensor({n}, rng, 0.5);
      const TensorD x2 = random_tensor({m, n}, rng);
      check_grad(gain2, [&](GraphD& g, NodeId p) {
        return g.sum(g.mul(g.layer_norm(g.value(TensorD(x2)), p, g.value(TensorD(bias))),
                           g.value(TensorD(probe))));
      });
    }
    // causal_attention: q, k, v
    {
      const int len = rng.uniform_int(2, 5);
      const int heads = 2, dh = 2;
      const int d = heads * dh;
      TensorD q = random_tensor({len, d}, rng);
      const TensorD kk = random_tensor({len, d}, rng);
      const TensorD vv = random_tensor({len, d}, rng);
      const TensorD probe = random_tensor({len, d}, rng);
      auto attn_loss = [&](GraphD& g, NodeId qn, NodeId kn, NodeId vn) {
        return g.sum(g.mul(g.causal_attention(qn, kn, vn, heads), g.value(TensorD(probe))));
      };
      check_grad(q, [&](GraphD& g, NodeId p) {
        return attn_loss(g, p, g.value(TensorD(kk)), g.value(TensorD(vv)));
      });
      TensorD k2 = random_tensor({len, d}, rng);
      const TensorD q2 = random_tensor({len, d}, rng);
      check_grad(k2, [&](GraphD& g, NodeId p) {
        return attn_loss(g, g.value(TensorD(q2)), p, g.value(TensorD(vv)));
      });
      TensorD v2 = random_tensor({len, d}, rng);
      check_grad(v2, [&](GraphD& g, NodeId p) {
        return attn_loss(g, g.value(TensorD(q2)), g.value(TensorD(kk)), p);
      });
    }
    // row_softmax (through a weighted sum), kl_divergence (both sides through
    // softmax so probability rows stay normalized under perturbation)
    {
      TensorD z = random_tensor({m, n}, rng);
      const TensorD probe = random_tensor({m, n}, rng);
      const double tau = 0.5 + rng.next_unit() * 2.5;
      check_grad(z, [&](GraphD& g, NodeId p) {
        return g.sum(g.mul(g.row_softmax(p, tau), g.value(TensorD(probe))));
      });
      TensorD zq = random_tensor({m, n}, rng);
      const TensorD zp = random_tensor({m, n}, rng);
      check_grad(zq, [&](GraphD& g, NodeId p) {
        const NodeId pr = g.row_softmax(g.value(TensorD(zp)), 1.0);
        return g.mean(g.kl_divergence(pr, g.row_softmax(p, tau)));
      });
      TensorD zp2 = random_tensor({m, n}, rng);
      const TensorD zq2 = random_tensor({m, n}, rng);
      check_grad(zp2, [&](GraphD& g, NodeId p) {
        const NodeId qr = g.row_softmax(g.value(TensorD(zq2)), tau);
        return g.mean(g.kl_divergence(g.row_softmax(p, 1.0), qr));
      });
    }
    // cross_entropy, row_slice, gather_rows, mean
    {
      TensorD z = random_tensor({m, n}, rng);
      std::vector<int> targets(static_cast<size_t>(m));
      for (auto& t : targets) t = rng.uniform_int(0, n - 1);
      check_grad(z, [&targets](GraphD& g, NodeId p) { return g.cross_entropy(p, targets); });

      TensorD s = random_tensor({4, n}, rng);
      check_grad(s, [](GraphD& g, NodeId p) { return g.sum(g.gelu(g.row_slice(p, 1, 2))); });

      TensorD src = random_tensor({4, n}, rng);
      check_grad(src, [](GraphD& g, NodeId p) {
        return g.mean(g.gelu(g.gather_rows({{p, 2}, {p, 0}, {p, 2}})));
      });
    }
  }
}

TEST_CASE("determinism: identical runs produce bit-identical outputs") {
  auto run = []() {
    RngStream rng(99);
    TensorD a = random_tensor({3, 4}, rng);
    TensorD b = random_tensor({4, 5}, rng);
    GraphD g;
    const NodeId p = g.param(&a);
    const NodeId loss = g.sum(g.gelu(g.matmul(p, g.value(std::move(b)))));
    g.backward(loss);
    std::vector<double> out = g.grad(p).data;
    out.push_back(g.val(loss).data[0]);
    return out;
  };
  CHECK(run() == run());
}
