// MOD transfer function, contextual fields, triadic loop, causal latent
// attention, full-layer equivalence against a straight-line reimplementation,
// and the analytic MAC count.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "co4/co4_layer.hpp"
#include "co4/grad_check.hpp"

#include "co4_reference.hpp"

using namespace co4;
using co4_ref::RefResult;
using co4_ref::ref_forward;
using co4_ref::graph_forward;

namespace {

double max_rel(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, rel_err(a[i], b[i]));
  return worst;
}

Co4Config tiny_cfg() {
  Co4Config c;
  c.num_agents = 4;
  c.num_heads = 2;
  c.embed_dim = 16;
  c.loop_iters = 2;
  c.dropout = 0.0;
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// MOD transfer function

TEST_CASE("mod_transfer pinned values") {
  Graph<double> g;
  auto t = [&](double ff, double c) {
    return mod_transfer(g.leaf(Array<double>::full({1}, ff)),
                        g.leaf(Array<double>::full({1}, c)))
        .value()[0];
  };
  CHECK(t(0.7, 0.0) == 0.7);                    // identity at zero context
  CHECK(t(-1.3, 0.0) == -1.3);
  CHECK(t(1.0, 10.0) == doctest::Approx(2.0).epsilon(1e-4));   // saturation
  CHECK(t(1.0, -10.0) == doctest::Approx(0.0).epsilon(1e-4));  // attenuation
  // 0.5 * (1 + tanh(0.25))
  CHECK(t(0.5, 0.5) == doctest::Approx(0.6224593312018546).epsilon(1e-12));

  auto a = g.leaf(Array<double>::zeros({2, 3}));
  auto b = g.leaf(Array<double>::zeros({3, 2}));
  CHECK_THROWS_AS(mod_transfer(a, b), DimError);
}

TEST_CASE("mod_transfer contract over 10^4 random pairs") {
  Rng rng(2024);
  Graph<double> g;
  std::size_t n = 10000;
  Array<double> ff = Array<double>::randn({n}, rng, 1.5);
  Array<double> c = Array<double>::randn({n}, rng, 1.5);
  auto out = mod_transfer(g.leaf(ff), g.leaf(c));
  auto zero_out = mod_transfer(g.leaf(ff), g.leaf(Array<double>::zeros({n})));
  std::size_t ok_ident = 0, ok_amp = 0, ok_att = 0, ok_sign = 0;
  std::size_t n_amp = 0, n_att = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double f = ff.data[i], o = out.value()[i];
    ok_ident += (zero_out.value()[i] == f);  // exact identity, not approximate
    ok_sign += (o * f >= 0.0) && (std::abs(o) <= 2.0 * std::abs(f));
    if (f * c.data[i] > 0) {
      ++n_amp;
      ok_amp += (std::abs(o) > std::abs(f));  // strict amplification
    } else if (f * c.data[i] < 0) {
      ++n_att;
      ok_att += (std::abs(o) < std::abs(f)) && (std::abs(o) >= 0.0);
    }
  }
  CHECK(ok_ident == n);
  CHECK(ok_sign == n);
  CHECK(ok_amp == n_amp);
  CHECK(ok_att == n_att);
  CHECK(n_amp > 4000);  // both branches well exercised
  CHECK(n_att > 4000);
}

// ---------------------------------------------------------------------------
// contextual fields

TEST_CASE("context_fields: single agent zeroes D and flags it") {
  Co4Config cfg = tiny_cfg();
  cfg.num_agents = 1;
  Graph<double> g;
  Rng rng(5);
  AgentStreams<double> s;
  s.q = g.leaf(Array<double>::randn({1, 2, 8}, rng, 1.0));
  s.k = g.leaf(Array<double>::randn({1, 2, 3, 8}, rng, 1.0));
  s.v = g.leaf(Array<double>::randn({1, 2, 3, 8}, rng, 1.0));
  ContextSet<double> ctx = context_fields(s, cfg);
  CHECK(ctx.degenerate_distal);
  // cq = (D + U)/2 = U/2 = Q/2 for a lone agent
  for (std::size_t i = 0; i < 16; ++i)
    CHECK(ctx.cq.value()[i] == doctest::Approx(s.q.value()[i] / 2.0).epsilon(1e-12));
}

TEST_CASE("context_fields: identical agents make D = U = each Q") {
  Co4Config cfg = tiny_cfg();
  cfg.num_agents = 3;
  cfg.num_heads = 1;
  cfg.embed_dim = 4;
  Graph<double> g;
  Rng rng(6);
  Array<double> one_q = Array<double>::randn({1, 1, 4}, rng, 1.0);
  Array<double> q({3, 1, 4});
  for (int l = 0; l < 3; ++l)
    for (int j = 0; j < 4; ++j) q.data[l * 4 + j] = one_q.data[j];
  AgentStreams<double> s;
  s.q = g.leaf(q);
  s.k = g.leaf(Array<double>::randn({3, 1, 2, 4}, rng, 1.0));
  s.v = g.leaf(Array<double>::randn({3, 1, 2, 4}, rng, 1.0));
  ContextSet<double> ctx = context_fields(s, cfg);
  CHECK(!ctx.degenerate_distal);
  // with D = U = Q: cq = (Q + Q)/2 = Q
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(ctx.cq.value()[l * 4 + j] ==
            doctest::Approx(one_q.data[j]).epsilon(1e-12));
}

TEST_CASE("context_fields: two-agent hand-computed instance") {
  // L=2, H=1, N=1, hd=2. Hand arithmetic for every field.
  Co4Config cfg;
  cfg.num_agents = 2;
  cfg.num_heads = 1;
  cfg.embed_dim = 2;
  Graph<double> g;
  AgentStreams<double> s;
  s.q = g.leaf(Array<double>({2, 1, 2}, {1.0, 2.0, 3.0, 4.0}));
  s.k = g.leaf(Array<double>({2, 1, 1, 2}, {0.5, -0.5, 1.5, 2.5}));
  s.v = g.leaf(Array<double>({2, 1, 1, 2}, {2.0, 0.0, -1.0, 1.0}));
  ContextSet<double> ctx = context_fields(s, cfg);
  // U = mean(Q) = (2, 3); D_0 = Q_1 = (3,4); D_1 = Q_0 = (1,2)
  // cq_0 = (D_0+U)/2 = (2.5, 3.5); cq_1 = (1.5, 2.5)
  CHECK(ctx.cq.value() == std::vector<double>{2.5, 3.5, 1.5, 2.5});
  // ck_a = (P + D + U)/3 with P = (Q_a + V_a)/2
  // agent0: P = ((1,2)+(2,0))/2 = (1.5, 1); ck = ((1.5,1)+(3,4)+(2,3))/3
  CHECK(ctx.ck.value()[0] == doctest::Approx((1.5 + 3.0 + 2.0) / 3.0));
  CHECK(ctx.ck.value()[1] == doctest::Approx((1.0 + 4.0 + 3.0) / 3.0));
  // agent1: P = ((3,4)+(-1,1))/2 = (1, 2.5); ck = ((1,2.5)+(1,2)+(2,3))/3
  CHECK(ctx.ck.value()[2] == doctest::Approx((1.0 + 1.0 + 2.0) / 3.0));
  CHECK(ctx.ck.value()[3] == doctest::Approx((2.5 + 2.0 + 3.0) / 3.0));
  // cv_a uses P = (Q_a + K_a)/2
  // agent0: P = ((1,2)+(0.5,-0.5))/2 = (0.75, 0.75)
  CHECK(ctx.cv.value()[0] == doctest::Approx((0.75 + 3.0 + 2.0) / 3.0));
  CHECK(ctx.cv.value()[1] == doctest::Approx((0.75 + 4.0 + 3.0) / 3.0));
}

// ---------------------------------------------------------------------------
// triadic loop

TEST_CASE("triadic_iterate: T = 0 is the identity") {
  Co4Config cfg = tiny_cfg();
  cfg.loop_iters = 0;
  Graph<double> g;
  Rng rng(7);
  AgentStreams<double> s;
  s.q = g.leaf(Array<double>::randn({4, 2, 8}, rng, 1.0));
  s.k = g.leaf(Array<double>::randn({4, 2, 5, 8}, rng, 1.0));
  s.v = g.leaf(Array<double>::randn({4, 2, 5, 8}, rng, 1.0));
  AgentStreams<double> out = triadic_iterate(s, cfg);
  CHECK(out.q.value() == s.q.value());
  CHECK(out.k.value() == s.k.value());
  CHECK(out.v.value() == s.v.value());
}

TEST_CASE("triadic_iterate: L=1 with zero Q and V leaves all streams fixed") {
  // With Q = 0 and V = 0 every context is zero (P for K is (Q+V)/2), so MOD
  // is the identity on all three streams, for any K and any T.
  Co4Config cfg = tiny_cfg();
  cfg.num_agents = 1;
  cfg.loop_iters = 4;
  Graph<double> g;
  Rng rng(8);
  AgentStreams<double> s;
  s.q = g.leaf(Array<double>::zeros({1, 2, 8}));
  s.k = g.leaf(Array<double>::randn({1, 2, 6, 8}, rng, 1.0));
  s.v = g.leaf(Array<double>::zeros({1, 2, 6, 8}));
  AgentStreams<double> out = triadic_iterate(s, cfg);
  CHECK(out.q.value() == s.q.value());
  CHECK(out.k.value() == s.k.value());  // bit-exact
  CHECK(out.v.value() == s.v.value());
}

TEST_CASE("triadic_iterate: non-finite input names the iteration") {
  Co4Config cfg = tiny_cfg();
  Graph<double> g;
  Array<double> bad = Array<double>::zeros({4, 2, 3, 8});
  bad.data[0] = std::numeric_limits<double>::infinity();
  AgentStreams<double> s;
  s.q = g.leaf(Array<double>::zeros({4, 2, 8}));
  s.k = g.leaf(bad);
  s.v = g.leaf(Array<double>::zeros({4, 2, 3, 8}));
  try {
    triadic_iterate(s, cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("iteration 0") != std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// causal latent attention

TEST_CASE("latent attention: N = 1 returns a beta-weighted mean of V[0]") {
  Co4Config cfg = tiny_cfg();
  cfg.num_heads = 1;
  cfg.embed_dim = 4;
  Graph<double> g;
  Rng rng(9);
  AgentStreams<double> s;
  s.q = g.leaf(Array<double>::randn({4, 1, 4}, rng, 1.0));
  s.k = g.leaf(Array<double>::randn({4, 1, 1, 4}, rng, 1.0));
  s.v = g.leaf(Array<double>::randn({4, 1, 1, 4}, rng, 1.0));
  Tensor<double> out = latent_causal_attention(s, cfg);
  REQUIRE(out.shape() == Shape{1, 4});
  // expected: r_a(0) = V_a[0]; beta = softmax over agents of scores
  std::vector<double> sc(4), expect(4, 0.0);
  for (int l = 0; l < 4; ++l) {
    double t = 0;
    for (int j = 0; j < 4; ++j)
      t += s.q.value()[l * 4 + j] * s.k.value()[l * 4 + j];
    sc[l] = t / 2.0;  // sqrt(hd) = 2
  }
  double mx = *std::max_element(sc.begin(), sc.end()), z = 0;
  for (double t : sc) z += std::exp(t - mx);
  for (int l = 0; l < 4; ++l)
    for (int j = 0; j < 4; ++j)
      expect[j] += std::exp(sc[l] - mx) / z * s.v.value()[l * 4 + j];
  for (int j = 0; j < 4; ++j)
    CHECK(out.value()[j] == doctest::Approx(expect[j]).epsilon(1e-12));
}

TEST_CASE("latent attention: identical agents collapse to a single agent's r") {
  Co4Config cfg = tiny_cfg();
  cfg.num_heads = 1;
  cfg.embed_dim = 4;
  Graph<double> g;
  Rng rng(10);
  Array<double> k1 = Array<double>::randn({1, 1, 5, 4}, rng, 1.0);
  Array<double> v1 = Array<double>::randn({1, 1, 5, 4}, rng, 1.0);
  Array<double> q1 = Array<double>::randn({1, 1, 4}, rng, 1.0);
  auto rep = [&](const Array<double>& a, Shape sh) {
    Array<double> out(sh);
    for (std::size_t l = 0; l < 4; ++l)
      std::copy(a.data.begin(), a.data.end(),
                out.data.begin() + l * a.data.size());
    return out;
  };
  AgentStreams<double> one{g.leaf(q1), g.leaf(k1), g.leaf(v1)};
  Co4Config cfg1 = cfg;
  cfg1.num_agents = 1;
  Tensor<double> single = latent_causal_attention(one, cfg1);
  AgentStreams<double> four{g.leaf(rep(q1, {4, 1, 4})),
                            g.leaf(rep(k1, {4, 1, 5, 4})),
                            g.leaf(rep(v1, {4, 1, 5, 4}))};
  Tensor<double> multi = latent_causal_attention(four, cfg);
  CHECK(max_rel(single.value(), multi.value()) < 1e-12);
}

TEST_CASE("latent attention equals the explicit masked computation on the grid") {
  // all (N <= 32, L <= 4, H <= 2), several seeds, rel err < 1e-6
  std::uint64_t seed = 0;
  for (std::size_t H : {1, 2})
    for (std::size_t L : {1, 2, 4})
      for (std::size_t N : {1, 2, 3, 8, 17, 32}) {
        Co4Config cfg;
        cfg.num_agents = L;
        cfg.num_heads = H;
        cfg.embed_dim = 4 * H;
        cfg.loop_iters = 0;  // isolate the attention stage
        cfg.dropout = 0.0;
        std::size_t E = cfg.embed_dim;
        Rng rng(++seed);
        std::vector<double> x = Array<double>::randn({N, E}, rng, 1.0).data;
        std::vector<double> wk = Array<double>::randn({E, E}, rng, 0.5).data;
        std::vector<double> wv = Array<double>::randn({E, E}, rng, 0.5).data;
        std::vector<double> lq = Array<double>::randn({L, E}, rng, 1.0).data;
        RefResult ref = ref_forward(x, wk, wv, lq, N, cfg, false);
        std::vector<double> got = graph_forward(x, wk, wv, lq, N, cfg);
        CHECK(max_rel(ref.out, got) < 1e-6);
      }
}

// ---------------------------------------------------------------------------
// full layer

TEST_CASE("co4_layer_forward: output shape and tiny-config oracle equivalence") {
  Co4Config cfg = tiny_cfg();
  std::size_t N = 8, E = cfg.embed_dim;
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    Rng rng(seed);
    std::vector<double> x = Array<double>::randn({N, E}, rng, 1.0).data;
    std::vector<double> wk = Array<double>::randn({E, E}, rng, 0.1).data;
    std::vector<double> wv = Array<double>::randn({E, E}, rng, 0.1).data;
    std::vector<double> lq = Array<double>::randn({cfg.num_agents, E}, rng, 0.25).data;
    RefResult ref = ref_forward(x, wk, wv, lq, N, cfg, false);
    std::vector<double> got = graph_forward(x, wk, wv, lq, N, cfg);
    REQUIRE(got.size() == N * E);
    CHECK(max_rel(ref.out, got) < 1e-6);
  }
}

TEST_CASE("co4_layer_forward: T=0, L=1 reduces to single-query attention") {
  Co4Config cfg;
  cfg.num_agents = 1;
  cfg.num_heads = 1;
  cfg.embed_dim = 6;
  cfg.loop_iters = 0;
  cfg.dropout = 0.0;
  std::size_t N = 12, E = 6;
  Rng rng(11);
  std::vector<double> x = Array<double>::randn({N, E}, rng, 1.0).data;
  std::vector<double> wk = Array<double>::randn({E, E}, rng, 0.3).data;
  std::vector<double> wv = Array<double>::randn({E, E}, rng, 0.3).data;
  std::vector<double> lq = Array<double>::randn({1, E}, rng, 1.0).data;
  std::vector<double> got = graph_forward(x, wk, wv, lq, N, cfg);
  // direct masked-softmax attention of the lone latent query over K/V
  std::vector<double> kp(N * E, 0.0), vp(N * E, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t e = 0; e < E; ++e)
      for (std::size_t i = 0; i < E; ++i) {
        kp[n * E + e] += x[n * E + i] * wk[i * E + e];
        vp[n * E + e] += x[n * E + i] * wv[i * E + e];
      }
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<double> w(n + 1);
    double mx = -1e300;
    for (std::size_t m = 0; m <= n; ++m) {
      double s = 0;
      for (std::size_t j = 0; j < E; ++j) s += lq[j] * kp[m * E + j];
      w[m] = s / std::sqrt(double(E));
      mx = std::max(mx, w[m]);
    }
    double z = 0;
    for (std::size_t m = 0; m <= n; ++m) z += std::exp(w[m] - mx);
    for (std::size_t j = 0; j < E; ++j) {
      double expect = 0;
      for (std::size_t m = 0; m <= n; ++m)
        expect += std::exp(w[m] - mx) / z * vp[m * E + j];
      CHECK(rel_err(expect, got[n * E + j]) < 1e-9);
    }
  }
}

TEST_CASE("co4_layer_forward is causal: suffix perturbations leave prefixes bit-identical") {
  Co4Config cfg = tiny_cfg();
  std::size_t N = 10, E = cfg.embed_dim;
  Rng rng(12);
  std::vector<double> wk = Array<double>::randn({E, E}, rng, 0.1).data;
  std::vector<double> wv = Array<double>::randn({E, E}, rng, 0.1).data;
  std::vector<double> lq = Array<double>::randn({cfg.num_agents, E}, rng, 0.25).data;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x = Array<double>::randn({N, E}, rng, 1.0).data;
    std::vector<double> base = graph_forward(x, wk, wv, lq, N, cfg);
    std::size_t cut = 1 + rng.next_below(N - 1);  // perturb positions >= cut
    std::vector<double> x2 = x;
    for (std::size_t i = cut * E; i < N * E; ++i) x2[i] += rng.normal() * 10.0;
    std::vector<double> pert = graph_forward(x2, wk, wv, lq, N, cfg);
    for (std::size_t i = 0; i < cut * E; ++i) CHECK(base[i] == pert[i]);
  }
}

TEST_CASE("co4_layer_forward: invalid configs are rejected") {
  Co4Config cfg = tiny_cfg();
  cfg.num_heads = 3;  // 3 does not divide 16
  Graph<double> g;
  Co4Weights<double> w{g.leaf(Array<double>::zeros({16, 16})),
                       g.leaf(Array<double>::zeros({16, 16})),
                       g.leaf(Array<double>::zeros({4, 16}))};
  CHECK_THROWS_AS(co4_layer_forward(g.leaf(Array<double>::zeros({4, 16})), w, cfg),
                  ConfigError);
}

TEST_CASE("mac_count_co4 equals the instrumented straight-line count") {
  for (std::size_t N : {1, 4, 8, 19}) {
    for (bool renorm : {true, false}) {
      Co4Config cfg = tiny_cfg();
      cfg.rms_renorm = renorm;
      std::size_t E = cfg.embed_dim;
      Rng rng(13 + N);
      std::vector<double> x = Array<double>::randn({N, E}, rng, 1.0).data;
      std::vector<double> wk = Array<double>::randn({E, E}, rng, 0.1).data;
      std::vector<double> wv = Array<double>::randn({E, E}, rng, 0.1).data;
      std::vector<double> lq = Array<double>::randn({cfg.num_agents, E}, rng, 0.25).data;
      RefResult ref = ref_forward(x, wk, wv, lq, N, cfg, true);
      CHECK(ref.macs == mac_count_co4(cfg, N));
    }
  }
  // single-agent variant exercises the L=1 branch of the overhead term
  Co4Config one = tiny_cfg();
  one.num_agents = 1;
  Rng rng(99);
  std::size_t N = 6, E = one.embed_dim;
  std::vector<double> x = Array<double>::randn({N, E}, rng, 1.0).data;
  std::vector<double> wk = Array<double>::randn({E, E}, rng, 0.1).data;
  std::vector<double> wv = Array<double>::randn({E, E}, rng, 0.1).data;
  std::vector<double> lq = Array<double>::randn({1, E}, rng, 0.25).data;
  CHECK(ref_forward(x, wk, wv, lq, N, one, true).macs == mac_count_co4(one, N));
}

TEST_CASE("full-layer gradient check at tol 1e-4") {
  Co4Config cfg = tiny_cfg();
  std::size_t N = 5, E = cfg.embed_dim;
  Rng rng(14);
  Array<double> x = Array<double>::randn({N, E}, rng, 1.0);
  Array<double> wk = Array<double>::randn({E, E}, rng, 0.1);
  Array<double> wv = Array<double>::randn({E, E}, rng, 0.1);
  Array<double> lq = Array<double>::randn({cfg.num_agents, E}, rng, 0.25);

  auto loss_of = [&]() {
    Graph<double> g;
    g.recording = false;
    Co4Weights<double> w{g.leaf(wk), g.leaf(wv), g.leaf(lq)};
    Tensor<double> out = co4_layer_forward(g.leaf(x), w, cfg);
    return sum_all(mul(out, out)).value()[0];
  };
  // analytic pass
  Graph<double> g2;
  Co4Weights<double> w2{g2.leaf(wk, true), g2.leaf(wv, true), g2.leaf(lq, true)};
  Tensor<double> xt2 = g2.leaf(x, true);
  Tensor<double> out2 = co4_layer_forward(xt2, w2, cfg);
  Tensor<double> loss2 = sum_all(mul(out2, out2));
  g2.backward(loss2);
  Array<double> gwk(wk.shape, w2.w_k.grad());
  Array<double> gwv(wv.shape, w2.w_v.grad());
  Array<double> glq(lq.shape, w2.latent_q.grad());
  Array<double> gx(x.shape, xt2.grad());
  GradCheckReport rep = grad_check(
      loss_of,
      {{"w_k", &wk, &gwk}, {"w_v", &wv, &gwv}, {"latent_q", &lq, &glq}, {"x", &x, &gx}},
      1e-5, 1e-4, /*stride=*/7);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err < 1e-4);
}
