// Quadratic causal self-attention block: straight-line oracle, causality,
// gradient check, and the analytic MAC count.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "co4/baseline.hpp"
#include "co4/grad_check.hpp"

using namespace co4;

namespace {

struct RefWeights {
  std::vector<double> wq, wk, wv, wo;  // E x E
  std::vector<double> w1, b1, w2, b2;  // E x F, F, F x E, E
};

RefWeights random_weights(const BaselineConfig& cfg, Rng& rng, double sd) {
  std::size_t E = cfg.embed_dim, F = cfg.ffnn_dim();
  RefWeights w;
  w.wq = Array<double>::randn({E, E}, rng, sd).data;
  w.wk = Array<double>::randn({E, E}, rng, sd).data;
  w.wv = Array<double>::randn({E, E}, rng, sd).data;
  w.wo = Array<double>::randn({E, E}, rng, sd).data;
  w.w1 = Array<double>::randn({E, F}, rng, sd).data;
  w.b1 = Array<double>::randn({F}, rng, sd).data;
  w.w2 = Array<double>::randn({F, E}, rng, sd).data;
  w.b2 = Array<double>::randn({E}, rng, sd).data;
  return w;
}

struct RefResult {
  std::vector<double> out;
  std::uint64_t macs = 0;
};

// Per-position explicit loops; every multiply/divide bumps the counter.
RefResult ref_forward(const std::vector<double>& x, const RefWeights& w,
                      std::size_t N, const BaselineConfig& cfg) {
  std::size_t E = cfg.embed_dim, H = cfg.num_heads, hd = cfg.head_dim();
  std::size_t F = cfg.ffnn_dim();
  std::uint64_t macs = 0;
  auto matvecs = [&](const std::vector<double>& m, std::size_t rows,
                     std::size_t cols) {
    std::vector<double> out(N * cols, 0.0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < cols; ++c)
        for (std::size_t r = 0; r < rows; ++r) {
          out[n * cols + c] += x[n * rows + r] * m[r * cols + c];
          ++macs;
        }
    return out;
  };
  std::vector<double> q = matvecs(w.wq, E, E), k = matvecs(w.wk, E, E),
                      v = matvecs(w.wv, E, E);
  std::vector<double> merged(N * E, 0.0);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t n = 0; n < N; ++n) {
      // masked row of scores over positions m <= n
      std::vector<double> s(n + 1);
      for (std::size_t m = 0; m <= n; ++m) {
        double t = 0;
        for (std::size_t j = 0; j < hd; ++j) {
          t += q[n * E + h * hd + j] * k[m * E + h * hd + j];
          ++macs;
        }
        s[m] = t / std::sqrt(double(hd));
        ++macs;
      }
      // the masked positions still incur the score dot, scale and softmax
      // divide in the dense implementation
      macs += (N - 1 - n) * (hd + 1 + 1);
      double mx = *std::max_element(s.begin(), s.end());
      double z = 0;
      for (std::size_t m = 0; m <= n; ++m) z += std::exp(s[m] - mx);
      for (std::size_t m = 0; m <= n; ++m) {
        double a = std::exp(s[m] - mx) / z;
        ++macs;
        for (std::size_t j = 0; j < hd; ++j) {
          merged[n * E + h * hd + j] += a * v[m * E + h * hd + j];
          ++macs;
        }
      }
      // weighted sum over masked positions is still N*hd multiplies dense
      macs += (N - 1 - n) * hd;
    }
  // output projection + residual
  std::vector<double> h1(N * E);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t e = 0; e < E; ++e) {
      double t = 0;
      for (std::size_t i = 0; i < E; ++i) {
        t += merged[n * E + i] * w.wo[i * E + e];
        ++macs;
      }
      h1[n * E + e] = x[n * E + e] + t;
    }
  // FFNN with residual
  RefResult res;
  res.out.assign(N * E, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<double> hid(F);
    for (std::size_t f = 0; f < F; ++f) {
      double t = w.b1[f];
      for (std::size_t e = 0; e < E; ++e) {
        t += h1[n * E + e] * w.w1[e * F + f];
        ++macs;
      }
      hid[f] = std::tanh(t);
    }
    for (std::size_t e = 0; e < E; ++e) {
      double t = w.b2[e];
      for (std::size_t f = 0; f < F; ++f) {
        t += hid[f] * w.w2[f * E + e];
        ++macs;
      }
      res.out[n * E + e] = h1[n * E + e] + t;
    }
  }
  res.macs = macs;
  return res;
}

BaselineWeights<double> bind(Graph<double>& g, const RefWeights& w,
                             const BaselineConfig& cfg, bool rg = false) {
  std::size_t E = cfg.embed_dim, F = cfg.ffnn_dim();
  return {g.leaf(Array<double>({E, E}, w.wq), rg),
          g.leaf(Array<double>({E, E}, w.wk), rg),
          g.leaf(Array<double>({E, E}, w.wv), rg),
          g.leaf(Array<double>({E, E}, w.wo), rg),
          g.leaf(Array<double>({E, F}, w.w1), rg),
          g.leaf(Array<double>({F}, w.b1), rg),
          g.leaf(Array<double>({F, E}, w.w2), rg),
          g.leaf(Array<double>({E}, w.b2), rg)};
}

std::vector<double> graph_forward(const std::vector<double>& x,
                                  const RefWeights& w, std::size_t N,
                                  const BaselineConfig& cfg) {
  Graph<double> g;
  g.recording = false;
  Tensor<double> out = baseline_forward(
      g.leaf(Array<double>({N, cfg.embed_dim}, x)), bind(g, w, cfg), cfg);
  return out.value();
}

double max_rel(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, rel_err(a[i], b[i]));
  return worst;
}

BaselineConfig small_cfg() {
  BaselineConfig c;
  c.embed_dim = 8;
  c.num_heads = 2;
  c.ffnn_multiplier = 4;
  c.dropout = 0.0;
  return c;
}

}  // namespace

TEST_CASE("causal_mask: zero at or below the diagonal, sentinel above") {
  Array<double> m = causal_mask<double>(4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double v = m.data[i * 4 + j];
      if (j <= i)
        CHECK(v == 0.0);
      else
        CHECK(v == kMaskSentinel);
    }
}

TEST_CASE("baseline_forward matches the per-position oracle for N <= 16") {
  std::uint64_t seed = 100;
  for (std::size_t N : {1, 2, 5, 16}) {
    BaselineConfig cfg = small_cfg();
    Rng rng(++seed);
    RefWeights w = random_weights(cfg, rng, 0.25);
    std::vector<double> x =
        Array<double>::randn({N, cfg.embed_dim}, rng, 1.0).data;
    RefResult ref = ref_forward(x, w, N, cfg);
    std::vector<double> got = graph_forward(x, w, N, cfg);
    REQUIRE(got.size() == N * cfg.embed_dim);
    CHECK(max_rel(ref.out, got) < 1e-6);
  }
}

TEST_CASE("zero w_k gives uniform attention weights 1/(n+1)") {
  // With K = 0 all scores tie at 0, so position n averages V[0..n]
  // uniformly. Checked through the output with w_o = I and the FFNN zeroed.
  BaselineConfig cfg = small_cfg();
  std::size_t N = 6, E = cfg.embed_dim;
  Rng rng(42);
  RefWeights w = random_weights(cfg, rng, 0.25);
  std::fill(w.wk.begin(), w.wk.end(), 0.0);
  std::fill(w.w1.begin(), w.w1.end(), 0.0);
  std::fill(w.b1.begin(), w.b1.end(), 0.0);
  std::fill(w.w2.begin(), w.w2.end(), 0.0);
  std::fill(w.b2.begin(), w.b2.end(), 0.0);
  std::fill(w.wo.begin(), w.wo.end(), 0.0);
  for (std::size_t e = 0; e < E; ++e) w.wo[e * E + e] = 1.0;
  std::vector<double> x = Array<double>::randn({N, E}, rng, 1.0).data;
  std::vector<double> got = graph_forward(x, w, N, cfg);
  // v projection by hand
  std::vector<double> v(N * E, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t e = 0; e < E; ++e)
      for (std::size_t i = 0; i < E; ++i)
        v[n * E + e] += x[n * E + i] * w.wv[i * E + e];
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t e = 0; e < E; ++e) {
      double mean = 0;
      for (std::size_t m = 0; m <= n; ++m) mean += v[m * E + e];
      mean /= double(n + 1);
      CHECK(rel_err(got[n * E + e], x[n * E + e] + mean) < 1e-9);
    }
}

TEST_CASE("baseline_forward is causal under suffix perturbation") {
  BaselineConfig cfg = small_cfg();
  std::size_t N = 12, E = cfg.embed_dim;
  Rng rng(7);
  RefWeights w = random_weights(cfg, rng, 0.25);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x = Array<double>::randn({N, E}, rng, 1.0).data;
    std::vector<double> base = graph_forward(x, w, N, cfg);
    std::size_t cut = 1 + rng.next_below(N - 1);
    std::vector<double> x2 = x;
    for (std::size_t i = cut * E; i < N * E; ++i) x2[i] += rng.normal() * 10.0;
    std::vector<double> pert = graph_forward(x2, w, N, cfg);
    for (std::size_t i = 0; i < cut * E; ++i) CHECK(base[i] == pert[i]);
  }
}

TEST_CASE("invalid head split is rejected") {
  BaselineConfig cfg = small_cfg();
  cfg.num_heads = 3;
  Graph<double> g;
  Rng rng(1);
  RefWeights w = random_weights(small_cfg(), rng, 0.1);
  CHECK_THROWS_AS(
      baseline_forward(g.leaf(Array<double>::zeros({4, 8})),
                       bind(g, w, small_cfg()), cfg),
      ConfigError);
}

TEST_CASE("mac_count_baseline equals the instrumented count and is quadratic") {
  BaselineConfig cfg = small_cfg();
  Rng rng(55);
  RefWeights w = random_weights(cfg, rng, 0.25);
  for (std::size_t N : {1, 3, 8, 17}) {
    std::vector<double> x =
        Array<double>::randn({N, cfg.embed_dim}, rng, 1.0).data;
    CHECK(ref_forward(x, w, N, cfg).macs == mac_count_baseline(cfg, N));
  }
  // second difference of a quadratic is constant: 2 * (2E + 2H)
  std::uint64_t E = cfg.embed_dim, H = cfg.num_heads;
  for (std::uint64_t n : {4, 9, 100}) {
    std::uint64_t d2 = mac_count_baseline(cfg, n + 2) -
                       2 * mac_count_baseline(cfg, n + 1) +
                       mac_count_baseline(cfg, n);
    CHECK(d2 == 2 * (2 * E + 2 * H));
  }
}

TEST_CASE("full-block gradient check at tol 1e-4") {
  BaselineConfig cfg = small_cfg();
  std::size_t N = 5, E = cfg.embed_dim, F = cfg.ffnn_dim();
  Rng rng(77);
  RefWeights w = random_weights(cfg, rng, 0.25);
  Array<double> x = Array<double>::randn({N, E}, rng, 1.0);
  Array<double> awq({E, E}, w.wq), awk({E, E}, w.wk), awv({E, E}, w.wv),
      awo({E, E}, w.wo), aw1({E, F}, w.w1), ab1({F}, w.b1), aw2({F, E}, w.w2),
      ab2({E}, w.b2);

  auto loss_of = [&]() {
    Graph<double> g;
    g.recording = false;
    BaselineWeights<double> bw{g.leaf(awq), g.leaf(awk), g.leaf(awv),
                               g.leaf(awo), g.leaf(aw1), g.leaf(ab1),
                               g.leaf(aw2), g.leaf(ab2)};
    Tensor<double> out = baseline_forward(g.leaf(x), bw, cfg);
    return sum_all(mul(out, out)).value()[0];
  };

  Graph<double> g;
  BaselineWeights<double> bw{g.leaf(awq, true), g.leaf(awk, true),
                             g.leaf(awv, true), g.leaf(awo, true),
                             g.leaf(aw1, true), g.leaf(ab1, true),
                             g.leaf(aw2, true), g.leaf(ab2, true)};
  Tensor<double> xt = g.leaf(x, true);
  Tensor<double> out = baseline_forward(xt, bw, cfg);
  Tensor<double> loss = sum_all(mul(out, out));
  g.backward(loss);
  Array<double> gq(awq.shape, bw.w_q.grad()), gk(awk.shape, bw.w_k.grad()),
      gv(awv.shape, bw.w_v.grad()), go(awo.shape, bw.w_o.grad()),
      g1(aw1.shape, bw.ffn_w1.grad()), gb1(ab1.shape, bw.ffn_b1.grad()),
      g2(aw2.shape, bw.ffn_w2.grad()), gb2(ab2.shape, bw.ffn_b2.grad()),
      gx(x.shape, xt.grad());
  GradCheckReport rep = grad_check(loss_of,
                                   {{"w_q", &awq, &gq},
                                    {"w_k", &awk, &gk},
                                    {"w_v", &awv, &gv},
                                    {"w_o", &awo, &go},
                                    {"ffn_w1", &aw1, &g1},
                                    {"ffn_b1", &ab1, &gb1},
                                    {"ffn_w2", &aw2, &g2},
                                    {"ffn_b2", &ab2, &gb2},
                                    {"x", &x, &gx}},
                                   1e-5, 1e-4, /*stride=*/5);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err < 1e-4);
}
