// Log-log fitting, analytic MAC scaling structure, and the timing harness.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "co4/bench.hpp"

using namespace co4;

TEST_CASE("fit_loglog recovers exact power laws") {
  std::vector<double> ns = {512, 1024, 2048, 4096, 8192};
  std::vector<double> lin, quad;
  for (double n : ns) {
    lin.push_back(3.5 * n);
    quad.push_back(0.01 * n * n);
  }
  LogLogFit f1 = fit_loglog(ns, lin);
  CHECK(f1.exponent == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(f1.r2 == doctest::Approx(1.0).epsilon(1e-9));
  LogLogFit f2 = fit_loglog(ns, quad);
  CHECK(f2.exponent == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(f2.r2 == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("fit_loglog input validation") {
  CHECK_THROWS_AS(fit_loglog({1, 2}, {1}), InputError);
  CHECK_THROWS_AS(fit_loglog({1}, {1}), InputError);
  CHECK_THROWS_AS(fit_loglog({1, -2}, {1, 1}), InputError);
  CHECK_THROWS_AS(fit_loglog({2, 2}, {1, 3}), InputError);
}

TEST_CASE("mac_count_co4 is exactly affine in N") {
  Co4Config cfg;
  cfg.embed_dim = 256;
  for (std::uint64_t n : {8ull, 64ull, 512ull, 4096ull}) {
    std::int64_t a = std::int64_t(mac_count_co4(cfg, n));
    std::int64_t b = std::int64_t(mac_count_co4(cfg, n + 1));
    std::int64_t c = std::int64_t(mac_count_co4(cfg, n + 2));
    CHECK(c - 2 * b + a == 0);  // zero second difference
  }
}

TEST_CASE("mac_count_co4: the N-proportional part scales exactly 8x from 512 to 4096") {
  Co4Config cfg;
  // per-N slope and the N-independent offset, both exact in integers
  std::int64_t slope =
      std::int64_t(mac_count_co4(cfg, 513)) - std::int64_t(mac_count_co4(cfg, 512));
  std::int64_t offset = std::int64_t(mac_count_co4(cfg, 512)) - 512 * slope;
  std::int64_t lin512 = std::int64_t(mac_count_co4(cfg, 512)) - offset;
  std::int64_t lin4096 = std::int64_t(mac_count_co4(cfg, 4096)) - offset;
  CHECK(lin4096 == 8 * lin512);
}

TEST_CASE("mac_count_baseline is exactly quadratic with coefficient 2E + 2H") {
  BaselineConfig cfg;
  cfg.embed_dim = 256;
  cfg.num_heads = 2;
  std::int64_t coef = 2 * std::int64_t(cfg.embed_dim) + 2 * std::int64_t(cfg.num_heads);
  for (std::uint64_t n : {4ull, 100ull, 512ull, 2048ull}) {
    std::int64_t a = std::int64_t(mac_count_baseline(cfg, n));
    std::int64_t b = std::int64_t(mac_count_baseline(cfg, n + 1));
    std::int64_t c = std::int64_t(mac_count_baseline(cfg, n + 2));
    CHECK(c - 2 * b + a == 2 * coef);  // constant second difference
  }
}

TEST_CASE("co4 analytic MAC exponent flattens toward 1 at large N") {
  Co4Config cfg;
  cfg.embed_dim = 256;
  std::vector<double> ns, macs;
  for (std::uint64_t n = 1024; n <= 16384; n *= 2) {
    ns.push_back(double(n));
    macs.push_back(double(mac_count_co4(cfg, n)));
  }
  LogLogFit f = fit_loglog(ns, macs);
  CHECK(f.exponent > 0.9);
  CHECK(f.exponent <= 1.0);
}

TEST_CASE("attention MAC ratio at the published scale: N^2 E over L N E = N / L") {
  // quadratic score term vs the latent linear term at L=24, N=512, E=256
  double ratio = (512.0 * 512.0 * 256.0) / (24.0 * 512.0 * 256.0);
  CHECK(ratio == doctest::Approx(512.0 / 24.0));
  CHECK(ratio == doctest::Approx(21.333333).epsilon(1e-6));
}

TEST_CASE("run_scaling produces one row per kind and N with exact MAC column") {
  BenchConfig cfg;
  cfg.embed_dim = 16;
  cfg.num_agents = 4;
  cfg.ns = {8, 16, 32, 64};
  cfg.repeats = 5;
  cfg.warmup = 1;
  auto rows = run_scaling(cfg);
  REQUIRE(rows.size() == 8);
  Co4Config c4{4, 2, 16, 2, true, 0.0};
  BaselineConfig bl{16, 2, 4, 0.0};
  for (const ScalingRow& r : rows) {
    CHECK(r.seconds > 0);
    CHECK(r.repeats == 5);
    if (r.kind == "co4") CHECK(r.macs == mac_count_co4(c4, r.n));
    else CHECK(r.macs == mac_count_baseline(bl, r.n));
  }
  // fit runs end to end on real rows
  FitReport rep = fit_complexity(rows);
  REQUIRE(rep.kinds.size() == 2);
  for (const KindFit& k : rep.kinds) {
    CHECK(k.points == 4);
    CHECK(k.mac_fit.r2 > 0.9);
  }
  std::string csv = scaling_csv(rows);
  CHECK(csv.rfind("kind,N,macs,seconds,repeats\n", 0) == 0);
  CHECK(fit_text(rep).find("co4: time exponent") != std::string::npos);
}

TEST_CASE("bench config validation") {
  BenchConfig cfg;
  cfg.ns = {8, 16, 32};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.ns = {8, 16, 16, 32};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.ns = {8, 16, 32, 64};
  cfg.repeats = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.repeats = 5;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("fit_complexity needs at least 4 rows per kind") {
  std::vector<ScalingRow> rows;
  for (std::size_t n : {8, 16, 32})
    rows.push_back({"co4", n, n * 100, double(n), 5});
  CHECK_THROWS_AS(fit_complexity(rows), InputError);
}
