#pragma once
// Scaling benchmark: analytic MAC counts plus wall-clock forward timings,
// and log-log least-squares exponent fits.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "co4/baseline.hpp"
#include "co4/co4_layer.hpp"

namespace co4 {

struct ScalingRow {
  std::string kind;  // "co4" or "baseline"
  std::size_t n = 0;
  std::uint64_t macs = 0;
  double seconds = 0;  // median over `repeats` timed runs
  std::size_t repeats = 0;
};

struct BenchConfig {
  std::size_t embed_dim = 64;  // small E so the N^2 term dominates early
  std::size_t num_agents = 24;
  std::size_t num_heads = 2;
  std::size_t loop_iters = 2;
  std::size_t ffnn_multiplier = 4;
  std::vector<std::size_t> ns = {512, 1024, 2048, 4096, 8192};
  std::size_t repeats = 5;
  std::size_t warmup = 2;  // discarded calls before timing
  std::uint64_t seed = 0;
  bool run_co4 = true;
  bool run_baseline = true;

  void validate() const {
    if (ns.size() < 4) throw ConfigError("bench: need at least 4 values of N");
    for (std::size_t i = 1; i < ns.size(); ++i)
      if (ns[i] <= ns[i - 1])
        throw ConfigError("bench: N values must be strictly increasing");
    if (repeats < 5) throw ConfigError("bench: repeats must be >= 5");
  }
};

namespace bench_detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// Times one forward pass per call; median over cfg.repeats after discarding
// cfg.warmup calls. The callable must run a complete fresh forward (its own
// graph) and return one output element so the work cannot be elided.
template <class Forward>
double time_forward(const BenchConfig& cfg, Forward&& fwd) {
  using clock = std::chrono::steady_clock;
  volatile float sink = 0;  // defeat dead-code elimination
  std::vector<double> times;
  for (std::size_t i = 0; i < cfg.warmup + cfg.repeats; ++i) {
    auto t0 = clock::now();
    sink = sink + fwd();
    auto t1 = clock::now();
    if (i >= cfg.warmup)
      times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  (void)sink;
  return median(times);
}

}  // namespace bench_detail

inline std::vector<ScalingRow> run_scaling(const BenchConfig& cfg) {
  cfg.validate();
  std::size_t E = cfg.embed_dim;
  Co4Config c4{cfg.num_agents, cfg.num_heads, E, cfg.loop_iters, true, 0.0};
  BaselineConfig bl{E, cfg.num_heads, cfg.ffnn_multiplier, 0.0};
  c4.validate();
  bl.validate();

  std::vector<ScalingRow> rows;
  for (std::size_t n : cfg.ns) {
    // identical input across kinds for a given N
    Rng rng(cfg.seed + n);
    Array<float> x = Array<float>::randn({n, E}, rng, 1.0);
    if (cfg.run_co4) {
      Array<float> w_k = Array<float>::randn({E, E}, rng, 0.05);
      Array<float> w_v = Array<float>::randn({E, E}, rng, 0.05);
      Array<float> lq = Array<float>::randn({cfg.num_agents, E}, rng, 0.05);
      double sec = bench_detail::time_forward(cfg, [&]() {
        Graph<float> g;
        g.recording = false;
        Co4Weights<float> w{g.leaf(w_k), g.leaf(w_v), g.leaf(lq)};
        return co4_layer_forward(g.leaf(x), w, c4).value()[0];
      });
      rows.push_back({"co4", n, mac_count_co4(c4, n), sec, cfg.repeats});
    }
    if (cfg.run_baseline) {
      Array<float> w_q = Array<float>::randn({E, E}, rng, 0.05);
      Array<float> w_k = Array<float>::randn({E, E}, rng, 0.05);
      Array<float> w_v = Array<float>::randn({E, E}, rng, 0.05);
      Array<float> w_o = Array<float>::randn({E, E}, rng, 0.05);
      Array<float> f1 = Array<float>::randn({E, bl.ffnn_dim()}, rng, 0.05);
      Array<float> b1 = Array<float>::zeros({bl.ffnn_dim()});
      Array<float> f2 = Array<float>::randn({bl.ffnn_dim(), E}, rng, 0.05);
      Array<float> b2 = Array<float>::zeros({E});
      double sec = bench_detail::time_forward(cfg, [&]() {
        Graph<float> g;
        g.recording = false;
        BaselineWeights<float> w{g.leaf(w_q), g.leaf(w_k), g.leaf(w_v),
                                 g.leaf(w_o), g.leaf(f1), g.leaf(b1),
                                 g.leaf(f2), g.leaf(b2)};
        return baseline_forward(g.leaf(x), w, bl).value()[0];
      });
      rows.push_back({"baseline", n, mac_count_baseline(bl, n), sec, cfg.repeats});
    }
  }
  return rows;
}

struct LogLogFit {
  double exponent = 0;  // slope b of log y = a + b log x
  double r2 = 0;
};

// Ordinary least squares in log-log space.
inline LogLogFit fit_loglog(const std::vector<double>& xs,
                            const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw InputError("fit_loglog: need >= 2 matching points");
  std::size_t n = xs.size();
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (xs[i] <= 0 || ys[i] <= 0)
      throw InputError("fit_loglog: points must be positive");
    lx[i] = std::log(xs[i]);
    ly[i] = std::log(ys[i]);
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) { mx += lx[i]; my += ly[i]; }
  mx /= double(n);
  my /= double(n);
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (sxx == 0) throw InputError("fit_loglog: all x equal");
  LogLogFit f;
  f.exponent = sxy / sxx;
  f.r2 = syy == 0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return f;
}

struct KindFit {
  std::string kind;
  LogLogFit time_fit;
  LogLogFit mac_fit;  // sanity anchor on the analytic counts
  std::size_t points = 0;
};

struct FitReport {
  std::vector<KindFit> kinds;
};

inline FitReport fit_complexity(const std::vector<ScalingRow>& rows) {
  FitReport rep;
  for (const ScalingRow& r : rows) {
    KindFit* kf = nullptr;
    for (KindFit& k : rep.kinds)
      if (k.kind == r.kind) kf = &k;
    if (!kf) {
      rep.kinds.push_back({r.kind, {}, {}, 0});
      kf = &rep.kinds.back();
    }
    ++kf->points;
  }
  for (KindFit& k : rep.kinds) {
    if (k.points < 4)
      throw InputError("fit_complexity: kind '" + k.kind +
                       "' has fewer than 4 rows");
    std::vector<double> ns, ts, ms;
    for (const ScalingRow& r : rows)
      if (r.kind == k.kind) {
        ns.push_back(double(r.n));
        ts.push_back(r.seconds);
        ms.push_back(double(r.macs));
      }
    k.time_fit = fit_loglog(ns, ts);
    k.mac_fit = fit_loglog(ns, ms);
  }
  return rep;
}

inline std::string scaling_csv(const std::vector<ScalingRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "kind,N,macs,seconds,repeats\n";
  for (const ScalingRow& r : rows)
    os << r.kind << ',' << r.n << ',' << r.macs << ',' << r.seconds << ','
       << r.repeats << '\n';
  return os.str();
}

inline std::string fit_text(const FitReport& rep) {
  std::ostringstream os;
  os.precision(6);
  for (const KindFit& k : rep.kinds) {
    os << k.kind << ": time exponent " << k.time_fit.exponent << " (R^2 "
       << k.time_fit.r2 << "), analytic MAC exponent " << k.mac_fit.exponent
       << " (R^2 " << k.mac_fit.r2 << "), " << k.points << " points\n";
  }
  return os.str();
}

}  // namespace co4
