#pragma once
// The Co4 layer: two-point-neuron MOD transfer, P/D/U contextual fields,
// the non-parametric triadic modulation loop, and causal latent attention
// with O(L*N*E) cost.

#include <cstdint>
#include <cstddef>

#include "co4/tensor.hpp"

namespace co4 {

struct Co4Config {
  std::size_t num_agents = 24;  // L
  std::size_t num_heads = 2;    // H
  std::size_t embed_dim = 256;  // E
  std::size_t loop_iters = 2;   // T
  bool rms_renorm = true;
  double dropout = 0.1;

  std::size_t head_dim() const { return embed_dim / num_heads; }

  void validate() const {
    if (num_agents < 1) throw ConfigError("co4: num_agents must be >= 1");
    if (num_heads < 1) throw ConfigError("co4: num_heads must be >= 1");
    if (embed_dim % num_heads != 0)
      throw ConfigError("co4: num_heads must divide embed_dim (" +
                        std::to_string(num_heads) + " does not divide " +
                        std::to_string(embed_dim) + ")");
    if (loop_iters > 8) throw ConfigError("co4: loop_iters must be <= 8");
  }
};

// Latent queries plus the per-agent K/V token streams the loop co-evolves.
// q: (L, H, Eh); k, v: (L, H, N, Eh).
template <class T>
struct AgentStreams {
  Tensor<T> q, k, v;
};

// P/D/U aggregates collapsed to one context per stream.
template <class T>
struct ContextSet {
  Tensor<T> cq;  // (L, H, Eh)
  Tensor<T> ck;  // (L, H, N, Eh)
  Tensor<T> cv;  // (L, H, N, Eh)
  bool degenerate_distal = false;
};

// MOD: out = ff * (1 + tanh(ff * c)). Identity at zero context; amplifies
// (bounded by 2|ff|) when ff and c share sign, attenuates (bounded below
// by 0) when they oppose; never flips the sign of ff.
template <class T>
Tensor<T> mod_transfer(Tensor<T> ff, Tensor<T> c) {
  if (ff.shape() != c.shape())
    throw DimError("mod_transfer: shapes differ: " + shape_str(ff.shape()) +
                   " vs " + shape_str(c.shape()));
  return mul(ff, add_scalar(tanh(mul(ff, c)), 1.0));
}

// Contexts derived from a snapshot of the streams:
//   K_a[n]: P = (Q_a + V_a[n])/2, D = mean_{b!=a} Q_b, U = mean_b Q_b,
//           context = (P + D + U)/3       (V_a symmetric, K in place of V)
//   Q_a (position-free, no proximal field): context = (D + U)/2
// With a single agent D is undefined; it is zeroed and flagged.
template <class T>
ContextSet<T> context_fields(const AgentStreams<T>& s, const Co4Config& cfg) {
  Graph<T>* g = s.q.graph();
  std::size_t agents = cfg.num_agents, heads = cfg.num_heads, hd = cfg.head_dim();
  ContextSet<T> ctx;

  Tensor<T> q_total = sum_axis(s.q, 0, true);            // (1, H, Eh)
  Tensor<T> u = scale(q_total, 1.0 / double(agents));    // (1, H, Eh)
  Tensor<T> d;
  if (agents == 1) {
    ctx.degenerate_distal = true;
    d = g->constant(Array<T>::zeros({1, heads, hd}));
  } else {
    d = scale(sub(q_total, s.q), 1.0 / double(agents - 1));  // (L, H, Eh)
  }
  ctx.cq = scale(add(d, u), 0.5);

  Tensor<T> q4 = reshape(s.q, {agents, heads, 1, hd});
  Tensor<T> d4 = reshape(broadcast_to(d, {agents, heads, hd}), {agents, heads, 1, hd});
  Tensor<T> u4 = reshape(u, {1, heads, 1, hd});
  Tensor<T> du = add(d4, u4);                            // (L, H, 1, Eh)
  Tensor<T> pk = scale(add(q4, s.v), 0.5);               // (L, H, N, Eh)
  Tensor<T> pv = scale(add(q4, s.k), 0.5);
  ctx.ck = scale(add(pk, du), 1.0 / 3.0);
  ctx.cv = scale(add(pv, du), 1.0 / 3.0);
  return ctx;
}

// Rescales each vector along the last dim back to the root-mean-square of
// its reference ("local competitive normalization").
template <class T>
Tensor<T> rms_match(Tensor<T> updated, Tensor<T> ref) {
  const double eps = 1e-12;
  Tensor<T> ms_u = add_scalar(mean_axis(mul(updated, updated), updated.shape().size() - 1), eps);
  Tensor<T> ms_r = add_scalar(mean_axis(mul(ref, ref), ref.shape().size() - 1), eps);
  return mul(updated, sqrt(div(ms_r, ms_u)));
}

// T snapshot iterations of the triadic loop. Each iteration derives the
// contexts from the current streams, then applies MOD to Q, K and V
// simultaneously, then optionally restores per-vector RMS.
template <class T>
AgentStreams<T> triadic_iterate(AgentStreams<T> s, const Co4Config& cfg,
                                bool* degenerate_distal = nullptr) {
  for (std::size_t it = 0; it < cfg.loop_iters; ++it) {
    try {
      ContextSet<T> ctx = context_fields(s, cfg);
      if (degenerate_distal && ctx.degenerate_distal) *degenerate_distal = true;
      Tensor<T> nq = mod_transfer(s.q, ctx.cq);
      Tensor<T> nk = mod_transfer(s.k, ctx.ck);
      Tensor<T> nv = mod_transfer(s.v, ctx.cv);
      if (cfg.rms_renorm) {
        nq = rms_match(nq, s.q);
        nk = rms_match(nk, s.k);
        nv = rms_match(nv, s.v);
      }
      s.q = nq;
      s.k = nk;
      s.v = nv;
    } catch (const NumericError& e) {
      throw NumericError("triadic_iterate: iteration " + std::to_string(it) +
                         ": " + e.what());
    }
  }
  return s;
}

// Causal latent attention.
// Stage A: per agent/head, a running softmax summary of V over the prefix,
//          weighted by exp(Q.K[m]/sqrt(Eh)).
// Stage B: token write-back; position n mixes the agents' summaries with
//          beta(n) = softmax over agents of Q.K[n]/sqrt(Eh).
// Heads are concatenated back to width E. Cost Theta(L*N*E); no N^2 term.
template <class T>
Tensor<T> latent_causal_attention(const AgentStreams<T>& s, const Co4Config& cfg) {
  std::size_t agents = cfg.num_agents, heads = cfg.num_heads, hd = cfg.head_dim();
  std::size_t n = s.k.shape()[2];
  Tensor<T> q4 = reshape(s.q, {agents, heads, 1, hd});
  Tensor<T> scores = scale(sum_axis(mul(s.k, q4), 3, false),
                           1.0 / std::sqrt(double(hd)));      // (L, H, N)
  Tensor<T> r = causal_latent_summary(scores, s.v);           // (L, H, N, Eh)
  Tensor<T> beta = permute(softmax_lastdim(permute(scores, {1, 2, 0})),
                           {2, 0, 1});                        // (L, H, N)
  Tensor<T> mixed = sum_axis(mul(reshape(beta, {agents, heads, n, 1}), r), 0,
                             false);                          // (H, N, Eh)
  return reshape(permute(mixed, {1, 0, 2}), {n, cfg.embed_dim});
}

template <class T>
struct Co4Weights {
  Tensor<T> w_k;      // (E, E)
  Tensor<T> w_v;      // (E, E)
  Tensor<T> latent_q; // (L, E)
};

// Full layer: shared K/V projections, per-agent learned latent queries,
// triadic loop, latent attention. No FFNN and no learned output mixing.
template <class T>
Tensor<T> co4_layer_forward(Tensor<T> x, const Co4Weights<T>& w,
                            const Co4Config& cfg, bool training = false,
                            Rng* dropout_rng = nullptr,
                            bool* degenerate_distal = nullptr) {
  cfg.validate();
  std::size_t n = x.shape()[0];
  std::size_t agents = cfg.num_agents, heads = cfg.num_heads, hd = cfg.head_dim();
  AgentStreams<T> s;
  s.q = reshape(w.latent_q, {agents, heads, hd});
  auto split = [&](Tensor<T> proj) {  // (N, E) -> (L, H, N, Eh)
    Tensor<T> per_head = permute(reshape(proj, {n, heads, hd}), {1, 0, 2});
    return broadcast_to(reshape(per_head, {1, heads, n, hd}),
                        {agents, heads, n, hd});
  };
  s.k = split(matmul(x, w.w_k));
  s.v = split(matmul(x, w.w_v));
  s = triadic_iterate(s, cfg, degenerate_distal);
  Tensor<T> out = latent_causal_attention(s, cfg);
  if (training && dropout_rng) out = apply_dropout(out, cfg.dropout, *dropout_rng);
  return out;
}

// Closed-form multiply-accumulate count of one forward pass (eval mode,
// single sequence). Convention: every scalar multiply or divide in the
// computation above counts 1; adds, exp/tanh/log/sqrt count 0. With
// S = L*N*E stream elements the terms are
//   projections      2*N*E^2
//   triadic loop     T * (14*S + 6*L*H*N)        [8*S without rms_renorm]
//   attention        2*S + 2*L*H*N + 2*L*E*(N-1)
// plus the N-independent latent-Q overhead alpha(cfg). Strictly affine in N.
inline std::uint64_t mac_count_co4(const Co4Config& cfg, std::uint64_t n) {
  std::uint64_t L = cfg.num_agents, H = cfg.num_heads, E = cfg.embed_dim;
  std::uint64_t T = cfg.loop_iters;
  std::uint64_t S = L * n * E;
  std::uint64_t QS = L * E;
  std::uint64_t macs = 2 * n * E * E;
  // per iteration, stream-sized work:
  //   P fields 2S, contexts 2S, MOD 4S, rms 6S + 6*L*H*N (squares, per-vector
  //   mean scale and ratio, apply; K and V streams)
  std::uint64_t per_iter = cfg.rms_renorm ? 14 * S + 6 * L * H * n : 8 * S;
  // latent-Q overhead per iteration: U scale E, D scale QS (absent at L=1),
  // cq scale QS, MOD 2*QS, rms 3*QS + 3*L*H
  std::uint64_t alpha_iter = E + (L > 1 ? QS : 0) + QS + 2 * QS +
                             (cfg.rms_renorm ? 3 * QS + 3 * L * H : 0);
  macs += T * (per_iter + alpha_iter);
  // attention: scores S + L*H*N, stage-A scan 2*L*E*(N-1), stage-B softmax
  // divisions L*H*N, write-back S
  macs += S + L * H * n + 2 * L * E * (n - 1) + L * H * n + S;
  return macs;
}

}  // namespace co4
