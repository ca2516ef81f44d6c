#pragma once
// Single GPT-style causal self-attention block with FFNN; the quadratic
// comparison target for the scaling benchmark.

#include <cstdint>
#include <cstddef>

#include "co4/tensor.hpp"

namespace co4 {

struct BaselineConfig {
  std::size_t embed_dim = 256;   // E
  std::size_t num_heads = 2;     // H
  std::size_t ffnn_multiplier = 4;
  double dropout = 0.1;

  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t ffnn_dim() const { return embed_dim * ffnn_multiplier; }

  void validate() const {
    if (num_heads < 1) throw ConfigError("baseline: num_heads must be >= 1");
    if (embed_dim % num_heads != 0)
      throw ConfigError("baseline: num_heads must divide embed_dim (" +
                        std::to_string(num_heads) + " does not divide " +
                        std::to_string(embed_dim) + ")");
  }
};

template <class T>
struct BaselineWeights {
  Tensor<T> w_q, w_k, w_v, w_o;  // (E, E)
  Tensor<T> ffn_w1;              // (E, F)
  Tensor<T> ffn_b1;              // (F)
  Tensor<T> ffn_w2;              // (F, E)
  Tensor<T> ffn_b2;              // (E)
};

// Additive causal mask: 0 on and below the diagonal, the sentinel above.
template <class T>
Array<T> causal_mask(std::size_t n) {
  Array<T> m({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      m.data[i * n + j] = static_cast<T>(kMaskSentinel);
  return m;
}

// softmax(Q K^T / sqrt(Eh) + mask) V per head, output projection, residual,
// then a two-layer tanh FFNN with residual. Score cost is exactly O(N^2 E).
template <class T>
Tensor<T> baseline_forward(Tensor<T> x, const BaselineWeights<T>& w,
                           const BaselineConfig& cfg, bool training = false,
                           Rng* dropout_rng = nullptr) {
  cfg.validate();
  Graph<T>* g = x.graph();
  std::size_t n = x.shape()[0];
  std::size_t heads = cfg.num_heads, hd = cfg.head_dim();
  auto split = [&](Tensor<T> proj) {  // (N, E) -> (H, N, Eh)
    return permute(reshape(proj, {n, heads, hd}), {1, 0, 2});
  };
  Tensor<T> qh = split(matmul(x, w.w_q));
  Tensor<T> kh = split(matmul(x, w.w_k));
  Tensor<T> vh = split(matmul(x, w.w_v));
  Tensor<T> scores = scale(matmul(qh, permute(kh, {0, 2, 1})),
                           1.0 / std::sqrt(double(hd)));         // (H, N, N)
  Tensor<T> mask = g->constant(causal_mask<T>(n));
  Tensor<T> attn = softmax_lastdim(scores, std::optional<Tensor<T>>(mask));
  Tensor<T> ctx = matmul(attn, vh);                              // (H, N, Eh)
  Tensor<T> merged = reshape(permute(ctx, {1, 0, 2}), {n, cfg.embed_dim});
  Tensor<T> proj = matmul(merged, w.w_o);
  if (training && dropout_rng) proj = apply_dropout(proj, cfg.dropout, *dropout_rng);
  Tensor<T> h1 = add(x, proj);
  Tensor<T> ff = matmul(tanh(add(matmul(h1, w.ffn_w1), w.ffn_b1)), w.ffn_w2);
  ff = add(ff, w.ffn_b2);
  if (training && dropout_rng) ff = apply_dropout(ff, cfg.dropout, *dropout_rng);
  return add(h1, ff);
}

// Closed-form MAC count (eval mode, single sequence), same convention as
// mac_count_co4: multiplies and divides count 1, everything else 0.
//   projections Q,K,V,O   4*N*E^2
//   scores + weighted sum 2*N^2*E
//   score scaling         H*N^2
//   softmax divisions     H*N^2
//   FFNN                  2*N*E*F  (F = ffnn_multiplier*E)
// Exactly quadratic in N with coefficient 2*E + 2*H.
inline std::uint64_t mac_count_baseline(const BaselineConfig& cfg,
                                        std::uint64_t n) {
  std::uint64_t E = cfg.embed_dim, H = cfg.num_heads, F = cfg.ffnn_dim();
  return 4 * n * E * E + 2 * n * n * E + 2 * H * n * n + 2 * n * E * F;
}

}  // namespace co4
