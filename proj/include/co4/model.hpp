#pragma once
// Embeddings + positional table + one Co4 (or baseline) layer + output head,
// assembled into an autoregressive LM with CE loss.

#include <cstdint>
#include <string>
#include <vector>

#include "co4/baseline.hpp"
#include "co4/co4_layer.hpp"
#include "co4/tensor.hpp"

namespace co4 {

enum class LayerKind { co4, baseline };
enum class Precision { f32, f64 };

inline std::string to_string(LayerKind k) {
  return k == LayerKind::co4 ? "co4" : "baseline";
}
inline std::string to_string(Precision p) {
  return p == Precision::f32 ? "f32" : "f64";
}

struct ModelConfig {
  std::size_t vocab_size = 16384;
  std::size_t embed_dim = 256;
  std::size_t max_seq = 512;
  std::size_t num_agents = 24;
  std::size_t num_heads = 2;
  std::size_t loop_iters = 2;
  double dropout = 0.1;
  LayerKind layer_kind = LayerKind::co4;
  bool tied_output = false;
  bool rms_renorm = true;
  bool final_rms_norm = false;
  std::size_t ffnn_multiplier = 4;  // baseline layer only
  Precision precision = Precision::f32;

  Co4Config co4() const {
    return {num_agents, num_heads, embed_dim, loop_iters, rms_renorm, dropout};
  }
  BaselineConfig baseline() const {
    return {embed_dim, num_heads, ffnn_multiplier, dropout};
  }
  void validate() const {
    if (vocab_size < 5) throw ConfigError("model.vocab_size must be >= 5");
    if (max_seq < 2) throw ConfigError("model.max_seq must be >= 2");
    if (embed_dim % num_heads != 0)
      throw ConfigError("model.embed_dim: num_heads must divide embed_dim");
    if (layer_kind == LayerKind::co4) co4().validate();
    else baseline().validate();
  }
};

// Named, ordered, enumerable parameter collection. Iteration order is the
// insertion order, which init_params keeps fixed; optimizer state and
// checkpoints rely on it.
template <class T>
struct ParamSet {
  std::vector<std::pair<std::string, Array<T>>> items;

  Array<T>& at(const std::string& name) {
    for (auto& [n, a] : items)
      if (n == name) return a;
    throw IndexError("ParamSet: no parameter named " + name);
  }
  const Array<T>& at(const std::string& name) const {
    return const_cast<ParamSet*>(this)->at(name);
  }
  bool has(const std::string& name) const {
    for (auto& [n, a] : items)
      if (n == name) return true;
    return false;
  }
  void add(std::string name, Array<T> a) {
    items.emplace_back(std::move(name), std::move(a));
  }
  std::size_t total_count() const {
    std::size_t s = 0;
    for (auto& [n, a] : items) s += a.size();
    return s;
  }
};

// Embeddings and projections ~ N(0, 0.02^2); latent queries ~ N(0, 1/E).
// Draw order is the parameter order, so a seed pins every value.
template <class T>
ParamSet<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamSet<T> p;
  std::size_t V = cfg.vocab_size, E = cfg.embed_dim;
  p.add("token_embedding", Array<T>::randn({V, E}, rng, 0.02));
  p.add("positional_embedding", Array<T>::randn({cfg.max_seq, E}, rng, 0.02));
  if (cfg.layer_kind == LayerKind::co4) {
    p.add("w_k", Array<T>::randn({E, E}, rng, 0.02));
    p.add("w_v", Array<T>::randn({E, E}, rng, 0.02));
    p.add("latent_q", Array<T>::randn({cfg.num_agents, E}, rng,
                                      1.0 / std::sqrt(double(E))));
  } else {
    p.add("w_q", Array<T>::randn({E, E}, rng, 0.02));
    p.add("w_k", Array<T>::randn({E, E}, rng, 0.02));
    p.add("w_v", Array<T>::randn({E, E}, rng, 0.02));
    p.add("w_o", Array<T>::randn({E, E}, rng, 0.02));
    std::size_t F = cfg.baseline().ffnn_dim();
    p.add("ffn_w1", Array<T>::randn({E, F}, rng, 0.02));
    p.add("ffn_b1", Array<T>::zeros({F}));
    p.add("ffn_w2", Array<T>::randn({F, E}, rng, 0.02));
    p.add("ffn_b2", Array<T>::zeros({E}));
  }
  if (!cfg.tied_output)
    p.add("output_head", Array<T>::randn({E, V}, rng, 0.02));
  return p;
}

inline std::uint64_t param_count(const ModelConfig& cfg) {
  std::uint64_t V = cfg.vocab_size, E = cfg.embed_dim, N = cfg.max_seq;
  std::uint64_t total = V * E + N * E;
  if (cfg.layer_kind == LayerKind::co4) {
    total += 2 * E * E + cfg.num_agents * E;
  } else {
    std::uint64_t F = E * cfg.ffnn_multiplier;
    total += 4 * E * E + E * F + F + F * E + E;
  }
  if (!cfg.tied_output) total += E * V;
  return total;
}

// Parameters bound into a graph as (optionally learnable) leaves.
template <class T>
struct BoundParams {
  std::vector<std::pair<std::string, Tensor<T>>> items;
  Tensor<T> at(const std::string& name) const {
    for (auto& [n, t] : items)
      if (n == name) return t;
    throw IndexError("BoundParams: no parameter named " + name);
  }
};

template <class T>
BoundParams<T> bind_params(Graph<T>& g, const ParamSet<T>& p,
                           bool requires_grad) {
  BoundParams<T> b;
  for (auto& [name, arr] : p.items)
    b.items.emplace_back(name, g.leaf(arr, requires_grad));
  return b;
}

// Per-position hidden states after the single layer. Row n depends only on
// tokens 0..n.
template <class T>
Tensor<T> forward_hidden(Graph<T>& g, const BoundParams<T>& p,
                         const ModelConfig& cfg, const std::vector<int>& tokens,
                         bool training = false, Rng* dropout_rng = nullptr) {
  if (tokens.empty()) throw InputError("forward_hidden: empty token list");
  if (tokens.size() > cfg.max_seq)
    throw InputError("forward_hidden: sequence length " +
                     std::to_string(tokens.size()) + " exceeds max_seq " +
                     std::to_string(cfg.max_seq));
  for (int t : tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size)
      throw IndexError("forward_hidden: token id " + std::to_string(t) +
                       " out of range");
  std::size_t n = tokens.size();
  std::vector<int> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<int>(i);
  Tensor<T> x = add(embedding_lookup(p.at("token_embedding"), tokens),
                    embedding_lookup(p.at("positional_embedding"), positions));
  Tensor<T> h;
  if (cfg.layer_kind == LayerKind::co4) {
    Co4Weights<T> w{p.at("w_k"), p.at("w_v"), p.at("latent_q")};
    h = co4_layer_forward(x, w, cfg.co4(), training, dropout_rng);
  } else {
    BaselineWeights<T> w{p.at("w_q"), p.at("w_k"), p.at("w_v"), p.at("w_o"),
                         p.at("ffn_w1"), p.at("ffn_b1"), p.at("ffn_w2"),
                         p.at("ffn_b2")};
    h = baseline_forward(x, w, cfg.baseline(), training, dropout_rng);
  }
  if (cfg.final_rms_norm)
    h = rms_match(h, g.constant(Array<T>::full(h.shape(), T(1))));
  return h;
}

// Logits over the vocabulary for every position.
template <class T>
Tensor<T> forward_logits(Graph<T>& g, const BoundParams<T>& p,
                         const ModelConfig& cfg, const std::vector<int>& tokens,
                         bool training = false, Rng* dropout_rng = nullptr) {
  Tensor<T> h = forward_hidden(g, p, cfg, tokens, training, dropout_rng);
  if (cfg.tied_output)
    return matmul(h, permute(p.at("token_embedding"), {1, 0}));
  return matmul(h, p.at("output_head"));
}

// Mean CE over unmasked positions; stable log-sum-exp inside.
template <class T>
Tensor<T> ce_loss(Tensor<T> logits, const std::vector<int>& targets,
                  const std::vector<char>& mask) {
  return masked_cross_entropy(logits, targets, mask);
}

// surprisal(t) = -log2 p(token_t | tokens_<t), t >= 1 (position 0 omitted).
template <class T>
std::vector<double> token_surprisals(const ParamSet<T>& params,
                                     const ModelConfig& cfg,
                                     const std::vector<int>& tokens) {
  if (tokens.size() < 2)
    throw InputError("token_surprisals: need at least 2 tokens");
  Graph<T> g;
  g.recording = false;
  BoundParams<T> bound = bind_params(g, params, false);
  Tensor<T> logits = forward_logits(g, bound, cfg, tokens);
  std::size_t v = cfg.vocab_size;
  const auto& lv = logits.value();
  std::vector<double> out;
  const double ln2 = std::log(2.0);
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    const T* row = lv.data() + (t - 1) * v;
    double mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, double(row[j]));
    double s = 0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(double(row[j]) - mx);
    double logp = double(row[tokens[t]]) - mx - std::log(s);
    out.push_back(-logp / ln2);
  }
  return out;
}

}  // namespace co4
