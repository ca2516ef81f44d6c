#pragma once
// AdamW training with the constant/cosine warmup schedules, checkpointing,
// and the grid-search fine-tuning driver.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "co4/model.hpp"
#include "co4/text.hpp"

namespace co4 {

enum class Scheduler { constant, cosine };

inline std::string to_string(Scheduler s) {
  return s == Scheduler::constant ? "constant" : "cosine";
}

struct TrainConfig {
  double lr = 2e-4;
  Scheduler scheduler = Scheduler::constant;
  double warmup_ratio = 0.013;
  std::size_t batch_size = 32;
  std::size_t epochs = 2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;
  double val_fraction = 0.05;

  void validate() const {
    if (lr < 0) throw ConfigError("train.lr must be >= 0");
    if (warmup_ratio < 0 || warmup_ratio >= 1)
      throw ConfigError("train.warmup_ratio must be in [0, 1)");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (val_fraction < 0 || val_fraction >= 0.5)
      throw ConfigError("train.val_fraction must be in [0, 0.5)");
  }
};

// Linear warmup from 0 over ceil(warmup_ratio * total) steps, then either
// constant lr or cosine decay to 0 at total_steps.
inline double lr_at_step(const TrainConfig& tc, std::uint64_t step,
                         std::uint64_t total_steps) {
  if (step > total_steps) throw InputError("lr_at_step: step beyond total_steps");
  std::uint64_t warm = static_cast<std::uint64_t>(
      std::ceil(tc.warmup_ratio * static_cast<double>(total_steps)));
  if (warm > 0 && step < warm)
    return tc.lr * static_cast<double>(step) / static_cast<double>(warm);
  if (tc.scheduler == Scheduler::constant) return tc.lr;
  if (total_steps == warm) return tc.lr;
  double t = static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
  return tc.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

template <class T>
struct OptState {
  std::vector<Array<T>> m, v;  // aligned with ParamSet order
  std::uint64_t step = 0;
};

template <class T>
OptState<T> init_opt_state(const ParamSet<T>& p) {
  OptState<T> s;
  for (auto& [name, a] : p.items) {
    s.m.push_back(Array<T>::zeros(a.shape));
    s.v.push_back(Array<T>::zeros(a.shape));
  }
  return s;
}

// Global-norm gradient clipping followed by one AdamW update with bias
// correction and decoupled weight decay.
template <class T>
void adamw_step(ParamSet<T>& params, std::vector<Array<T>>& grads,
                OptState<T>& state, const TrainConfig& tc, double lr) {
  if (grads.size() != params.items.size())
    throw InputError("adamw_step: gradient/parameter count mismatch");
  if (tc.grad_clip > 0) {
    double sq = 0;
    for (auto& g : grads)
      for (T v : g.data) sq += double(v) * double(v);
    double norm = std::sqrt(sq);
    if (norm > tc.grad_clip) {
      T s = static_cast<T>(tc.grad_clip / norm);
      for (auto& g : grads)
        for (T& v : g.data) v *= s;
    }
  }
  ++state.step;
  double bc1 = 1.0 - std::pow(tc.beta1, double(state.step));
  double bc2 = 1.0 - std::pow(tc.beta2, double(state.step));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& p = params.items[i].second.data;
    auto& g = grads[i].data;
    auto& m = state.m[i].data;
    auto& v = state.v[i].data;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = static_cast<T>(tc.beta1 * m[j] + (1.0 - tc.beta1) * g[j]);
      v[j] = static_cast<T>(tc.beta2 * v[j] + (1.0 - tc.beta2) * double(g[j]) * double(g[j]));
      double mhat = double(m[j]) / bc1;
      double vhat = double(v[j]) / bc2;
      double upd = mhat / (std::sqrt(vhat) + tc.eps) + tc.weight_decay * double(p[j]);
      p[j] = static_cast<T>(double(p[j]) - lr * upd);
    }
  }
}

// ---------------------------------------------------------------------------
// checkpoints
//
// Single little-endian binary file: magic "CO4C", u32 version, config
// snapshot, step, vocab hash, RNG state, then length-prefixed named tensors
// (parameters followed by optimizer moments), each as name/shape/dtype/raw
// payload.

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t step = 0;
  std::uint64_t vocab_hash = 0;
  std::string rng_state;
  bool has_opt = false;
  // exactly one pair is populated, per model.precision
  ParamSet<float> params32;
  ParamSet<double> params64;
  OptState<float> opt32;
  OptState<double> opt64;

  template <class T>
  ParamSet<T>& params();
  template <class T>
  OptState<T>& opt();
  template <class T>
  const ParamSet<T>& params() const {
    return const_cast<Checkpoint*>(this)->params<T>();
  }
};

template <>
inline ParamSet<float>& Checkpoint::params<float>() { return params32; }
template <>
inline ParamSet<double>& Checkpoint::params<double>() { return params64; }
template <>
inline OptState<float>& Checkpoint::opt<float>() { return opt32; }
template <>
inline OptState<double>& Checkpoint::opt<double>() { return opt64; }

namespace ckpt_detail {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
template <class V>
void put(std::ostream& os, V v) { put_bytes(os, &v, sizeof(v)); }
inline void put_str(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  put_bytes(os, s.data(), s.size());
}

inline void get_bytes(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw IoError("checkpoint: truncated file");
}
template <class V>
V get(std::istream& is) {
  V v;
  get_bytes(is, &v, sizeof(v));
  return v;
}
inline std::string get_str(std::istream& is) {
  auto n = get<std::uint32_t>(is);
  std::string s(n, '\0');
  if (n) get_bytes(is, s.data(), n);
  return s;
}

template <class T>
void put_tensor(std::ostream& os, const std::string& name, const Array<T>& a) {
  put_str(os, name);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(a.shape.size()));
  for (auto d : a.shape) put<std::uint64_t>(os, d);
  put<std::uint8_t>(os, static_cast<std::uint8_t>(sizeof(T)));
  put_bytes(os, a.data.data(), a.data.size() * sizeof(T));
}

template <class T>
std::pair<std::string, Array<T>> get_tensor(std::istream& is) {
  std::string name = get_str(is);
  auto nd = get<std::uint32_t>(is);
  Shape shape(nd);
  for (auto& d : shape) d = get<std::uint64_t>(is);
  auto width = get<std::uint8_t>(is);
  if (width != sizeof(T))
    throw IoError("checkpoint: tensor '" + name + "' has element width " +
                  std::to_string(width) + ", expected " +
                  std::to_string(sizeof(T)));
  Array<T> a(shape);
  get_bytes(is, a.data.data(), a.data.size() * sizeof(T));
  return {name, std::move(a)};
}

inline void put_model(std::ostream& os, const ModelConfig& m) {
  put<std::uint64_t>(os, m.vocab_size);
  put<std::uint64_t>(os, m.embed_dim);
  put<std::uint64_t>(os, m.max_seq);
  put<std::uint64_t>(os, m.num_agents);
  put<std::uint64_t>(os, m.num_heads);
  put<std::uint64_t>(os, m.loop_iters);
  put<double>(os, m.dropout);
  put<std::uint8_t>(os, m.layer_kind == LayerKind::co4 ? 0 : 1);
  put<std::uint8_t>(os, m.tied_output);
  put<std::uint8_t>(os, m.rms_renorm);
  put<std::uint8_t>(os, m.final_rms_norm);
  put<std::uint64_t>(os, m.ffnn_multiplier);
  put<std::uint8_t>(os, m.precision == Precision::f32 ? 0 : 1);
}

inline ModelConfig get_model(std::istream& is) {
  ModelConfig m;
  m.vocab_size = get<std::uint64_t>(is);
  m.embed_dim = get<std::uint64_t>(is);
  m.max_seq = get<std::uint64_t>(is);
  m.num_agents = get<std::uint64_t>(is);
  m.num_heads = get<std::uint64_t>(is);
  m.loop_iters = get<std::uint64_t>(is);
  m.dropout = get<double>(is);
  m.layer_kind = get<std::uint8_t>(is) == 0 ? LayerKind::co4 : LayerKind::baseline;
  m.tied_output = get<std::uint8_t>(is);
  m.rms_renorm = get<std::uint8_t>(is);
  m.final_rms_norm = get<std::uint8_t>(is);
  m.ffnn_multiplier = get<std::uint64_t>(is);
  m.precision = get<std::uint8_t>(is) == 0 ? Precision::f32 : Precision::f64;
  return m;
}

inline void put_train(std::ostream& os, const TrainConfig& t) {
  put<double>(os, t.lr);
  put<std::uint8_t>(os, t.scheduler == Scheduler::constant ? 0 : 1);
  put<double>(os, t.warmup_ratio);
  put<std::uint64_t>(os, t.batch_size);
  put<std::uint64_t>(os, t.epochs);
  put<double>(os, t.beta1);
  put<double>(os, t.beta2);
  put<double>(os, t.eps);
  put<double>(os, t.weight_decay);
  put<std::uint64_t>(os, t.seed);
  put<double>(os, t.grad_clip);
  put<double>(os, t.val_fraction);
}

inline TrainConfig get_train(std::istream& is) {
  TrainConfig t;
  t.lr = get<double>(is);
  t.scheduler = get<std::uint8_t>(is) == 0 ? Scheduler::constant : Scheduler::cosine;
  t.warmup_ratio = get<double>(is);
  t.batch_size = get<std::uint64_t>(is);
  t.epochs = get<std::uint64_t>(is);
  t.beta1 = get<double>(is);
  t.beta2 = get<double>(is);
  t.eps = get<double>(is);
  t.weight_decay = get<double>(is);
  t.seed = get<std::uint64_t>(is);
  t.grad_clip = get<double>(is);
  t.val_fraction = get<double>(is);
  return t;
}

template <class T>
void put_body(std::ostream& os, const Checkpoint& c) {
  const ParamSet<T>& p = c.params<T>();
  put<std::uint64_t>(os, p.items.size());
  for (auto& [name, a] : p.items) put_tensor(os, name, a);
  put<std::uint8_t>(os, c.has_opt);
  if (c.has_opt) {
    const OptState<T>& s = const_cast<Checkpoint&>(c).opt<T>();
    put<std::uint64_t>(os, s.step);
    for (std::size_t i = 0; i < p.items.size(); ++i) {
      put_tensor(os, "m:" + p.items[i].first, s.m[i]);
      put_tensor(os, "v:" + p.items[i].first, s.v[i]);
    }
  }
}

template <class T>
void get_body(std::istream& is, Checkpoint& c) {
  ParamSet<T>& p = c.params<T>();
  auto n = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < n; ++i) {
    auto [name, a] = get_tensor<T>(is);
    p.add(name, std::move(a));
  }
  c.has_opt = get<std::uint8_t>(is);
  if (c.has_opt) {
    OptState<T>& s = c.opt<T>();
    s.step = get<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < n; ++i) {
      auto [mn, ma] = get_tensor<T>(is);
      auto [vn, va] = get_tensor<T>(is);
      if (mn != "m:" + p.items[i].first || vn != "v:" + p.items[i].first)
        throw IoError("checkpoint: optimizer tensors out of order");
      s.m.push_back(std::move(ma));
      s.v.push_back(std::move(va));
    }
  }
}

}  // namespace ckpt_detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_checkpoint: cannot open " + path);
  os.write("CO4C", 4);
  ckpt_detail::put<std::uint32_t>(os, kCheckpointVersion);
  ckpt_detail::put_model(os, c.model);
  ckpt_detail::put_train(os, c.train);
  ckpt_detail::put<std::uint64_t>(os, c.step);
  ckpt_detail::put<std::uint64_t>(os, c.vocab_hash);
  ckpt_detail::put_str(os, c.rng_state);
  if (c.model.precision == Precision::f32)
    ckpt_detail::put_body<float>(os, c);
  else
    ckpt_detail::put_body<double>(os, c);
  if (!os) throw IoError("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_checkpoint: cannot open " + path);
  char magic[4];
  ckpt_detail::get_bytes(is, magic, 4);
  if (std::memcmp(magic, "CO4C", 4) != 0)
    throw IoError("load_checkpoint: bad magic in " + path);
  auto version = ckpt_detail::get<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw IoError("load_checkpoint: unsupported version " +
                  std::to_string(version));
  Checkpoint c;
  c.model = ckpt_detail::get_model(is);
  c.train = ckpt_detail::get_train(is);
  c.step = ckpt_detail::get<std::uint64_t>(is);
  c.vocab_hash = ckpt_detail::get<std::uint64_t>(is);
  c.rng_state = ckpt_detail::get_str(is);
  if (c.model.precision == Precision::f32)
    ckpt_detail::get_body<float>(is, c);
  else
    ckpt_detail::get_body<double>(is, c);
  // detect trailing garbage / short reads
  is.peek();
  if (!is.eof()) throw IoError("load_checkpoint: trailing bytes in " + path);
  return c;
}

// ---------------------------------------------------------------------------
// training loop

struct MetricRow {
  std::uint64_t step;
  std::uint64_t epoch;
  std::string split;  // "train" or "val"
  double lr;
  double loss;
};

inline std::string metric_line(const MetricRow& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.step << ',' << r.epoch << ',' << r.split << ',' << r.lr << ',' << r.loss;
  return os.str();
}

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<MetricRow> log;
  std::vector<double> epoch_train_loss;
  std::vector<double> epoch_val_loss;
  bool aborted_on_nan = false;
};

// Mean CE over every unmasked position of an (unshuffled) batch stream,
// eval mode.
template <class T>
double dataset_loss(const ParamSet<T>& params, const ModelConfig& cfg,
                    const std::vector<int>& ids, std::size_t seq_len) {
  BatchStream stream(ids, seq_len, 1, /*seed=*/0);  // order is irrelevant here
  double total = 0;
  std::size_t count = 0;
  for (std::size_t w = 0; w < stream.num_batches(); ++w) {
    Batch b = stream.batch(w);
    for (std::size_t r = 0; r < b.batch_size; ++r) {
      std::vector<int> in(b.input_row(r), b.input_row(r) + b.seq_len);
      std::vector<int> tg(b.target_row(r), b.target_row(r) + b.seq_len);
      std::vector<char> mk(b.mask_row(r), b.mask_row(r) + b.seq_len);
      std::size_t cnt = 0;
      for (char m : mk) cnt += (m != 0);
      if (cnt == 0) continue;
      Graph<T> g;
      g.recording = false;
      auto bound = bind_params(g, params, false);
      auto logits = forward_logits(g, bound, cfg, in);
      auto loss = ce_loss(logits, tg, mk);
      total += double(loss.value()[0]) * double(cnt);
      count += cnt;
    }
  }
  if (count == 0) throw InputError("dataset_loss: no scorable positions");
  return total / double(count);
}

// Epoch loop: forward/CE/backward per window, gradient accumulation across
// the batch, clip, AdamW. Deterministic for a given (seed, config, corpus);
// resuming from an epoch-boundary checkpoint reproduces the unbroken trace.
template <class T>
TrainResult train(const ModelConfig& mcfg, const TrainConfig& tcfg,
                  const std::vector<int>& corpus_ids, std::uint64_t vocab_hash,
                  const Checkpoint* resume = nullptr,
                  std::ostream* log_stream = nullptr) {
  mcfg.validate();
  tcfg.validate();
  if (corpus_ids.size() < 2) throw InputError("train: corpus shorter than 2 tokens");

  std::size_t val_len =
      static_cast<std::size_t>(tcfg.val_fraction * double(corpus_ids.size()));
  std::vector<int> train_ids(corpus_ids.begin(), corpus_ids.end() - val_len);
  std::vector<int> val_ids(corpus_ids.end() - val_len, corpus_ids.end());

  std::size_t seq_len = mcfg.max_seq;
  BatchStream probe(train_ids, seq_len, tcfg.batch_size, tcfg.seed);
  std::uint64_t steps_per_epoch = probe.num_batches();
  std::uint64_t total_steps = steps_per_epoch * tcfg.epochs;

  ParamSet<T> params;
  OptState<T> opt;
  Rng dropout_rng(tcfg.seed + 0x9e3779b97f4a7c15ull);
  std::uint64_t start_step = 0;
  if (resume) {
    if (resume->vocab_hash != vocab_hash)
      throw InputError("train: checkpoint vocab hash does not match corpus vocab");
    params = resume->params<T>();
    opt = const_cast<Checkpoint*>(resume)->opt<T>();
    if (!resume->has_opt) opt = init_opt_state(params);
    dropout_rng.set_state(resume->rng_state);
    start_step = resume->step;
    if (start_step % steps_per_epoch != 0)
      throw InputError("train: can only resume from an epoch boundary");
  } else {
    params = init_params<T>(mcfg, tcfg.seed);
    opt = init_opt_state(params);
  }

  TrainResult res;
  res.aborted_on_nan = false;
  auto snapshot = [&](std::uint64_t step) {
    Checkpoint c;
    c.model = mcfg;
    c.train = tcfg;
    c.step = step;
    c.vocab_hash = vocab_hash;
    c.rng_state = dropout_rng.state();
    c.params<T>() = params;
    c.opt<T>() = opt;
    c.has_opt = true;
    return c;
  };
  Checkpoint last_good = snapshot(start_step);

  auto emit = [&](const MetricRow& r) {
    res.log.push_back(r);
    if (log_stream) *log_stream << metric_line(r) << '\n';
  };

  std::uint64_t step = start_step;
  std::uint64_t first_epoch = start_step / steps_per_epoch;
  for (std::uint64_t epoch = first_epoch; epoch < tcfg.epochs; ++epoch) {
    BatchStream stream(train_ids, seq_len, tcfg.batch_size,
                       tcfg.seed + 1000003ull * epoch);
    double epoch_loss_sum = 0;
    std::size_t epoch_pos = 0;
    for (std::size_t bi = 0; bi < stream.num_batches(); ++bi) {
      Batch b = stream.batch(bi);
      std::vector<Array<T>> grads;
      for (auto& [name, a] : params.items) grads.push_back(Array<T>::zeros(a.shape));
      // first pass: per-row unmasked counts for correct batch weighting
      std::vector<std::size_t> row_cnt(b.batch_size, 0);
      std::size_t batch_cnt = 0;
      for (std::size_t r = 0; r < b.batch_size; ++r) {
        for (std::size_t t = 0; t < b.seq_len; ++t)
          row_cnt[r] += (b.mask_row(r)[t] != 0);
        batch_cnt += row_cnt[r];
      }
      if (batch_cnt == 0) continue;
      double batch_loss = 0;
      bool bad = false;
      for (std::size_t r = 0; r < b.batch_size && !bad; ++r) {
        if (row_cnt[r] == 0) continue;
        std::vector<int> in(b.input_row(r), b.input_row(r) + b.seq_len);
        std::vector<int> tg(b.target_row(r), b.target_row(r) + b.seq_len);
        std::vector<char> mk(b.mask_row(r), b.mask_row(r) + b.seq_len);
        try {
          Graph<T> g;
          auto bound = bind_params(g, params, true);
          auto logits = forward_logits(g, bound, mcfg, in, true, &dropout_rng);
          auto loss = ce_loss(logits, tg, mk);
          double lv = double(loss.value()[0]);
          if (!std::isfinite(lv)) { bad = true; break; }
          batch_loss += lv * double(row_cnt[r]);
          g.backward(loss);
          T w = static_cast<T>(double(row_cnt[r]) / double(batch_cnt));
          for (std::size_t pi = 0; pi < grads.size(); ++pi) {
            const auto& pg = bound.items[pi].second.grad();
            for (std::size_t j = 0; j < pg.size(); ++j)
              grads[pi].data[j] += w * pg[j];
          }
        } catch (const NumericError&) {
          bad = true;
        }
      }
      if (bad) {
        res.aborted_on_nan = true;
        res.checkpoint = last_good;
        return res;
      }
      double lr = lr_at_step(tcfg, step, total_steps);
      adamw_step(params, grads, opt, tcfg, lr);
      ++step;
      double mean_loss = batch_loss / double(batch_cnt);
      epoch_loss_sum += batch_loss;
      epoch_pos += batch_cnt;
      emit({step, epoch, "train", lr, mean_loss});
    }
    res.epoch_train_loss.push_back(epoch_loss_sum / double(epoch_pos));
    if (!val_ids.empty() && val_ids.size() >= 2) {
      double vl = dataset_loss(params, mcfg, val_ids, seq_len);
      res.epoch_val_loss.push_back(vl);
      emit({step, epoch, "val", lr_at_step(tcfg, step, total_steps), vl});
    }
    last_good = snapshot(step);
  }
  res.checkpoint = last_good;
  return res;
}

// ---------------------------------------------------------------------------
// fine-tuning grid search (binary classification head over mean-pooled
// hidden states)

struct LabeledExample {
  std::string text;
  int label = 0;  // {0, 1}
};

struct FinetuneGrid {
  std::vector<std::size_t> epochs = {3, 5, 10};
  std::vector<double> lrs = {3e-5, 5e-5, 1e-4, 2e-4, 3e-4};
  std::vector<std::size_t> batch_sizes = {16, 32, 64};
};

// Expanded search used for WSC-style low-data tasks.
inline FinetuneGrid wsc_grid() {
  FinetuneGrid g;
  g.epochs = {3, 5, 10, 15, 20, 25, 30, 100};
  g.lrs = {3e-5, 5e-5, 7e-5, 1e-4, 2e-4, 3e-4, 5e-4};
  return g;
}

struct FinetuneCell {
  std::size_t epochs;
  double lr;
  std::size_t batch_size;
  double accuracy = 0;
  double f1 = 0;
};

struct FinetuneReport {
  std::vector<FinetuneCell> cells;
  std::size_t best = 0;
  bool select_by_f1 = false;
};

template <class T>
FinetuneReport finetune_classify(const Checkpoint& ckpt, const Vocab& vocab,
                                 const std::vector<LabeledExample>& data,
                                 const FinetuneGrid& grid,
                                 bool select_by_f1 = false,
                                 std::uint64_t seed = 0) {
  if (data.empty()) throw InputError("finetune_classify: no labeled data");
  if (ckpt.vocab_hash != vocab.hash())
    throw InputError("finetune_classify: vocab does not match checkpoint");
  const ModelConfig& mcfg = ckpt.model;
  // deterministic 80/20 split
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle_rng(seed);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);
  std::size_t n_val = std::max<std::size_t>(1, data.size() / 5);
  if (n_val >= data.size()) n_val = data.size() - 1;

  auto encode_one = [&](const std::string& text) {
    std::vector<int> ids = vocab.encode(text);
    if (ids.empty()) ids.push_back(Vocab::kBos);
    if (ids.size() > mcfg.max_seq) ids.resize(mcfg.max_seq);
    return ids;
  };

  auto forward_class = [&](Graph<T>& g, const BoundParams<T>& bound,
                           Tensor<T> head, const std::vector<int>& ids,
                           bool training, Rng* drop) {
    Tensor<T> h = forward_hidden(g, bound, mcfg, ids, training, drop);
    Tensor<T> pooled = mean_axis(h, 0, true);   // (1, E)
    return matmul(pooled, head);                // (1, 2)
  };

  FinetuneReport report;
  report.select_by_f1 = select_by_f1;
  for (std::size_t ep : grid.epochs)
    for (double lr : grid.lrs)
      for (std::size_t bs : grid.batch_sizes) {
        ParamSet<T> params = ckpt.params<T>();
        Rng init_rng(seed + 17);
        params.add("class_head",
                   Array<T>::randn({mcfg.embed_dim, 2}, init_rng, 0.02));
        OptState<T> opt = init_opt_state(params);
        TrainConfig tc;
        tc.lr = lr;
        tc.scheduler = Scheduler::constant;
        tc.warmup_ratio = 0;
        tc.weight_decay = 0.01;
        tc.grad_clip = 1.0;
        Rng drop_rng(seed + 29);
        std::size_t n_train = data.size() - n_val;
        std::uint64_t total = (std::uint64_t(n_train) + bs - 1) / bs * ep;
        std::uint64_t step = 0;
        for (std::size_t e = 0; e < ep; ++e) {
          for (std::size_t lo = 0; lo < n_train; lo += bs) {
            std::size_t hi = std::min(lo + bs, n_train);
            std::vector<Array<T>> grads;
            for (auto& [name, a] : params.items)
              grads.push_back(Array<T>::zeros(a.shape));
            for (std::size_t i = lo; i < hi; ++i) {
              const LabeledExample& ex = data[order[n_val + i]];
              Graph<T> g;
              auto bound = bind_params(g, params, true);
              auto logits = forward_class(g, bound, bound.at("class_head"),
                                          encode_one(ex.text), true, &drop_rng);
              auto loss = masked_cross_entropy(logits, {ex.label}, {1});
              g.backward(loss);
              T w = static_cast<T>(1.0 / double(hi - lo));
              for (std::size_t pi = 0; pi < grads.size(); ++pi) {
                const auto& pg = bound.items[pi].second.grad();
                for (std::size_t j = 0; j < pg.size(); ++j)
                  grads[pi].data[j] += w * pg[j];
              }
            }
            adamw_step(params, grads, opt, tc, lr_at_step(tc, step, total));
            ++step;
          }
        }
        // validation metrics
        std::size_t tp = 0, fp = 0, fn = 0, correct = 0;
        for (std::size_t i = 0; i < n_val; ++i) {
          const LabeledExample& ex = data[order[i]];
          Graph<T> g;
          g.recording = false;
          auto bound = bind_params(g, params, false);
          auto logits = forward_class(g, bound, bound.at("class_head"),
                                      encode_one(ex.text), false, nullptr);
          int pred = logits.value()[1] > logits.value()[0] ? 1 : 0;
          correct += (pred == ex.label);
          if (pred == 1 && ex.label == 1) ++tp;
          if (pred == 1 && ex.label == 0) ++fp;
          if (pred == 0 && ex.label == 1) ++fn;
        }
        FinetuneCell cell{ep, lr, bs, double(correct) / double(n_val), 0.0};
        cell.f1 = (2 * tp + fp + fn) ? 2.0 * tp / double(2 * tp + fp + fn) : 0.0;
        report.cells.push_back(cell);
      }
  // select by validation metric; ties -> smaller lr, then fewer epochs
  auto metric = [&](const FinetuneCell& c) {
    return select_by_f1 ? c.f1 : c.accuracy;
  };
  report.best = 0;
  for (std::size_t i = 1; i < report.cells.size(); ++i) {
    const auto& a = report.cells[i];
    const auto& b = report.cells[report.best];
    if (metric(a) > metric(b) ||
        (metric(a) == metric(b) &&
         (a.lr < b.lr || (a.lr == b.lr && a.epochs < b.epochs))))
      report.best = i;
  }
  return report;
}

}  // namespace co4
