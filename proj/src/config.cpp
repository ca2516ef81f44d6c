#include "co4/config.hpp"

#include <cstdlib>
#include <functional>
#include <sstream>

namespace co4 {
namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long long x = std::stoll(v, &pos);
    if (pos != v.size() || x < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(x);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& key,
                                         const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key,
                                  const std::string& value)>;

struct KeyEntry {
  const char* key;
  Setter set;
  std::function<std::string(const RunConfig&)> get;
};

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string fmt_sizes(const std::vector<std::size_t>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

const std::vector<KeyEntry>& key_table() {
  static const std::vector<KeyEntry> table = {
      {"model.vocab_size",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.vocab_size = parse_size(k, v); },
       [](const RunConfig& c) { return std::to_string(c.model.vocab_size); }},
      {"model.embed_dim",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.embed_dim = parse_size(k, v); },
       [](const RunConfig& c) { return std::to_string(c.model.embed_dim); }},
      {"model.max_seq",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.max_seq = parse_size(k, v); },
       [](const RunConfig& c) { return std::to_string(c.model.max_seq); }},
      {"model.num_agents",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.num_agents = parse_size(k, v); },
       [](const RunConfig& c) { return std::to_string(c.model.num_agents); }},
      {"model.num_heads",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.num_heads = parse_size(k, v); },
       [](const RunConfig& c) { return std::to_string(c.model.num_heads); }},
      {"model.loop_iters",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.loop_iters = parse_size(k, v); },
       [](const RunConfig& c) { return std::to_string(c.model.loop_iters); }},
      {"model.dropout",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.dropout = parse_double(k, v); },
       [](const RunConfig& c) { return fmt_double(c.model.dropout); }},
      {"model.layer_kind",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "co4") c.model.layer_kind = LayerKind::co4;
         else if (v == "baseline") c.model.layer_kind = LayerKind::baseline;
         else throw ConfigError(k + ": expected co4|baseline, got '" + v + "'");
       },
       [](const RunConfig& c) { return to_string(c.model.layer_kind); }},
      {"model.tied_output",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.tied_output = parse_bool(k, v); },
       [](const RunConfig& c) { return c.model.tied_output ? "true" : "false"; }},
      {"model.rms_renorm",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.rms_renorm = parse_bool(k, v); },
       [](const RunConfig& c) { return c.model.rms_renorm ? "true" : "false"; }},
      {"model.final_rms_norm",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.final_rms_norm = parse_bool(k, v); },
       [](const RunConfig& c) { return c.model.final_rms_norm ? "true" : "false"; }},
      {"model.ffnn_multiplier",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.ffnn_multiplier = parse_size(k, v); },
       [](const RunConfig& c) { return std::to_string(c.model.ffnn_multiplier); }},
      {"model.precision",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "f32") c.model.precision = Precision::f32;
         else if (v == "f64") c.model.precision = Precision::f64;
         else throw ConfigError(k + ": expected f32|f64, got '" + v + "'");
       },
       [](const RunConfig& c) { return to_string(c.model.precision); }},
      {"train.lr",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lr = parse_double(k, v); },
       [](const RunConfig& c) { return fmt_double(c.train.lr); }},
      {"train.scheduler",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "constant") c.train.scheduler = Scheduler::constant;
         else if (v == "cosine") c.train.scheduler = Scheduler::cosine;
         else throw ConfigError(k + ": expected constant|cosine, got '" + v + "'");
       },
       [](const RunConfig& c) { return to_string(c.train.scheduler); }},
      {"train.warmup_ratio",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.warmup_ratio = parse_double(k, v); },
       [](const RunConfig& c) { return fmt_double(c.train.warmup_ratio); }},
      {"train.batch_size",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.batch_size = parse_size(k, v); },
       [](const RunConfig& c) { return std::to_string(c.train.batch_size); }},
      {"train.epochs",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.epochs = parse_size(k, v); },
       [](const RunConfig& c) { return std::to_string(c.train.epochs); }},
      {"train.beta1",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.beta1 = parse_double(k, v); },
       [](const RunConfig& c) { return fmt_double(c.train.beta1); }},
      {"train.beta2",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.beta2 = parse_double(k, v); },
       [](const RunConfig& c) { return fmt_double(c.train.beta2); }},
      {"train.eps",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.eps = parse_double(k, v); },
       [](const RunConfig& c) { return fmt_double(c.train.eps); }},
      {"train.weight_decay",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.weight_decay = parse_double(k, v); },
       [](const RunConfig& c) { return fmt_double(c.train.weight_decay); }},
      {"train.seed",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = parse_size(k, v); },
       [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      {"train.grad_clip",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.grad_clip = parse_double(k, v); },
       [](const RunConfig& c) { return fmt_double(c.train.grad_clip); }},
      {"train.val_fraction",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.val_fraction = parse_double(k, v); },
       [](const RunConfig& c) { return fmt_double(c.train.val_fraction); }},
      {"bench.embed_dim",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.bench.embed_dim = parse_size(k, v); },
       [](const RunConfig& c) { return std::to_string(c.bench.embed_dim); }},
      {"bench.num_agents",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.bench.num_agents = parse_size(k, v); },
       [](const RunConfig& c) { return std::to_string(c.bench.num_agents); }},
      {"bench.num_heads",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.bench.num_heads = parse_size(k, v); },
       [](const RunConfig& c) { return std::to_string(c.bench.num_heads); }},
      {"bench.loop_iters",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.bench.loop_iters = parse_size(k, v); },
       [](const RunConfig& c) { return std::to_string(c.bench.loop_iters); }},
      {"bench.ffnn_multiplier",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.bench.ffnn_multiplier = parse_size(k, v); },
       [](const RunConfig& c) { return std::to_string(c.bench.ffnn_multiplier); }},
      {"bench.ns",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.bench.ns = parse_size_list(k, v); },
       [](const RunConfig& c) { return fmt_sizes(c.bench.ns); }},
      {"bench.repeats",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.bench.repeats = parse_size(k, v); },
       [](const RunConfig& c) { return std::to_string(c.bench.repeats); }},
      {"bench.warmup",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.bench.warmup = parse_size(k, v); },
       [](const RunConfig& c) { return std::to_string(c.bench.warmup); }},
      {"bench.seed",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.bench.seed = parse_size(k, v); },
       [](const RunConfig& c) { return std::to_string(c.bench.seed); }},
      {"paths.corpus",
       [](RunConfig& c, const std::string&, const std::string& v) { c.paths.corpus = v; },
       [](const RunConfig& c) { return c.paths.corpus; }},
      {"paths.vocab",
       [](RunConfig& c, const std::string&, const std::string& v) { c.paths.vocab = v; },
       [](const RunConfig& c) { return c.paths.vocab; }},
      {"paths.checkpoint",
       [](RunConfig& c, const std::string&, const std::string& v) { c.paths.checkpoint = v; },
       [](const RunConfig& c) { return c.paths.checkpoint; }},
      {"paths.pairs",
       [](RunConfig& c, const std::string&, const std::string& v) { c.paths.pairs = v; },
       [](const RunConfig& c) { return c.paths.pairs; }},
      {"paths.output_dir",
       [](RunConfig& c, const std::string&, const std::string& v) { c.paths.output_dir = v; },
       [](const RunConfig& c) { return c.paths.output_dir; }},
  };
  return table;
}

void apply_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const KeyEntry& e : key_table())
    if (key == e.key) {
      e.set(cfg, key, value);
      return;
    }
  throw ConfigError("unknown configuration key '" + key + "'");
}

struct Kv {
  std::string key, value;
};

std::vector<Kv> parse_lines(const std::string& text) {
  std::vector<Kv> out;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected 'key = value', got '" + line + "'");
    out.push_back({trim(line.substr(0, eq)), trim(line.substr(eq + 1))});
  }
  return out;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  bench.validate();
}

RunConfig make_preset(const std::string& name) {
  RunConfig cfg;
  cfg.preset = name;
  if (name.empty()) return cfg;
  // Model defaults already carry the shared architecture (V=16384, E=256,
  // N=512, L=24, H=2, T=2, dropout 0.1); the presets differ in the layer
  // kind and the optimization recipe.
  if (name == "co4-alpha") {
    cfg.train.batch_size = 32;
    cfg.train.lr = 2e-4;
    cfg.train.scheduler = Scheduler::constant;
    cfg.train.warmup_ratio = 0.013;
  } else if (name == "co4-beta") {
    cfg.train.batch_size = 64;
    cfg.train.lr = 1e-5;
    cfg.train.scheduler = Scheduler::constant;
    cfg.train.warmup_ratio = 0.014;
  } else if (name == "co4-gamma") {
    cfg.train.batch_size = 32;
    cfg.train.lr = 2e-4;
    cfg.train.scheduler = Scheduler::cosine;
    cfg.train.warmup_ratio = 0.01;
  } else if (name == "baseline") {
    cfg.model.layer_kind = LayerKind::baseline;
    cfg.train.batch_size = 32;
    cfg.train.lr = 2e-4;
    cfg.train.scheduler = Scheduler::constant;
    cfg.train.warmup_ratio = 0.013;
  } else {
    throw ConfigError("unknown preset '" + name +
                      "' (expected co4-alpha, co4-beta, co4-gamma or baseline)");
  }
  return cfg;
}

RunConfig parse_config(const std::string& text,
                       const std::vector<std::string>& overrides) {
  std::vector<Kv> file_kvs = parse_lines(text);
  std::vector<Kv> cli_kvs;
  for (const std::string& o : overrides) {
    std::size_t eq = o.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override '" + o + "': expected key=value");
    cli_kvs.push_back({trim(o.substr(0, eq)), trim(o.substr(eq + 1))});
  }
  // preset first, command line beating the file
  std::string preset;
  for (const Kv& kv : file_kvs)
    if (kv.key == "preset") preset = kv.value;
  for (const Kv& kv : cli_kvs)
    if (kv.key == "preset") preset = kv.value;
  RunConfig cfg = make_preset(preset);
  for (const Kv& kv : file_kvs)
    if (kv.key != "preset") apply_kv(cfg, kv.key, kv.value);
  for (const Kv& kv : cli_kvs)
    if (kv.key != "preset") apply_kv(cfg, kv.key, kv.value);
  if (cfg.paths.output_dir.empty()) {
    const char* env = std::getenv("CO4_OUTPUT_DIR");
    if (env) cfg.paths.output_dir = env;
  }
  cfg.validate();
  return cfg;
}

std::string resolved_config_text(const RunConfig& cfg) {
  std::ostringstream os;
  os << "preset = " << cfg.preset << '\n';
  for (const KeyEntry& e : key_table())
    os << e.key << " = " << e.get(cfg) << '\n';
  return os.str();
}

}  // namespace co4
