// co4 <subcommand> --config <file> [--set key=value ...] [--seed n]
//
// Subcommands: train, eval, score-pairs, bench, finetune. Exit codes:
// 0 success, 1 usage/config error, 2 runtime error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "co4/config.hpp"
#include "co4/eval.hpp"
#include "co4/synthetic.hpp"

namespace fs = std::filesystem;
using namespace co4;

namespace {

struct Cli {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

RunConfig load_run_config(const Cli& cli) {
  std::string text;
  if (!cli.config_file.empty()) text = read_text_file(cli.config_file);
  RunConfig cfg = parse_config(text, cli.sets);
  if (cli.seed) cfg.train.seed = *cli.seed;
  return cfg;
}

fs::path out_dir(const RunConfig& cfg) {
  fs::path dir = cfg.paths.output_dir.empty() ? "." : cfg.paths.output_dir;
  fs::create_directories(dir);
  return dir;
}

void echo_config(const RunConfig& cfg, const fs::path& dir) {
  write_text_file((dir / "config.resolved.txt").string(),
                  resolved_config_text(cfg));
}

// Loads paths.vocab when present, otherwise builds one from the corpus and
// saves it under the output dir.
Vocab get_vocab(const RunConfig& cfg, const std::string& corpus,
                const fs::path& dir) {
  if (!cfg.paths.vocab.empty() && fs::exists(cfg.paths.vocab))
    return Vocab::load(cfg.paths.vocab);
  Vocab v = Vocab::build(corpus, cfg.model.vocab_size);
  v.save((dir / "vocab.txt").string());
  return v;
}

template <class T>
int run_train_t(const RunConfig& cfg, const fs::path& dir) {
  std::string corpus = read_text_file(cfg.paths.corpus);
  Vocab vocab = get_vocab(cfg, corpus, dir);
  std::vector<int> ids = vocab.encode(corpus);

  std::optional<Checkpoint> resume;
  if (!cfg.paths.checkpoint.empty() && fs::exists(cfg.paths.checkpoint)) {
    resume = load_checkpoint(cfg.paths.checkpoint);
    std::cout << "resuming from " << cfg.paths.checkpoint << " at step "
              << resume->step << "\n";
  }

  std::ofstream metrics(dir / "metrics.csv");
  metrics << "step,epoch,split,lr,loss\n";
  TrainResult res = train<T>(cfg.model, cfg.train, ids, vocab.hash(),
                             resume ? &*resume : nullptr, &metrics);
  std::string ckpt_path = cfg.paths.checkpoint.empty()
                              ? (dir / "checkpoint.bin").string()
                              : cfg.paths.checkpoint;
  save_checkpoint(res.checkpoint, ckpt_path);
  for (std::size_t e = 0; e < res.epoch_train_loss.size(); ++e) {
    std::cout << "epoch " << e << ": train loss " << res.epoch_train_loss[e];
    if (e < res.epoch_val_loss.size())
      std::cout << ", val loss " << res.epoch_val_loss[e];
    std::cout << "\n";
  }
  if (res.aborted_on_nan) {
    std::cerr << "training aborted on a non-finite loss; last good checkpoint "
              << "written to " << ckpt_path << "\n";
    return 2;
  }
  std::cout << "checkpoint written to " << ckpt_path << "\n";
  return 0;
}

int run_train(const RunConfig& cfg) {
  if (cfg.paths.corpus.empty())
    throw ConfigError("train: paths.corpus is required");
  fs::path dir = out_dir(cfg);
  echo_config(cfg, dir);
  return cfg.model.precision == Precision::f32 ? run_train_t<float>(cfg, dir)
                                               : run_train_t<double>(cfg, dir);
}

int run_eval(const RunConfig& cfg) {
  if (cfg.paths.checkpoint.empty() || cfg.paths.vocab.empty() ||
      cfg.paths.corpus.empty())
    throw ConfigError(
        "eval: paths.checkpoint, paths.vocab and paths.corpus are required");
  fs::path dir = out_dir(cfg);
  echo_config(cfg, dir);
  Checkpoint ckpt = load_checkpoint(cfg.paths.checkpoint);
  Vocab vocab = Vocab::load(cfg.paths.vocab);
  double ppl = perplexity(ckpt, vocab, read_text_file(cfg.paths.corpus));
  std::cout << "perplexity " << ppl << "\n";
  return 0;
}

int run_score_pairs(const RunConfig& cfg) {
  if (cfg.paths.checkpoint.empty() || cfg.paths.vocab.empty() ||
      cfg.paths.pairs.empty())
    throw ConfigError(
        "score-pairs: paths.checkpoint, paths.vocab and paths.pairs are "
        "required");
  fs::path dir = out_dir(cfg);
  echo_config(cfg, dir);
  Checkpoint ckpt = load_checkpoint(cfg.paths.checkpoint);
  Vocab vocab = Vocab::load(cfg.paths.vocab);
  PairResult res =
      minimal_pair_accuracy(ckpt, vocab, load_pairs(cfg.paths.pairs));
  write_text_file((dir / "pairs.csv").string(), pair_csv(res));
  std::cout << "accuracy " << res.accuracy << " over " << res.records.size()
            << " pairs (" << res.ties << " ties)\n";
  return 0;
}

int run_bench(const RunConfig& cfg) {
  fs::path dir = out_dir(cfg);
  echo_config(cfg, dir);
  auto rows = run_scaling(cfg.bench);
  FitReport rep = fit_complexity(rows);
  write_text_file((dir / "scaling.csv").string(), scaling_csv(rows));
  write_text_file((dir / "fit.txt").string(), fit_text(rep));
  std::cout << fit_text(rep);
  return 0;
}

// Labeled examples: one per line, `label<TAB>text` with label 0 or 1.
std::vector<LabeledExample> load_labeled(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("finetune: cannot open " + path);
  std::vector<LabeledExample> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw InputError("finetune: line without a tab separator: " + line);
    std::string label = line.substr(0, tab);
    if (label != "0" && label != "1")
      throw InputError("finetune: label must be 0 or 1, got '" + label + "'");
    out.push_back({line.substr(tab + 1), label == "1" ? 1 : 0});
  }
  return out;
}

template <class T>
int run_finetune_t(const RunConfig& cfg, const fs::path& dir) {
  Checkpoint ckpt = load_checkpoint(cfg.paths.checkpoint);
  Vocab vocab = Vocab::load(cfg.paths.vocab);
  auto data = load_labeled(cfg.paths.pairs);
  FinetuneReport rep = finetune_classify<T>(ckpt, vocab, data, FinetuneGrid{},
                                            false, cfg.train.seed);
  std::ostringstream os;
  os << "epochs,lr,batch_size,accuracy,f1\n";
  for (const FinetuneCell& c : rep.cells)
    os << c.epochs << ',' << c.lr << ',' << c.batch_size << ',' << c.accuracy
       << ',' << c.f1 << '\n';
  write_text_file((dir / "finetune.csv").string(), os.str());
  const FinetuneCell& best = rep.cells[rep.best];
  std::cout << "best: epochs " << best.epochs << ", lr " << best.lr
            << ", batch " << best.batch_size << ", accuracy " << best.accuracy
            << ", f1 " << best.f1 << "\n";
  return 0;
}

int run_finetune(const RunConfig& cfg) {
  if (cfg.paths.checkpoint.empty() || cfg.paths.vocab.empty() ||
      cfg.paths.pairs.empty())
    throw ConfigError(
        "finetune: paths.checkpoint, paths.vocab and paths.pairs (labeled "
        "examples) are required");
  fs::path dir = out_dir(cfg);
  echo_config(cfg, dir);
  return cfg.model.precision == Precision::f32
             ? run_finetune_t<float>(cfg, dir)
             : run_finetune_t<double>(cfg, dir);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-layer Co4 language model toolkit"};
  app.require_subcommand(1);

  Cli cli;
  int (*action)(const RunConfig&) = nullptr;
  auto add_sub = [&](const char* name, const char* desc,
                     int (*fn)(const RunConfig&)) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", cli.config_file, "config file path");
    sub->add_option("--set", cli.sets, "key=value override (repeatable)");
    sub->add_option("--seed", cli.seed, "training seed override");
    sub->callback([&action, fn]() { action = fn; });
    return sub;
  };
  add_sub("train", "train a model on a text corpus", run_train);
  add_sub("eval", "perplexity of a checkpoint on a corpus", run_eval);
  add_sub("score-pairs", "minimal-pair zero-shot accuracy", run_score_pairs);
  add_sub("bench", "linear-vs-quadratic scaling benchmark", run_bench);
  add_sub("finetune", "grid-search binary classification head", run_finetune);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    return action(load_run_config(cli));
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
