#pragma once
// Perplexity, sentence log-probability scoring, and minimal-pair accuracy.

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "co4/trainer.hpp"

namespace co4 {

struct MinimalPair {
  std::string good;
  std::string bad;
  std::string tag;  // optional phenomenon label
};

inline void validate_pair(const MinimalPair& p) {
  if (p.good.empty() || p.bad.empty())
    throw InputError("minimal pair: both sentences must be non-empty");
  if (p.good == p.bad)
    throw InputError("minimal pair: sentences must be distinct");
}

// One pair per line: good<TAB>bad[<TAB>tag].
inline std::vector<MinimalPair> load_pairs(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("load_pairs: cannot open " + path);
  std::vector<MinimalPair> pairs;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::size_t t1 = line.find('\t');
    if (t1 == std::string::npos)
      throw InputError("load_pairs: line without a tab separator: " + line);
    std::size_t t2 = line.find('\t', t1 + 1);
    MinimalPair p;
    p.good = line.substr(0, t1);
    if (t2 == std::string::npos) {
      p.bad = line.substr(t1 + 1);
    } else {
      p.bad = line.substr(t1 + 1, t2 - t1 - 1);
      p.tag = line.substr(t2 + 1);
    }
    validate_pair(p);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

namespace eval_detail {

inline void check_vocab(const Checkpoint& ckpt, const Vocab& vocab) {
  if (ckpt.vocab_hash != 0 && ckpt.vocab_hash != vocab.hash())
    throw InputError("eval: vocabulary does not match the checkpoint");
  if (vocab.size() > ckpt.model.vocab_size)
    throw InputError("eval: vocabulary larger than the model's embedding table");
}

template <class T>
double perplexity_t(const Checkpoint& ckpt, const std::vector<int>& ids) {
  return std::exp(dataset_loss(ckpt.params<T>(), ckpt.model, ids,
                               ckpt.model.max_seq));
}

// Total natural-log probability of the sentence given a prepended <bos>;
// optionally averaged per scored token.
template <class T>
double score_t(const Checkpoint& ckpt, std::vector<int> ids, bool normalize) {
  ids.insert(ids.begin(), Vocab::kBos);
  if (ids.size() > ckpt.model.max_seq) ids.resize(ckpt.model.max_seq);
  std::vector<double> sur =
      token_surprisals(ckpt.params<T>(), ckpt.model, ids);
  double total = 0;
  for (double s : sur) total += s;
  double lnp = -total * std::log(2.0);  // surprisal is -log2 p
  return normalize ? lnp / double(sur.size()) : lnp;
}

}  // namespace eval_detail

// exp(mean token NLL) over non-overlapping windows of the model's max_seq.
inline double perplexity(const Checkpoint& ckpt, const Vocab& vocab,
                         const std::string& text) {
  eval_detail::check_vocab(ckpt, vocab);
  std::vector<int> ids = vocab.encode(text);
  if (ids.size() < 2)
    throw InputError("perplexity: text encodes to fewer than 2 tokens");
  return ckpt.model.precision == Precision::f32
             ? eval_detail::perplexity_t<float>(ckpt, ids)
             : eval_detail::perplexity_t<double>(ckpt, ids);
}

inline double score_sentence(const Checkpoint& ckpt, const Vocab& vocab,
                             const std::string& text, bool normalize = false) {
  eval_detail::check_vocab(ckpt, vocab);
  std::vector<int> ids = vocab.encode(text);
  if (ids.empty())
    throw InputError("score_sentence: text encodes to no tokens");
  return ckpt.model.precision == Precision::f32
             ? eval_detail::score_t<float>(ckpt, ids, normalize)
             : eval_detail::score_t<double>(ckpt, ids, normalize);
}

struct PairRecord {
  std::string tag;
  double score_good = 0;
  double score_bad = 0;
  double correct = 0;  // 1, 0.5 on an exact tie, or 0
};

struct PairResult {
  double accuracy = 0;
  std::size_t ties = 0;
  std::vector<PairRecord> records;
};

// Pair is correct iff score(good) > score(bad); exact ties contribute 0.5.
inline PairResult minimal_pair_accuracy(const Checkpoint& ckpt,
                                        const Vocab& vocab,
                                        const std::vector<MinimalPair>& pairs,
                                        bool normalize = false) {
  if (pairs.empty()) throw InputError("minimal_pair_accuracy: no pairs");
  PairResult res;
  double sum = 0;
  for (const MinimalPair& p : pairs) {
    validate_pair(p);
    PairRecord r;
    r.tag = p.tag;
    r.score_good = score_sentence(ckpt, vocab, p.good, normalize);
    r.score_bad = score_sentence(ckpt, vocab, p.bad, normalize);
    if (r.score_good > r.score_bad) r.correct = 1.0;
    else if (r.score_good == r.score_bad) { r.correct = 0.5; ++res.ties; }
    sum += r.correct;
    res.records.push_back(std::move(r));
  }
  res.accuracy = sum / double(pairs.size());
  return res;
}

// Per-pair CSV plus a trailing summary line.
inline std::string pair_csv(const PairResult& res) {
  std::ostringstream os;
  os.precision(17);
  os << "tag,score_good,score_bad,correct\n";
  for (const PairRecord& r : res.records)
    os << r.tag << ',' << r.score_good << ',' << r.score_bad << ','
       << r.correct << '\n';
  os << "# accuracy," << res.accuracy << ",pairs," << res.records.size()
     << ",ties," << res.ties << '\n';
  return os.str();
}

}  // namespace co4
