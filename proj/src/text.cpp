#include "co4/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace co4 {

namespace {
const char* kSpecials[4] = {"<pad>", "<unk>", "<bos>", "<eos>"};

bool is_word_char(unsigned char c) {
  return std::isalnum(c) || c == '_' || c == '\'' || c >= 0x80;
}
}  // namespace

std::vector<std::string> Vocab::tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    } else if (is_word_char(c)) {
      cur.push_back(static_cast<char>(c));
    } else {
      // punctuation becomes its own token
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
      out.push_back(std::string(1, static_cast<char>(c)));
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

Vocab Vocab::build(const std::string& corpus, std::size_t max_vocab) {
  auto tokens = tokenize(corpus);
  if (tokens.empty()) throw InputError("Vocab::build: empty corpus");
  if (max_vocab < 5) throw InputError("Vocab::build: max_vocab must be >= 5");
  std::unordered_map<std::string, std::size_t> freq;
  for (const auto& t : tokens) ++freq[t];
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > max_vocab - 4) ranked.resize(max_vocab - 4);

  Vocab v;
  for (const char* s : kSpecials) v.id_to_token_.push_back(s);
  for (const auto& [tok, cnt] : ranked) {
    (void)cnt;
    v.token_to_id_[tok] = static_cast<int>(v.id_to_token_.size());
    v.id_to_token_.push_back(tok);
  }
  return v;
}

int Vocab::token_id(const std::string& tok) const {
  auto it = token_to_id_.find(tok);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
    throw IndexError("Vocab::token: id " + std::to_string(id) +
                     " out of range [0," + std::to_string(id_to_token_.size()) + ")");
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& t : tokenize(text)) ids.push_back(token_id(t));
  return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < id_to_token_.size(); ++i)
    h = fnv1a(id_to_token_[i] + "\t" + std::to_string(i) + "\n", h);
  return h;
}

void Vocab::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("Vocab::save: cannot open " + path);
  for (std::size_t i = 0; i < id_to_token_.size(); ++i)
    os << id_to_token_[i] << '\t' << i << '\n';
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("Vocab::load: cannot open " + path);
  Vocab v;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw IoError("Vocab::load: malformed line in " + path);
    std::string tok = line.substr(0, tab);
    int id = std::stoi(line.substr(tab + 1));
    if (static_cast<std::size_t>(id) != v.id_to_token_.size())
      throw IoError("Vocab::load: non-contiguous ids in " + path);
    if (id >= 4) v.token_to_id_[tok] = id;
    v.id_to_token_.push_back(tok);
  }
  if (v.id_to_token_.size() < 4) throw IoError("Vocab::load: truncated " + path);
  return v;
}

BatchStream::BatchStream(const std::vector<int>& ids, std::size_t seq_len,
                         std::size_t batch_size, std::uint64_t seed)
    : ids_(ids), seq_len_(seq_len), batch_size_(batch_size) {
  if (seq_len < 2) throw InputError("BatchStream: seq_len must be >= 2");
  if (batch_size < 1) throw InputError("BatchStream: batch_size must be >= 1");
  if (ids_.size() < 2) throw InputError("BatchStream: corpus shorter than 2 tokens");
  num_windows_ = (ids_.size() + seq_len - 1) / seq_len;
  order_.resize(num_windows_);
  for (std::size_t i = 0; i < num_windows_; ++i) order_[i] = i;
  // Fisher-Yates with the project Rng so the order is seed-stable
  Rng rng(seed);
  for (std::size_t i = num_windows_; i > 1; --i) {
    std::size_t j = rng.next_below(i);
    std::swap(order_[i - 1], order_[j]);
  }
}

std::size_t BatchStream::num_batches() const {
  return (num_windows_ + batch_size_ - 1) / batch_size_;
}

Batch BatchStream::batch(std::size_t index) const {
  std::size_t lo = index * batch_size_;
  if (lo >= num_windows_) throw IndexError("BatchStream::batch: index out of range");
  std::size_t hi = std::min(lo + batch_size_, num_windows_);
  Batch b;
  b.batch_size = hi - lo;
  b.seq_len = seq_len_;
  b.inputs.assign(b.batch_size * seq_len_, Vocab::kPad);
  b.targets.assign(b.batch_size * seq_len_, Vocab::kPad);
  b.mask.assign(b.batch_size * seq_len_, 0);
  for (std::size_t r = 0; r < b.batch_size; ++r) {
    std::size_t w = order_[lo + r];
    std::size_t start = w * seq_len_;
    std::size_t len = std::min(seq_len_, ids_.size() - start);
    for (std::size_t t = 0; t < len; ++t) b.inputs[r * seq_len_ + t] = ids_[start + t];
    for (std::size_t t = 0; t + 1 < len; ++t) {
      b.targets[r * seq_len_ + t] = ids_[start + t + 1];
      b.mask[r * seq_len_ + t] = 1;
    }
  }
  return b;
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << content;
}

}  // namespace co4
