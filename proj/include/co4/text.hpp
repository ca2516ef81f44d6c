#pragma once
// Corpus ingestion: word-level vocabulary, encode/decode, causal batches.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "co4/common.hpp"

namespace co4 {

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;

  // Whitespace+punctuation tokens ranked by frequency, ties broken
  // lexicographically, truncated to max_vocab - 4 plus the specials.
  static Vocab build(const std::string& corpus, std::size_t max_vocab);

  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  std::size_t size() const { return id_to_token_.size(); }
  int token_id(const std::string& tok) const;  // kUnk when absent
  const std::string& token(int id) const;      // IndexError when out of range

  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

  // fingerprint over "token\tid" lines, stored in checkpoints
  std::uint64_t hash() const;

  // splits on whitespace, peeling punctuation into separate tokens
  static std::vector<std::string> tokenize(const std::string& text);

 private:
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<int> inputs;    // batch_size * seq_len
  std::vector<int> targets;   // inputs shifted left by one, pad-filled
  std::vector<char> mask;     // 1 where the target position counts in the loss

  const int* input_row(std::size_t b) const { return inputs.data() + b * seq_len; }
  const int* target_row(std::size_t b) const { return targets.data() + b * seq_len; }
  const char* mask_row(std::size_t b) const { return mask.data() + b * seq_len; }
};

// Contiguous non-overlapping windows of seq_len ids; the final partial
// window is pad-filled and its pad targets masked out. Window order is
// shuffled once per construction by seed.
class BatchStream {
 public:
  BatchStream(const std::vector<int>& ids, std::size_t seq_len,
              std::size_t batch_size, std::uint64_t seed);

  std::size_t num_batches() const;
  Batch batch(std::size_t index) const;

  const std::vector<std::size_t>& window_order() const { return order_; }

 private:
  std::vector<int> ids_;
  std::size_t seq_len_;
  std::size_t batch_size_;
  std::size_t num_windows_;
  std::vector<std::size_t> order_;
};

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace co4
