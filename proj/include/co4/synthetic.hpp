#pragma once
// Toy grammar over a small vocabulary with subject-verb number agreement.
// Supplies the bundled training corpus and grammatical/ungrammatical minimal
// pairs for the zero-shot harness. Sentences have a fixed four-token shape
// ("a cat is ." / "we cats are .") so a windowed language model sees every
// syntactic slot at a stable position offset.

#include <cstdint>
#include <string>
#include <vector>

#include "co4/common.hpp"
#include "co4/eval.hpp"

namespace co4 {

// One grammatical four-token sentence, e.g. "we dogs were .".
std::string gen_sentence(Rng& rng);

// A corpus of at least `min_bytes`: a leading "." line, then one sentence per
// line. The length is additionally chosen so that a trailing holdout of
// `val_fraction` of the tokens starts on a sentence boundary.
std::string gen_corpus(Rng& rng, std::size_t min_bytes,
                       double val_fraction = 0.05);

// Agreement pair: identical sentences except the verb's number is wrong in
// the bad one ("a dog is ." vs "a dog are .").
MinimalPair gen_pair(Rng& rng, bool plural);
// `count` pairs, exactly balanced in subject number (alternating).
std::vector<MinimalPair> gen_pairs(Rng& rng, std::size_t count);

}  // namespace co4
