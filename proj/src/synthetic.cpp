#include "co4/synthetic.hpp"

namespace co4 {
namespace {

// Every sentence is four tokens: determiner, noun, verb, period. Nouns and
// verbs come in (singular, plural) form pairs so the pair generator can flip
// the verb's number without touching anything else.
constexpr const char* kDeterminers[2] = {"a", "we"};
constexpr const char* kNouns[][2] = {
    {"cat", "cats"}, {"dog", "dogs"}, {"hen", "hens"}, {"pig", "pigs"},
    {"cow", "cows"}, {"ant", "ants"}, {"bee", "bees"}, {"owl", "owls"},
};
constexpr const char* kVerbs[][2] = {
    {"is", "are"},
    {"was", "were"},
};

struct Parts {
  bool plural;
  std::size_t noun;
  std::size_t verb;
};

Parts gen_parts(Rng& rng, bool plural) {
  Parts p;
  p.plural = plural;
  p.noun = rng.next_below(std::size(kNouns));
  p.verb = rng.next_below(std::size(kVerbs));
  return p;
}

std::string render(const Parts& p, bool agree) {
  std::string s = kDeterminers[p.plural ? 1 : 0];
  s += ' ';
  s += kNouns[p.noun][p.plural ? 1 : 0];
  s += ' ';
  s += kVerbs[p.verb][(agree ? p.plural : !p.plural) ? 1 : 0];
  s += " .";
  return s;
}

}  // namespace

std::string gen_sentence(Rng& rng) {
  return render(gen_parts(rng, rng.next_below(2) == 1), true);
}

std::string gen_corpus(Rng& rng, std::size_t min_bytes, double val_fraction) {
  // The corpus opens with a bare period line and every sentence is exactly
  // four tokens, so token position mod 4 identifies the syntactic slot.
  // Growth stops only when the trailing `val_fraction` holdout also begins
  // on a sentence boundary, keeping holdout windows slot-aligned with
  // training windows.
  std::string out = ".\n";
  std::size_t sentences = 0;
  while (true) {
    out += gen_sentence(rng);
    out += '\n';
    ++sentences;
    std::size_t tokens = sentences * 4 + 1;
    std::size_t holdout = std::size_t(val_fraction * double(tokens));
    if (out.size() >= min_bytes && holdout % 4 == 1) break;
  }
  return out;
}

MinimalPair gen_pair(Rng& rng, bool plural) {
  Parts p = gen_parts(rng, plural);
  MinimalPair pair;
  pair.good = render(p, true);
  pair.bad = render(p, false);
  pair.tag = p.plural ? "agreement-plural" : "agreement-singular";
  return pair;
}

std::vector<MinimalPair> gen_pairs(Rng& rng, std::size_t count) {
  std::vector<MinimalPair> out;
  out.reserve(count);
  // Alternate subject number so the suite is exactly balanced: a scorer with
  // an unconditional preference for one verb form gets 50% by construction.
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(gen_pair(rng, i % 2 == 1));
  return out;
}

}  // namespace co4
