#include "mhad/synthetic.hpp"

#include <numeric>
#include <string>

#include "mhad/rng.hpp"

namespace mhad {

namespace {

void add_random_word(Vocabulary& vocab, const std::string& word, Rng& rng) {
  std::vector<float> v(vocab.dim());
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  vocab.add(word, v);
}

std::string word(const char* prefix, std::size_t i) { return prefix + std::to_string(i); }

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

}  // namespace

Vocabulary make_random_vocabulary(std::size_t words, std::size_t dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 1));
  Vocabulary vocab(dim, derive_seed(seed, 2));
  for (std::size_t i = 0; i < words; ++i) add_random_word(vocab, word("w", i), rng);
  return vocab;
}

std::vector<RawExample> make_random_examples(std::size_t count, std::size_t words, std::size_t max_len,
                                             std::uint64_t seed) {
  Rng rng(derive_seed(seed, 3));
  std::vector<RawExample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t lo = std::max<std::size_t>(1, max_len / 2);
    const std::size_t len = lo + static_cast<std::size_t>(rng.below(max_len - lo + 1));
    std::vector<std::string> tokens;
    for (std::size_t t = 0; t < len; ++t) tokens.push_back(word("w", static_cast<std::size_t>(rng.below(words))));
    out.push_back({join(tokens), static_cast<std::uint8_t>(i % 2)});
  }
  Rng shuffle_rng(derive_seed(seed, 4));
  shuffle_rng.shuffle(std::span(out));
  return out;
}

TwoDomainTask make_two_domain_task(const TwoDomainSpec& spec) {
  Rng vec_rng(derive_seed(spec.seed, 1));
  TwoDomainTask task{Vocabulary(spec.dim, derive_seed(spec.seed, 2)), {}, {}, {}};
  for (std::size_t i = 0; i < spec.filler_words; ++i) add_random_word(task.vocab, word("f", i), vec_rng);
  for (const char* prefix : {"sharedpos", "sharedneg", "srcpos", "srcneg", "tgtpos", "tgtneg"}) {
    const std::size_t n = std::string(prefix).starts_with("shared") ? spec.shared_words : spec.domain_words;
    for (std::size_t i = 0; i < n; ++i) add_random_word(task.vocab, word(prefix, i), vec_rng);
  }

  Rng rng(derive_seed(spec.seed, 3));
  auto make = [&](bool target, std::uint8_t label) {
    const std::size_t lo = std::max<std::size_t>(spec.domain_mentions + 2, spec.max_len / 2);
    const std::size_t len = lo + static_cast<std::size_t>(rng.below(spec.max_len - lo + 1));
    std::vector<std::string> tokens(len);
    for (auto& t : tokens) t = word("f", static_cast<std::size_t>(rng.below(spec.filler_words)));
    std::vector<std::size_t> slots(len);
    std::iota(slots.begin(), slots.end(), std::size_t{0});
    rng.shuffle(std::span(slots));
    std::size_t next_slot = 0;
    auto place = [&](const std::string& w) { tokens[slots[next_slot++]] = w; };
    const char* domain = target ? (label ? "tgtpos" : "tgtneg") : (label ? "srcpos" : "srcneg");
    for (std::size_t m = 0; m < spec.domain_mentions; ++m) {
      place(word(domain, static_cast<std::size_t>(rng.below(spec.domain_words))));
    }
    if (rng.bernoulli(spec.shared_rate)) {
      place(word(label ? "sharedpos" : "sharedneg", static_cast<std::size_t>(rng.below(spec.shared_words))));
    }
    return RawExample{join(tokens), label};
  };
  for (std::size_t i = 0; i < spec.source_labeled; ++i) {
    task.source_labeled.push_back(make(false, static_cast<std::uint8_t>(i % 2)));
  }
  for (std::size_t i = 0; i < spec.source_unlabeled; ++i) {
    auto ex = make(false, static_cast<std::uint8_t>(rng.below(2)));
    ex.label.reset();
    task.source_unlabeled.push_back(std::move(ex));
  }
  for (std::size_t i = 0; i < spec.target_test; ++i) {
    task.target_test.push_back(make(true, static_cast<std::uint8_t>(i % 2)));
  }
  return task;
}

}  // namespace mhad
