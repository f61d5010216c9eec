#pragma once

// Desk-scale synthetic corpora. The two-domain task mimics a domain shift:
// every example carries filler words, sentiment words shared by both
// domains, and sentiment words specific to its own domain.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mhad/corpus.hpp"

namespace mhad {

struct TwoDomainSpec {
  std::size_t source_labeled = 320;
  std::size_t source_unlabeled = 320;
  std::size_t target_test = 400;
  std::size_t max_len = 12;
  std::size_t dim = 8;
  std::size_t filler_words = 40;
  std::size_t shared_words = 4;   // per class
  std::size_t domain_words = 4;   // per class and domain
  double shared_rate = 0.7;       // probability an example carries a shared sentiment word
  std::size_t domain_mentions = 2;  // domain-specific sentiment words per example
  std::uint64_t seed = 7;
};

struct TwoDomainTask {
  Vocabulary vocab;
  std::vector<RawExample> source_labeled;
  std::vector<RawExample> source_unlabeled;
  std::vector<RawExample> target_test;
};

TwoDomainTask make_two_domain_task(const TwoDomainSpec& spec);

/// Random embedding table over `words` tokens w0..w{n-1}, entries uniform in [-1, 1].
Vocabulary make_random_vocabulary(std::size_t words, std::size_t dim, std::uint64_t seed);

/// `count` random token sequences over a vocabulary from make_random_vocabulary,
/// lengths in [max_len/2, max_len], balanced random labels.
std::vector<RawExample> make_random_examples(std::size_t count, std::size_t words, std::size_t max_len,
                                             std::uint64_t seed);

}  // namespace mhad
