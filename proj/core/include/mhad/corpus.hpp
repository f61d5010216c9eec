#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mhad/tensor.hpp"

namespace mhad {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RawExample {
  std::string text;
  std::optional<std::uint8_t> label;  // 1 positive, 0 negative; absent when unlabeled
};

/// Labeled lines are `label<TAB>text` with label 0 or 1. Blank lines are skipped.
std::vector<RawExample> load_labeled(const std::filesystem::path& path);
std::vector<RawExample> load_unlabeled(const std::filesystem::path& path);
std::vector<RawExample> parse_labeled(std::istream& in, std::string_view source = "<stream>");
std::vector<RawExample> parse_unlabeled(std::istream& in, std::string_view source = "<stream>");

/// Lowercases ASCII and splits on whitespace; ASCII punctuation becomes its own token.
std::vector<std::string> tokenize(std::string_view text);

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;

/// Token table plus embedding matrix. Row 0 is PAD (all zeros), row 1 is UNK.
class Vocabulary {
 public:
  /// Empty vocabulary holding only PAD and UNK; the UNK row is drawn from `seed`.
  Vocabulary(std::size_t dim, std::uint64_t seed);

  /// Adds a token; returns false (and keeps the first vector) on duplicates.
  bool add(std::string token, std::span<const float> vector);

  [[nodiscard]] std::int32_t lookup(std::string_view token) const;
  [[nodiscard]] const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  [[nodiscard]] std::size_t size() const noexcept { return tokens_.size(); }
  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] Tensor<float> embeddings() const;
  [[nodiscard]] std::span<const float> vector(std::int32_t id) const;
  /// FNV-1a over tokens and embedding bits; used to reject mismatched checkpoints.
  [[nodiscard]] std::uint64_t fingerprint() const;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  std::vector<std::string> tokens_;
  std::vector<float> rows_;
  std::unordered_map<std::string, std::int32_t> index_;
};

/// Classic text word-vector format: header `<count> <dim>`, then `<word> <dim floats>` per line.
Vocabulary load_embeddings(const std::filesystem::path& path, std::uint64_t seed);
Vocabulary parse_embeddings(std::istream& in, std::uint64_t seed, std::string_view source = "<stream>");

enum class Origin { source_labeled, source_unlabeled, pseudo_labeled, target_test };
std::string_view to_string(Origin origin);

/// N×max_len token ids (row-major) with optional 0/1 labels.
struct EncodedCorpus {
  std::size_t max_len = 0;
  std::vector<std::int32_t> ids;
  std::optional<std::vector<std::uint8_t>> labels;
  Origin origin = Origin::source_labeled;

  [[nodiscard]] std::size_t size() const noexcept { return max_len == 0 ? 0 : ids.size() / max_len; }
  [[nodiscard]] bool empty() const noexcept { return size() == 0; }
  [[nodiscard]] bool labeled() const noexcept { return labels.has_value(); }
  [[nodiscard]] std::span<const std::int32_t> row(std::size_t i) const {
    return {ids.data() + i * max_len, max_len};
  }
  [[nodiscard]] std::size_t count_label(std::uint8_t label) const;
  [[nodiscard]] EncodedCorpus subset(std::span<const std::size_t> indices) const;
};

EncodedCorpus encode(std::span<const RawExample> examples, const Vocabulary& vocab, std::size_t max_len,
                     Origin origin);

/// Down-samples the majority class to the minority count; kept rows stay in input order.
EncodedCorpus balance(const EncodedCorpus& corpus, std::uint64_t seed);

/// Seeded shuffle; the last ceil(fraction·N) shuffled rows become validation.
std::pair<EncodedCorpus, EncodedCorpus> train_val_split(const EncodedCorpus& corpus, double fraction,
                                                        std::uint64_t seed);

/// Row concatenation; both inputs must share max_len and be labeled.
EncodedCorpus concat_labeled(const EncodedCorpus& a, const EncodedCorpus& b, Origin origin);

/// Rows of a corpus gathered into one batch.
struct TokenBatch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> labels;  // empty when the corpus is unlabeled

  [[nodiscard]] std::span<const std::int32_t> row(std::size_t r) const { return {ids.data() + r * cols, cols}; }
};

TokenBatch make_batch(const EncodedCorpus& corpus, std::span<const std::size_t> indices);
TokenBatch make_batch(const EncodedCorpus& corpus, std::size_t begin, std::size_t end);

}  // namespace mhad
