#include "mhad/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mhad/log.hpp"
#include "mhad/rng.hpp"

namespace mhad {

namespace {

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open " + path.string());
  return in;
}

}  // namespace

std::vector<RawExample> parse_labeled(std::istream& in, std::string_view source) {
  std::vector<RawExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (is_blank(line)) continue;
    const auto tab = line.find('\t');
    const std::string_view label = tab == std::string::npos ? std::string_view(line)
                                                            : std::string_view(line).substr(0, tab);
    if (tab == std::string::npos || (label != "0" && label != "1")) {
      throw CorpusError("invalid label at line " + std::to_string(lineno) + " of " + std::string(source));
    }
    out.push_back({line.substr(tab + 1), static_cast<std::uint8_t>(label == "1" ? 1 : 0)});
  }
  if (out.empty()) throw CorpusError(std::string(source) + ": empty corpus");
  return out;
}

std::vector<RawExample> parse_unlabeled(std::istream& in, std::string_view source) {
  std::vector<RawExample> out;
  std::string line;
  while (std::getline(in, line)) {
    strip_cr(line);
    if (is_blank(line)) continue;
    out.push_back({std::move(line), std::nullopt});
  }
  if (out.empty()) throw CorpusError(std::string(source) + ": empty corpus");
  return out;
}

std::vector<RawExample> load_labeled(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_labeled(in, path.string());
}

std::vector<RawExample> load_unlabeled(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_unlabeled(in, path.string());
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      tokens.emplace_back(1, ch);
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return tokens;
}

Vocabulary::Vocabulary(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim == 0) throw CorpusError("embedding dimension must be positive");
  tokens_ = {"<pad>", "<unk>"};
  rows_.assign(2 * dim, 0.0f);
  Rng rng(seed);
  for (std::size_t c = 0; c < dim; ++c) rows_[dim + c] = static_cast<float>(rng.uniform(-0.05, 0.05));
}

bool Vocabulary::add(std::string token, std::span<const float> vec) {
  if (vec.size() != dim_) throw CorpusError("vector for '" + token + "' has wrong dimension");
  if (index_.contains(token)) return false;
  const auto id = static_cast<std::int32_t>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(std::move(token));
  rows_.insert(rows_.end(), vec.begin(), vec.end());
  return true;
}

std::int32_t Vocabulary::lookup(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

Tensor<float> Vocabulary::embeddings() const { return Tensor<float>(tokens_.size(), dim_, rows_); }

std::span<const float> Vocabulary::vector(std::int32_t id) const {
  return {rows_.data() + static_cast<std::size_t>(id) * dim_, dim_};
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](unsigned char byte) {
    h ^= byte;
    h *= 0x100000001b3ULL;
  };
  for (const auto& t : tokens_) {
    for (const char c : t) mix(static_cast<unsigned char>(c));
    mix(0);
  }
  for (const float v : rows_) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int s = 0; s < 32; s += 8) mix(static_cast<unsigned char>(bits >> s));
  }
  return h;
}

Vocabulary parse_embeddings(std::istream& in, std::uint64_t seed, std::string_view source) {
  const std::string where(source);
  std::string line;
  if (!std::getline(in, line)) throw CorpusError(where + ": missing header");
  strip_cr(line);
  std::size_t count = 0, dim = 0;
  {
    std::istringstream header(line);
    if (!(header >> count >> dim) || dim == 0) throw CorpusError(where + ": malformed header '" + line + "'");
  }
  Vocabulary vocab(dim, seed);
  std::vector<float> vec(dim);
  std::size_t rows = 0, lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (is_blank(line)) continue;
    const auto space = line.find(' ');
    if (space == std::string::npos || space == 0) {
      throw CorpusError(where + ": malformed row at line " + std::to_string(lineno));
    }
    std::string word = line.substr(0, space);
    const char* p = line.data() + space;
    const char* end = line.data() + line.size();
    std::size_t n = 0;
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p >= end) break;
      float v = 0.0f;
      const auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc() || !std::isfinite(v)) {
        throw CorpusError(where + ": bad number at line " + std::to_string(lineno));
      }
      if (n < dim) vec[n] = v;
      ++n;
      p = next;
    }
    if (n != dim) {
      throw CorpusError(where + ": dimension mismatch at line " + std::to_string(lineno) + " (expected " +
                        std::to_string(dim) + ", got " + std::to_string(n) + ")");
    }
    ++rows;
    if (!vocab.add(word, vec)) warn("duplicate word '" + word + "' in " + where + ", keeping first vector");
  }
  if (rows != count) {
    throw CorpusError(where + ": header declares " + std::to_string(count) + " rows, found " + std::to_string(rows));
  }
  return vocab;
}

Vocabulary load_embeddings(const std::filesystem::path& path, std::uint64_t seed) {
  auto in = open_input(path);
  return parse_embeddings(in, seed, path.string());
}

std::string_view to_string(Origin origin) {
  switch (origin) {
    case Origin::source_labeled: return "source-labeled";
    case Origin::source_unlabeled: return "source-unlabeled";
    case Origin::pseudo_labeled: return "pseudo-labeled";
    case Origin::target_test: return "target-test";
  }
  return "unknown";
}

std::size_t EncodedCorpus::count_label(std::uint8_t label) const {
  if (!labels) return 0;
  return static_cast<std::size_t>(std::count(labels->begin(), labels->end(), label));
}

EncodedCorpus EncodedCorpus::subset(std::span<const std::size_t> indices) const {
  EncodedCorpus out;
  out.max_len = max_len;
  out.origin = origin;
  out.ids.reserve(indices.size() * max_len);
  if (labels) out.labels.emplace().reserve(indices.size());
  for (const auto i : indices) {
    if (i >= size()) throw CorpusError("subset index out of range");
    const auto r = row(i);
    out.ids.insert(out.ids.end(), r.begin(), r.end());
    if (labels) out.labels->push_back((*labels)[i]);
  }
  return out;
}

EncodedCorpus encode(std::span<const RawExample> examples, const Vocabulary& vocab, std::size_t max_len,
                     Origin origin) {
  if (max_len == 0) throw CorpusError("max_len (T_x) must be at least 1");
  EncodedCorpus out;
  out.max_len = max_len;
  out.origin = origin;
  out.ids.assign(examples.size() * max_len, kPadId);
  const bool labeled = !examples.empty() && examples.front().label.has_value();
  if (labeled) out.labels.emplace();
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    if (ex.label.has_value() != labeled) throw CorpusError("mixed labeled and unlabeled examples");
    const auto tokens = tokenize(ex.text);
    if (tokens.empty()) warn("example " + std::to_string(i) + " has no tokens; encoded as all padding");
    const std::size_t n = std::min(tokens.size(), max_len);
    for (std::size_t t = 0; t < n; ++t) out.ids[i * max_len + t] = vocab.lookup(tokens[t]);
    if (labeled) out.labels->push_back(*ex.label);
  }
  return out;
}

EncodedCorpus balance(const EncodedCorpus& corpus, std::uint64_t seed) {
  if (!corpus.labeled()) throw CorpusError("balance requires a labeled corpus");
  const std::size_t pos = corpus.count_label(1);
  const std::size_t neg = corpus.count_label(0);
  if (pos == 0 || neg == 0) throw CorpusError("balance requires both classes, got " + std::to_string(pos) +
                                              " positive / " + std::to_string(neg) + " negative");
  if (pos == neg) return corpus;
  const std::uint8_t majority = pos > neg ? 1 : 0;
  const std::size_t target = std::min(pos, neg);

  std::vector<std::size_t> majority_rows;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if ((*corpus.labels)[i] == majority) majority_rows.push_back(i);
  Rng rng(seed);
  rng.shuffle(std::span(majority_rows));
  std::vector<std::uint8_t> keep(corpus.size(), 1);
  for (std::size_t k = target; k < majority_rows.size(); ++k) keep[majority_rows[k]] = 0;

  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (keep[i]) rows.push_back(i);
  return corpus.subset(rows);
}

std::pair<EncodedCorpus, EncodedCorpus> train_val_split(const EncodedCorpus& corpus, double fraction,
                                                        std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw CorpusError("validation fraction must be in (0, 1)");
  const std::size_t n = corpus.size();
  if (n < 2) throw CorpusError("train/validation split needs at least 2 examples");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span(order));
  auto n_val = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  const std::span<const std::size_t> all(order);
  return {corpus.subset(all.first(n - n_val)), corpus.subset(all.last(n_val))};
}

EncodedCorpus concat_labeled(const EncodedCorpus& a, const EncodedCorpus& b, Origin origin) {
  if (!a.labeled() || !b.labeled()) throw CorpusError("concat_labeled requires labeled corpora");
  if (a.max_len != b.max_len && !a.empty() && !b.empty()) throw CorpusError("concat_labeled: max_len differs");
  EncodedCorpus out = a;
  if (out.max_len == 0) out.max_len = b.max_len;
  out.origin = origin;
  out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
  out.labels->insert(out.labels->end(), b.labels->begin(), b.labels->end());
  return out;
}

TokenBatch make_batch(const EncodedCorpus& corpus, std::span<const std::size_t> indices) {
  TokenBatch batch;
  batch.rows = indices.size();
  batch.cols = corpus.max_len;
  batch.ids.reserve(batch.rows * batch.cols);
  for (const auto i : indices) {
    const auto r = corpus.row(i);
    batch.ids.insert(batch.ids.end(), r.begin(), r.end());
    if (corpus.labels) batch.labels.push_back((*corpus.labels)[i]);
  }
  return batch;
}

TokenBatch make_batch(const EncodedCorpus& corpus, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return make_batch(corpus, idx);
}

}  // namespace mhad
