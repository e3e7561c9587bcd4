#pragma once

// Vocabulary construction and skip-gram pair streaming over whitespace
// tokenized text (one sentence per line).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctxvec/error.hpp"
#include "ctxvec/random.hpp"

namespace ctxvec {

using WordId = std::uint32_t;

struct TextPair {
  WordId target;
  WordId context;
  friend bool operator==(const TextPair&, const TextPair&) = default;
};

// Bidirectional word <-> id map. Ids follow descending count, ties broken
// lexicographically, so the layout is a pure function of the token multiset.
class Vocabulary {
 public:
  Vocabulary() = default;

  std::size_t size() const noexcept { return words_.size(); }
  bool empty() const noexcept { return words_.empty(); }
  std::size_t min_count() const noexcept { return min_count_; }

  const std::string& word(WordId id) const { return words_.at(id); }
  std::uint64_t count(WordId id) const { return counts_.at(id); }
  const std::vector<std::string>& words() const noexcept { return words_; }
  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }

  std::optional<WordId> find(std::string_view w) const {
    auto it = index_.find(std::string(w));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  bool contains(std::string_view w) const { return find(w).has_value(); }

  std::uint64_t total_count() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  // Builds from (word, count) entries; entries below min_count are dropped.
  static Vocabulary from_counts(std::vector<std::pair<std::string, std::uint64_t>> entries,
                                std::size_t min_count) {
    Vocabulary v;
    v.min_count_ = min_count;
    std::erase_if(entries, [&](const auto& e) { return e.second < min_count; });
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    v.words_.reserve(entries.size());
    for (auto& [w, c] : entries) {
      v.index_.emplace(w, static_cast<WordId>(v.words_.size()));
      v.words_.push_back(std::move(w));
      v.counts_.push_back(c);
    }
    return v;
  }

  std::string serialize() const {
    std::ostringstream os;
    os << "#vocab v1 " << words_.size() << ' ' << min_count_ << '\n';
    for (std::size_t i = 0; i < words_.size(); ++i) os << words_[i] << '\t' << counts_[i] << '\n';
    return os.str();
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open for writing: " + path);
    os << serialize();
  }

  static Vocabulary parse(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw FormatError("vocabulary file is empty");
    std::istringstream header(line);
    std::string tag, version;
    std::size_t size = 0, min_count = 0;
    if (!(header >> tag >> version >> size >> min_count) || tag != "#vocab" || version != "v1")
      throw FormatError("bad vocabulary header: " + line);
    std::vector<std::pair<std::string, std::uint64_t>> entries;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto tab = line.find('\t');
      if (tab == std::string::npos) throw ParseError("expected word<TAB>count", lineno);
      std::uint64_t c = 0;
      try {
        c = std::stoull(line.substr(tab + 1));
      } catch (const std::exception&) {
        throw ParseError("bad count", lineno);
      }
      entries.emplace_back(line.substr(0, tab), c);
    }
    if (entries.size() != size) throw FormatError("vocabulary header size does not match entries");
    return from_counts(std::move(entries), min_count);
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open: " + path);
    return parse(is);
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.words_ == b.words_ && a.counts_ == b.counts_ && a.min_count_ == b.min_count_;
  }

 private:
  std::vector<std::string> words_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, WordId> index_;
  std::size_t min_count_ = 1;
};

template <typename Range>
Vocabulary build_vocab(const Range& tokens, std::size_t min_count) {
  if (min_count < 1) throw ConfigError("min_count must be >= 1");
  std::map<std::string, std::uint64_t, std::less<>> counts;
  for (const auto& t : tokens) ++counts[std::string(t)];
  std::vector<std::pair<std::string, std::uint64_t>> entries(counts.begin(), counts.end());
  auto v = Vocabulary::from_counts(std::move(entries), min_count);
  if (v.empty()) throw EmptyCorpus("no token reaches min_count=" + std::to_string(min_count));
  return v;
}

using Sentence = std::vector<std::string>;

inline std::vector<Sentence> read_corpus(std::istream& is) {
  std::vector<Sentence> out;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    Sentence s;
    std::string tok;
    while (ls >> tok) s.push_back(tok);
    if (!s.empty()) out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<Sentence> read_corpus(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open corpus: " + path);
  return read_corpus(is);
}

inline Vocabulary build_vocab(const std::vector<Sentence>& sentences, std::size_t min_count) {
  std::vector<std::string_view> flat;
  for (const auto& s : sentences)
    for (const auto& t : s) flat.push_back(t);
  if (flat.empty()) throw EmptyCorpus("corpus has no tokens");
  return build_vocab(flat, min_count);
}

// Word2vec-style frequent-word subsampling. threshold <= 0 disables it.
struct Subsampling {
  double threshold = 0.0;

  bool keep(const Vocabulary& vocab, WordId id, Rng& rng) const {
    if (threshold <= 0.0) return true;
    const double f = double(vocab.count(id)) / double(vocab.total_count());
    const double p = (std::sqrt(f / threshold) + 1.0) * threshold / f;
    return p >= 1.0 || rng.uniform() < p;
  }
};

// Maps a sentence to ids, dropping out-of-vocabulary tokens (and subsampled
// ones when enabled).
inline std::vector<WordId> encode(const Vocabulary& vocab, const Sentence& s,
                                  const Subsampling& sub = {}, Rng* rng = nullptr) {
  std::vector<WordId> ids;
  ids.reserve(s.size());
  for (const auto& t : s) {
    auto id = vocab.find(t);
    if (!id) continue;
    if (sub.threshold > 0.0 && rng != nullptr && !sub.keep(vocab, *id, *rng)) continue;
    ids.push_back(*id);
  }
  return ids;
}

// Visits every (target, context) pair with a dynamic window: for position i a
// radius is drawn uniformly from [1, window] and all j != i within it are emitted.
template <typename Fn>
void for_each_pair(std::span<const WordId> tokens, std::size_t window, Rng& rng, Fn&& fn) {
  if (window < 1) throw ConfigError("window must be >= 1");
  const std::size_t n = tokens.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t radius = 1 + static_cast<std::size_t>(rng.below(window));
    const std::size_t lo = i >= radius ? i - radius : 0;
    const std::size_t hi = std::min(n - 1, i + radius);
    for (std::size_t j = lo; j <= hi; ++j) {
      if (j != i) fn(TextPair{tokens[i], tokens[j]});
    }
  }
}

inline std::vector<TextPair> stream_pairs(std::span<const WordId> tokens, std::size_t window,
                                          Rng& rng) {
  std::vector<TextPair> out;
  for_each_pair(tokens, window, rng, [&](const TextPair& p) { out.push_back(p); });
  return out;
}

}  // namespace ctxvec
