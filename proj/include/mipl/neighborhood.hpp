#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mipl/errors.hpp"
#include "mipl/rng.hpp"
#include "mipl/sequence.hpp"

namespace mipl {

enum class NeighborhoodKind { ngram, embedding, edit_distance, exact_match };

inline std::string kind_name(NeighborhoodKind k) {
  switch (k) {
    case NeighborhoodKind::ngram: return "ngram";
    case NeighborhoodKind::embedding: return "embedding";
    case NeighborhoodKind::edit_distance: return "edit";
    case NeighborhoodKind::exact_match: return "exact";
  }
  return "?";
}

struct EmbedderConfig {
  enum class Mode { hashed_char_ngram, external_table };
  Mode mode = Mode::hashed_char_ngram;
  int dim = 64;
  std::uint64_t seed = 0;
  int char_n = 3;
  std::string table_path;
};

/// Tagged metric choice of Def. 1: the distance d and radius r in one value.
/// Only the parameter matching `kind` is meaningful; the rest keep defaults.
struct NeighborhoodSpec {
  NeighborhoodKind kind = NeighborhoodKind::ngram;
  int k = 7;        // ngram
  double c = 0.9;   // embedding: cosine threshold
  double l = 0.48;  // edit: normalized-distance threshold
  EmbedderConfig embedder{};

  static NeighborhoodSpec ngram(int k = 7) {
    NeighborhoodSpec s;
    s.kind = NeighborhoodKind::ngram;
    s.k = k;
    return s;
  }
  static NeighborhoodSpec embedding(double c = 0.9, EmbedderConfig cfg = {}) {
    NeighborhoodSpec s;
    s.kind = NeighborhoodKind::embedding;
    s.c = c;
    s.embedder = cfg;
    return s;
  }
  static NeighborhoodSpec edit(double l = 0.48) {
    NeighborhoodSpec s;
    s.kind = NeighborhoodKind::edit_distance;
    s.l = l;
    return s;
  }
  static NeighborhoodSpec exact() {
    NeighborhoodSpec s;
    s.kind = NeighborhoodKind::exact_match;
    return s;
  }

  std::string name() const {
    switch (kind) {
      case NeighborhoodKind::ngram: return "ngram_k" + std::to_string(k);
      case NeighborhoodKind::embedding: {
        std::ostringstream os;
        os << "embedding_c" << c;
        return os.str();
      }
      case NeighborhoodKind::edit_distance: {
        std::ostringstream os;
        os << "edit_l" << l;
        return os.str();
      }
      case NeighborhoodKind::exact_match: return "exact";
    }
    return "?";
  }
};

/// Deduplicated set of k-token windows of x. Throws if |x| < k.
inline std::set<Sequence> ngram_set(const Sequence& x, int k) {
  if (k < 1) throw Error(Errc::bad_param, "ngram_set: k must be >= 1");
  if (static_cast<int>(x.size()) < k) {
    throw Error(Errc::sequence_too_short, "ngram_set: |x| < k");
  }
  std::set<Sequence> out;
  for (std::size_t i = 0; i + k <= x.size(); ++i) {
    out.insert(Sequence(x.begin() + i, x.begin() + i + k));
  }
  return out;
}

namespace detail {

inline std::uint64_t window_hash(const Sequence& x, std::size_t start, int k) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (int j = 0; j < k; ++j) {
    h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(x[start + j]));
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Hash index over x's k-windows; hits are verified by exact comparison so
/// collisions can never flip a membership answer.
struct WindowIndex {
  const Sequence* x = nullptr;
  int k = 0;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> starts;

  WindowIndex() = default;
  WindowIndex(const Sequence& xs, int kk) : x(&xs), k(kk) {
    if (static_cast<int>(xs.size()) >= kk) {
      for (std::size_t i = 0; i + kk <= xs.size(); ++i) {
        starts[window_hash(xs, i, kk)].push_back(static_cast<std::uint32_t>(i));
      }
    }
  }

  bool contains(const Sequence& y, std::size_t ystart) const {
    const auto it = starts.find(window_hash(y, ystart, k));
    if (it == starts.end()) return false;
    for (std::uint32_t s : it->second) {
      if (std::equal(y.begin() + ystart, y.begin() + ystart + k, x->begin() + s)) return true;
    }
    return false;
  }
};

}  // namespace detail

/// True iff x and y share at least one k-gram. Sequences shorter than k have
/// no k-gram, hence false (keeps the Eq. (1) membership predicate total).
inline bool shares_ngram(const Sequence& x, const Sequence& y, int k) {
  if (k < 1) throw Error(Errc::bad_param, "shares_ngram: k must be >= 1");
  if (static_cast<int>(x.size()) < k || static_cast<int>(y.size()) < k) return false;
  const detail::WindowIndex index(x, k);
  for (std::size_t i = 0; i + k <= y.size(); ++i) {
    if (index.contains(y, i)) return true;
  }
  return false;
}

/// Number of distinct k-grams shared by x and y (the n-gram closeness term of
/// the attack losses).
inline int shared_ngram_count(const Sequence& x, const Sequence& y, int k) {
  if (k < 1) throw Error(Errc::bad_param, "shared_ngram_count: k must be >= 1");
  if (static_cast<int>(x.size()) < k || static_cast<int>(y.size()) < k) return 0;
  const detail::WindowIndex index(x, k);
  std::set<Sequence> counted;
  for (std::size_t i = 0; i + k <= y.size(); ++i) {
    if (index.contains(y, i)) {
      counted.insert(Sequence(y.begin() + i, y.begin() + i + k));
    }
  }
  return static_cast<int>(counted.size());
}

/// Levenshtein distance (insert/delete/substitute, unit costs), two-row DP.
inline int edit_distance(const Sequence& x, const Sequence& y) {
  const int n = static_cast<int>(x.size());
  const int m = static_cast<int>(y.size());
  if (n == 0) return m;
  if (m == 0) return n;
  std::vector<int> prev(m + 1), cur(m + 1);
  for (int j = 0; j <= m; ++j) prev[j] = j;
  for (int i = 1; i <= n; ++i) {
    cur[0] = i;
    for (int j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (x[i - 1] == y[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

/// lev(x,y) / (|x|+|y|), the normalization the edit neighborhood thresholds.
inline double normalized_edit(const Sequence& x, const Sequence& y) {
  if (x.empty() && y.empty()) {
    throw Error(Errc::degenerate_input, "normalized_edit: both sequences empty");
  }
  return static_cast<double>(edit_distance(x, y)) / static_cast<double>(x.size() + y.size());
}

inline double cosine(const std::vector<double>& u, const std::vector<double>& v) {
  if (u.size() != v.size()) throw Error(Errc::size_mismatch, "cosine: dimension mismatch");
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uu += u[i] * u[i];
    vv += v[i] * v[i];
    uv += u[i] * v[i];
  }
  if (uu <= 0.0 || vv <= 0.0) throw Error(Errc::degenerate_input, "cosine: zero vector");
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

/// Stand-in for the semantic embedding function E: hashed bag of character
/// n-grams pushed through a seeded signed (Rademacher) projection, then L2
/// normalized. ExternalTable mode looks vectors up by sequence content hash.
class Embedder {
 public:
  explicit Embedder(EmbedderConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.dim < 2) throw Error(Errc::bad_param, "Embedder: dim must be >= 2");
    if (cfg_.char_n < 1) throw Error(Errc::bad_param, "Embedder: char_n must be >= 1");
    if (cfg_.mode == EmbedderConfig::Mode::external_table) {
      if (cfg_.table_path.empty()) {
        throw Error(Errc::bad_param, "Embedder: external_table requires table_path");
      }
      load_table();
    }
  }

  std::vector<double> operator()(const Sequence& x) const {
    if (cfg_.mode == EmbedderConfig::Mode::external_table) return lookup(x);
    return project(x);
  }

  const EmbedderConfig& config() const { return cfg_; }

 private:
  std::vector<double> project(const Sequence& x) const {
    const int n = cfg_.char_n;
    if (static_cast<int>(x.size()) < n) {
      throw Error(Errc::sequence_too_short, "embed: |x| < char_n");
    }
    std::unordered_map<std::uint64_t, int> counts;
    for (std::size_t i = 0; i + n <= x.size(); ++i) {
      counts[detail::window_hash(x, i, n)] += 1;
    }
    std::vector<double> v(cfg_.dim, 0.0);
    const int words = (cfg_.dim + 63) / 64;
    for (const auto& [gram, count] : counts) {
      std::uint64_t state = mix_seed(cfg_.seed, gram);
      int j = 0;
      for (int w = 0; w < words && j < cfg_.dim; ++w) {
        std::uint64_t bits = splitmix64(state);
        for (int b = 0; b < 64 && j < cfg_.dim; ++b, ++j) {
          v[j] += ((bits >> b) & 1ULL) ? count : -count;
        }
      }
    }
    double norm = 0.0;
    for (double e : v) norm += e * e;
    norm = std::sqrt(norm);
    if (norm <= 0.0) throw Error(Errc::degenerate_input, "embed: zero projection");
    for (double& e : v) e /= norm;
    return v;
  }

  std::vector<double> lookup(const Sequence& x) const {
    const auto it = table_.find(sequence_content_hash(x));
    if (it == table_.end()) {
      throw Error(Errc::degenerate_input, "embed: sequence not present in external table");
    }
    return it->second;
  }

  void load_table() {
    std::ifstream in(cfg_.table_path);
    if (!in) throw Error(Errc::io_error, "Embedder: cannot open " + cfg_.table_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream is(line);
      std::string hex;
      is >> hex;
      std::uint64_t key = 0;
      try {
        key = std::stoull(hex, nullptr, 16);
      } catch (const std::exception&) {
        throw Error(Errc::corrupt_file, "Embedder: bad hash field in table");
      }
      std::vector<double> v;
      v.reserve(cfg_.dim);
      double f = 0.0;
      while (is >> f) v.push_back(f);
      if (static_cast<int>(v.size()) != cfg_.dim) {
        throw Error(Errc::corrupt_file, "Embedder: wrong vector dimension in table");
      }
      table_[key] = std::move(v);
    }
  }

  EmbedderConfig cfg_;
  std::unordered_map<std::uint64_t, std::vector<double>> table_;
};

inline std::vector<double> embed(const Sequence& x, const EmbedderConfig& cfg) {
  return Embedder(cfg)(x);
}

/// Def. 1 membership of y in the ball N_r(x) under the chosen metric.
inline bool is_neighbor(const Sequence& x, const Sequence& y, const NeighborhoodSpec& spec) {
  switch (spec.kind) {
    case NeighborhoodKind::ngram:
      return shares_ngram(x, y, spec.k);
    case NeighborhoodKind::embedding: {
      const Embedder e(spec.embedder);
      return cosine(e(x), e(y)) >= spec.c;
    }
    case NeighborhoodKind::edit_distance:
      return normalized_edit(x, y) <= spec.l;
    case NeighborhoodKind::exact_match:
      return x == y;
  }
  return false;
}

}  // namespace mipl
