#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mipl/errors.hpp"
#include "mipl/rng.hpp"

namespace mipl {

using Token = std::int32_t;
using Sequence = std::vector<Token>;

inline constexpr int kVocabSize = 256;

enum class Tokenization { byte };

/// Byte-level tokenization: each byte maps to its value in [0, 256).
inline Sequence tokenize(std::string_view text, Tokenization scheme = Tokenization::byte) {
  (void)scheme;
  if (text.empty()) throw Error(Errc::empty_input, "tokenize: empty text");
  Sequence out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<Token>(c));
  return out;
}

inline std::string detokenize(const Sequence& seq) {
  std::string out;
  out.reserve(seq.size());
  for (Token t : seq) out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  return out;
}

/// Content hash of a token list (FNV-1a over little-endian 4-byte tokens).
/// External embedding tables and dataset sidecars key records by this value.
inline std::uint64_t sequence_content_hash(const Sequence& seq) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (Token t : seq) {
    const auto u = static_cast<std::uint32_t>(t);
    for (int shift = 0; shift < 32; shift += 8) {
      h ^= (u >> shift) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace mipl
