#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace laser {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

namespace tok {
inline constexpr TokenId kPlus = 10;
inline constexpr TokenId kEquals = 11;
inline constexpr TokenId kBos = 12;
inline constexpr TokenId kEos = 13;
inline constexpr TokenId kPad = 14;
// Reserved token that never occurs in problems or answers; carries the
// self-rewarding score.
inline constexpr TokenId kZc = 15;

constexpr TokenId digit(int d) { return static_cast<TokenId>(d); }
constexpr bool is_digit(TokenId t) { return t >= 0 && t <= 9; }
}  // namespace tok

struct Vocab {
  static constexpr int kSize = 16;
  static constexpr std::array<std::string_view, kSize> kSymbols = {
      "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
      "+", "=", "BOS", "EOS", "PAD", "ZC"};

  static constexpr bool valid(TokenId t) { return t >= 0 && t < kSize; }

  static std::string_view symbol(TokenId t) {
    return valid(t) ? kSymbols[static_cast<std::size_t>(t)] : "<?>";
  }

  static std::optional<TokenId> parse(std::string_view s) {
    for (int i = 0; i < kSize; ++i)
      if (kSymbols[static_cast<std::size_t>(i)] == s) return i;
    return std::nullopt;
  }
};

// "BOS 3 + 4 =" style rendering, space separated.
inline std::string render(std::span<const TokenId> seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += ' ';
    out += Vocab::symbol(seq[i]);
  }
  return out;
}

inline TokenSequence concat(std::span<const TokenId> a,
                            std::span<const TokenId> b) {
  TokenSequence out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace laser
