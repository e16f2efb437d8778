#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace brio {

using TokenId = std::uint32_t;

/// Ordered token ids. Complete sequences carry BOS first and EOS last.
using TokenSequence = std::vector<TokenId>;

// Special ids are fixed by the vocabulary file layout.
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr std::size_t kNumSpecials = 4;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Strips a leading BOS, a trailing EOS and any PAD.
TokenSequence strip_sentinels(const TokenSequence& seq);

}  // namespace brio
