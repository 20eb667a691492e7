#pragma once

#include <cstdint>

namespace wmkit {

using TokenId = std::uint32_t;

// Reserved token ids shared by the tokenizer, the sampler's window padding
// and the synthetic corpora.
inline constexpr TokenId kBosId = 0;
inline constexpr TokenId kEosId = 1;
inline constexpr TokenId kUnkId = 2;

} // namespace wmkit
