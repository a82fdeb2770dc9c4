#pragma once

#include <cstdint>
#include <vector>

namespace llmbroker {

using token_id = std::uint32_t;
using token_sequence = std::vector<token_id>;

// byte-level base vocabulary: 0..255 raw bytes, then the two special markers.
// merge tokens, when a merge table is configured, start at token_merge_base.
inline constexpr token_id token_bos = 256;
inline constexpr token_id token_eos = 257;
inline constexpr token_id token_merge_base = 258;
inline constexpr std::size_t base_vocab_size = 258;

} // namespace llmbroker
