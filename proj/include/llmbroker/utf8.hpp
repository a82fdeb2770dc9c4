#pragma once

#include <string>
#include <string_view>

namespace llmbroker::utf8 {

// strict validation: rejects overlong encodings, surrogates and values past U+10FFFF
bool valid(std::string_view bytes);

// decodes to unicode scalars; each byte of an invalid sequence becomes U+FFFD.
// sets *lossy when any replacement happened (may be null).
std::u32string decode_lossy(std::string_view bytes, bool * lossy = nullptr);

// decodes the scalar starting at bytes[0]; false on malformed input
bool decode_prefix(std::string_view bytes, char32_t & out, std::size_t & length);

void append_scalar(std::string & out, char32_t c);
std::string encode(std::u32string_view scalars);

} // namespace llmbroker::utf8
