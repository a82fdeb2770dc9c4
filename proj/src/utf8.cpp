#include "llmbroker/utf8.hpp"

#include <cstdint>

namespace llmbroker::utf8 {

namespace {

constexpr char32_t replacement = 0xFFFD;

// decodes one scalar at src[i]; returns false on any malformed sequence
// (truncation, bad continuation, overlong, surrogate, out of range)
bool decode_one(std::string_view src, std::size_t i, char32_t & out, std::size_t & len) {
    const auto b0 = static_cast<std::uint8_t>(src[i]);
    if (b0 < 0x80) {
        out = b0;
        len = 1;
        return true;
    }
    int n;
    char32_t value;
    if ((b0 & 0xE0) == 0xC0) { n = 2; value = b0 & 0x1F; }
    else if ((b0 & 0xF0) == 0xE0) { n = 3; value = b0 & 0x0F; }
    else if ((b0 & 0xF8) == 0xF0) { n = 4; value = b0 & 0x07; }
    else { return false; }

    if (i + n > src.size()) {
        return false;
    }
    for (int k = 1; k < n; ++k) {
        const auto b = static_cast<std::uint8_t>(src[i + k]);
        if ((b & 0xC0) != 0x80) {
            return false;
        }
        value = (value << 6) | (b & 0x3F);
    }
    static constexpr char32_t min_for_len[5] = {0, 0, 0x80, 0x800, 0x10000};
    if (value < min_for_len[n] || value > 0x10FFFF || (value >= 0xD800 && value <= 0xDFFF)) {
        return false;
    }
    out = value;
    len = static_cast<std::size_t>(n);
    return true;
}

} // namespace

bool decode_prefix(std::string_view bytes, char32_t & out, std::size_t & length) {
    if (bytes.empty()) {
        return false;
    }
    return decode_one(bytes, 0, out, length);
}

bool valid(std::string_view bytes) {
    std::size_t i = 0;
    while (i < bytes.size()) {
        char32_t c;
        std::size_t len;
        if (!decode_one(bytes, i, c, len)) {
            return false;
        }
        i += len;
    }
    return true;
}

std::u32string decode_lossy(std::string_view bytes, bool * lossy) {
    std::u32string out;
    out.reserve(bytes.size());
    bool any_bad = false;
    std::size_t i = 0;
    while (i < bytes.size()) {
        char32_t c;
        std::size_t len;
        if (decode_one(bytes, i, c, len)) {
            out.push_back(c);
            i += len;
        } else {
            out.push_back(replacement);
            any_bad = true;
            i += 1;
        }
    }
    if (lossy) {
        *lossy = any_bad;
    }
    return out;
}

void append_scalar(std::string & out, char32_t c) {
    if (c < 0x80) {
        out.push_back(static_cast<char>(c));
    } else if (c < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (c >> 6)));
        out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    } else if (c < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (c >> 12)));
        out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (c >> 18)));
        out.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    }
}

std::string encode(std::u32string_view scalars) {
    std::string out;
    out.reserve(scalars.size());
    for (char32_t c : scalars) {
        append_scalar(out, c);
    }
    return out;
}

} // namespace llmbroker::utf8
