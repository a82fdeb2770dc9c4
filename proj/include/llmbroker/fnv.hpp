#pragma once

#include <cstdint>
#include <span>

namespace llmbroker {

inline constexpr std::uint64_t fnv_offset_basis = 0xcbf29ce484222325ull;
inline constexpr std::uint64_t fnv_prime = 0x100000001b3ull;

constexpr std::uint64_t fnv1a64_byte(std::uint64_t h, std::uint8_t b) {
    return (h ^ b) * fnv_prime;
}

constexpr std::uint64_t fnv1a64_le32(std::uint64_t h, std::uint32_t v) {
    h = fnv1a64_byte(h, static_cast<std::uint8_t>(v));
    h = fnv1a64_byte(h, static_cast<std::uint8_t>(v >> 8));
    h = fnv1a64_byte(h, static_cast<std::uint8_t>(v >> 16));
    h = fnv1a64_byte(h, static_cast<std::uint8_t>(v >> 24));
    return h;
}

constexpr std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                                std::uint64_t h = fnv_offset_basis) {
    for (std::uint8_t b : bytes) {
        h = fnv1a64_byte(h, b);
    }
    return h;
}

} // namespace llmbroker
