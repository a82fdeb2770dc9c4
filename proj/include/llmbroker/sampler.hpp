#pragma once

#include "llmbroker/backends.hpp"
#include "llmbroker/grammar.hpp"
#include "llmbroker/tokens.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace llmbroker {

struct sampling_params {
    std::uint64_t seed = 0;
    double temperature = 0.0; // 0 = greedy, regardless of the other knobs
    int top_k = 0;            // 0 = off
    double top_p = 1.0;       // 1 = off
    int max_tokens = 256;
    std::vector<std::string> stop;
};

// splitmix64; value type, never shared
struct rng_state {
    std::uint64_t state = 0;

    std::uint64_t next_u64() {
        state += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // uniform in [0,1) with 53 bits
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }
};

// sets disallowed entries to -inf; the EOS entry survives iff eos_allowed.
// throws no_valid_token when nothing is left finite.
logits_vector apply_mask(logits_vector logits, const token_mask & mask);

// argmax over finite entries, ties broken by lowest token id
token_id greedy(const logits_vector & logits);

// temperature -> softmax -> top-k -> nucleus -> inverse CDF.
// rng is taken and returned by value (no shared mutable randomness).
std::pair<token_id, rng_state> sample(const logits_vector & logits,
                                      const sampling_params & params,
                                      rng_state rng);

} // namespace llmbroker
