#include "llmbroker/sampler.hpp"

#include "llmbroker/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace llmbroker {

namespace {

constexpr double neg_inf = -std::numeric_limits<double>::infinity();

} // namespace

logits_vector apply_mask(logits_vector logits, const token_mask & mask) {
    if (logits.size() != mask.allowed.size()) {
        throw error(errc::bad_request, "logits/mask length mismatch");
    }
    bool any_finite = false;
    for (std::size_t t = 0; t < logits.size(); ++t) {
        const bool keep = t == token_eos ? mask.eos_allowed : mask.allowed[t];
        if (!keep) {
            logits[t] = neg_inf;
        } else if (logits[t] != neg_inf) {
            any_finite = true;
        }
    }
    if (!any_finite) {
        throw error(errc::no_valid_token, "every token is masked");
    }
    return logits;
}

token_id greedy(const logits_vector & logits) {
    long best = -1;
    for (std::size_t t = 0; t < logits.size(); ++t) {
        if (logits[t] == neg_inf) {
            continue;
        }
        if (best < 0 || logits[t] > logits[static_cast<std::size_t>(best)]) {
            best = static_cast<long>(t);
        }
    }
    if (best < 0) {
        throw error(errc::no_valid_token, "no finite logit to pick from");
    }
    return static_cast<token_id>(best);
}

std::pair<token_id, rng_state> sample(const logits_vector & logits,
                                      const sampling_params & params,
                                      rng_state rng) {
    if (params.temperature == 0.0) {
        return {greedy(logits), rng};
    }

    std::vector<token_id> order;
    order.reserve(logits.size());
    for (std::size_t t = 0; t < logits.size(); ++t) {
        if (logits[t] != neg_inf) {
            order.push_back(static_cast<token_id>(t));
        }
    }
    if (order.empty()) {
        throw error(errc::no_valid_token, "no finite logit to sample from");
    }

    // softmax of logits / temperature, max-subtracted for stability
    double max_scaled = neg_inf;
    for (token_id t : order) {
        max_scaled = std::max(max_scaled, logits[t] / params.temperature);
    }
    std::vector<double> probs(logits.size(), 0.0);
    double z = 0.0;
    for (token_id t : order) {
        probs[t] = std::exp(logits[t] / params.temperature - max_scaled);
        z += probs[t];
    }
    for (token_id t : order) {
        probs[t] /= z;
    }

    // descending probability, ties by lowest id
    std::sort(order.begin(), order.end(), [&](token_id a, token_id b) {
        if (probs[a] != probs[b]) {
            return probs[a] > probs[b];
        }
        return a < b;
    });

    if (params.top_k > 0 && static_cast<std::size_t>(params.top_k) < order.size()) {
        order.resize(static_cast<std::size_t>(params.top_k));
    }
    if (params.top_p < 1.0) {
        double cum = 0.0;
        std::size_t keep = order.size();
        for (std::size_t i = 0; i < order.size(); ++i) {
            cum += probs[order[i]];
            if (cum >= params.top_p) {
                keep = i + 1;
                break;
            }
        }
        order.resize(keep);
    }

    double total = 0.0;
    for (token_id t : order) {
        total += probs[t];
    }

    const double u = rng.next_uniform();
    double cum = 0.0;
    for (token_id t : order) {
        cum += probs[t] / total;
        if (cum > u) {
            return {t, rng};
        }
    }
    return {order.back(), rng}; // u landed past accumulated rounding
}

} // namespace llmbroker
