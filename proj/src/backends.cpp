#include "llmbroker/backends.hpp"

#include "llmbroker/errors.hpp"
#include "llmbroker/fnv.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

namespace llmbroker {

double dot(const embedding & a, const embedding & b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

double l2_norm(const embedding & v) {
    return std::sqrt(dot(v, v));
}

double cosine(const embedding & a, const embedding & b) {
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    return dot(a, b) / (na * nb);
}

logits_vector hash_lm::logits(const token_sequence & context) const {
    if (context.empty()) {
        throw error(errc::empty_context, "hash_lm requires a non-empty context");
    }
    std::uint64_t prefix = fnv_offset_basis;
    for (token_id id : context) {
        prefix = fnv1a64_le32(prefix, id);
    }
    logits_vector out(vocab_);
    for (token_id t = 0; t < vocab_; ++t) {
        const std::uint64_t h = fnv1a64_le32(prefix, t);
        out[t] = static_cast<double>(h % 1000003ull) / 1000003.0;
    }
    return out;
}

hash_embed::hash_embed(std::size_t dim) : dim_(dim) {
    if (dim == 0) {
        throw error(errc::bad_config, "embedding dimension must be >= 1");
    }
}

embedding hash_embed::embed(const token_sequence & tokens) const {
    if (tokens.empty()) {
        throw error(errc::empty_input, "cannot embed an empty token sequence");
    }
    embedding acc(dim_, 0.0);
    for (token_id t : tokens) {
        acc[fnv1a64_le32(fnv_offset_basis, t) % dim_] += 1.0;
    }
    const double norm = l2_norm(acc);
    for (double & v : acc) {
        v /= norm;
    }
    return acc;
}

scripted_lm::scripted_lm(std::vector<scripted_entry> entries, const merge_table * merges)
    : entries_(std::move(entries)), consumed_(entries_.size(), false), merges_(merges) {}

scripted_lm scripted_lm::load(const std::filesystem::path & path, const merge_table * merges) {
    std::ifstream in(path);
    if (!in) {
        throw error(errc::io_error, "cannot open scripted responses: " + path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception & e) {
        throw error(errc::bad_config, "scripted responses " + path.string() + ": " + e.what());
    }
    if (!doc.is_array()) {
        throw error(errc::bad_config, "scripted responses must be a JSON array");
    }
    std::vector<scripted_entry> entries;
    for (const auto & item : doc) {
        scripted_entry e;
        if (item.contains("match") && !item["match"].is_null()) {
            e.match = item["match"].get<std::string>();
        }
        e.completion = item.at("completion").get<std::string>();
        entries.push_back(std::move(e));
    }
    return scripted_lm(std::move(entries), merges);
}

void scripted_lm::begin_session(std::string_view prompt) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (consumed_[i]) {
            continue;
        }
        const auto & e = entries_[i];
        if (!e.match || prompt.find(*e.match) != std::string_view::npos) {
            consumed_[i] = true;
            active_tokens_ = tokenize(e.completion, merges_);
            active_pos_ = 0;
            session_open_ = true;
            return;
        }
    }
    throw error(errc::script_exhausted, "no unconsumed scripted entry matches the prompt");
}

token_id scripted_lm::next() {
    if (!session_open_) {
        throw error(errc::script_exhausted, "no active scripted session");
    }
    if (active_pos_ >= active_tokens_.size()) {
        return token_eos;
    }
    return active_tokens_[active_pos_++];
}

std::size_t scripted_lm::entries_remaining() const {
    std::size_t n = 0;
    for (bool c : consumed_) {
        n += c ? 0 : 1;
    }
    return n;
}

} // namespace llmbroker
