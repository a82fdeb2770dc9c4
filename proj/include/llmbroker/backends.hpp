#pragma once

#include "llmbroker/tokenizer.hpp"
#include "llmbroker/tokens.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace llmbroker {

// one score per vocabulary entry; -inf marks a masked token
using logits_vector = std::vector<double>;

using embedding = std::vector<double>;

double dot(const embedding & a, const embedding & b);
double l2_norm(const embedding & v);
double cosine(const embedding & a, const embedding & b);

// deterministic hash-based logits model. for candidate t against context c,
// the logit is (fnv1a64(le4-serialized c ++ [t]) mod 1000003) / 1000003.
class hash_lm {
public:
    explicit hash_lm(std::size_t vocab = base_vocab_size) : vocab_(vocab) {}

    std::size_t vocab_size() const { return vocab_; }
    logits_vector logits(const token_sequence & context) const;

private:
    std::size_t vocab_;
};

// deterministic bag-of-tokens embedder: token t adds unit mass at bucket
// fnv1a64(le4(t)) mod dim, then the accumulator is L2-normalized
class hash_embed {
public:
    explicit hash_embed(std::size_t dim = 64);

    std::size_t dim() const { return dim_; }
    embedding embed(const token_sequence & tokens) const;

private:
    std::size_t dim_;
};

struct scripted_entry {
    std::optional<std::string> match; // prompt substring; null matches any prompt
    std::string completion;
};

// playback model: entries are consumed in order, one per generation session.
// JSON file format: [{"match": string|null, "completion": string}, ...]
class scripted_lm {
public:
    explicit scripted_lm(std::vector<scripted_entry> entries, const merge_table * merges = nullptr);

    static scripted_lm load(const std::filesystem::path & path, const merge_table * merges = nullptr);

    // selects and consumes the first unconsumed entry matching the prompt
    // (substring match, or first matchless entry); throws script_exhausted
    void begin_session(std::string_view prompt);

    // next completion token for the active session; EOS once exhausted
    token_id next();

    std::size_t entries_remaining() const;

private:
    std::vector<scripted_entry> entries_;
    std::vector<bool> consumed_;
    const merge_table * merges_;
    token_sequence active_tokens_;
    std::size_t active_pos_ = 0;
    bool session_open_ = false;
};

// what a backend produces for one decoding step: either a logits vector for
// the sampler or a token forced by a playback script
using step_output = std::variant<logits_vector, token_id>;

struct step_input {
    const token_sequence & context;
    std::string_view prompt;
    std::string_view emitted;
};

class gen_backend {
public:
    virtual ~gen_backend() = default;

    virtual std::size_t vocab_size() const = 0;
    virtual void begin(std::string_view prompt) { (void)prompt; }
    virtual step_output step(const step_input & in) = 0;
};

class hash_backend final : public gen_backend {
public:
    explicit hash_backend(std::size_t vocab = base_vocab_size) : lm_(vocab) {}

    std::size_t vocab_size() const override { return lm_.vocab_size(); }
    step_output step(const step_input & in) override { return lm_.logits(in.context); }

private:
    hash_lm lm_;
};

class scripted_backend final : public gen_backend {
public:
    scripted_backend(scripted_lm lm, std::size_t vocab = base_vocab_size)
        : lm_(std::move(lm)), vocab_(vocab) {}

    std::size_t vocab_size() const override { return vocab_; }
    void begin(std::string_view prompt) override { lm_.begin_session(prompt); }
    step_output step(const step_input &) override { return lm_.next(); }

    scripted_lm & script() { return lm_; }

private:
    scripted_lm lm_;
    std::size_t vocab_;
};

} // namespace llmbroker
