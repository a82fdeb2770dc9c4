#pragma once

#include "llmbroker/tokens.hpp"

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace llmbroker {

struct merge_rule {
    token_id left;
    token_id right;
};

// ordered BPE-style merge table. the result id of the rule at rank r is
// token_merge_base + r; left/right may only name bytes or earlier merges.
class merge_table {
public:
    merge_table() = default;
    explicit merge_table(std::vector<merge_rule> rules);

    // text format: one `left right` pair per line (decimal token ids),
    // rank = entry order; `#` starts a comment line
    static merge_table load(const std::filesystem::path & path);
    static merge_table parse(std::string_view text);

    std::size_t size() const { return rules_.size(); }
    const std::vector<merge_rule> & rules() const { return rules_; }
    token_id result_of(std::size_t rank) const { return token_merge_base + static_cast<token_id>(rank); }

    // rank of the merge producing (left,right), or -1
    long rank_of(token_id left, token_id right) const;

    // fully expanded byte string of any token id valid under this table
    const std::string & bytes_of(token_id id) const;

private:
    std::vector<merge_rule> rules_;
    std::unordered_map<std::uint64_t, std::size_t> rank_index_;
    std::vector<std::string> expanded_; // expanded_[r] = bytes of token_merge_base + r
};

std::size_t vocab_size(const merge_table * merges);

// byte-level tokenization; with a merge table, repeatedly applies the
// lowest-ranked applicable merge (leftmost occurrence on rank ties).
// BOS/EOS are never added here. throws errc::invalid_text on bad UTF-8.
token_sequence tokenize(std::string_view text, const merge_table * merges = nullptr);

struct decode_result {
    std::string text;
    bool lossy = false; // replacement characters were substituted
};

// inverse of tokenize on valid text; BOS/EOS decode to nothing; bytes that do
// not form valid UTF-8 decode to U+FFFD with the lossy flag set
decode_result detokenize(const token_sequence & tokens, const merge_table * merges = nullptr);

// per-token text table for the whole vocabulary, as unicode scalars;
// BOS/EOS entries are empty. used by the grammar mask hot path.
std::vector<std::u32string> build_token_scalars(const merge_table * merges = nullptr);

} // namespace llmbroker
