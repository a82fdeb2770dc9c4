#pragma once

#include "llmbroker/tokens.hpp"

#include <compare>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace llmbroker {

// GBNF grammar compiled to flat alternatives. groups and the postfix
// repetition operators are desugared into synthesized rules at parse time,
// so every alternative is a plain sequence of the three element kinds below.

struct gbnf_char_range {
    char32_t lo;
    char32_t hi;
};

struct gbnf_literal {
    char32_t ch;
};

struct gbnf_char_class {
    std::vector<gbnf_char_range> ranges;
    bool negated = false;
};

struct gbnf_rule_ref {
    std::uint32_t rule;
};

using gbnf_element = std::variant<gbnf_literal, gbnf_char_class, gbnf_rule_ref>;
using gbnf_alternative = std::vector<gbnf_element>;

struct gbnf_rule {
    std::string name;
    std::vector<gbnf_alternative> alts;
};

bool element_matches(const gbnf_element & elem, char32_t ch);

class grammar {
public:
    static grammar parse(std::string_view source);
    static grammar load(const std::filesystem::path & path);

    const gbnf_rule & rule(std::uint32_t id) const { return rules_[id]; }
    std::size_t rule_count() const { return rules_.size(); }
    std::uint32_t root() const { return root_; }

private:
    friend class gbnf_parser;

    std::vector<gbnf_rule> rules_;
    std::uint32_t root_ = 0;
};

// position inside a grammar: the idx-th element of one alternative of one
// rule. a parse stack is the sequence of positions still to be matched,
// with the next terminal on top (the back).
struct elem_pos {
    std::uint32_t rule;
    std::uint32_t alt;
    std::uint32_t idx;

    friend auto operator<=>(const elem_pos &, const elem_pos &) = default;
};

using parse_stack = std::vector<elem_pos>;

// resource bounds; exceeding either is an error, never silent truncation
inline constexpr std::size_t grammar_max_stacks = 4096;
inline constexpr int grammar_max_expansion_depth = 4096;

// the live set of parse stacks of an incremental character-level recognizer.
// copyable; a copy advances independently of the original.
class grammar_state {
public:
    static grammar_state init(const grammar & g);

    // consumes one unicode scalar; throws rejection_error (state unchanged)
    // if no stack survives
    void advance(char32_t ch);

    // true iff the consumed prefix is a complete sentence of the grammar
    bool accepts_complete() const;

    // scalars consumed so far
    std::size_t consumed() const { return consumed_; }

    const std::vector<parse_stack> & stacks() const { return stacks_; }
    const grammar & owner() const { return *grammar_; }

private:
    grammar_state() = default;

    const grammar * grammar_ = nullptr;
    std::vector<parse_stack> stacks_;
    std::size_t consumed_ = 0;
};

struct token_mask {
    std::vector<bool> allowed; // BOS is always false
    bool eos_allowed = false;

    // no grammar: every token except BOS, EOS permitted
    static token_mask unconstrained(std::size_t vocab);
};

// computes the set of vocabulary tokens whose full text the recognizer can
// consume from this state. token_scalars[t] is the text of token t as
// unicode scalars (empty for the textless specials, which are never allowed).
// walks candidates per stack so shared prefixes are filtered once, rather
// than replaying the recognizer per token.
token_mask compute_token_mask(const grammar_state & state,
                              const std::vector<std::u32string> & token_scalars);

} // namespace llmbroker
