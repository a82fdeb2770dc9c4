#include "llmbroker/grammar.hpp"

#include "llmbroker/errors.hpp"
#include "llmbroker/utf8.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace llmbroker {

namespace {

bool is_name_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '-' || c == '_';
}

} // namespace

bool element_matches(const gbnf_element & elem, char32_t ch) {
    if (const auto * lit = std::get_if<gbnf_literal>(&elem)) {
        return lit->ch == ch;
    }
    if (const auto * cls = std::get_if<gbnf_char_class>(&elem)) {
        bool in_range = false;
        for (const auto & r : cls->ranges) {
            if (r.lo <= ch && ch <= r.hi) {
                in_range = true;
                break;
            }
        }
        return in_range != cls->negated;
    }
    return false; // rule refs never sit on top of an expanded stack
}

// ---------------------------------------------------------------------------
// parser
// ---------------------------------------------------------------------------

class gbnf_parser {
public:
    explicit gbnf_parser(std::string_view src) : src_(src) {}

    grammar run() {
        skip_space(true);
        while (pos_ < src_.size()) {
            parse_rule();
        }
        validate();
        grammar g;
        g.rules_ = std::move(rules_);
        g.root_ = root_id_;
        return g;
    }

private:
    [[noreturn]] void fail(const std::string & message) const {
        int line = 1;
        int col = 1;
        for (std::size_t i = 0; i < pos_ && i < src_.size(); ++i) {
            if (src_[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw parse_error(message + " (line " + std::to_string(line) + ", column " +
                              std::to_string(col) + ")",
                          line, col);
    }

    char peek() const { return pos_ < src_.size() ? src_[pos_] : '\0'; }
    bool at_end() const { return pos_ >= src_.size(); }

    void skip_space(bool newline_ok) {
        while (pos_ < src_.size()) {
            const char c = src_[pos_];
            if (c == ' ' || c == '\t') {
                ++pos_;
            } else if (c == '#') {
                while (pos_ < src_.size() && src_[pos_] != '\n') {
                    ++pos_;
                }
            } else if (newline_ok && (c == '\r' || c == '\n')) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::string parse_name() {
        const std::size_t start = pos_;
        while (pos_ < src_.size() && is_name_char(src_[pos_])) {
            ++pos_;
        }
        if (pos_ == start) {
            fail("expected rule name");
        }
        return std::string(src_.substr(start, pos_ - start));
    }

    char32_t parse_hex_escape(int digits) {
        char32_t value = 0;
        for (int i = 0; i < digits; ++i) {
            if (at_end()) {
                fail("unterminated \\x escape");
            }
            const char c = src_[pos_];
            int nibble;
            if (c >= '0' && c <= '9') { nibble = c - '0'; }
            else if (c >= 'a' && c <= 'f') { nibble = c - 'a' + 10; }
            else if (c >= 'A' && c <= 'F') { nibble = c - 'A' + 10; }
            else { fail("expected hex digit in \\x escape"); }
            value = (value << 4) | static_cast<char32_t>(nibble);
            ++pos_;
        }
        return value;
    }

    // one character inside a quoted literal or a char class.
    // escapes: \n \t \" \\ \xHH
    char32_t parse_char() {
        if (at_end()) {
            fail("unexpected end of input");
        }
        if (src_[pos_] == '\\') {
            ++pos_;
            if (at_end()) {
                fail("unterminated escape");
            }
            const char e = src_[pos_++];
            switch (e) {
                case 'n': return U'\n';
                case 't': return U'\t';
                case '"': return U'"';
                case '\\': return U'\\';
                case 'x': return parse_hex_escape(2);
                default: fail(std::string("unknown escape \\") + e);
            }
        }
        char32_t scalar;
        std::size_t len;
        if (!utf8::decode_prefix(src_.substr(pos_), scalar, len)) {
            fail("malformed UTF-8 in grammar source");
        }
        pos_ += len;
        return scalar;
    }

    std::uint32_t intern(const std::string & name) {
        auto it = ids_.find(name);
        if (it != ids_.end()) {
            return it->second;
        }
        const auto id = static_cast<std::uint32_t>(rules_.size());
        ids_.emplace(name, id);
        rules_.push_back({name, {}});
        defined_.push_back(false);
        first_use_.push_back(pos_);
        return id;
    }

    std::uint32_t synth_rule(std::vector<gbnf_alternative> alts) {
        const auto id = static_cast<std::uint32_t>(rules_.size());
        rules_.push_back({"#synth" + std::to_string(id), std::move(alts)});
        defined_.push_back(true);
        first_use_.push_back(pos_);
        return id;
    }

    void parse_rule() {
        const std::string name = parse_name();
        skip_space(false);
        if (src_.substr(pos_, 3) != "::=") {
            fail("expected '::=' after rule name");
        }
        pos_ += 3;
        skip_space(true);

        const std::uint32_t id = intern(name);
        rules_[id].alts = parse_alternates(name, false);
        defined_[id] = true;

        if (!at_end()) {
            if (peek() == '\r') {
                ++pos_;
                if (peek() == '\n') {
                    ++pos_;
                }
            } else if (peek() == '\n') {
                ++pos_;
            } else {
                fail("expected newline after rule");
            }
        }
        skip_space(true);
    }

    std::vector<gbnf_alternative> parse_alternates(const std::string & base, bool nested) {
        std::vector<gbnf_alternative> alts;
        alts.push_back(parse_sequence(base, nested));
        while (peek() == '|') {
            ++pos_;
            skip_space(true);
            alts.push_back(parse_sequence(base, nested));
        }
        return alts;
    }

    gbnf_alternative parse_sequence(const std::string & base, bool nested) {
        gbnf_alternative alt;
        // start index of the most recent primary, for postfix operators
        std::size_t last = alt.size();
        bool has_last = false;

        auto require_last = [&](char op) {
            if (!has_last) {
                fail(std::string("'") + op + "' needs a preceding item");
            }
        };

        while (!at_end()) {
            const char c = peek();
            if (c == '"') {
                ++pos_;
                last = alt.size();
                has_last = true;
                while (peek() != '"') {
                    if (at_end()) {
                        fail("unterminated string literal");
                    }
                    alt.push_back(gbnf_literal{parse_char()});
                }
                ++pos_;
                skip_space(nested);
            } else if (c == '[') {
                ++pos_;
                gbnf_char_class cls;
                if (peek() == '^') {
                    ++pos_;
                    cls.negated = true;
                }
                while (peek() != ']') {
                    if (at_end()) {
                        fail("unterminated char class");
                    }
                    const char32_t lo = parse_char();
                    char32_t hi = lo;
                    if (peek() == '-' && pos_ + 1 < src_.size() && src_[pos_ + 1] != ']') {
                        ++pos_;
                        hi = parse_char();
                    }
                    if (lo > hi) {
                        fail("char class range out of order");
                    }
                    cls.ranges.push_back({lo, hi});
                }
                ++pos_;
                last = alt.size();
                has_last = true;
                alt.push_back(std::move(cls));
                skip_space(nested);
            } else if (c == '(') {
                ++pos_;
                skip_space(true);
                std::vector<gbnf_alternative> inner = parse_alternates(base, true);
                if (peek() != ')') {
                    fail("expected ')'");
                }
                ++pos_;
                last = alt.size();
                has_last = true;
                alt.push_back(gbnf_rule_ref{synth_rule(std::move(inner))});
                skip_space(nested);
            } else if (is_name_char(c)) {
                const std::string ref_name = parse_name();
                last = alt.size();
                has_last = true;
                alt.push_back(gbnf_rule_ref{intern(ref_name)});
                skip_space(nested);
            } else if (c == '*') {
                require_last('*');
                ++pos_;
                apply_star(alt, last);
                skip_space(nested);
            } else if (c == '+') {
                require_last('+');
                ++pos_;
                apply_plus(alt, last);
                skip_space(nested);
            } else if (c == '?') {
                require_last('?');
                ++pos_;
                apply_optional(alt, last);
                skip_space(nested);
            } else {
                break;
            }
        }
        return alt;
    }

    // e* -> fresh rule r ::= e r | <empty>; e replaced by a ref to r
    void apply_star(gbnf_alternative & alt, std::size_t start) {
        gbnf_alternative body(alt.begin() + static_cast<std::ptrdiff_t>(start), alt.end());
        alt.resize(start);
        const std::uint32_t id = static_cast<std::uint32_t>(rules_.size());
        body.push_back(gbnf_rule_ref{id});
        synth_rule({std::move(body), {}});
        alt.push_back(gbnf_rule_ref{id});
    }

    // e+ -> e followed by the star rule of e
    void apply_plus(gbnf_alternative & alt, std::size_t start) {
        gbnf_alternative body(alt.begin() + static_cast<std::ptrdiff_t>(start), alt.end());
        const std::uint32_t id = static_cast<std::uint32_t>(rules_.size());
        body.push_back(gbnf_rule_ref{id});
        synth_rule({std::move(body), {}});
        alt.push_back(gbnf_rule_ref{id});
    }

    // e? -> fresh rule r ::= e | <empty>
    void apply_optional(gbnf_alternative & alt, std::size_t start) {
        gbnf_alternative body(alt.begin() + static_cast<std::ptrdiff_t>(start), alt.end());
        alt.resize(start);
        alt.push_back(gbnf_rule_ref{synth_rule({std::move(body), {}})});
    }

    void validate() {
        auto root_it = ids_.find("root");
        if (root_it == ids_.end() || !defined_[root_it->second]) {
            throw error(errc::no_root_rule, "grammar has no 'root' rule");
        }
        root_id_ = root_it->second;
        for (std::size_t i = 0; i < rules_.size(); ++i) {
            if (!defined_[i]) {
                throw error(errc::unresolved_rule, "rule '" + rules_[i].name + "' is referenced but never defined");
            }
        }
    }

    std::string_view src_;
    std::size_t pos_ = 0;
    std::vector<gbnf_rule> rules_;
    std::vector<bool> defined_;
    std::vector<std::size_t> first_use_;
    std::unordered_map<std::string, std::uint32_t> ids_;
    std::uint32_t root_id_ = 0;
};

grammar grammar::parse(std::string_view source) {
    return gbnf_parser(source).run();
}

grammar grammar::load(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw error(errc::io_error, "cannot open grammar: " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

// ---------------------------------------------------------------------------
// recognizer
// ---------------------------------------------------------------------------

namespace {

void push_unique(std::vector<parse_stack> & out, parse_stack st) {
    if (std::find(out.begin(), out.end(), st) != out.end()) {
        return;
    }
    if (out.size() >= grammar_max_stacks) {
        throw error(errc::stack_limit,
                    "grammar state exceeded " + std::to_string(grammar_max_stacks) + " parse stacks");
    }
    out.push_back(std::move(st));
}

// replaces a rule-ref top with every alternative of the target rule until a
// terminal (or nothing) tops each resulting stack
void expand_stack(const grammar & g, parse_stack st, std::vector<parse_stack> & out, int depth) {
    if (depth > grammar_max_expansion_depth) {
        throw error(errc::left_recursion,
                    "rule expansion exceeded depth " + std::to_string(grammar_max_expansion_depth));
    }
    if (st.empty()) {
        push_unique(out, std::move(st));
        return;
    }
    const elem_pos top = st.back();
    const gbnf_alternative & alt = g.rule(top.rule).alts[top.alt];
    const gbnf_element & elem = alt[top.idx];

    if (const auto * ref = std::get_if<gbnf_rule_ref>(&elem)) {
        st.pop_back();
        const bool has_continuation = top.idx + 1 < alt.size();
        const gbnf_rule & target = g.rule(ref->rule);
        for (std::uint32_t a = 0; a < target.alts.size(); ++a) {
            parse_stack next = st;
            if (has_continuation) {
                next.push_back({top.rule, top.alt, top.idx + 1});
            }
            if (!target.alts[a].empty()) {
                next.push_back({ref->rule, a, 0});
            }
            expand_stack(g, std::move(next), out, depth + 1);
        }
    } else {
        push_unique(out, std::move(st));
    }
}

const gbnf_element & top_element(const grammar & g, const elem_pos & top) {
    return g.rule(top.rule).alts[top.alt][top.idx];
}

// pops the consumed terminal and expands whatever follows it
void advance_past_top(const grammar & g, const parse_stack & st, std::vector<parse_stack> & out) {
    const elem_pos top = st.back();
    parse_stack succ(st.begin(), st.end() - 1);
    if (top.idx + 1 < g.rule(top.rule).alts[top.alt].size()) {
        succ.push_back({top.rule, top.alt, top.idx + 1});
    }
    expand_stack(g, std::move(succ), out, 0);
}

} // namespace

grammar_state grammar_state::init(const grammar & g) {
    grammar_state state;
    state.grammar_ = &g;
    const gbnf_rule & root = g.rule(g.root());
    for (std::uint32_t a = 0; a < root.alts.size(); ++a) {
        parse_stack st;
        if (!root.alts[a].empty()) {
            st.push_back({g.root(), a, 0});
        }
        expand_stack(g, std::move(st), state.stacks_, 0);
    }
    return state;
}

void grammar_state::advance(char32_t ch) {
    std::vector<parse_stack> next;
    for (const parse_stack & st : stacks_) {
        if (st.empty()) {
            continue; // a completed parse consumes nothing
        }
        if (!element_matches(top_element(*grammar_, st.back()), ch)) {
            continue;
        }
        advance_past_top(*grammar_, st, next);
    }
    if (next.empty()) {
        throw rejection_error(ch, consumed_);
    }
    stacks_ = std::move(next);
    ++consumed_;
}

bool grammar_state::accepts_complete() const {
    return std::any_of(stacks_.begin(), stacks_.end(),
                       [](const parse_stack & st) { return st.empty(); });
}

token_mask token_mask::unconstrained(std::size_t vocab) {
    token_mask mask;
    mask.allowed.assign(vocab, true);
    if (token_bos < vocab) {
        mask.allowed[token_bos] = false;
    }
    mask.eos_allowed = true;
    return mask;
}

namespace {

struct mask_candidate {
    token_id id;
    const char32_t * pos;
    const char32_t * end;
};

std::vector<mask_candidate> reject_for_stack(const grammar & g, const parse_stack & stack,
                                             const std::vector<mask_candidate> & cands);

// candidates rejected by every stack in the set
std::vector<mask_candidate> reject_candidates(const grammar & g,
                                              const std::vector<parse_stack> & stacks,
                                              std::vector<mask_candidate> cands) {
    if (cands.empty() || stacks.empty()) {
        return cands;
    }
    std::vector<mask_candidate> rejects = reject_for_stack(g, stacks.front(), cands);
    for (std::size_t i = 1; i < stacks.size() && !rejects.empty(); ++i) {
        rejects = reject_for_stack(g, stacks[i], rejects);
    }
    return rejects;
}

std::vector<mask_candidate> reject_for_stack(const grammar & g, const parse_stack & stack,
                                             const std::vector<mask_candidate> & cands) {
    std::vector<mask_candidate> rejects;
    if (stack.empty()) {
        // a completed parse consumes nothing: reject any candidate with text left
        for (const auto & c : cands) {
            if (c.pos != c.end) {
                rejects.push_back(c);
            }
        }
        return rejects;
    }

    const gbnf_element & elem = top_element(g, stack.back());
    std::vector<mask_candidate> survivors;
    survivors.reserve(cands.size());
    for (const auto & c : cands) {
        if (c.pos == c.end) {
            continue; // whole token text consumed: accepted by this stack
        }
        if (element_matches(elem, *c.pos)) {
            survivors.push_back({c.id, c.pos + 1, c.end});
        } else {
            rejects.push_back(c);
        }
    }
    if (survivors.empty()) {
        return rejects;
    }

    std::vector<parse_stack> next_stacks;
    advance_past_top(g, stack, next_stacks);
    for (const auto & r : reject_candidates(g, next_stacks, std::move(survivors))) {
        rejects.push_back({r.id, r.pos - 1, r.end});
    }
    return rejects;
}

} // namespace

token_mask compute_token_mask(const grammar_state & state,
                              const std::vector<std::u32string> & token_scalars) {
    const std::size_t vocab = token_scalars.size();
    token_mask mask;
    mask.allowed.assign(vocab, false);

    std::vector<mask_candidate> cands;
    cands.reserve(vocab);
    for (token_id t = 0; t < vocab; ++t) {
        const std::u32string & text = token_scalars[t];
        if (text.empty()) {
            continue; // textless specials are never maskable-in
        }
        cands.push_back({t, text.data(), text.data() + text.size()});
        mask.allowed[t] = true;
    }
    for (const auto & r : reject_candidates(state.owner(), state.stacks(), std::move(cands))) {
        mask.allowed[r.id] = false;
    }
    mask.eos_allowed = state.accepts_complete();
    return mask;
}

} // namespace llmbroker
