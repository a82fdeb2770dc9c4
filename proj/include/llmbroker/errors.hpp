#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace llmbroker {

enum class errc {
    // tokenizer
    invalid_text,
    // backends
    empty_context,
    empty_input,
    script_exhausted,
    script_violates_grammar,
    // grammar
    parse_error,
    no_root_rule,
    unresolved_rule,
    left_recursion,
    rejected,
    stack_limit,
    // sampler / engine
    no_valid_token,
    grammar_dead_end,
    unknown_session,
    duplicate_session,
    // vector store
    corrupt_store,
    dim_mismatch,
    store_write_error,
    zero_query,
    empty_store,
    // rag / planner / explain
    invalid_template,
    invalid_policy,
    planning_failed,
    unknown_action,
    bad_plan_step,
    precondition_failed,
    check_failed,
    // broker / cli
    bad_request,
    unsupported_type,
    frame_too_large,
    bind_failure,
    bad_config,
    io_error,
};

// snake_case name used on the wire and in CLI error documents
std::string_view errc_name(errc code);

class error : public std::runtime_error {
public:
    error(errc code, std::string message)
        : std::runtime_error(std::move(message)), code_(code) {}

    errc code() const { return code_; }

private:
    errc code_;
};

// grammar syntax error with source location
class parse_error : public error {
public:
    parse_error(std::string message, int line, int column)
        : error(errc::parse_error, std::move(message)), line_(line), column_(column) {}

    int line() const { return line_; }
    int column() const { return column_; }

private:
    int line_;
    int column_;
};

// recognizer rejected a character mid-stream
class rejection_error : public error {
public:
    rejection_error(char32_t ch, std::size_t position)
        : error(errc::rejected,
                "grammar rejected character U+" + to_hex(ch) + " at position " + std::to_string(position)),
          ch_(ch), position_(position) {}

    char32_t ch() const { return ch_; }
    std::size_t position() const { return position_; }

private:
    static std::string to_hex(char32_t c);

    char32_t ch_;
    std::size_t position_;
};

} // namespace llmbroker
