#include "llmbroker/errors.hpp"

namespace llmbroker {

std::string_view errc_name(errc code) {
    switch (code) {
        case errc::invalid_text:            return "invalid_text";
        case errc::empty_context:           return "empty_context";
        case errc::empty_input:             return "empty_input";
        case errc::script_exhausted:        return "script_exhausted";
        case errc::script_violates_grammar: return "script_violates_grammar";
        case errc::parse_error:             return "parse_error";
        case errc::no_root_rule:            return "no_root_rule";
        case errc::unresolved_rule:         return "unresolved_rule";
        case errc::left_recursion:          return "left_recursion";
        case errc::rejected:                return "rejected";
        case errc::stack_limit:             return "stack_limit";
        case errc::no_valid_token:          return "no_valid_token";
        case errc::grammar_dead_end:        return "grammar_dead_end";
        case errc::unknown_session:         return "unknown_session";
        case errc::duplicate_session:       return "duplicate_session";
        case errc::corrupt_store:           return "corrupt_store";
        case errc::dim_mismatch:            return "dim_mismatch";
        case errc::store_write_error:       return "store_write_error";
        case errc::zero_query:              return "zero_query";
        case errc::empty_store:             return "empty_store";
        case errc::invalid_template:        return "invalid_template";
        case errc::invalid_policy:          return "invalid_policy";
        case errc::planning_failed:         return "planning_failed";
        case errc::unknown_action:          return "unknown_action";
        case errc::bad_plan_step:           return "bad_plan_step";
        case errc::precondition_failed:     return "precondition_failed";
        case errc::check_failed:            return "check_failed";
        case errc::bad_request:             return "bad_request";
        case errc::unsupported_type:        return "unsupported_type";
        case errc::frame_too_large:         return "frame_too_large";
        case errc::bind_failure:            return "bind_failure";
        case errc::bad_config:              return "bad_config";
        case errc::io_error:                return "io_error";
    }
    return "unknown";
}

std::string rejection_error::to_hex(char32_t c) {
    static const char digits[] = "0123456789ABCDEF";
    std::string out;
    for (int shift = 28; shift >= 0; shift -= 4) {
        int nibble = (static_cast<std::uint32_t>(c) >> shift) & 0xF;
        if (!out.empty() || nibble != 0 || shift < 16) {
            out.push_back(digits[nibble]);
        }
    }
    return out;
}

} // namespace llmbroker
