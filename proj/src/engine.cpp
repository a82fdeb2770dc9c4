#include "llmbroker/engine.hpp"

#include "llmbroker/errors.hpp"
#include "llmbroker/utf8.hpp"

#include <atomic>

namespace llmbroker {

namespace {

constexpr std::size_t max_finished_tombstones = 4096;

} // namespace

std::string_view to_string(gen_status s) {
    switch (s) {
        case gen_status::succeeded: return "succeeded";
        case gen_status::canceled:  return "canceled";
        case gen_status::failed:    return "failed";
    }
    return "unknown";
}

std::string_view to_string(finish_reason r) {
    switch (r) {
        case finish_reason::eos:              return "eos";
        case finish_reason::max_tokens:       return "max_tokens";
        case finish_reason::stop_string:      return "stop_string";
        case finish_reason::grammar_complete: return "grammar_complete";
        case finish_reason::canceled:         return "canceled";
        case finish_reason::error:            return "error";
    }
    return "unknown";
}

std::optional<finish_reason> check_stop(const stop_inputs & in) {
    if (in.canceled) {
        return finish_reason::canceled;
    }
    if (in.token && *in.token == token_eos) {
        if (in.state && in.state->accepts_complete()) {
            return finish_reason::grammar_complete;
        }
        return finish_reason::eos;
    }
    if (in.params && !in.params->stop.empty()) {
        std::size_t earliest = std::string_view::npos;
        for (const std::string & s : in.params->stop) {
            if (s.empty()) {
                continue;
            }
            const std::size_t pos = in.emitted.find(s);
            if (pos != std::string_view::npos && pos < earliest) {
                earliest = pos;
            }
        }
        if (earliest != std::string_view::npos) {
            if (in.stop_match_pos) {
                *in.stop_match_pos = earliest;
            }
            return finish_reason::stop_string;
        }
    }
    if (in.params && in.token_count >= static_cast<std::size_t>(in.params->max_tokens)) {
        return finish_reason::max_tokens;
    }
    return std::nullopt;
}

engine::engine(std::optional<merge_table> merges) : merges_(std::move(merges)) {
    const merge_table * table = merges_ ? &*merges_ : nullptr;
    token_scalars_ = build_token_scalars(table);
    token_texts_.reserve(token_scalars_.size());
    for (const auto & scalars : token_scalars_) {
        token_texts_.push_back(utf8::encode(scalars));
    }
}

std::shared_ptr<engine::session_ctl> engine::register_session(const std::string & id) {
    std::lock_guard lock(mutex_);
    auto [it, inserted] = live_.try_emplace(id, std::make_shared<session_ctl>());
    if (!inserted) {
        throw error(errc::duplicate_session, "session id '" + id + "' is already live");
    }
    return it->second;
}

void engine::finish_session(const std::string & id) {
    std::lock_guard lock(mutex_);
    live_.erase(id);
    if (finished_.insert(id).second) {
        finished_order_.push_back(id);
        if (finished_order_.size() > max_finished_tombstones) {
            finished_.erase(finished_order_.front());
            finished_order_.pop_front();
        }
    }
}

void engine::cancel(const std::string & session_id) {
    std::lock_guard lock(mutex_);
    if (auto it = live_.find(session_id); it != live_.end()) {
        it->second->cancel.store(true, std::memory_order_relaxed);
        return;
    }
    if (finished_.count(session_id)) {
        return; // canceling a finished session acknowledges and does nothing
    }
    throw error(errc::unknown_session, "unknown session '" + session_id + "'");
}

generation_result engine::generate(const generation_goal & goal, gen_backend & backend,
                                   const feedback_sink & emit) {
    // precondition checks happen before the session becomes visible
    const token_sequence prompt_tokens = tokenize(goal.prompt, merges());
    std::optional<grammar> gram;
    if (goal.grammar_source) {
        gram = grammar::parse(*goal.grammar_source);
    }
    if (backend.vocab_size() != vocab()) {
        throw error(errc::bad_config, "backend vocabulary does not match engine");
    }

    auto ctl = register_session(goal.session_id);

    generation_result result;
    result.session_id = goal.session_id;

    std::optional<grammar_state> gstate;
    if (gram) {
        gstate = grammar_state::init(*gram);
    }

    token_sequence context;
    context.reserve(prompt_tokens.size() + 1 +
                    static_cast<std::size_t>(std::max(goal.params.max_tokens, 0)));
    context.push_back(token_bos);
    context.insert(context.end(), prompt_tokens.begin(), prompt_tokens.end());

    std::string emitted;
    std::size_t count = 0;
    rng_state rng{goal.params.seed};

    auto finish = [&](finish_reason reason, std::size_t stop_pos = std::string::npos) {
        result.reason = reason;
        result.token_count = count;
        switch (reason) {
            case finish_reason::canceled:
                result.status = gen_status::canceled;
                result.text = emitted;
                break;
            case finish_reason::stop_string:
                result.status = gen_status::succeeded;
                result.text = emitted.substr(0, stop_pos);
                break;
            case finish_reason::error:
                result.status = gen_status::failed;
                result.text = emitted;
                break;
            default:
                result.status = gen_status::succeeded;
                result.text = emitted;
                break;
        }
        finish_session(goal.session_id);
    };

    try {
        backend.begin(goal.prompt);

        for (;;) {
            stop_inputs pre;
            pre.canceled = ctl->cancel.load(std::memory_order_relaxed);
            pre.emitted = emitted;
            pre.params = &goal.params;
            pre.token_count = count;
            if (auto reason = check_stop(pre)) {
                finish(*reason);
                return result;
            }

            step_output out = backend.step({context, goal.prompt, emitted});

            token_mask mask = gstate ? compute_token_mask(*gstate, token_scalars_)
                                     : token_mask::unconstrained(vocab());

            token_id next;
            if (const auto * forced = std::get_if<token_id>(&out)) {
                next = *forced;
                const bool ok = next == token_eos ? mask.eos_allowed
                                                  : (next < vocab() && mask.allowed[next]);
                if (!ok) {
                    throw error(errc::script_violates_grammar,
                                "scripted token " + std::to_string(next) +
                                    " is rejected by the active grammar");
                }
            } else {
                logits_vector masked;
                try {
                    masked = apply_mask(std::move(std::get<logits_vector>(out)), mask);
                } catch (const error & e) {
                    if (e.code() == errc::no_valid_token) {
                        throw error(errc::grammar_dead_end, "grammar dead end: every token is masked");
                    }
                    throw;
                }
                std::tie(next, rng) = sample(masked, goal.params, rng);
            }

            // a cancel that landed during the backend call wins over emitting
            if (ctl->cancel.load(std::memory_order_relaxed)) {
                finish(finish_reason::canceled);
                return result;
            }

            stop_inputs on_token;
            on_token.emitted = emitted;
            on_token.params = &goal.params;
            on_token.token = next;
            on_token.state = gstate ? &*gstate : nullptr;
            on_token.token_count = count;
            if (auto reason = check_stop(on_token)) {
                finish(*reason);
                return result;
            }

            feedback_chunk chunk{goal.session_id, count, next, token_texts_[next]};
            if (emit) {
                emit(chunk);
            }
            emitted += chunk.text;
            ++count;
            context.push_back(next);
            if (gstate) {
                for (char32_t ch : token_scalars_[next]) {
                    gstate->advance(ch); // mask guarantees consumability
                }
            }

            std::size_t stop_pos = std::string::npos;
            stop_inputs post;
            post.canceled = ctl->cancel.load(std::memory_order_relaxed);
            post.emitted = emitted;
            post.params = &goal.params;
            post.state = gstate ? &*gstate : nullptr;
            post.token_count = count;
            post.stop_match_pos = &stop_pos;
            if (auto reason = check_stop(post)) {
                finish(*reason, stop_pos);
                return result;
            }
        }
    } catch (const error & e) {
        result.error_code = e.code();
        result.error_message = std::string(errc_name(e.code())) + ": " + e.what();
        finish(finish_reason::error);
        return result;
    } catch (const std::exception & e) {
        result.error_message = e.what();
        finish(finish_reason::error);
        return result;
    }
}

} // namespace llmbroker
