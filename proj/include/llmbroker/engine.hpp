#pragma once

#include "llmbroker/backends.hpp"
#include "llmbroker/errors.hpp"
#include "llmbroker/grammar.hpp"
#include "llmbroker/sampler.hpp"
#include "llmbroker/tokenizer.hpp"
#include "llmbroker/tokens.hpp"

#include <atomic>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>

namespace llmbroker {

struct generation_goal {
    std::string session_id;
    std::string prompt;
    sampling_params params;
    std::optional<std::string> grammar_source;
};

struct feedback_chunk {
    std::string session_id;
    std::size_t index;   // consecutive from 0
    token_id token;
    std::string text;    // detokenize([token])
};

enum class gen_status { succeeded, canceled, failed };
enum class finish_reason { eos, max_tokens, stop_string, grammar_complete, canceled, error };

std::string_view to_string(gen_status s);
std::string_view to_string(finish_reason r);

struct generation_result {
    std::string session_id;
    gen_status status = gen_status::succeeded;
    finish_reason reason = finish_reason::eos;
    std::string text;          // streamed chunks minus any stop-string suffix
    std::size_t token_count = 0;
    std::string error_message;      // only set when status == failed
    std::optional<errc> error_code; // ditto
};

using feedback_sink = std::function<void(const feedback_chunk &)>;

// inputs for one stop-condition evaluation at a token boundary.
// priority: canceled > grammar_complete-on-EOS > eos > stop_string > max_tokens
struct stop_inputs {
    bool canceled = false;
    std::string_view emitted;
    const sampling_params * params = nullptr;
    std::optional<token_id> token;            // token just produced, pre-emit
    const grammar_state * state = nullptr;    // active grammar state, if any
    std::size_t token_count = 0;
    std::size_t * stop_match_pos = nullptr;   // out: offset of the earliest stop match
};

std::optional<finish_reason> check_stop(const stop_inputs & in);

// the generation loop behind the action interface: context assembly, backend
// stepping, grammar masking, sampling, streaming feedback and cancellation.
class engine {
public:
    explicit engine(std::optional<merge_table> merges = std::nullopt);

    std::size_t vocab() const { return token_scalars_.size(); }
    const merge_table * merges() const { return merges_ ? &*merges_ : nullptr; }
    const std::vector<std::u32string> & token_scalars() const { return token_scalars_; }

    // runs the session to completion on the calling thread, streaming chunks
    // into emit. precondition failures (bad prompt/grammar/duplicate id)
    // throw; failures mid-generation produce a failed result instead.
    generation_result generate(const generation_goal & goal, gen_backend & backend,
                               const feedback_sink & emit = {});

    // requests a live session to stop within one token boundary; a no-op for
    // recently finished sessions. throws unknown_session otherwise.
    void cancel(const std::string & session_id);

private:
    struct session_ctl {
        std::atomic<bool> cancel{false};
    };

    std::shared_ptr<session_ctl> register_session(const std::string & id);
    void finish_session(const std::string & id);

    std::optional<merge_table> merges_;
    std::vector<std::u32string> token_scalars_;
    std::vector<std::string> token_texts_;

    std::mutex mutex_;
    std::unordered_map<std::string, std::shared_ptr<session_ctl>> live_;
    std::unordered_set<std::string> finished_;
    std::deque<std::string> finished_order_; // bounded tombstone set
};

} // namespace llmbroker
