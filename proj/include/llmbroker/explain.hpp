#pragma once

#include "llmbroker/engine.hpp"
#include "llmbroker/rag.hpp"
#include "llmbroker/vectorstore.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace llmbroker {

enum class log_level { debug, info, warn, error_, fatal };

std::string_view to_string(log_level level);

struct log_entry {
    double timestamp = 0.0;
    log_level level = log_level::info;
    std::string node;
    std::string message;
    std::string raw;          // the original line, byte for byte
    bool structured = false;  // false for lines that did not match the format
};

// total function: parses `[<float>] [<LEVEL>] [<node>] <message>`, anything
// else becomes an unstructured INFO entry for node "unknown"
log_entry parse_log_line(std::string_view line);

// chunks raw lines by policy; meta {source:"log", first_line, last_line}
std::size_t ingest_logs(vector_store & store, std::span<const std::string> lines,
                        const chunking_policy & policy, const embed_fn & embed);

struct answer {
    std::string text;
    std::vector<retrieved_chunk> citations; // the retrieved contexts, rank order
};

struct explain_config {
    prompt_template tmpl;
    std::size_t k = 4;
    sampling_params params; // stop "\n\n" is applied on top
};

// retrieval-refined question answering over ingested logs
answer ask(const vector_store & store, std::string_view question, engine & eng,
           gen_backend & backend, const explain_config & cfg);

} // namespace llmbroker
