#include "llmbroker/explain.hpp"

#include "llmbroker/errors.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <optional>

namespace llmbroker {

std::string_view to_string(log_level level) {
    switch (level) {
        case log_level::debug:  return "DEBUG";
        case log_level::info:   return "INFO";
        case log_level::warn:   return "WARN";
        case log_level::error_: return "ERROR";
        case log_level::fatal:  return "FATAL";
    }
    return "INFO";
}

namespace {

std::optional<log_level> level_from(std::string_view name) {
    if (name == "DEBUG") return log_level::debug;
    if (name == "INFO")  return log_level::info;
    if (name == "WARN")  return log_level::warn;
    if (name == "ERROR") return log_level::error_;
    if (name == "FATAL") return log_level::fatal;
    return std::nullopt;
}

// reads a `[...]` field starting at offset; returns the field body
std::optional<std::string_view> bracket_field(std::string_view line, std::size_t & offset) {
    if (offset >= line.size() || line[offset] != '[') {
        return std::nullopt;
    }
    const std::size_t close = line.find(']', offset + 1);
    if (close == std::string_view::npos) {
        return std::nullopt;
    }
    std::string_view body = line.substr(offset + 1, close - offset - 1);
    offset = close + 1;
    return body;
}

log_entry unstructured(std::string_view line) {
    log_entry e;
    e.level = log_level::info;
    e.node = "unknown";
    e.message = std::string(line);
    e.raw = std::string(line);
    e.structured = false;
    return e;
}

} // namespace

log_entry parse_log_line(std::string_view line) {
    std::size_t offset = 0;

    const auto ts_field = bracket_field(line, offset);
    if (!ts_field) {
        return unstructured(line);
    }
    double ts = 0.0;
    {
        const auto * first = ts_field->data();
        const auto * last = first + ts_field->size();
        auto [end, ec] = std::from_chars(first, last, ts);
        if (ec != std::errc() || end != last || !std::isfinite(ts)) {
            return unstructured(line);
        }
    }

    if (offset >= line.size() || line[offset] != ' ') {
        return unstructured(line);
    }
    ++offset;
    const auto level_field = bracket_field(line, offset);
    if (!level_field) {
        return unstructured(line);
    }
    const auto level = level_from(*level_field);
    if (!level) {
        return unstructured(line);
    }

    if (offset >= line.size() || line[offset] != ' ') {
        return unstructured(line);
    }
    ++offset;
    const auto node_field = bracket_field(line, offset);
    if (!node_field || node_field->empty()) {
        return unstructured(line);
    }

    if (offset >= line.size() || line[offset] != ' ') {
        return unstructured(line);
    }
    ++offset;

    log_entry e;
    e.timestamp = ts;
    e.level = *level;
    e.node = std::string(*node_field);
    e.message = std::string(line.substr(offset));
    e.raw = std::string(line);
    e.structured = true;
    return e;
}

std::size_t ingest_logs(vector_store & store, std::span<const std::string> lines,
                        const chunking_policy & policy, const embed_fn & embed) {
    std::size_t inserted = 0;
    for (std::size_t start = 0; start < lines.size(); start += policy.step()) {
        const std::size_t end = std::min(start + policy.size, lines.size());
        std::string piece;
        for (std::size_t i = start; i < end; ++i) {
            piece += lines[i];
            if (i + 1 < end) {
                piece += "\n";
            }
        }
        if (piece.find_first_not_of(" \t\r\n") == std::string::npos) {
            continue;
        }
        store.insert(piece, embed(piece),
                     {{"source", "log"},
                      {"first_line", std::to_string(start)},
                      {"last_line", std::to_string(end - 1)}});
        ++inserted;
    }
    return inserted;
}

answer ask(const vector_store & store, std::string_view question, engine & eng,
           gen_backend & backend, const explain_config & cfg) {
    if (store.count() == 0) {
        throw error(errc::empty_store, "the log store is empty");
    }
    const embed_fn embed = make_hash_embedder(store.dim(), eng.merges());
    answer out;
    out.citations = retrieve(store, question, cfg.k, embed);

    std::vector<std::string> contexts;
    for (const auto & c : out.citations) {
        contexts.push_back(c.text);
    }

    static std::atomic<std::uint64_t> counter{0};
    generation_goal goal;
    goal.session_id = "explain#" + std::to_string(counter.fetch_add(1));
    goal.prompt = cfg.tmpl.render(contexts, question);
    goal.params = cfg.params;
    goal.params.stop.push_back("\n\n");

    const generation_result result = eng.generate(goal, backend);
    if (result.status == gen_status::failed) {
        throw error(result.error_code.value_or(errc::check_failed), result.error_message);
    }
    out.text = result.text;
    return out;
}

} // namespace llmbroker
