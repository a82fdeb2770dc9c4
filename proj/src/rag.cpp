#include "llmbroker/rag.hpp"

#include "llmbroker/errors.hpp"
#include "llmbroker/tokenizer.hpp"
#include "llmbroker/utf8.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace llmbroker {

embed_fn make_hash_embedder(std::size_t dim, const merge_table * merges) {
    return [dim, merges](std::string_view text) {
        return hash_embed(dim).embed(tokenize(text, merges));
    };
}

chunking_policy::chunking_policy(unit_kind unit_, std::size_t size_, std::size_t overlap_)
    : unit(unit_), size(size_), overlap(overlap_) {
    if (size == 0 || overlap >= size) {
        throw error(errc::invalid_policy,
                    "chunking policy requires size > 0 and overlap < size (got size " +
                        std::to_string(size) + ", overlap " + std::to_string(overlap) + ")");
    }
}

namespace {

// line spans over the raw text, terminators included
std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start + 1));
        start = nl + 1;
    }
    return lines;
}

std::vector<std::string> chunk_units(const std::vector<std::string> & units,
                                     const chunking_policy & policy) {
    std::vector<std::string> chunks;
    for (std::size_t start = 0; start < units.size(); start += policy.step()) {
        std::string piece;
        const std::size_t end = std::min(start + policy.size, units.size());
        for (std::size_t i = start; i < end; ++i) {
            piece += units[i];
        }
        chunks.push_back(std::move(piece));
    }
    return chunks;
}

} // namespace

std::vector<std::string> chunk(std::string_view text, const chunking_policy & policy) {
    if (text.empty()) {
        return {};
    }
    std::vector<std::string> units;
    if (policy.unit == chunking_policy::unit_kind::lines) {
        for (std::string_view line : split_lines(text)) {
            units.emplace_back(line);
        }
    } else {
        // one unit per unicode scalar, so windows never split a character
        for (char32_t c : utf8::decode_lossy(text)) {
            std::string u;
            utf8::append_scalar(u, c);
            units.push_back(std::move(u));
        }
    }
    return chunk_units(units, policy);
}

namespace {

bool whitespace_only(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

} // namespace

std::size_t ingest(vector_store & store, std::span<const document> docs,
                   const chunking_policy & policy, const embed_fn & embed) {
    std::size_t inserted = 0;
    for (const document & doc : docs) {
        const std::vector<std::string> chunks = chunk(doc.text, policy);
        for (std::size_t i = 0; i < chunks.size(); ++i) {
            if (whitespace_only(chunks[i])) {
                continue;
            }
            store.insert(chunks[i], embed(chunks[i]),
                         {{"source", doc.source}, {"chunk_index", std::to_string(i)}});
            ++inserted;
        }
    }
    return inserted;
}

std::vector<retrieved_chunk> retrieve(const vector_store & store, std::string_view query,
                                      std::size_t k, const embed_fn & embed) {
    std::vector<retrieved_chunk> out;
    for (const search_hit & hit : store.search(embed(query), k)) {
        out.push_back({hit.record.text, hit.score});
    }
    return out;
}

prompt_template prompt_template::parse(std::string source) {
    auto count = [&](std::string_view needle) {
        std::size_t n = 0;
        std::size_t pos = 0;
        while ((pos = source.find(needle, pos)) != std::string::npos) {
            ++n;
            pos += needle.size();
        }
        return n;
    };
    if (count("{context}") != 1 || count("{query}") != 1) {
        throw error(errc::invalid_template,
                    "template must contain {context} and {query} exactly once each");
    }
    return prompt_template(std::move(source));
}

prompt_template prompt_template::load(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw error(errc::io_error, "cannot open template: " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::string prompt_template::render(std::span<const std::string> contexts,
                                    std::string_view query) const {
    std::string joined;
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        if (i > 0) {
            joined += "\n---\n";
        }
        joined += contexts[i];
    }
    // locate both placeholders before substituting so context text that
    // happens to contain a placeholder is never re-expanded
    std::string out = source_;
    const std::size_t cpos = out.find("{context}");
    const std::size_t qpos = out.find("{query}");
    if (cpos > qpos) {
        out.replace(cpos, 9, joined);
        out.replace(qpos, 7, query);
    } else {
        out.replace(qpos, 7, query);
        out.replace(cpos, 9, joined);
    }
    return out;
}

} // namespace llmbroker
