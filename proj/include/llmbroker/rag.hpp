#pragma once

#include "llmbroker/backends.hpp"
#include "llmbroker/vectorstore.hpp"

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace llmbroker {

using embed_fn = std::function<embedding(std::string_view)>;

// tokenize + hash_embed composed, the default embedder everywhere
embed_fn make_hash_embedder(std::size_t dim = 64, const merge_table * merges = nullptr);

struct chunking_policy {
    enum class unit_kind { lines, chars };

    // throws invalid_policy unless size > 0 and overlap < size
    chunking_policy(unit_kind unit, std::size_t size, std::size_t overlap);
    chunking_policy() : chunking_policy(unit_kind::lines, 20, 5) {}

    unit_kind unit;
    std::size_t size;
    std::size_t overlap;

    std::size_t step() const { return size - overlap; }
};

// sliding windows of `size` units stepping by `size - overlap`; the final
// partial window is kept. line chunks keep their newlines so that with zero
// overlap the concatenation reproduces the document exactly.
std::vector<std::string> chunk(std::string_view text, const chunking_policy & policy);

struct document {
    std::string source;
    std::string text;
};

// chunks, embeds and inserts every document; whitespace-only chunks are
// skipped. meta carries {source, chunk_index}.
std::size_t ingest(vector_store & store, std::span<const document> docs,
                   const chunking_policy & policy, const embed_fn & embed);

struct retrieved_chunk {
    std::string text;
    double score;
};

// embeds the query and returns the top-k chunk texts in score order
std::vector<retrieved_chunk> retrieve(const vector_store & store, std::string_view query,
                                      std::size_t k, const embed_fn & embed);

// template text with {context} and {query}, each present exactly once
class prompt_template {
public:
    static prompt_template parse(std::string source); // throws invalid_template
    static prompt_template load(const std::filesystem::path & path);

    const std::string & source() const { return source_; }

    // {context} <- contexts joined with "\n---\n", {query} <- query verbatim
    std::string render(std::span<const std::string> contexts, std::string_view query) const;

private:
    explicit prompt_template(std::string source) : source_(std::move(source)) {}

    std::string source_;
};

} // namespace llmbroker
