#pragma once

#include "llmbroker/backends.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <vector>

namespace llmbroker {

struct vector_record {
    std::string id;                      // zero-padded decimal of seq
    std::string text;
    embedding values;
    std::map<std::string, std::string> meta;
    std::uint64_t seq = 0;
};

struct search_hit {
    vector_record record;
    double score = 0.0; // cosine similarity
};

// append-only persistent embedding store with exact cosine top-k search.
// file format: one JSON header line {"version":1,"dim":D}, then one JSON
// record per line. a torn final line is dropped on open (crash tolerance).
class vector_store {
public:
    // creates the file when absent; otherwise loads and validates it.
    // dim applies only at creation, existing stores keep their header dim.
    static vector_store open(const std::filesystem::path & path, std::size_t dim = 64);

    vector_store(vector_store &&) noexcept;
    vector_store & operator=(vector_store &&) noexcept;
    ~vector_store();

    std::size_t dim() const { return dim_; }
    std::size_t count() const;
    const std::filesystem::path & path() const { return path_; }

    // true when a truncated trailing record was dropped during open
    bool dropped_torn_record() const { return dropped_torn_record_; }

    // durably appends a record and returns its id
    std::string insert(std::string_view text, const embedding & values,
                       std::map<std::string, std::string> meta = {});

    // exact top-k by cosine similarity, ties broken by insertion order
    std::vector<search_hit> search(const embedding & query, std::size_t k) const;

    std::vector<vector_record> snapshot() const;

private:
    vector_store() : mutex_(std::make_unique<std::shared_mutex>()) {}

    void append_line(const std::string & line);

    std::filesystem::path path_;
    std::size_t dim_ = 0;
    bool dropped_torn_record_ = false;
    int fd_ = -1;
    std::vector<vector_record> records_;
    mutable std::unique_ptr<std::shared_mutex> mutex_;
};

} // namespace llmbroker
