#include "llmbroker/vectorstore.hpp"

#include "llmbroker/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>

#include <fcntl.h>
#include <unistd.h>

namespace llmbroker {

namespace {

std::string format_id(std::uint64_t seq) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%08llu", static_cast<unsigned long long>(seq));
    return buf;
}

nlohmann::json record_to_json(const vector_record & rec) {
    return nlohmann::json{{"id", rec.id},
                          {"seq", rec.seq},
                          {"text", rec.text},
                          {"embedding", rec.values},
                          {"meta", rec.meta}};
}

vector_record record_from_json(const nlohmann::json & j) {
    vector_record rec;
    rec.id = j.at("id").get<std::string>();
    rec.seq = j.at("seq").get<std::uint64_t>();
    rec.text = j.at("text").get<std::string>();
    rec.values = j.at("embedding").get<embedding>();
    rec.meta = j.at("meta").get<std::map<std::string, std::string>>();
    return rec;
}

std::string slurp(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw error(errc::io_error, "cannot open store " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

} // namespace

vector_store::vector_store(vector_store && other) noexcept
    : path_(std::move(other.path_)),
      dim_(other.dim_),
      dropped_torn_record_(other.dropped_torn_record_),
      fd_(other.fd_),
      records_(std::move(other.records_)),
      mutex_(std::move(other.mutex_)) {
    other.fd_ = -1;
}

vector_store & vector_store::operator=(vector_store && other) noexcept {
    if (this != &other) {
        if (fd_ >= 0) {
            ::close(fd_);
        }
        path_ = std::move(other.path_);
        dim_ = other.dim_;
        dropped_torn_record_ = other.dropped_torn_record_;
        fd_ = other.fd_;
        records_ = std::move(other.records_);
        mutex_ = std::move(other.mutex_);
        other.fd_ = -1;
    }
    return *this;
}

vector_store::~vector_store() {
    if (fd_ >= 0) {
        ::close(fd_);
    }
}

vector_store vector_store::open(const std::filesystem::path & path, std::size_t dim) {
    if (dim == 0) {
        throw error(errc::bad_config, "store dimension must be >= 1");
    }
    vector_store store;
    store.path_ = path;

    std::string contents;
    if (std::filesystem::exists(path)) {
        contents = slurp(path);
    }

    // complete lines end in '\n'; anything after the final '\n' is a torn
    // in-flight write and gets dropped
    std::vector<std::string_view> lines;
    std::size_t kept_bytes = 0;
    {
        std::string_view rest = contents;
        std::size_t nl;
        while ((nl = rest.find('\n')) != std::string_view::npos) {
            lines.push_back(rest.substr(0, nl));
            kept_bytes += nl + 1;
            rest.remove_prefix(nl + 1);
        }
        store.dropped_torn_record_ = !rest.empty();
    }

    store.fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (store.fd_ < 0) {
        throw error(errc::store_write_error,
                    "cannot open store " + path.string() + ": " + std::strerror(errno));
    }

    if (lines.empty()) {
        // fresh store, or a creation that died before the header landed
        if (store.dropped_torn_record_ && ::ftruncate(store.fd_, 0) != 0) {
            throw error(errc::store_write_error,
                        "cannot reset torn store: " + std::string(std::strerror(errno)));
        }
        store.dim_ = dim;
        store.append_line(nlohmann::json{{"version", 1}, {"dim", dim}}.dump() + "\n");
        return store;
    }

    try {
        const auto header = nlohmann::json::parse(lines[0]);
        if (header.at("version").get<int>() != 1) {
            throw error(errc::corrupt_store, "unsupported store version in " + path.string());
        }
        store.dim_ = header.at("dim").get<std::size_t>();
    } catch (const nlohmann::json::exception & e) {
        throw error(errc::corrupt_store, "bad store header: " + std::string(e.what()));
    }
    if (store.dim_ == 0) {
        throw error(errc::corrupt_store, "store header declares dim 0");
    }

    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::uint64_t expect_seq = i - 1;
        vector_record rec;
        try {
            rec = record_from_json(nlohmann::json::parse(lines[i]));
        } catch (const nlohmann::json::exception & e) {
            throw error(errc::corrupt_store,
                        "corrupt record at seq " + std::to_string(expect_seq) + ": " + e.what());
        }
        if (rec.values.size() != store.dim_ || rec.seq != expect_seq) {
            throw error(errc::corrupt_store,
                        "inconsistent record at seq " + std::to_string(expect_seq));
        }
        store.records_.push_back(std::move(rec));
    }

    if (store.dropped_torn_record_ &&
        ::ftruncate(store.fd_, static_cast<off_t>(kept_bytes)) != 0) {
        throw error(errc::store_write_error,
                    "cannot truncate torn tail: " + std::string(std::strerror(errno)));
    }
    return store;
}

void vector_store::append_line(const std::string & line) {
    const char * data = line.data();
    std::size_t remaining = line.size();
    while (remaining > 0) {
        const ssize_t n = ::write(fd_, data, remaining);
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            throw error(errc::store_write_error,
                        "store append failed: " + std::string(std::strerror(errno)));
        }
        data += n;
        remaining -= static_cast<std::size_t>(n);
    }
}

std::size_t vector_store::count() const {
    std::shared_lock lock(*mutex_);
    return records_.size();
}

std::string vector_store::insert(std::string_view text, const embedding & values,
                                 std::map<std::string, std::string> meta) {
    if (values.size() != dim_) {
        throw error(errc::dim_mismatch,
                    "embedding dim " + std::to_string(values.size()) + " does not match store dim " +
                        std::to_string(dim_));
    }
    std::unique_lock lock(*mutex_);
    vector_record rec;
    rec.seq = records_.size();
    rec.id = format_id(rec.seq);
    rec.text = std::string(text);
    rec.values = values;
    rec.meta = std::move(meta);

    append_line(record_to_json(rec).dump() + "\n");
    records_.push_back(std::move(rec));
    return records_.back().id;
}

std::vector<search_hit> vector_store::search(const embedding & query, std::size_t k) const {
    if (query.size() != dim_) {
        throw error(errc::dim_mismatch, "query dim does not match store dim");
    }
    if (l2_norm(query) == 0.0) {
        throw error(errc::zero_query, "query embedding has zero norm");
    }
    std::shared_lock lock(*mutex_);
    std::vector<search_hit> hits;
    hits.reserve(records_.size());
    for (const auto & rec : records_) {
        hits.push_back({rec, cosine(query, rec.values)});
    }
    std::sort(hits.begin(), hits.end(), [](const search_hit & a, const search_hit & b) {
        if (a.score != b.score) {
            return a.score > b.score;
        }
        return a.record.seq < b.record.seq;
    });
    if (hits.size() > k) {
        hits.resize(k);
    }
    return hits;
}

std::vector<vector_record> vector_store::snapshot() const {
    std::shared_lock lock(*mutex_);
    return records_;
}

} // namespace llmbroker
