#include "llmbroker/tokenizer.hpp"

#include "llmbroker/errors.hpp"
#include "llmbroker/utf8.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace llmbroker {

namespace {

std::uint64_t pair_key(token_id left, token_id right) {
    return (static_cast<std::uint64_t>(left) << 32) | right;
}

} // namespace

merge_table::merge_table(std::vector<merge_rule> rules) : rules_(std::move(rules)) {
    expanded_.reserve(rules_.size());
    for (std::size_t r = 0; r < rules_.size(); ++r) {
        const auto & rule = rules_[r];
        const token_id limit = token_merge_base + static_cast<token_id>(r);
        for (token_id side : {rule.left, rule.right}) {
            if (side >= limit || side == token_bos || side == token_eos) {
                throw error(errc::bad_config,
                            "merge rank " + std::to_string(r) + " refers to undefined or special token " +
                                std::to_string(side));
            }
        }
        auto side_bytes = [&](token_id id) -> std::string {
            if (id < 256) {
                return std::string(1, static_cast<char>(id));
            }
            return expanded_[id - token_merge_base];
        };
        expanded_.push_back(side_bytes(rule.left) + side_bytes(rule.right));
        rank_index_.emplace(pair_key(rule.left, rule.right), r);
    }
}

merge_table merge_table::parse(std::string_view text) {
    std::vector<merge_rule> rules;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::size_t start = line.find_first_not_of(" \t\r");
        if (start == std::string::npos || line[start] == '#') {
            continue;
        }
        std::istringstream fields(line);
        unsigned long left = 0;
        unsigned long right = 0;
        if (!(fields >> left >> right)) {
            throw error(errc::bad_config, "merge table line " + std::to_string(line_no) + ": expected `left right`");
        }
        std::string extra;
        if (fields >> extra) {
            throw error(errc::bad_config, "merge table line " + std::to_string(line_no) + ": trailing data");
        }
        rules.push_back({static_cast<token_id>(left), static_cast<token_id>(right)});
    }
    return merge_table(std::move(rules));
}

merge_table merge_table::load(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw error(errc::io_error, "cannot open merge table: " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

long merge_table::rank_of(token_id left, token_id right) const {
    auto it = rank_index_.find(pair_key(left, right));
    return it == rank_index_.end() ? -1 : static_cast<long>(it->second);
}

const std::string & merge_table::bytes_of(token_id id) const {
    if (id >= token_merge_base && id - token_merge_base < expanded_.size()) {
        return expanded_[id - token_merge_base];
    }
    throw error(errc::bad_config, "token id " + std::to_string(id) + " has no merge expansion");
}

std::size_t vocab_size(const merge_table * merges) {
    return base_vocab_size + (merges ? merges->size() : 0);
}

token_sequence tokenize(std::string_view text, const merge_table * merges) {
    if (!utf8::valid(text)) {
        throw error(errc::invalid_text, "input is not valid UTF-8");
    }
    token_sequence tokens;
    tokens.reserve(text.size());
    for (char c : text) {
        tokens.push_back(static_cast<std::uint8_t>(c));
    }
    if (!merges || merges->size() == 0) {
        return tokens;
    }
    for (;;) {
        long best_rank = -1;
        std::size_t best_pos = 0;
        for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
            long rank = merges->rank_of(tokens[i], tokens[i + 1]);
            if (rank >= 0 && (best_rank < 0 || rank < best_rank)) {
                best_rank = rank;
                best_pos = i;
            }
        }
        if (best_rank < 0) {
            break;
        }
        tokens[best_pos] = merges->result_of(static_cast<std::size_t>(best_rank));
        tokens.erase(tokens.begin() + static_cast<std::ptrdiff_t>(best_pos) + 1);
    }
    return tokens;
}

decode_result detokenize(const token_sequence & tokens, const merge_table * merges) {
    const std::size_t vocab = vocab_size(merges);
    std::string bytes;
    bytes.reserve(tokens.size());
    for (token_id id : tokens) {
        if (id >= vocab) {
            throw error(errc::invalid_text, "token id " + std::to_string(id) + " out of range");
        }
        if (id < 256) {
            bytes.push_back(static_cast<char>(id));
        } else if (id == token_bos || id == token_eos) {
            // special tokens are textless
        } else {
            bytes += merges->bytes_of(id);
        }
    }
    decode_result out;
    out.text = utf8::encode(utf8::decode_lossy(bytes, &out.lossy));
    return out;
}

std::vector<std::u32string> build_token_scalars(const merge_table * merges) {
    const std::size_t vocab = vocab_size(merges);
    std::vector<std::u32string> table(vocab);
    for (token_id id = 0; id < vocab; ++id) {
        if (id == token_bos || id == token_eos) {
            continue;
        }
        std::string bytes = id < 256 ? std::string(1, static_cast<char>(id)) : merges->bytes_of(id);
        table[id] = utf8::decode_lossy(bytes);
    }
    return table;
}

} // namespace llmbroker
