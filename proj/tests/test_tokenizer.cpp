#include "llmbroker/tokenizer.hpp"

#include "llmbroker/errors.hpp"
#include "llmbroker/utf8.hpp"

#include <doctest.h>

#include <list>
#include <random>

using namespace llmbroker;

namespace {

// scratch merge oracle: list-based, rescans every pass, picks the single
// lowest-rank pair (leftmost on ties) and applies exactly one merge
token_sequence oracle_merge(const std::string & text, const merge_table & merges) {
    std::list<token_id> toks;
    for (char c : text) {
        toks.push_back(static_cast<std::uint8_t>(c));
    }
    for (;;) {
        long best_rank = -1;
        std::list<token_id>::iterator best_it = toks.end();
        for (auto it = toks.begin(); it != toks.end(); ++it) {
            auto nxt = std::next(it);
            if (nxt == toks.end()) {
                break;
            }
            for (std::size_t r = 0; r < merges.rules().size(); ++r) {
                if (merges.rules()[r].left == *it && merges.rules()[r].right == *nxt) {
                    if (best_rank < 0 || static_cast<long>(r) < best_rank) {
                        best_rank = static_cast<long>(r);
                        best_it = it;
                    }
                    break; // ranks scan low to high; first hit is this pair's rank
                }
            }
        }
        if (best_rank < 0) {
            break;
        }
        const token_id merged = merges.result_of(static_cast<std::size_t>(best_rank));
        auto nxt = std::next(best_it);
        *best_it = merged;
        toks.erase(nxt);
    }
    return {toks.begin(), toks.end()};
}

std::string random_utf8(std::mt19937_64 & rng, std::size_t max_scalars) {
    std::uniform_int_distribution<std::size_t> len_dist(0, max_scalars);
    std::uniform_int_distribution<int> kind(0, 3);
    std::string out;
    const std::size_t n = len_dist(rng);
    for (std::size_t i = 0; i < n; ++i) {
        char32_t c = 0;
        switch (kind(rng)) {
            case 0: c = std::uniform_int_distribution<char32_t>(0x00, 0x7F)(rng); break;
            case 1: c = std::uniform_int_distribution<char32_t>(0x80, 0x7FF)(rng); break;
            case 2:
                do {
                    c = std::uniform_int_distribution<char32_t>(0x800, 0xFFFF)(rng);
                } while (c >= 0xD800 && c <= 0xDFFF);
                break;
            default: c = std::uniform_int_distribution<char32_t>(0x10000, 0x10FFFF)(rng); break;
        }
        utf8::append_scalar(out, c);
    }
    return out;
}

merge_table random_merges(std::mt19937_64 & rng, std::size_t count) {
    std::vector<merge_rule> rules;
    for (std::size_t r = 0; r < count; ++r) {
        const token_id limit = token_merge_base + static_cast<token_id>(r);
        auto pick = [&] {
            token_id id;
            do {
                id = std::uniform_int_distribution<token_id>(0, limit - 1)(rng);
            } while (id == token_bos || id == token_eos);
            return id;
        };
        rules.push_back({pick(), pick()});
    }
    return merge_table(std::move(rules));
}

} // namespace

TEST_SUITE("tokenizer") {

TEST_CASE("empty input") {
    CHECK(tokenize("").empty());
    CHECK(detokenize({}).text.empty());
}

TEST_CASE("byte identity without merges") {
    CHECK(tokenize("ab") == token_sequence{97, 98});
    CHECK(detokenize({97, 98}).text == "ab");
    CHECK_FALSE(detokenize({97, 98}).lossy);
}

TEST_CASE("special tokens are textless") {
    const decode_result d = detokenize({token_bos, token_eos});
    CHECK(d.text.empty());
    CHECK_FALSE(d.lossy);
}

TEST_CASE("greedy merge: aab with (97,97)->258") {
    const merge_table merges({{97, 97}});
    CHECK(tokenize("aab", &merges) == token_sequence{258, 98});
    CHECK(tokenize("aab", &merges) == oracle_merge("aab", merges));
    CHECK(detokenize({258, 98}, &merges).text == "aab");
}

TEST_CASE("merge rank order: lowest rank applies first") {
    // rank 0 merges (97,98); rank 1 merges (98,99); on "abc" rank 0 wins
    const merge_table merges({{97, 98}, {98, 99}});
    CHECK(tokenize("abc", &merges) == token_sequence{258, 99});
    CHECK(tokenize("abc", &merges) == oracle_merge("abc", merges));
}

TEST_CASE("leftmost occurrence wins on equal rank") {
    const merge_table merges({{97, 97}});
    // "aaa": positions 0 and 1 both match rank 0; leftmost merges first
    CHECK(tokenize("aaa", &merges) == token_sequence{258, 97});
}

TEST_CASE("cascaded merges") {
    // (97,97)->258, then (258,98)->259
    const merge_table merges({{97, 97}, {258, 98}});
    CHECK(tokenize("aab", &merges) == token_sequence{259});
    CHECK(detokenize({259}, &merges).text == "aab");
}

TEST_CASE("invalid UTF-8 is rejected") {
    try {
        tokenize("\x80");
        FAIL("expected invalid_text");
    } catch (const error & e) {
        CHECK(e.code() == errc::invalid_text);
    }
    CHECK_THROWS_AS(tokenize("\xff\xfe"), error);
    // overlong encoding of '/'
    CHECK_THROWS_AS(tokenize("\xc0\xaf"), error);
    // unpaired surrogate
    CHECK_THROWS_AS(tokenize("\xed\xa0\x80"), error);
}

TEST_CASE("lossy decode substitutes replacement characters") {
    const decode_result d = detokenize({0xC3}); // dangling UTF-8 lead byte
    CHECK(d.lossy);
    CHECK(d.text == "\xEF\xBF\xBD");
}

TEST_CASE("vocab size") {
    CHECK(vocab_size(nullptr) == 258);
    const merge_table one({{97, 97}});
    CHECK(vocab_size(&one) == 259);
    const merge_table ten(std::vector<merge_rule>(10, {97, 97}));
    CHECK(vocab_size(&ten) == 268);
}

TEST_CASE("merge table validation") {
    // result ids are implicit 258+rank; sides must reference earlier ids only
    CHECK_THROWS_AS(merge_table({{259, 97}}), error);       // forward reference
    CHECK_THROWS_AS(merge_table({{token_bos, 97}}), error); // special token
    CHECK_NOTHROW(merge_table({{97, 97}, {258, 97}}));
}

TEST_CASE("merge table file format") {
    const merge_table merges = merge_table::parse("# comment\n97 97\n258 98\n\n");
    CHECK(merges.size() == 2);
    CHECK(merges.rules()[1].left == 258);
    CHECK_THROWS_AS(merge_table::parse("97"), error);
    CHECK_THROWS_AS(merge_table::parse("97 98 99"), error);
}

TEST_CASE("round trip property, with and without merges") {
    std::mt19937_64 rng(20240321);
    const merge_table merges = random_merges(rng, 50);
    for (int i = 0; i < 2000; ++i) {
        const std::string s = random_utf8(rng, 64);
        CAPTURE(i);
        const token_sequence plain = tokenize(s);
        CHECK(detokenize(plain).text == s);
        CHECK(plain.size() <= s.size());

        const token_sequence merged = tokenize(s, &merges);
        CHECK(detokenize(merged, &merges).text == s);
        CHECK(merged.size() <= s.size());
    }
}

TEST_CASE("merged output matches the scratch oracle") {
    std::mt19937_64 rng(7);
    const merge_table merges = random_merges(rng, 12);
    std::uniform_int_distribution<int> byte(96, 100); // narrow alphabet provokes merges
    for (int i = 0; i < 500; ++i) {
        std::string s;
        const int n = std::uniform_int_distribution<int>(0, 24)(rng);
        for (int j = 0; j < n; ++j) {
            s.push_back(static_cast<char>(byte(rng)));
        }
        CAPTURE(s);
        CHECK(tokenize(s, &merges) == oracle_merge(s, merges));
    }
}

TEST_CASE("determinism across calls") {
    std::mt19937_64 rng(99);
    const merge_table merges = random_merges(rng, 20);
    const std::string s = random_utf8(rng, 200);
    CHECK(tokenize(s, &merges) == tokenize(s, &merges));
}

TEST_CASE("token scalar table") {
    const auto table = build_token_scalars(nullptr);
    REQUIRE(table.size() == 258);
    CHECK(table[97] == U"a");
    CHECK(table[token_bos].empty());
    CHECK(table[token_eos].empty());
    CHECK(table[0xC3] == std::u32string{static_cast<char32_t>(0xFFFD)});

    const merge_table merges({{97, 98}});
    const auto with_merges = build_token_scalars(&merges);
    REQUIRE(with_merges.size() == 259);
    CHECK(with_merges[258] == U"ab");
}

} // TEST_SUITE
