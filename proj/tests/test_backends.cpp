#include "llmbroker/backends.hpp"

#include "llmbroker/errors.hpp"
#include "llmbroker/fnv.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace llmbroker;

TEST_SUITE("backends") {

TEST_CASE("fnv1a64 reference vectors") {
    // published FNV-1a test values
    CHECK(fnv1a64({}) == 0xcbf29ce484222325ull);
    const std::uint8_t a = 'a';
    CHECK(fnv1a64({&a, 1}) == 0xaf63dc4c8601ec8cull);
}

TEST_CASE("hash_lm logits: pinned value for context [BOS], candidate 97") {
    // scratch oracle: fnv1a64(le4(256) ++ le4(97)) = 0x841aa7a565c4915b,
    // mod 1000003 = 186153
    const hash_lm lm;
    const logits_vector logits = lm.logits({256});
    REQUIRE(logits.size() == 258);
    CHECK(logits[97] == doctest::Approx(186153.0 / 1000003.0).epsilon(1e-15));
    CHECK(fnv1a64_le32(fnv1a64_le32(fnv_offset_basis, 256), 97) == 0x841aa7a565c4915bull);
}

TEST_CASE("hash_lm determinism and range") {
    const hash_lm lm;
    const token_sequence ctx{256, 1, 2, 3};
    const logits_vector a = lm.logits(ctx);
    const logits_vector b = lm.logits(ctx);
    CHECK(a == b);
    CHECK(std::all_of(a.begin(), a.end(), [](double v) { return v >= 0.0 && v < 1.0; }));
}

TEST_CASE("hash_lm rejects an empty context") {
    try {
        hash_lm().logits({});
        FAIL("expected empty_context");
    } catch (const error & e) {
        CHECK(e.code() == errc::empty_context);
    }
}

TEST_CASE("hash_embed: unit norm and permutation invariance") {
    const hash_embed embedder(64);
    const embedding e1 = embedder.embed({1, 2, 3, 4});
    const embedding e2 = embedder.embed({4, 3, 2, 1});
    CHECK(std::abs(l2_norm(e1) - 1.0) < 1e-9);
    CHECK(e1 == e2);
    CHECK(std::abs(cosine(e1, e1) - 1.0) < 1e-9);
}

TEST_CASE("hash_embed: pinned bucket for token 97, dim 64") {
    // scratch oracle: fnv1a64(le4(97)) mod 64 == 4
    const embedding e = hash_embed(64).embed({97});
    REQUIRE(e.size() == 64);
    CHECK(e[4] == doctest::Approx(1.0));
    for (std::size_t i = 0; i < e.size(); ++i) {
        if (i != 4) {
            CHECK(e[i] == 0.0);
        }
    }
}

TEST_CASE("hash_embed: two distinct buckets split the mass") {
    // scratch oracle: tokens 104,105 land in buckets 12 and 29
    const embedding e = hash_embed(64).embed({104, 105});
    CHECK(e[12] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(e[29] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("hash_embed errors") {
    try {
        hash_embed(64).embed({});
        FAIL("expected empty_input");
    } catch (const error & e) {
        CHECK(e.code() == errc::empty_input);
    }
    CHECK_THROWS_AS(hash_embed(0), error);
}

TEST_CASE("scripted_lm plays back a completion then EOS") {
    scripted_lm lm({{std::nullopt, "ab"}});
    lm.begin_session("anything");
    CHECK(lm.next() == 97);
    CHECK(lm.next() == 98);
    CHECK(lm.next() == token_eos);
    CHECK(lm.next() == token_eos);
}

TEST_CASE("scripted_lm match keys select entries") {
    scripted_lm lm({{"alpha", "a"}, {"beta", "b"}});
    lm.begin_session("prompt mentioning beta only");
    CHECK(lm.next() == 98);
    // alpha entry is still unconsumed
    lm.begin_session("now alpha");
    CHECK(lm.next() == 97);
}

TEST_CASE("scripted_lm consumes entries in order, at most once") {
    scripted_lm lm({{std::nullopt, "x"}, {std::nullopt, "y"}});
    lm.begin_session("p");
    CHECK(lm.next() == 'x');
    lm.begin_session("p");
    CHECK(lm.next() == 'y');
    CHECK(lm.entries_remaining() == 0);
    try {
        lm.begin_session("p");
        FAIL("expected script_exhausted");
    } catch (const error & e) {
        CHECK(e.code() == errc::script_exhausted);
    }
}

TEST_CASE("scripted_lm unmatched prompt exhausts") {
    scripted_lm lm({{"needle", "a"}});
    CHECK_THROWS_AS(lm.begin_session("no match here"), error);
}

TEST_CASE("backend adapters expose the right vocab") {
    hash_backend hb;
    CHECK(hb.vocab_size() == 258);
    scripted_backend sb(scripted_lm({{std::nullopt, "hi"}}));
    CHECK(sb.vocab_size() == 258);
    sb.begin("p");
    const step_input in{token_sequence{token_bos}, "p", ""};
    CHECK(std::get<token_id>(sb.step(in)) == 'h');
}

TEST_CASE("referential transparency across instances") {
    std::mt19937_64 rng(42);
    for (int i = 0; i < 50; ++i) {
        token_sequence ctx{token_bos};
        const int n = std::uniform_int_distribution<int>(0, 12)(rng);
        for (int j = 0; j < n; ++j) {
            ctx.push_back(std::uniform_int_distribution<token_id>(0, 257)(rng));
        }
        CHECK(hash_lm().logits(ctx) == hash_lm().logits(ctx));
        CHECK(hash_embed(16).embed(ctx) == hash_embed(16).embed(ctx));
    }
}

} // TEST_SUITE
