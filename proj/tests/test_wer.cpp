// Copyright 2026 The SoupForge Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include <nlohmann/json.hpp>

#include "edit_distance_oracle.hpp"
#include "soupforge/error.hpp"
#include "soupforge/wer.hpp"
#include "test_util.hpp"

using namespace soupforge;
using namespace soupforge::test;

namespace {

std::vector<std::string> toks(std::initializer_list<const char*> words) {
    return {words.begin(), words.end()};
}

std::vector<std::string> random_tokens(std::mt19937_64& rng, std::size_t max_len,
                                       std::span<const std::string> alphabet) {
    std::vector<std::string> out(rng() % (max_len + 1));
    for (auto& t : out) t = alphabet[rng() % alphabet.size()];
    return out;
}

}  // namespace

TEST_CASE("tokenize") {
    CHECK(tokenize("The cat sat.") == toks({"the", "cat", "sat"}));
    CHECK(tokenize("") == std::vector<std::string>{});
    CHECK(tokenize("   \t\n ") == std::vector<std::string>{});
    CHECK(tokenize("[um] I spell A~B~C") == toks({"[um]", "i", "spell", "a~b~c"}));
    CHECK(tokenize("Hello,  world!?") == toks({"hello", "world"}));
    CHECK(tokenize("\"quoted\" mid,dle") == toks({"quoted", "mid,dle"}));
    CHECK(tokenize("...") == std::vector<std::string>{});  // pure punctuation drops out
    CHECK(tokenize("one-two") == toks({"one-two"}));       // hyphen is not stripped

    TokenizeOptions keep_all;
    keep_all.strip_chars = "";
    CHECK(tokenize("The cat sat.", keep_all) == toks({"the", "cat", "sat."}));
}

TEST_CASE("align identities and boundaries") {
    SUBCASE("identical sequences") {
        const auto r = toks({"a", "b", "c"});
        const AlignmentStats s = align(r, r);
        CHECK(s.correct == 3);
        CHECK(s.edit_distance() == 0);
        CHECK(s.wer() == 0.0);
    }
    SUBCASE("deletions only") {
        const AlignmentStats s =
            align(toks({"the", "cat", "sat", "on", "the", "mat"}), toks({"the", "cat", "sat", "mat"}));
        CHECK(s.deletions == 2);
        CHECK(s.substitutions == 0);
        CHECK(s.insertions == 0);
        CHECK(s.correct == 4);
        CHECK(s.wer() == doctest::Approx(2.0 / 6.0));
    }
    SUBCASE("empty hypothesis") {
        const AlignmentStats s = align(toks({"a"}), {});
        CHECK(s.deletions == 1);
        CHECK(s.wer() == 1.0);
    }
    SUBCASE("empty reference: wer undefined, not zero") {
        const AlignmentStats s = align({}, toks({"a"}));
        CHECK(s.insertions == 1);
        CHECK(s.ref_len() == 0);
        CHECK_FALSE(s.wer().has_value());
    }
    SUBCASE("pure substitution") {
        const AlignmentStats s = align(toks({"a"}), toks({"b"}));
        CHECK(s.substitutions == 1);
        CHECK(s.edit_distance() == 1);
    }
}

TEST_CASE("documented backtrace tie-break: correct > substitution > deletion > insertion") {
    SUBCASE("substitution wins over deletion+insertion at equal cost") {
        // ref [a, x] vs hyp [x, a]: distance 2, reachable as sub+sub or as
        // del+correct+ins; substitution outranks deletion in the backtrace
        const AlignmentStats s = align(toks({"a", "x"}), toks({"x", "a"}));
        CHECK(s.edit_distance() == 2);
        CHECK(s.substitutions == 2);
        CHECK(s.correct == 0);
        CHECK(s.deletions == 0);
        CHECK(s.insertions == 0);
    }
    SUBCASE("a match is taken whenever it lies on a minimal path") {
        const AlignmentStats s = align(toks({"a"}), toks({"a", "a"}));
        CHECK(s.edit_distance() == 1);
        CHECK(s.correct == 1);
        CHECK(s.insertions == 1);
        CHECK(s.substitutions == 0);
    }
}

TEST_CASE("alignment matches the recursive oracle exhaustively (len <= 4)") {
    const std::vector<std::string> alphabet = {"a", "b", "c"};
    const auto sequences = all_sequences(alphabet, 4);
    for (const auto& ref : sequences) {
        for (const auto& hyp : sequences) {
            const AlignmentStats s = align(ref, hyp);
            CHECK(s.edit_distance() == oracle_edit_distance(ref, hyp));
            CHECK(s.ref_len() == ref.size());
            CHECK(s.insertions + s.correct + s.substitutions == hyp.size());
        }
    }
}

TEST_CASE("alignment matches the recursive oracle on random pairs (len <= 50)") {
    std::mt19937_64 rng(20260810);
    const std::vector<std::string> alphabet = {"a", "b", "c", "d", "e"};
    for (int round = 0; round < 300; ++round) {
        const auto ref = random_tokens(rng, 50, alphabet);
        const auto hyp = random_tokens(rng, 50, alphabet);
        const AlignmentStats s = align(ref, hyp);
        CHECK(s.edit_distance() == oracle_edit_distance(ref, hyp));
        CHECK(s.ref_len() == ref.size());
    }
}

TEST_CASE("appending a non-matching token never lowers the distance") {
    std::mt19937_64 rng(7);
    const std::vector<std::string> alphabet = {"a", "b", "c"};
    for (int round = 0; round < 200; ++round) {
        const auto ref = random_tokens(rng, 12, alphabet);
        auto hyp = random_tokens(rng, 12, alphabet);
        const std::uint64_t before = align(ref, hyp).edit_distance();
        hyp.push_back("zzz");  // outside the alphabet
        CHECK(align(ref, hyp).edit_distance() >= before);
    }
}

TEST_CASE("corpus aggregation sums counts instead of averaging rates") {
    // per-utterance WERs are 1/3 and 0; pooled WER must be 2/10
    const std::vector<Utterance> corpus = {
        {"u1", "w1 w2 w3 w4 w5 w6", "w1 w2 w3 w4 x y", std::nullopt},
        {"u2", "v1 v2 v3 v4", "v1 v2 v3 v4", std::nullopt},
    };
    const WerReport report = corpus_wer(corpus);
    CHECK(report.overall.ref_len() == 10);
    CHECK(report.overall.edit_distance() == 2);
    CHECK(report.overall.wer() == doctest::Approx(0.2));
    CHECK(*report.overall.wer() != doctest::Approx((1.0 / 3.0 + 0.0) / 2.0));
}

TEST_CASE("duration buckets partition the corpus") {
    const std::vector<Utterance> corpus = {
        {"short", "a b", "a b", 3.0},
        {"edge-lo", "c d", "c x", 5.0},   // closed upper edge of the first bucket
        {"mid", "e f g", "e f g", 12.0},
        {"edge-hi", "h", "h", 30.0},      // closed upper edge of the second bucket
        {"long", "i j k l", "i j q l", 45.0},
    };
    const WerReport report = corpus_wer(corpus, default_bucket_edges());
    REQUIRE(report.buckets.size() == 3);
    CHECK(report.buckets[0].label() == "t ∈ [0, 5]");
    CHECK(report.buckets[1].label() == "t ∈ (5, 30]");
    CHECK(report.buckets[2].label() == "t ∈ (30, ∞)");
    CHECK(report.buckets[0].utterances == 2);
    CHECK(report.buckets[1].utterances == 2);
    CHECK(report.buckets[2].utterances == 1);

    AlignmentStats sum;
    std::uint64_t ref_sum = 0;
    for (const WerBucket& b : report.buckets) {
        sum += b.stats;
        ref_sum += b.stats.ref_len();
    }
    CHECK(sum == report.overall);
    CHECK(ref_sum == report.overall.ref_len());
}

TEST_CASE("one utterance per bucket for durations {3, 12, 45}") {
    const std::vector<Utterance> corpus = {
        {"a", "x", "x", 3.0},
        {"b", "y", "y", 12.0},
        {"c", "z", "z", 45.0},
    };
    const WerReport report = corpus_wer(corpus, std::vector<double>{5.0, 30.0});
    for (const WerBucket& b : report.buckets) CHECK(b.utterances == 1);
}

TEST_CASE("concatenating corpora sums field-wise") {
    std::mt19937_64 rng(11);
    const std::vector<std::string> alphabet = {"a", "b", "c"};
    std::vector<Utterance> first, second, both;
    for (int i = 0; i < 20; ++i) {
        Utterance u;
        u.id = "u" + std::to_string(i);
        const auto join = [](const std::vector<std::string>& t) {
            std::string s;
            for (const auto& w : t) {
                if (!s.empty()) s += ' ';
                s += w;
            }
            return s;
        };
        u.reference = join(random_tokens(rng, 10, alphabet));
        u.hypothesis = join(random_tokens(rng, 10, alphabet));
        (i < 12 ? first : second).push_back(u);
        both.push_back(u);
    }
    AlignmentStats sum = corpus_wer(first).overall;
    sum += corpus_wer(second).overall;
    CHECK(sum == corpus_wer(both).overall);
}

TEST_CASE("corpus error paths") {
    SUBCASE("duplicate utterance id") {
        const std::vector<Utterance> corpus = {{"u", "a", "a", std::nullopt},
                                               {"u", "b", "b", std::nullopt}};
        try {
            corpus_wer(corpus);
            FAIL("expected duplicate_utterance");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::duplicate_utterance);
        }
    }
    SUBCASE("missing duration with buckets requested") {
        const std::vector<Utterance> corpus = {{"u", "a", "a", std::nullopt}};
        try {
            corpus_wer(corpus, default_bucket_edges());
            FAIL("expected missing_duration");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::missing_duration);
        }
    }
    SUBCASE("bad bucket edges") {
        const std::vector<Utterance> corpus = {{"u", "a", "a", 1.0}};
        CHECK_THROWS_AS(corpus_wer(corpus, std::vector<double>{5.0, 5.0}), Error);
        CHECK_THROWS_AS(corpus_wer(corpus, std::vector<double>{-1.0, 5.0}), Error);
        CHECK_THROWS_AS(corpus_wer(corpus, std::vector<double>{}), Error);
    }
}

TEST_CASE("empty reference corpus renders n/a") {
    const std::vector<Utterance> corpus = {{"u", "", "spurious words", std::nullopt}};
    const WerReport report = corpus_wer(corpus);
    CHECK_FALSE(report.overall.wer().has_value());
    CHECK(format_report(report).find("n/a") != std::string::npos);
    CHECK(report_to_json(report)["overall"]["wer"].is_null());
}

TEST_CASE("corpus JSONL loading") {
    TempDir tmp;
    SUBCASE("well-formed") {
        const auto p = tmp.file("c.jsonl");
        write_text_file(p,
                        R"({"id":"u1","ref":"the cat","hyp":"the cat","duration_s":2.5})"
                        "\n"
                        R"({"id":"u2","ref":"a","hyp":"b"})"
                        "\n");
        const auto utts = load_corpus(p);
        REQUIRE(utts.size() == 2);
        CHECK(utts[0].duration_s == 2.5);
        CHECK_FALSE(utts[1].duration_s.has_value());
    }
    SUBCASE("rejects unknown keys and bad values") {
        const auto bad1 = tmp.file("bad1.jsonl");
        write_text_file(bad1, R"({"id":"u","ref":"a","hyp":"b","duration":1})" "\n");
        CHECK_THROWS_AS(load_corpus(bad1), Error);
        const auto bad2 = tmp.file("bad2.jsonl");
        write_text_file(bad2, R"({"id":"u","ref":"a","hyp":"b","duration_s":-1})" "\n");
        CHECK_THROWS_AS(load_corpus(bad2), Error);
        const auto bad3 = tmp.file("bad3.jsonl");
        write_text_file(bad3, R"({"id":"u","hyp":"b"})" "\n");
        CHECK_THROWS_AS(load_corpus(bad3), Error);
    }
}

TEST_CASE("report JSON carries the bucket structure") {
    const std::vector<Utterance> corpus = {
        {"a", "x y", "x z", 2.0},
        {"b", "p q r", "p q r", 40.0},
    };
    const WerReport report = corpus_wer(corpus, default_bucket_edges());
    const nlohmann::json j = report_to_json(report);
    CHECK(j["utterances"] == 2);
    REQUIRE(j["buckets"].size() == 3);
    CHECK(j["buckets"][0]["upper_s"] == 5.0);
    CHECK(j["buckets"][2]["upper_s"].is_null());
    CHECK(j["overall"]["ref_len"] == 5);
    CHECK(j["overall"]["wer"] == doctest::Approx(0.2));
}
