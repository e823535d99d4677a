// Copyright 2026 The SoupForge Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "smact_sim.hpp"
#include "soupforge/error.hpp"
#include "soupforge/selective.hpp"
#include "test_util.hpp"

using namespace soupforge;
using namespace soupforge::test;

namespace {

std::filesystem::path write_scalar(const TempDir& tmp, const std::string& name, double value,
                                   DType dtype = DType::f64) {
    CheckpointBuilder b;
    b.add_values("w", dtype, {}, std::span(&value, 1));
    const auto path = tmp.file(name);
    write_checkpoint(b.build(), path);
    return path;
}

std::vector<std::string> write_scalars(const TempDir& tmp, std::span<const double> values,
                                       DType dtype = DType::f64) {
    std::vector<std::string> paths;
    for (std::size_t i = 0; i < values.size(); ++i) {
        paths.push_back(write_scalar(tmp, "cand" + std::to_string(i) + ".ckpt", values[i], dtype));
    }
    return paths;
}

SyntheticTargetOracle scalar_target_oracle(double target) {
    CheckpointBuilder b;
    b.add_values("w", DType::f64, {}, std::span(&target, 1));
    return SyntheticTargetOracle(b.build("target"));
}

SmactOptions scratch_in(const TempDir& tmp, TrialMode mode = TrialMode::incremental) {
    SmactOptions options;
    options.scratch_dir = tmp.file("scratch");
    options.mode = mode;
    return options;
}

void check_matches_sim(const SelectiveResult& got, const ScalarSimResult& sim) {
    CHECK(got.accepted == sim.accepted);
    CHECK(got.evaluations_used == sim.evaluations);
    REQUIRE(got.trace.size() == sim.trace_wers.size());
    for (std::size_t r = 0; r < got.trace.size(); ++r) {
        CHECK(got.trace[r].index == r);
        CHECK(got.trace[r].candidate_wer_if_merged == sim.trace_wers[r]);
        CHECK(got.trace[r].accepted == sim.trace_accepts[r]);
    }
}

}  // namespace

TEST_CASE("worked scalar example: accept the helpful model, reject the harmful one") {
    TempDir tmp;
    const std::vector<double> values = {1.0, -0.8, 5.0};
    const auto paths = write_scalars(tmp, values);
    auto oracle = scalar_target_oracle(0.0);

    SmactOptions options = scratch_in(tmp);
    options.final_out = tmp.file("final.ckpt");
    const SelectiveResult result = smact(paths, oracle, options);

    CHECK(result.accepted == std::vector<std::size_t>{0, 1});
    CHECK(result.evaluations_used == 3);
    REQUIRE(result.trace.size() == 3);
    CHECK(result.trace[0].candidate_wer_if_merged == 1.0);
    CHECK(result.trace[1].candidate_wer_if_merged == doctest::Approx(0.1).epsilon(1e-9));
    CHECK(result.trace[1].accepted);
    CHECK(result.trace[2].candidate_wer_if_merged == doctest::Approx(5.2 / 3.0).epsilon(1e-9));
    CHECK_FALSE(result.trace[2].accepted);
    CHECK(result.trace[2].best_wer_after == result.trace[1].best_wer_after);

    REQUIRE(result.final_plan.size() == 2);
    CHECK(result.final_plan.entries[0].weight == 0.5);

    const Checkpoint final = Checkpoint::open(*options.final_out);
    const double merged = final.read_values(*final.find("w"))[0];
    CHECK(merged == doctest::Approx(0.1).epsilon(1e-9));

    // exact agreement with the straight-line reference
    check_matches_sim(result, simulate_smact_scalar(values, 0.0));
}

TEST_CASE("single candidate: loop body never runs") {
    TempDir tmp;
    const auto paths = write_scalars(tmp, std::vector<double>{2.5});
    auto oracle = scalar_target_oracle(0.0);
    const SelectiveResult result = smact(paths, oracle, scratch_in(tmp));
    CHECK(result.accepted == std::vector<std::size_t>{0});
    CHECK(result.evaluations_used == 1);
    CHECK(result.trace.size() == 1);
    REQUIRE(result.final_plan.size() == 1);
    CHECK(result.final_plan.entries[0].weight == 1.0);
}

TEST_CASE("a trial equal to the previous best is rejected: strict inequality") {
    TempDir tmp;
    // duplicating the seed model leaves the mean, hence the score, unchanged
    const auto paths = write_scalars(tmp, std::vector<double>{4.0, 4.0});
    auto oracle = scalar_target_oracle(0.0);
    const SelectiveResult result = smact(paths, oracle, scratch_in(tmp));
    CHECK(result.accepted == std::vector<std::size_t>{0});
    REQUIRE(result.trace.size() == 2);
    CHECK(result.trace[1].candidate_wer_if_merged == result.trace[0].candidate_wer_if_merged);
    CHECK_FALSE(result.trace[1].accepted);
}

TEST_CASE("random scalar instances match the straight-line reference exactly") {
    std::mt19937_64 rng(20260810);
    std::uniform_real_distribution<double> dist(-4.0, 4.0);
    for (int round = 0; round < 40; ++round) {
        TempDir tmp;
        const std::size_t n = 2 + rng() % 7;
        std::vector<double> values(n);
        for (double& v : values) v = dist(rng);
        const double target = dist(rng);

        const auto paths = write_scalars(tmp, values);
        auto oracle = scalar_target_oracle(target);
        const SelectiveResult result = smact(paths, oracle, scratch_in(tmp));
        check_matches_sim(result, simulate_smact_scalar(values, target));

        // strict improvement along the accepted sequence
        double last = result.trace[0].best_wer_after;
        for (std::size_t r = 1; r < result.trace.size(); ++r) {
            if (result.trace[r].accepted) {
                CHECK(result.trace[r].candidate_wer_if_merged < last);
                last = result.trace[r].best_wer_after;
            } else {
                CHECK(result.trace[r].best_wer_after == last);
            }
        }
    }
}

TEST_CASE("incremental and from-scratch trials are byte-identical") {
    TempDir tmp;
    std::mt19937_64 rng(17);
    std::normal_distribution<double> dist(0.0, 1.0);

    std::vector<std::string> paths;
    for (int i = 0; i < 5; ++i) {
        CheckpointBuilder b;
        std::vector<double> a(37), c(11);
        for (double& v : a) v = dist(rng);
        for (double& v : c) v = dist(rng);
        b.add_values("a", DType::f32, {37}, a);
        b.add_values("c", DType::f16, {11}, c);
        const auto p = tmp.file("m" + std::to_string(i) + ".ckpt");
        write_checkpoint(b.build(), p);
        paths.push_back(p);
    }
    CheckpointBuilder target;
    target.add_values("a", DType::f32, {37}, std::vector<double>(37, 0.0));
    target.add_values("c", DType::f16, {11}, std::vector<double>(11, 0.0));

    SyntheticTargetOracle o1(target.build());
    SyntheticTargetOracle o2(o1);

    SmactOptions inc = scratch_in(tmp, TrialMode::incremental);
    inc.final_out = tmp.file("final-inc.ckpt");
    SmactOptions scratch = scratch_in(tmp, TrialMode::from_scratch);
    scratch.final_out = tmp.file("final-scratch.ckpt");

    const SelectiveResult r1 = smact(paths, o1, inc);
    const SelectiveResult r2 = smact(paths, o2, scratch);

    CHECK(r1.accepted == r2.accepted);
    REQUIRE(r1.trace.size() == r2.trace.size());
    for (std::size_t i = 0; i < r1.trace.size(); ++i) {
        CHECK(r1.trace[i].candidate_wer_if_merged == r2.trace[i].candidate_wer_if_merged);
        CHECK(r1.trace[i].accepted == r2.trace[i].accepted);
    }
    CHECK(read_file_bytes(*inc.final_out) == read_file_bytes(*scratch.final_out));
}

TEST_CASE("baseline merge of the seed model is bit-exact") {
    TempDir tmp;
    std::mt19937_64 rng(23);
    std::normal_distribution<double> dist(0.0, 2.0);
    CheckpointBuilder b;
    std::vector<double> vals(64);
    for (double& v : vals) v = dist(rng);
    vals[0] = -0.0;  // signed zero must survive
    b.add_values("w", DType::f16, {64}, vals);
    const auto seed = tmp.file("seed.ckpt");
    write_checkpoint(b.build(), seed);
    // make the seed strictly better than the alternative so only M_0 stays
    CheckpointBuilder far;
    far.add_values("w", DType::f16, {64}, std::vector<double>(64, 30.0));
    const auto other = tmp.file("other.ckpt");
    write_checkpoint(far.build(), other);

    CheckpointBuilder tb;
    tb.add_values("w", DType::f16, {64}, vals);
    SyntheticTargetOracle oracle(tb.build());

    SmactOptions options = scratch_in(tmp);
    options.final_out = tmp.file("final.ckpt");
    const std::vector<std::string> paths = {seed.string(), other.string()};
    const SelectiveResult result = smact(paths, oracle, options);

    CHECK(result.accepted == std::vector<std::size_t>{0});
    const Checkpoint final = Checkpoint::open(*options.final_out);
    const Checkpoint original = Checkpoint::open(seed);
    CHECK(final.read_tensor(*final.find("w")) == original.read_tensor(*original.find("w")));
}

TEST_CASE("rerunning the scan reproduces the identical result") {
    TempDir tmp;
    const std::vector<double> values = {0.5, 0.2, -0.1, 0.9};
    const auto paths = write_scalars(tmp, values);
    auto oracle = scalar_target_oracle(0.1);
    const SelectiveResult a = smact(paths, oracle, scratch_in(tmp));
    const SelectiveResult b = smact(paths, oracle, scratch_in(tmp));
    CHECK(a.accepted == b.accepted);
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        CHECK(a.trace[i].candidate_wer_if_merged == b.trace[i].candidate_wer_if_merged);
        CHECK(a.trace[i].best_wer_after == b.trace[i].best_wer_after);
    }
}

TEST_CASE("scratch directory is cleaned up") {
    TempDir tmp;
    const auto paths = write_scalars(tmp, std::vector<double>{1.0, 2.0});
    auto oracle = scalar_target_oracle(0.0);
    SmactOptions options = scratch_in(tmp);
    smact(paths, oracle, options);
    // the scratch root may remain, but no smact-* content survives
    if (std::filesystem::exists(options.scratch_dir)) {
        CHECK(std::filesystem::directory_iterator(options.scratch_dir) ==
              std::filesystem::directory_iterator());
    }
}

TEST_CASE("oracle failure mid-scan carries the partial trace") {
    TempDir tmp;
    const auto paths = write_scalars(tmp, std::vector<double>{1.0, 2.0, 3.0});

    struct FailingOracle final : Oracle {
        int calls = 0;
        double score(const std::filesystem::path&) override {
            if (++calls >= 2) throw Error(Errc::oracle_failure, "backend went away");
            return 1.0;
        }
        std::string description() const override { return "failing"; }
    } oracle;

    try {
        smact(paths, oracle, scratch_in(tmp));
        FAIL("expected SmactAborted");
    } catch (const SmactAborted& e) {
        CHECK(e.code() == Errc::oracle_failure);
        CHECK(e.partial().accepted == std::vector<std::size_t>{0});
        CHECK(e.partial().trace.size() == 1);
        CHECK(e.partial().evaluations_used == 1);
    }
}

// ---------------------------------------------------------------------------
// external command oracle

TEST_CASE("eval_external parses a bare number") {
    CHECK(eval_external("printf '0.132'", "/dev/null") == 0.132);
    CHECK(eval_external("printf '0.132\\n'", "/dev/null") == 0.132);
    CHECK(eval_external("printf '  1.5  \\n'", "/dev/null") == 1.5);  // WER above 100% is legal
    CHECK(eval_external("printf '0'", "/dev/null") == 0.0);
}

TEST_CASE("eval_external rejects protocol violations") {
    const auto expect_failure = [](const std::string& cmd, const char* fragment) {
        try {
            eval_external(cmd, "/dev/null");
            FAIL_CHECK("expected oracle_failure for: " << cmd);
        } catch (const Error& e) {
            CHECK(e.code() == Errc::oracle_failure);
            CHECK(std::string(e.what()).find(fragment) != std::string::npos);
        }
    };
    expect_failure("printf 'WER: 0.132 words: 5000'", "single decimal number");
    expect_failure("printf ''", "single decimal number");
    expect_failure("printf -- '-0.1'", "non-negative");
    expect_failure("printf 'nan'", "non-negative");
    expect_failure("printf 'inf'", "non-negative");
    expect_failure("echo oops >&2; exit 3", "status 3");
    expect_failure("echo oops >&2; exit 3", "oops");  // stderr excerpt travels with the error
}

TEST_CASE("eval_external enforces the timeout") {
    try {
        eval_external("sleep 5; printf '0.1'", "/dev/null", std::chrono::milliseconds(300));
        FAIL("expected timeout");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::oracle_failure);
        CHECK(std::string(e.what()).find("timed out") != std::string::npos);
    }
}

TEST_CASE("eval_external substitutes and quotes the checkpoint path") {
    TempDir tmp;
    std::filesystem::create_directories(tmp.file("dir with spaces"));
    const auto path = tmp.file("dir with spaces") / "model's.ckpt";
    write_text_file(path, "x");
    CHECK(eval_external("test -f {} && printf '0.25'", path) == 0.25);
    // no {} in the template: the path is appended as a final argument
    CHECK(eval_external("sh -c 'test -f \"$1\" && printf 0.5' --", path) == 0.5);
}

TEST_CASE("smact drives an external command oracle end to end") {
    TempDir tmp;
    const auto paths = write_scalars(tmp, std::vector<double>{1.0, -0.8, 5.0});
    // mean absolute deviation from zero, computed by a shell one-liner:
    // the single f64 payload value is the last 8 bytes of the file
    const auto script = tmp.file("score.sh");
    write_text_file(script,
                    "#!/bin/sh\n"
                    "python3 - \"$1\" <<'EOF'\n"
                    "import json, struct, sys\n"
                    "raw = open(sys.argv[1], 'rb').read()\n"
                    "n = struct.unpack('<Q', raw[:8])[0]\n"
                    "table = json.loads(raw[8:8+n])\n"
                    "b, e = table['w']['data_offsets']\n"
                    "(v,) = struct.unpack('<d', raw[8+n+b:8+n+e])\n"
                    "print(abs(v))\n"
                    "EOF\n");
    std::filesystem::permissions(script, std::filesystem::perms::owner_all);

    ExternalCommandOracle oracle("sh " + script.string() + " {}", std::chrono::seconds(60));
    const SelectiveResult result = smact(paths, oracle, scratch_in(tmp));
    CHECK(result.accepted == std::vector<std::size_t>{0, 1});
    CHECK(result.evaluations_used == 3);
}
