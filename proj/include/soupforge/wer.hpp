// Copyright 2026 The SoupForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace soupforge {

struct TokenizeOptions {
    /// Characters stripped from token edges (not interiors), so "[um]" and
    /// "a~b~c" survive while "sat." loses its period.
    std::string strip_chars = ",.?!;:\"";
};

/// Lowercase, split on whitespace runs, strip edge punctuation. Tokens that
/// become empty are dropped.
std::vector<std::string> tokenize(std::string_view text, const TokenizeOptions& options = {});

struct AlignmentStats {
    std::uint64_t substitutions = 0;
    std::uint64_t deletions = 0;
    std::uint64_t insertions = 0;
    std::uint64_t correct = 0;

    std::uint64_t ref_len() const { return substitutions + deletions + correct; }
    std::uint64_t edit_distance() const { return substitutions + deletions + insertions; }
    /// (S+D+I)/ref_len; empty reference -> undefined, reported as "n/a".
    std::optional<double> wer() const;

    AlignmentStats& operator+=(const AlignmentStats& other);
    bool operator==(const AlignmentStats&) const = default;
};

/// Minimum-edit-distance alignment under unit costs. Where several traces
/// reach the minimum, the backtrace prefers correct > substitution >
/// deletion > insertion; the distance itself is tie-break independent.
AlignmentStats align(std::span<const std::string> ref, std::span<const std::string> hyp);

struct Utterance {
    std::string id;
    std::string reference;
    std::string hypothesis;
    std::optional<double> duration_s;
};

struct WerBucket {
    double lower_s = 0.0;                // inclusive for the first bucket
    std::optional<double> upper_s;       // inclusive; nullopt = unbounded
    AlignmentStats stats;
    std::uint64_t utterances = 0;

    std::string label() const;  // "t ∈ [0, 5]", "t ∈ (5, 30]", "t ∈ (30, ∞)"
};

struct WerReport {
    AlignmentStats overall;
    std::uint64_t utterances = 0;
    std::vector<WerBucket> buckets;  // empty unless bucket edges were given
};

/// The duration split used for length-bucketed reporting: [0,5], (5,30], (30,inf).
std::vector<double> default_bucket_edges();

/// Tokenize and align every utterance, then aggregate by summing counts
/// (never by averaging per-utterance rates). If `bucket_edges` is given it
/// must be strictly increasing and positive, and every utterance needs a
/// duration.
WerReport corpus_wer(std::span<const Utterance> utterances,
                     const std::optional<std::vector<double>>& bucket_edges = std::nullopt,
                     const TokenizeOptions& options = {});

/// JSONL corpus: {id, ref, hyp, duration_s?} per line.
std::vector<Utterance> load_corpus(const std::filesystem::path& path);

std::string format_report(const WerReport& report);
nlohmann::json report_to_json(const WerReport& report);

}  // namespace soupforge
