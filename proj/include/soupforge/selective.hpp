// Copyright 2026 The SoupForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "soupforge/error.hpp"
#include "soupforge/merge_core.hpp"

namespace soupforge {

/// Scores a merged checkpoint; lower is better. Implementations must be
/// deterministic: the same merged weights must yield the same score, or the
/// greedy scan's acceptance trace is not reproducible.
class Oracle {
public:
    virtual ~Oracle() = default;

    /// Returns a finite WER-like value in [0, inf). Values above 1 are
    /// legal (WER can exceed 100%).
    virtual double score(const std::filesystem::path& merged_checkpoint) = 0;

    virtual std::string description() const = 0;
};

/// Runs a shell command with every "{}" replaced by the (quoted) checkpoint
/// path; the command must print exactly one decimal number on stdout.
class ExternalCommandOracle final : public Oracle {
public:
    explicit ExternalCommandOracle(std::string command_template,
                                   std::chrono::milliseconds timeout = std::chrono::hours(1));

    double score(const std::filesystem::path& merged_checkpoint) override;
    std::string description() const override;

private:
    std::string template_;
    std::chrono::milliseconds timeout_;
};

/// Test oracle: mean absolute element-wise deviation of the merged model
/// from a hidden target checkpoint.
class SyntheticTargetOracle final : public Oracle {
public:
    explicit SyntheticTargetOracle(Checkpoint target);

    double score(const std::filesystem::path& merged_checkpoint) override;
    std::string description() const override;

private:
    Checkpoint target_;
};

/// Substitute `merged_path` into `command_template`, run it, and parse its
/// stdout as a single non-negative decimal number. Anything else (non-zero
/// exit, extra output, timeout) raises Errc::oracle_failure with a stderr
/// excerpt.
double eval_external(const std::string& command_template,
                     const std::filesystem::path& merged_path,
                     std::chrono::milliseconds timeout = std::chrono::hours(1));

struct TraceRow {
    std::size_t index = 0;
    double candidate_wer_if_merged = 0.0;
    bool accepted = false;
    double best_wer_after = 0.0;
};

struct SelectiveResult {
    std::vector<std::size_t> accepted;  // always starts with 0
    std::vector<TraceRow> trace;        // row 0 is the M_0 baseline
    MergePlan final_plan;               // uniform over the accepted set
    std::size_t evaluations_used = 0;
};

/// Raised when the oracle fails mid-scan; carries everything decided so far.
class SmactAborted : public Error {
public:
    SmactAborted(const Error& cause, SelectiveResult partial)
        : Error(cause.code(), cause.what()), partial_(std::move(partial)) {}

    const SelectiveResult& partial() const { return partial_; }

private:
    SelectiveResult partial_;
};

enum class TrialMode {
    /// Keep the accepted set's element sums in a scratch f64 checkpoint; each
    /// trial reads only that plus the candidate (O(1) tensor traffic per trial).
    incremental,
    /// Re-stream every accepted checkpoint per trial. Byte-identical outputs
    /// to incremental; kept as the reference path.
    from_scratch,
};

struct SmactOptions {
    std::filesystem::path scratch_dir;  // empty -> default_scratch_dir()
    TrialMode mode = TrialMode::incremental;
    std::optional<std::filesystem::path> final_out;  // write the final merged model here
};

/// Greedy selective merge: start from the first candidate, scan the rest in
/// order, and keep a candidate only if merging it strictly lowers the oracle
/// score. Trial merges are uniform means accumulated in 64-bit floats in
/// acceptance order (earliest accepted first, trial candidate last) and
/// rounded once to the storage dtype.
SelectiveResult smact(std::span<const std::string> candidate_paths, Oracle& oracle,
                      const SmactOptions& options = {});

/// SOUPFORGE_SCRATCH if set, otherwise <system tmp>/soupforge.
std::filesystem::path default_scratch_dir();

}  // namespace soupforge
