// Copyright 2026 The SoupForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "soupforge/tensor_store.hpp"

namespace soupforge {

/// One saved checkpoint of one fine-tuning run, as listed in a manifest.
/// `eval_wer` is a fraction in [0, 1].
struct CandidateRecord {
    std::string checkpoint_path;
    std::string trajectory_id;
    std::uint64_t step = 0;
    std::optional<double> eval_wer;
    std::optional<std::string> label;
};

/// Load a JSONL manifest ({path, trajectory, step, wer?, label?} per line)
/// and validate it: (trajectory, step) pairs unique, wer in [0, 1].
std::vector<CandidateRecord> load_manifest(const std::filesystem::path& path);
void validate_manifest(std::span<const CandidateRecord> records);

struct PlanEntry {
    std::string path;
    double weight = 0.0;

    bool operator==(const PlanEntry&) const = default;
};

/// Checkpoints to average and their convex weights. Uniform plans carry
/// weight 1/n on every entry; non-uniform weights are representable but no
/// built-in strategy emits them.
struct MergePlan {
    std::vector<PlanEntry> entries;

    std::size_t size() const { return entries.size(); }
    /// Throws unless entries are non-empty, weights positive, and the
    /// weight sum is 1 within 1e-12.
    void validate() const;

    static MergePlan uniform(std::vector<std::string> paths);
};

enum class SelectionKind { all, last_k, every_k };

struct Selection {
    SelectionKind kind = SelectionKind::all;
    std::uint64_t k = 0;

    /// Parses "all", "last_k:K", "every_k:K".
    static Selection parse(std::string_view text);
};

/// Uniform plan over the selected checkpoints of one trajectory, ordered by
/// step ascending. `last_k` keeps the k highest steps, `every_k` strides the
/// step-ascending list from the earliest checkpoint.
MergePlan plan_mast(std::span<const CandidateRecord> manifest, std::string_view trajectory,
                    Selection selection = {});

/// Uniform plan over the best (lowest eval_wer, ties to the lowest step)
/// checkpoint of each trajectory, ordered by trajectory id. Requires at
/// least two trajectories and eval_wer on every record.
MergePlan plan_mact(std::span<const CandidateRecord> manifest);

enum class Strategy { mast, mact, smact, custom };

std::string_view strategy_name(Strategy s) noexcept;

struct MergeOptions {
    Strategy strategy = Strategy::custom;       // provenance tag only
    std::vector<std::string> exclude;           // tensors copied verbatim from the first entry
    int threads = 1;                            // tensor-level parallelism
};

struct MergeStats {
    std::uint64_t tensors_merged = 0;
    std::uint64_t tensors_copied = 0;
    std::uint64_t bytes_written = 0;
    std::uint64_t peak_buffer_bytes = 0;  // high-water mark of payload working buffers
};

/// Average the plan's checkpoints element-wise into a new checkpoint at
/// `out_path`. Accumulation is in 64-bit floats with plan entries pre-sorted
/// by (path, weight) and a single rounding to the schema dtype, so the output
/// is byte-deterministic under entry permutation. Tensors are streamed in
/// bounded slabs; peak working memory is O(largest tensor), independent of
/// plan size. On any failure nothing is left at `out_path`.
MergeStats weighted_merge(const MergePlan& plan, const std::filesystem::path& out_path,
                          const MergeOptions& options = {});

/// Provenance embedded in merged checkpoints' __metadata__.
std::map<std::string, std::string> merge_provenance(const MergePlan& sorted_plan, Strategy strategy);

}  // namespace soupforge
