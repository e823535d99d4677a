// Copyright 2026 The SoupForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace soupforge {

/// Classified failure reasons. Every user-facing error carries one of these
/// so callers (and tests) can distinguish failure modes without string
/// matching.
enum class Errc {
    // checkpoint container
    malformed_header,
    truncated_payload,
    payload_size_mismatch,
    duplicate_tensor,
    unsupported_dtype,
    overlapping_ranges,
    invalid_tensor_entry,
    io_error,
    // schema compatibility
    missing_tensor,
    shape_mismatch,
    dtype_mismatch,
    // manifests and plans
    invalid_manifest,
    unknown_trajectory,
    invalid_selection,
    missing_eval_wer,
    too_few_trajectories,
    invalid_plan,
    // oracle
    oracle_failure,
    // corpora
    invalid_corpus,
    duplicate_utterance,
    missing_duration,
    invalid_buckets,
    // generic
    invalid_argument,
    out_of_range,
};

const char* errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace soupforge
