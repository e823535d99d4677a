// Copyright 2026 The SoupForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "soupforge/dtype.hpp"

namespace soupforge::test {

/// Straight-line greedy selective-merge reference over scalar models: keep
/// the first model, scan the rest in order, accept a candidate only when the
/// trial score strictly improves. The trial score follows the documented
/// pipeline: sum the member values in acceptance order in 64-bit floats,
/// divide by the member count, round to the storage dtype, then score as
/// absolute deviation from the target. No file I/O, no shared code with the
/// production scan.
struct ScalarSimResult {
    std::vector<std::size_t> accepted;
    std::vector<double> trace_wers;   // row 0 is the baseline
    std::vector<bool> trace_accepts;  // row 0 is always true
    std::size_t evaluations = 0;
    double final_value = 0.0;
};

inline double round_to_dtype(double v, DType dtype) {
    std::byte raw[8];
    double out = 0.0;
    encode_from_f64(dtype, std::span(&v, 1), std::span(raw, dtype_size(dtype)));
    decode_to_f64(dtype, std::span(raw, dtype_size(dtype)), std::span(&out, 1));
    return out;
}

inline ScalarSimResult simulate_smact_scalar(std::span<const double> values, double target,
                                             DType dtype = DType::f64) {
    const auto stored = [&](double v) { return round_to_dtype(v, dtype); };
    const auto trial_value = [&](const std::vector<std::size_t>& members) {
        double sum = stored(values[members[0]]);
        for (std::size_t k = 1; k < members.size(); ++k) sum += stored(values[members[k]]);
        return stored(sum / static_cast<double>(members.size()));
    };

    ScalarSimResult res;
    res.accepted = {0};
    double best = std::abs(trial_value(res.accepted) - target);
    res.evaluations = 1;
    res.trace_wers.push_back(best);
    res.trace_accepts.push_back(true);
    res.final_value = trial_value(res.accepted);

    for (std::size_t i = 1; i < values.size(); ++i) {
        std::vector<std::size_t> trial = res.accepted;
        trial.push_back(i);
        const double wer = std::abs(trial_value(trial) - target);
        ++res.evaluations;
        const bool accept = wer < best;
        if (accept) {
            res.accepted.push_back(i);
            best = wer;
            res.final_value = trial_value(res.accepted);
        }
        res.trace_wers.push_back(wer);
        res.trace_accepts.push_back(accept);
    }
    return res;
}

}  // namespace soupforge::test
