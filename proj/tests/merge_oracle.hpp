// Copyright 2026 The SoupForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include "soupforge/merge_core.hpp"
#include "soupforge/tensor_store.hpp"

namespace soupforge::test {

/// Independent reference for weighted averaging: materializes every tensor of
/// every checkpoint in full, accumulates the weighted sum per element in one
/// pass over the plan as given (no sorting, no slabs), and rounds once to the
/// storage dtype. Returns the decoded per-tensor values.
inline std::map<std::string, std::vector<double>> full_materialization_mean(
    const MergePlan& plan) {
    std::vector<Checkpoint> ckpts;
    for (const PlanEntry& e : plan.entries) ckpts.push_back(Checkpoint::open(e.path));

    std::map<std::string, std::vector<double>> result;
    for (const TensorMeta& meta : ckpts.front().metas()) {
        std::vector<double> acc(meta.num_elements(), 0.0);
        for (std::size_t k = 0; k < ckpts.size(); ++k) {
            const std::vector<double> values = ckpts[k].read_values(*ckpts[k].find(meta.name));
            for (std::size_t j = 0; j < acc.size(); ++j) {
                acc[j] += plan.entries[k].weight * values[j];
            }
        }
        // one rounding to the storage dtype, exactly as a file would hold it
        std::vector<std::byte> raw(acc.size() * dtype_size(meta.dtype));
        encode_from_f64(meta.dtype, acc, raw);
        std::vector<double> rounded(acc.size());
        decode_to_f64(meta.dtype, raw, rounded);
        result[meta.name] = std::move(rounded);
    }
    return result;
}

/// Largest |a-b| / max(|a|, |b|, floor) over all elements of all tensors.
/// The floor sits nine orders of magnitude below the O(1) test data: where
/// inputs cancel catastrophically, any two valid summation orders differ by
/// 100% in relative terms while agreeing to ~1e-16 absolutely, and only that
/// machine-precision residue is forgiven.
inline double max_relative_error(const std::map<std::string, std::vector<double>>& expect,
                                 const Checkpoint& got, double floor = 1e-9) {
    double worst = 0.0;
    for (const auto& [name, want] : expect) {
        const std::vector<double> have = got.read_values(*got.find(name));
        for (std::size_t j = 0; j < want.size(); ++j) {
            const double denom = std::max({std::abs(want[j]), std::abs(have[j]), floor});
            worst = std::max(worst, std::abs(want[j] - have[j]) / denom);
        }
    }
    return worst;
}

}  // namespace soupforge::test
