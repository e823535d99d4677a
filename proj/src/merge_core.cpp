// Copyright 2026 The SoupForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "soupforge/merge_core.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "soupforge/error.hpp"

namespace soupforge {

namespace {

using nlohmann::json;

constexpr double kWeightSumTolerance = 1e-12;

/// High-water-mark meter for payload working buffers.
class MemoryMeter {
public:
    void* acquire(std::uint64_t bytes) {
        const std::uint64_t now = current_.fetch_add(bytes) + bytes;
        std::uint64_t peak = peak_.load();
        while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
        }
        return nullptr;
    }
    void release(std::uint64_t bytes) { current_.fetch_sub(bytes); }
    std::uint64_t peak() const { return peak_.load(); }

private:
    std::atomic<std::uint64_t> current_{0};
    std::atomic<std::uint64_t> peak_{0};
};

template <typename T>
class MeteredBuffer {
public:
    MeteredBuffer(MemoryMeter& meter, std::size_t count) : meter_(meter), data_(count) {
        meter_.acquire(count * sizeof(T));
    }
    ~MeteredBuffer() { meter_.release(data_.size() * sizeof(T)); }
    MeteredBuffer(const MeteredBuffer&) = delete;
    MeteredBuffer& operator=(const MeteredBuffer&) = delete;

    std::span<T> span() { return data_; }
    std::span<T> span(std::size_t count) { return std::span<T>(data_).first(count); }

private:
    MemoryMeter& meter_;
    std::vector<T> data_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Manifest

namespace {

CandidateRecord parse_manifest_line(const json& obj, std::size_t line_no) {
    const std::string where = "manifest line " + std::to_string(line_no);
    if (!obj.is_object()) throw Error(Errc::invalid_manifest, where + ": not a JSON object");
    CandidateRecord rec;
    for (const auto& [key, value] : obj.items()) {
        if (key == "path") {
            if (!value.is_string()) throw Error(Errc::invalid_manifest, where + ": path must be a string");
            rec.checkpoint_path = value.get<std::string>();
        } else if (key == "trajectory") {
            if (!value.is_string()) {
                throw Error(Errc::invalid_manifest, where + ": trajectory must be a string");
            }
            rec.trajectory_id = value.get<std::string>();
        } else if (key == "step") {
            if (!value.is_number_unsigned()) {
                throw Error(Errc::invalid_manifest, where + ": step must be a non-negative integer");
            }
            rec.step = value.get<std::uint64_t>();
        } else if (key == "wer") {
            if (!value.is_number()) throw Error(Errc::invalid_manifest, where + ": wer must be a number");
            rec.eval_wer = value.get<double>();
        } else if (key == "label") {
            if (!value.is_string()) throw Error(Errc::invalid_manifest, where + ": label must be a string");
            rec.label = value.get<std::string>();
        } else {
            throw Error(Errc::invalid_manifest, where + ": unknown key '" + key + "'");
        }
    }
    if (rec.checkpoint_path.empty()) throw Error(Errc::invalid_manifest, where + ": missing path");
    if (!obj.contains("trajectory")) throw Error(Errc::invalid_manifest, where + ": missing trajectory");
    if (!obj.contains("step")) throw Error(Errc::invalid_manifest, where + ": missing step");
    return rec;
}

}  // namespace

std::vector<CandidateRecord> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_error, "cannot open manifest '" + path.string() + "'");
    std::vector<CandidateRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(Errc::invalid_manifest,
                        "manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        records.push_back(parse_manifest_line(obj, line_no));
    }
    validate_manifest(records);
    return records;
}

void validate_manifest(std::span<const CandidateRecord> records) {
    std::set<std::pair<std::string_view, std::uint64_t>> seen;
    for (const CandidateRecord& rec : records) {
        if (!seen.emplace(rec.trajectory_id, rec.step).second) {
            throw Error(Errc::invalid_manifest,
                        "duplicate (trajectory, step) = ('" + rec.trajectory_id + "', " +
                            std::to_string(rec.step) + ")");
        }
        if (rec.eval_wer && (*rec.eval_wer < 0.0 || *rec.eval_wer > 1.0 || !std::isfinite(*rec.eval_wer))) {
            throw Error(Errc::invalid_manifest,
                        "record ('" + rec.trajectory_id + "', " + std::to_string(rec.step) +
                            "): wer must be a fraction in [0, 1]");
        }
    }
}

// ---------------------------------------------------------------------------
// Plans

void MergePlan::validate() const {
    if (entries.empty()) throw Error(Errc::invalid_plan, "merge plan is empty");
    double sum = 0.0;
    for (const PlanEntry& e : entries) {
        if (!(e.weight > 0.0) || !std::isfinite(e.weight)) {
            throw Error(Errc::invalid_plan, "plan entry '" + e.path + "': weight must be positive");
        }
        sum += e.weight;
    }
    if (std::abs(sum - 1.0) > kWeightSumTolerance) {
        throw Error(Errc::invalid_plan, "plan weights sum to " + std::to_string(sum) + ", expected 1");
    }
}

MergePlan MergePlan::uniform(std::vector<std::string> paths) {
    if (paths.empty()) throw Error(Errc::invalid_plan, "merge plan is empty");
    MergePlan plan;
    const double w = 1.0 / static_cast<double>(paths.size());
    plan.entries.reserve(paths.size());
    for (std::string& p : paths) plan.entries.push_back({std::move(p), w});
    return plan;
}

Selection Selection::parse(std::string_view text) {
    if (text == "all") return {SelectionKind::all, 0};
    auto parse_k = [&](std::string_view prefix) -> std::optional<std::uint64_t> {
        if (!text.starts_with(prefix)) return std::nullopt;
        const std::string_view num = text.substr(prefix.size());
        std::uint64_t k = 0;
        auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), k);
        if (ec != std::errc{} || ptr != num.data() + num.size()) {
            throw Error(Errc::invalid_selection, "bad selection '" + std::string(text) + "'");
        }
        return k;
    };
    if (auto k = parse_k("last_k:")) return {SelectionKind::last_k, *k};
    if (auto k = parse_k("every_k:")) return {SelectionKind::every_k, *k};
    throw Error(Errc::invalid_selection,
                "unknown selection '" + std::string(text) + "' (expected all, last_k:K, every_k:K)");
}

MergePlan plan_mast(std::span<const CandidateRecord> manifest, std::string_view trajectory,
                    Selection selection) {
    std::vector<const CandidateRecord*> runs;
    for (const CandidateRecord& rec : manifest) {
        if (rec.trajectory_id == trajectory) runs.push_back(&rec);
    }
    if (runs.empty()) {
        throw Error(Errc::unknown_trajectory, "no checkpoints for trajectory '" + std::string(trajectory) + "'");
    }
    std::sort(runs.begin(), runs.end(),
              [](const CandidateRecord* a, const CandidateRecord* b) { return a->step < b->step; });

    std::vector<const CandidateRecord*> picked;
    switch (selection.kind) {
        case SelectionKind::all:
            picked = runs;
            break;
        case SelectionKind::last_k:
            if (selection.k == 0) throw Error(Errc::invalid_selection, "last_k requires k > 0");
            if (selection.k > runs.size()) {
                throw Error(Errc::invalid_selection,
                            "last_k:" + std::to_string(selection.k) + " exceeds the " +
                                std::to_string(runs.size()) + " checkpoints of trajectory '" +
                                std::string(trajectory) + "'");
            }
            picked.assign(runs.end() - static_cast<std::ptrdiff_t>(selection.k), runs.end());
            break;
        case SelectionKind::every_k:
            if (selection.k == 0) throw Error(Errc::invalid_selection, "every_k requires k > 0");
            for (std::size_t i = 0; i < runs.size(); i += selection.k) picked.push_back(runs[i]);
            break;
    }

    std::vector<std::string> paths;
    paths.reserve(picked.size());
    for (const CandidateRecord* rec : picked) paths.push_back(rec->checkpoint_path);
    return MergePlan::uniform(std::move(paths));
}

MergePlan plan_mact(std::span<const CandidateRecord> manifest) {
    std::map<std::string, const CandidateRecord*> best;  // trajectory -> argmin
    for (const CandidateRecord& rec : manifest) {
        if (!rec.eval_wer) {
            throw Error(Errc::missing_eval_wer, "record ('" + rec.trajectory_id + "', " +
                                                    std::to_string(rec.step) + ") has no eval wer");
        }
        auto [it, inserted] = best.emplace(rec.trajectory_id, &rec);
        if (!inserted) {
            const CandidateRecord* cur = it->second;
            // ties break toward the lowest step
            if (*rec.eval_wer < *cur->eval_wer ||
                (*rec.eval_wer == *cur->eval_wer && rec.step < cur->step)) {
                it->second = &rec;
            }
        }
    }
    if (best.size() < 2) {
        throw Error(Errc::too_few_trajectories,
                    "merging across trajectories requires at least 2, found " +
                        std::to_string(best.size()));
    }
    std::vector<std::string> paths;
    paths.reserve(best.size());
    for (const auto& [traj, rec] : best) paths.push_back(rec->checkpoint_path);
    return MergePlan::uniform(std::move(paths));
}

std::string_view strategy_name(Strategy s) noexcept {
    switch (s) {
        case Strategy::mast: return "mast";
        case Strategy::mact: return "mact";
        case Strategy::smact: return "smact";
        case Strategy::custom: return "custom";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// weighted_merge

std::map<std::string, std::string> merge_provenance(const MergePlan& sorted_plan, Strategy strategy) {
    json sources = json::array();
    for (const PlanEntry& e : sorted_plan.entries) {
        sources.push_back({{"path", e.path}, {"weight", e.weight}});
    }
    return {{"soupforge.strategy", std::string(strategy_name(strategy))},
            {"soupforge.sources", sources.dump()}};
}

namespace {

// Slab length (elements) for one worker: an eighth of the largest tensor,
// split across workers, keeps the summed buffer footprint well below the
// size of the largest tensor itself.
std::size_t slab_elements(std::uint64_t largest_tensor_elems, int threads) {
    const std::uint64_t per_worker =
        std::max<std::uint64_t>(largest_tensor_elems / (8 * std::max(threads, 1)), 1024);
    return static_cast<std::size_t>(std::min<std::uint64_t>(per_worker, 4u << 20));
}

// Compensated (Kahan) accumulation keeps the 64-bit sum error independent of
// the number of merged models. `err` holds the excess already counted into
// `sum`; the best estimate of the true total is sum - err.
inline void kahan_add(double& sum, double& err, double value) {
    const double y = value - err;
    const double t = sum + y;
    err = (t - sum) - y;
    sum = t;
}

// (sum - err) / n with the quotient remainder recovered through fma, so the
// result is within one ulp of the exact mean. Merging n identical models
// reproduces them to the last bit of every storage type below f64.
inline double divide_compensated(double sum, double err, double n) {
    const double q = sum / n;
    const double rem = std::fma(-q, n, sum) - err;
    if (rem == 0.0) return q;  // exact quotient; also keeps signed zeros intact
    return q + rem / n;
}

struct TensorTask {
    const TensorInfo* info = nullptr;
    bool copy_only = false;
};

}  // namespace

MergeStats weighted_merge(const MergePlan& plan, const std::filesystem::path& out_path,
                          const MergeOptions& options) {
    plan.validate();

    // Canonical accumulation order: (path, weight) ascending. Equal entries
    // are interchangeable, so any permutation of the input yields identical
    // output bytes.
    MergePlan sorted = plan;
    std::sort(sorted.entries.begin(), sorted.entries.end(),
              [](const PlanEntry& a, const PlanEntry& b) {
                  return std::tie(a.path, a.weight) < std::tie(b.path, b.weight);
              });

    std::vector<Checkpoint> ckpts;
    ckpts.reserve(sorted.entries.size());
    for (const PlanEntry& e : sorted.entries) ckpts.push_back(Checkpoint::open(e.path));
    const MergeSchema schema = validate_compat(ckpts);

    const std::set<std::string> excluded(options.exclude.begin(), options.exclude.end());
    for (const std::string& name : excluded) {
        if (!schema.find(name)) {
            throw Error(Errc::invalid_argument, "excluded tensor '" + name + "' not in schema");
        }
    }

    std::vector<CheckpointWriter::Decl> decls;
    decls.reserve(schema.tensors.size());
    std::uint64_t largest_elems = 0;
    for (const TensorInfo& t : schema.tensors) {
        decls.push_back({t.name, t.dtype, t.shape});
        largest_elems = std::max(largest_elems, t.num_elements());
    }
    CheckpointWriter writer(out_path, std::move(decls), merge_provenance(sorted, options.strategy));

    const int threads = std::max(options.threads, 1);
    const std::size_t slab = slab_elements(largest_elems, threads);

    const bool uniform = std::all_of(
        sorted.entries.begin(), sorted.entries.end(),
        [&](const PlanEntry& e) { return e.weight == sorted.entries.front().weight; });
    const double model_count = static_cast<double>(sorted.entries.size());

    MemoryMeter meter;
    MergeStats stats;
    std::atomic<std::size_t> next_tensor{0};
    std::atomic<std::uint64_t> bytes_written{0};
    std::atomic<std::uint64_t> merged_count{0};
    std::atomic<std::uint64_t> copied_count{0};

    std::mutex failure_mutex;
    std::exception_ptr failure;
    std::atomic<bool> failed{false};

    auto worker = [&]() {
        try {
            MeteredBuffer<double> acc(meter, slab);
            MeteredBuffer<double> comp(meter, slab);
            MeteredBuffer<double> vals(meter, slab);
            MeteredBuffer<std::byte> io(meter, slab * sizeof(double));
            for (;;) {
                const std::size_t idx = next_tensor.fetch_add(1);
                if (idx >= schema.tensors.size()) break;
                if (failed.load(std::memory_order_relaxed)) break;
                const TensorInfo& info = schema.tensors[idx];
                const bool copy_only = excluded.contains(info.name);
                const std::size_t elem_bytes = dtype_size(info.dtype);
                const std::uint64_t total_elems = info.num_elements();

                std::uint64_t done = 0;
                while (done < total_elems) {
                    const std::size_t n = static_cast<std::size_t>(
                        std::min<std::uint64_t>(slab, total_elems - done));
                    const std::uint64_t byte_off = done * elem_bytes;
                    auto raw = io.span(n * elem_bytes);
                    if (copy_only) {
                        const TensorMeta* meta = ckpts.front().find(info.name);
                        ckpts.front().read_bytes(*meta, byte_off, raw);
                    } else {
                        auto sums = acc.span(n);
                        auto errs = comp.span(n);
                        auto x = vals.span(n);
                        std::fill(errs.begin(), errs.end(), 0.0);
                        for (std::size_t k = 0; k < ckpts.size(); ++k) {
                            const TensorMeta* meta = ckpts[k].find(info.name);
                            ckpts[k].read_bytes(*meta, byte_off, raw);
                            if (k == 0) {
                                // seed with the first entry so exact values
                                // (and signed zeros) survive untouched
                                decode_to_f64(info.dtype, raw, sums);
                                if (!uniform) {
                                    const double w = sorted.entries[0].weight;
                                    for (double& s : sums) s *= w;
                                }
                                continue;
                            }
                            decode_to_f64(info.dtype, raw, x);
                            const double w = sorted.entries[k].weight;
                            for (std::size_t j = 0; j < n; ++j) {
                                kahan_add(sums[j], errs[j], uniform ? x[j] : w * x[j]);
                            }
                        }
                        if (uniform) {
                            for (std::size_t j = 0; j < n; ++j) {
                                x[j] = divide_compensated(sums[j], errs[j], model_count);
                            }
                        } else {
                            for (std::size_t j = 0; j < n; ++j) x[j] = sums[j] - errs[j];
                        }
                        encode_from_f64(info.dtype, x, raw);
                    }
                    writer.write(info.name, byte_off, raw);
                    bytes_written.fetch_add(raw.size());
                    done += n;
                }
                if (copy_only) {
                    copied_count.fetch_add(1);
                } else {
                    merged_count.fetch_add(1);
                }
            }
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            failed.store(true, std::memory_order_relaxed);
        }
    };

    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(threads));
        for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    writer.finalize();
    stats.tensors_merged = merged_count.load();
    stats.tensors_copied = copied_count.load();
    stats.bytes_written = bytes_written.load();
    stats.peak_buffer_bytes = meter.peak();
    return stats;
}

}  // namespace soupforge
