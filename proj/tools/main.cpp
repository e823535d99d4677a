// Copyright 2026 The SoupForge Authors
// SPDX-License-Identifier: Apache-2.0
//
// soupforge: checkpoint merging (trajectory averaging, cross-trajectory
// averaging, greedy selective merging), WER scoring, transcript
// normalization, and result-table rendering behind one executable.

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "soupforge/error.hpp"
#include "soupforge/merge_core.hpp"
#include "soupforge/report.hpp"
#include "soupforge/selective.hpp"
#include "soupforge/tensor_store.hpp"
#include "soupforge/textnorm.hpp"
#include "soupforge/wer.hpp"

namespace {

using nlohmann::json;
using namespace soupforge;

struct GlobalFlags {
    std::string scratch_dir;
    int threads = 0;  // 0 -> hardware concurrency
    bool as_json = false;
    std::uint64_t seed = 0;  // reserved for synthetic tooling; commands are deterministic
};

std::filesystem::path resolve_scratch(const GlobalFlags& flags) {
    // SOUPFORGE_SCRATCH wins over the flag
    if (const char* env = std::getenv("SOUPFORGE_SCRATCH"); env && *env) return env;
    if (!flags.scratch_dir.empty()) return flags.scratch_dir;
    return std::filesystem::temp_directory_path() / "soupforge";
}

int effective_threads(const GlobalFlags& flags) {
    if (flags.threads > 0) return flags.threads;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    const std::filesystem::path tmp =
        path.parent_path() / (path.filename().string() + ".tmp." + std::to_string(::getpid()));
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error(Errc::io_error, "cannot open '" + tmp.string() + "' for writing");
        out << text;
        if (!out.flush()) throw Error(Errc::io_error, "write to '" + tmp.string() + "' failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw Error(Errc::io_error, "rename to '" + path.string() + "' failed");
    }
}

json plan_to_json(const MergePlan& plan) {
    json entries = json::array();
    for (const PlanEntry& e : plan.entries) {
        entries.push_back({{"path", e.path}, {"weight", e.weight}});
    }
    return {{"entries", std::move(entries)}, {"n", plan.size()}};
}

json trace_to_json(const SelectiveResult& result) {
    json rows = json::array();
    for (const TraceRow& row : result.trace) {
        rows.push_back({{"index", row.index},
                        {"candidate_wer_if_merged", row.candidate_wer_if_merged},
                        {"accepted", row.accepted},
                        {"best_wer_after", row.best_wer_after}});
    }
    json j;
    j["accepted"] = result.accepted;
    j["evaluations_used"] = result.evaluations_used;
    j["trace"] = std::move(rows);
    j["final_plan"] = plan_to_json(result.final_plan);
    if (!result.trace.empty()) j["final_wer"] = result.trace.back().best_wer_after;
    return j;
}

// ---------------------------------------------------------------------------
// subcommand payloads

struct InspectArgs {
    std::string path;
};

int run_inspect(const InspectArgs& args, const GlobalFlags& flags) {
    const Checkpoint ckpt = Checkpoint::open(args.path);
    if (flags.as_json) {
        json tensors = json::array();
        for (const TensorMeta& m : ckpt.metas()) {
            tensors.push_back({{"name", m.name},
                               {"dtype", dtype_name(m.dtype)},
                               {"shape", m.shape},
                               {"bytes", m.byte_size()}});
        }
        json j;
        j["path"] = args.path;
        j["payload_bytes"] = ckpt.payload_size();
        j["tensors"] = std::move(tensors);
        j["metadata"] = ckpt.metadata();
        std::cout << j.dump(2) << "\n";
        return 0;
    }
    std::cout << "checkpoint: " << args.path << "\n"
              << "tensors: " << ckpt.metas().size() << "  payload bytes: " << ckpt.payload_size()
              << "\n";
    for (const TensorMeta& m : ckpt.metas()) {
        std::cout << "  " << m.name << "  " << dtype_name(m.dtype) << "  [";
        for (std::size_t i = 0; i < m.shape.size(); ++i) {
            if (i) std::cout << ", ";
            std::cout << m.shape[i];
        }
        std::cout << "]  " << m.byte_size() << " bytes\n";
    }
    if (!ckpt.metadata().empty()) {
        std::cout << "metadata:\n";
        for (const auto& [k, v] : ckpt.metadata()) std::cout << "  " << k << " = " << v << "\n";
    }
    return 0;
}

struct PlanArgs {
    std::string manifest;
    std::string strategy;
    std::string trajectory;
    std::string selection = "all";
};

MergePlan build_plan(const PlanArgs& args) {
    const auto manifest = load_manifest(args.manifest);
    if (args.strategy == "mast") {
        if (args.trajectory.empty()) {
            throw Error(Errc::invalid_argument, "--strategy mast requires --trajectory");
        }
        return plan_mast(manifest, args.trajectory, Selection::parse(args.selection));
    }
    if (args.strategy == "mact") {
        return plan_mact(manifest);
    }
    throw Error(Errc::invalid_argument, "unknown strategy '" + args.strategy + "'");
}

int run_plan(const PlanArgs& args, const GlobalFlags& flags) {
    const MergePlan plan = build_plan(args);
    if (flags.as_json) {
        json j = plan_to_json(plan);
        j["strategy"] = args.strategy;
        std::cout << j.dump(2) << "\n";
        return 0;
    }
    std::cout << "plan: " << args.strategy << ", " << plan.size() << " checkpoints\n";
    for (const PlanEntry& e : plan.entries) {
        std::cout << "  " << e.path << "  weight " << e.weight << "\n";
    }
    return 0;
}

struct MergeArgs {
    PlanArgs plan;
    std::string out;
    std::vector<std::string> exclude;
};

int run_merge(const MergeArgs& args, const GlobalFlags& flags) {
    const MergePlan plan = build_plan(args.plan);
    MergeOptions options;
    options.strategy = args.plan.strategy == "mast" ? Strategy::mast : Strategy::mact;
    options.exclude = args.exclude;
    options.threads = effective_threads(flags);
    const MergeStats stats = weighted_merge(plan, args.out, options);

    json j = plan_to_json(plan);
    j["strategy"] = strategy_name(options.strategy);
    j["out"] = args.out;
    j["tensors_merged"] = stats.tensors_merged;
    j["tensors_copied"] = stats.tensors_copied;
    j["bytes_written"] = stats.bytes_written;
    std::cout << j.dump(2) << "\n";
    return 0;
}

struct SmactArgs {
    std::string manifest;
    std::string oracle_cmd;
    std::string oracle_target;
    std::string out;
    std::string trace;
    std::string trial_mode = "incremental";
    double oracle_timeout_s = 3600.0;
    bool seed_best = false;
};

std::unique_ptr<Oracle> make_oracle(const std::string& cmd, const std::string& target,
                                    double timeout_s) {
    if (cmd.empty() == target.empty()) {
        throw Error(Errc::invalid_argument, "exactly one of --oracle-cmd / --oracle-target is required");
    }
    if (!cmd.empty()) {
        return std::make_unique<ExternalCommandOracle>(
            cmd, std::chrono::milliseconds(static_cast<long long>(timeout_s * 1000.0)));
    }
    return std::make_unique<SyntheticTargetOracle>(Checkpoint::open(target));
}

int run_smact(const SmactArgs& args, const GlobalFlags& flags) {
    auto manifest = load_manifest(args.manifest);
    if (manifest.empty()) throw Error(Errc::invalid_manifest, "manifest is empty");
    if (args.seed_best) {
        std::size_t best = 0;
        for (std::size_t i = 0; i < manifest.size(); ++i) {
            if (!manifest[i].eval_wer) {
                throw Error(Errc::missing_eval_wer,
                            "--seed-best needs an eval wer on every manifest record");
            }
            if (*manifest[i].eval_wer < *manifest[best].eval_wer) best = i;
        }
        std::rotate(manifest.begin(), manifest.begin() + static_cast<std::ptrdiff_t>(best),
                    manifest.begin() + static_cast<std::ptrdiff_t>(best) + 1);
    }
    std::vector<std::string> candidates;
    candidates.reserve(manifest.size());
    for (const CandidateRecord& rec : manifest) candidates.push_back(rec.checkpoint_path);

    const auto oracle = make_oracle(args.oracle_cmd, args.oracle_target, args.oracle_timeout_s);
    SmactOptions options;
    options.scratch_dir = resolve_scratch(flags);
    if (args.trial_mode != "from-scratch" && args.trial_mode != "incremental") {
        throw Error(Errc::invalid_argument, "--trial-mode must be incremental or from-scratch");
    }
    options.mode =
        args.trial_mode == "from-scratch" ? TrialMode::from_scratch : TrialMode::incremental;
    if (!args.out.empty()) options.final_out = args.out;

    const SelectiveResult result = smact(candidates, *oracle, options);
    const json j = trace_to_json(result);
    if (!args.trace.empty()) write_text_atomic(args.trace, j.dump(2) + "\n");
    if (flags.as_json) {
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "accepted " << result.accepted.size() << " of " << candidates.size()
                  << " candidates, final wer " << result.trace.back().best_wer_after << "\n";
        for (const TraceRow& row : result.trace) {
            std::cout << "  M_" << row.index << "  wer " << row.candidate_wer_if_merged << "  "
                      << (row.accepted ? "accepted" : "rejected") << "\n";
        }
        if (!args.out.empty()) std::cout << "merged model written to " << args.out << "\n";
    }
    return 0;
}

struct WerArgs {
    std::string corpus;
    std::string buckets;
};

int run_wer(const WerArgs& args, const GlobalFlags& flags) {
    const auto utts = load_corpus(args.corpus);
    std::optional<std::vector<double>> edges;
    if (!args.buckets.empty()) {
        std::vector<double> parsed;
        std::size_t start = 0;
        while (start <= args.buckets.size()) {
            std::size_t comma = args.buckets.find(',', start);
            if (comma == std::string::npos) comma = args.buckets.size();
            try {
                parsed.push_back(std::stod(args.buckets.substr(start, comma - start)));
            } catch (const std::exception&) {
                throw Error(Errc::invalid_buckets, "cannot parse bucket edges '" + args.buckets + "'");
            }
            start = comma + 1;
        }
        edges = std::move(parsed);
    }
    const WerReport report = corpus_wer(utts, edges);
    if (flags.as_json) {
        std::cout << report_to_json(report).dump(2) << "\n";
    } else {
        std::cout << format_report(report);
    }
    return 0;
}

struct NormalizeArgs {
    std::string config;
    bool lowercase_fillers = false;
};

int run_normalize(const NormalizeArgs& args, const GlobalFlags&) {
    NormConfig cfg;
    if (!args.config.empty()) {
        std::ifstream in(args.config);
        if (!in) throw Error(Errc::io_error, "cannot open config '" + args.config + "'");
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw Error(Errc::invalid_argument, "config '" + args.config + "': " + e.what());
        }
        cfg = norm_config_from_json(j);
    }
    if (args.lowercase_fillers) cfg.lowercase_fillers = true;
    std::string line;
    while (std::getline(std::cin, line)) {
        std::cout << normalize(line, cfg) << "\n";
    }
    return 0;
}

struct CurveArgs {
    std::string manifest;
    std::string mode;
    std::string trajectory;
    std::string oracle_cmd;
    std::string oracle_target;
    std::string out;
    double oracle_timeout_s = 3600.0;
    bool individuals = false;
};

int run_curve(const CurveArgs& args, const GlobalFlags& flags) {
    const auto manifest = load_manifest(args.manifest);
    MergePlan plan;
    if (args.mode == "prefix_mast") {
        if (args.trajectory.empty()) {
            throw Error(Errc::invalid_argument, "--mode prefix_mast requires --trajectory");
        }
        plan = plan_mast(manifest, args.trajectory);
    } else if (args.mode == "prefix_mact") {
        plan = plan_mact(manifest);
    } else {
        throw Error(Errc::invalid_argument, "--mode must be prefix_mast or prefix_mact");
    }
    std::vector<std::string> candidates;
    for (const PlanEntry& e : plan.entries) candidates.push_back(e.path);

    const auto oracle = make_oracle(args.oracle_cmd, args.oracle_target, args.oracle_timeout_s);
    CurveOptions options;
    options.individuals = args.individuals;
    options.scratch_dir = resolve_scratch(flags);
    const CurveResult curve = merge_curve(candidates, *oracle, options);

    const std::string text = curve_to_json(curve).dump(2) + "\n";
    if (curve.aborted) {
        // partial curves go to stdout only; --out is reserved for complete runs
        std::cout << text;
        std::cerr << "curve aborted: " << *curve.aborted << "\n";
        return 1;
    }
    if (!args.out.empty()) {
        write_text_atomic(args.out, text);
    } else {
        std::cout << text;
    }
    return 0;
}

struct TableArgs {
    std::string fixtures;
    std::string format = "md";
};

int run_table(const TableArgs& args, const GlobalFlags&) {
    const TableDocument table = load_table_fixture_file(args.fixtures);
    if (args.format == "md") {
        std::cout << render_table_markdown(table);
    } else if (args.format == "json") {
        std::cout << render_table_json(table).dump(2) << "\n";
    } else {
        throw Error(Errc::invalid_argument, "--format must be md or json");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"checkpoint merging, WER scoring, and transcript normalization"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalFlags flags;
    app.add_option("--scratch-dir", flags.scratch_dir,
                   "directory for trial checkpoints (SOUPFORGE_SCRATCH overrides)");
    app.add_option("--threads", flags.threads, "tensor-level merge parallelism (0 = all cores)");
    app.add_flag("--json", flags.as_json, "machine-readable output");
    app.add_option("--seed", flags.seed, "seed for randomized tooling (commands are deterministic)");

    InspectArgs inspect_args;
    auto* inspect = app.add_subcommand("inspect", "list the tensors of a checkpoint");
    inspect->add_option("checkpoint", inspect_args.path, "checkpoint file")->required();

    PlanArgs plan_args;
    auto* plan = app.add_subcommand("plan", "resolve a manifest into a merge plan");
    plan->add_option("--manifest", plan_args.manifest, "JSONL manifest")->required();
    plan->add_option("--strategy", plan_args.strategy, "mast | mact")->required();
    plan->add_option("--trajectory", plan_args.trajectory, "trajectory id (mast)");
    plan->add_option("--selection", plan_args.selection, "all | last_k:K | every_k:K");

    MergeArgs merge_args;
    auto* merge = app.add_subcommand("merge", "average checkpoints into a new checkpoint");
    merge->add_option("--manifest", merge_args.plan.manifest, "JSONL manifest")->required();
    merge->add_option("--strategy", merge_args.plan.strategy, "mast | mact")->required();
    merge->add_option("--trajectory", merge_args.plan.trajectory, "trajectory id (mast)");
    merge->add_option("--selection", merge_args.plan.selection, "all | last_k:K | every_k:K");
    merge->add_option("--out", merge_args.out, "output checkpoint")->required();
    merge->add_option("--exclude", merge_args.exclude,
                      "tensor names copied from the first entry instead of merged");

    SmactArgs smact_args;
    auto* smact_cmd = app.add_subcommand("smact", "greedy selective merge driven by a WER oracle");
    smact_cmd->add_option("--manifest", smact_args.manifest, "JSONL manifest")->required();
    smact_cmd->add_option("--oracle-cmd", smact_args.oracle_cmd,
                          "shell command scoring a checkpoint; {} is replaced by its path");
    smact_cmd->add_option("--oracle-target", smact_args.oracle_target,
                          "checkpoint whose mean absolute deviation serves as a synthetic score");
    smact_cmd->add_option("--out", smact_args.out, "write the final merged model here");
    smact_cmd->add_option("--trace", smact_args.trace, "write the acceptance trace JSON here");
    smact_cmd->add_option("--oracle-timeout", smact_args.oracle_timeout_s,
                          "oracle command timeout in seconds");
    smact_cmd->add_option("--trial-mode", smact_args.trial_mode, "incremental | from-scratch");
    smact_cmd->add_flag("--seed-best", smact_args.seed_best,
                        "start the scan from the manifest's lowest-wer candidate");

    WerArgs wer_args;
    auto* wer = app.add_subcommand("wer", "score a corpus of reference/hypothesis pairs");
    wer->add_option("--corpus", wer_args.corpus, "JSONL corpus: {id, ref, hyp, duration_s?}")
        ->required();
    wer->add_option("--buckets", wer_args.buckets, "duration bucket edges, e.g. 5,30");

    NormalizeArgs norm_args;
    auto* norm = app.add_subcommand("normalize", "normalize transcripts from stdin to stdout");
    norm->add_option("--config", norm_args.config, "normalization config JSON");
    norm->add_flag("--lowercase-fillers", norm_args.lowercase_fillers,
                   "lowercase fillers inside brackets");

    auto* report = app.add_subcommand("report", "experiment reports");
    report->require_subcommand(1);

    CurveArgs curve_args;
    auto* curve = report->add_subcommand("curve", "score merges of growing candidate prefixes");
    curve->add_option("--manifest", curve_args.manifest, "JSONL manifest")->required();
    curve->add_option("--mode", curve_args.mode, "prefix_mast | prefix_mact")->required();
    curve->add_option("--trajectory", curve_args.trajectory, "trajectory id (prefix_mast)");
    curve->add_option("--oracle-cmd", curve_args.oracle_cmd,
                      "shell command scoring a checkpoint; {} is replaced by its path");
    curve->add_option("--oracle-target", curve_args.oracle_target, "synthetic-score target checkpoint");
    curve->add_option("--oracle-timeout", curve_args.oracle_timeout_s, "oracle timeout in seconds");
    curve->add_option("--out", curve_args.out, "write the curve JSON here");
    curve->add_flag("--individuals", curve_args.individuals, "also score every candidate alone");

    TableArgs table_args;
    auto* table = report->add_subcommand("table", "render a stored results table");
    table->add_option("--fixtures", table_args.fixtures, "table fixture JSON")->required();
    table->add_option("--format", table_args.format, "md | json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
        app.exit(e);
        return 2;
    }

    try {
        if (*inspect) return run_inspect(inspect_args, flags);
        if (*plan) return run_plan(plan_args, flags);
        if (*merge) return run_merge(merge_args, flags);
        if (*smact_cmd) return run_smact(smact_args, flags);
        if (*wer) return run_wer(wer_args, flags);
        if (*norm) return run_normalize(norm_args, flags);
        if (*curve) return run_curve(curve_args, flags);
        if (*table) return run_table(table_args, flags);
        std::cerr << "no subcommand\n";
        return 2;
    } catch (const SmactAborted& e) {
        if (flags.as_json) {
            json err;
            err["error"] = {{"code", errc_name(e.code())}, {"message", e.what()}};
            err["error"]["partial"] = trace_to_json(e.partial());
            std::cerr << err.dump(2) << "\n";
        } else {
            std::cerr << "error: " << e.what() << "\n"
                      << "partial scan: " << e.partial().trace.size() << " trace rows, "
                      << e.partial().accepted.size() << " accepted\n";
        }
        return 1;
    } catch (const Error& e) {
        if (flags.as_json) {
            const json err = {{"error", {{"code", errc_name(e.code())}, {"message", e.what()}}}};
            std::cerr << err.dump(2) << "\n";
        } else {
            std::cerr << "error: " << e.what() << "\n";
        }
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
