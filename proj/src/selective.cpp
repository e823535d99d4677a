// Copyright 2026 The SoupForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "soupforge/selective.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <random>

#include "soupforge/error.hpp"

namespace soupforge {

namespace {

// ---------------------------------------------------------------------------
// Subprocess plumbing for the external oracle

struct CommandOutput {
    int exit_code = -1;
    bool timed_out = false;
    std::string out;
    std::string err;
};

constexpr std::size_t kMaxStdout = 1 << 20;
constexpr std::size_t kMaxStderr = 64 << 10;

CommandOutput run_command(const std::string& command, std::chrono::milliseconds timeout) {
    int out_pipe[2], err_pipe[2];
    if (::pipe2(out_pipe, O_CLOEXEC) != 0 || ::pipe2(err_pipe, O_CLOEXEC) != 0) {
        throw Error(Errc::oracle_failure, std::string("pipe: ") + std::strerror(errno));
    }

    const pid_t pid = ::fork();
    if (pid < 0) {
        throw Error(Errc::oracle_failure, std::string("fork: ") + std::strerror(errno));
    }
    if (pid == 0) {
        ::setpgid(0, 0);  // own process group so a timeout can kill the whole tree
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::dup2(err_pipe[1], STDERR_FILENO);
        ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }

    ::close(out_pipe[1]);
    ::close(err_pipe[1]);

    CommandOutput result;
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    struct pollfd fds[2] = {{out_pipe[0], POLLIN, 0}, {err_pipe[0], POLLIN, 0}};
    std::string* sinks[2] = {&result.out, &result.err};
    const std::size_t caps[2] = {kMaxStdout, kMaxStderr};
    int open_fds = 2;

    char buf[4096];
    while (open_fds > 0) {
        const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        if (remaining.count() <= 0) {
            result.timed_out = true;
            ::kill(-pid, SIGKILL);
            break;
        }
        const int rc = ::poll(fds, 2, static_cast<int>(std::min<long long>(remaining.count(), 1000)));
        if (rc < 0) {
            if (errno == EINTR) continue;
            ::kill(-pid, SIGKILL);
            break;
        }
        for (int i = 0; i < 2; ++i) {
            if (fds[i].fd < 0 || !(fds[i].revents & (POLLIN | POLLHUP))) continue;
            const ssize_t n = ::read(fds[i].fd, buf, sizeof(buf));
            if (n > 0) {
                if (sinks[i]->size() < caps[i]) {
                    sinks[i]->append(buf, static_cast<std::size_t>(
                                              std::min<std::size_t>(n, caps[i] - sinks[i]->size())));
                }
            } else if (n == 0 || (n < 0 && errno != EINTR && errno != EAGAIN)) {
                ::close(fds[i].fd);
                fds[i].fd = -1;
                --open_fds;
            }
        }
    }
    for (auto& f : fds) {
        if (f.fd >= 0) ::close(f.fd);
    }

    int status = 0;
    while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
    }
    if (WIFEXITED(status)) {
        result.exit_code = WEXITSTATUS(status);
    } else if (WIFSIGNALED(status)) {
        result.exit_code = 128 + WTERMSIG(status);
    }
    return result;
}

std::string shell_quote(const std::string& s) {
    std::string quoted = "'";
    for (char c : s) {
        if (c == '\'') {
            quoted += "'\\''";
        } else {
            quoted += c;
        }
    }
    quoted += "'";
    return quoted;
}

std::string substitute_path(const std::string& command_template, const std::string& path) {
    const std::string quoted = shell_quote(path);
    std::string cmd;
    std::size_t pos = 0;
    bool replaced = false;
    while (true) {
        const std::size_t hit = command_template.find("{}", pos);
        if (hit == std::string::npos) {
            cmd += command_template.substr(pos);
            break;
        }
        cmd += command_template.substr(pos, hit - pos);
        cmd += quoted;
        pos = hit + 2;
        replaced = true;
    }
    if (!replaced) cmd += " " + quoted;
    return cmd;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::string excerpt(const std::string& s, std::size_t limit = 500) {
    const std::string_view t = trim(s);
    if (t.size() <= limit) return std::string(t);
    return std::string(t.substr(0, limit)) + "...";
}

double check_score(double value, const std::string& context) {
    if (!std::isfinite(value) || value < 0.0) {
        throw Error(Errc::oracle_failure, context + ": score must be finite and non-negative");
    }
    return value;
}

}  // namespace

double eval_external(const std::string& command_template, const std::filesystem::path& merged_path,
                     std::chrono::milliseconds timeout) {
    const std::string command = substitute_path(command_template, merged_path.string());
    const CommandOutput res = run_command(command, timeout);
    if (res.timed_out) {
        throw Error(Errc::oracle_failure, "oracle command timed out: " + command);
    }
    if (res.exit_code != 0) {
        std::string msg = "oracle command exited with status " + std::to_string(res.exit_code) +
                          ": " + command;
        if (!res.err.empty()) msg += "\nstderr: " + excerpt(res.err);
        throw Error(Errc::oracle_failure, msg);
    }
    const std::string_view text = trim(res.out);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
        throw Error(Errc::oracle_failure,
                    "oracle output must be a single decimal number, got: \"" + excerpt(res.out, 120) +
                        "\"");
    }
    return check_score(value, "oracle command");
}

ExternalCommandOracle::ExternalCommandOracle(std::string command_template,
                                             std::chrono::milliseconds timeout)
    : template_(std::move(command_template)), timeout_(timeout) {}

double ExternalCommandOracle::score(const std::filesystem::path& merged_checkpoint) {
    return eval_external(template_, merged_checkpoint, timeout_);
}

std::string ExternalCommandOracle::description() const {
    return "external command: " + template_;
}

SyntheticTargetOracle::SyntheticTargetOracle(Checkpoint target) : target_(std::move(target)) {}

double SyntheticTargetOracle::score(const std::filesystem::path& merged_checkpoint) {
    const Checkpoint merged = Checkpoint::open(merged_checkpoint);
    double total = 0.0;
    std::uint64_t count = 0;
    for (const TensorMeta& t : target_.metas()) {
        const TensorMeta* m = merged.find(t.name);
        if (!m || m->shape != t.shape) {
            throw Error(Errc::oracle_failure,
                        "merged checkpoint does not match oracle target on tensor '" + t.name + "'");
        }
        const std::vector<double> want = target_.read_values(t);
        const std::vector<double> got = merged.read_values(*m);
        for (std::size_t i = 0; i < want.size(); ++i) total += std::abs(got[i] - want[i]);
        count += want.size();
    }
    return count == 0 ? 0.0 : total / static_cast<double>(count);
}

std::string SyntheticTargetOracle::description() const {
    return "synthetic target: " + target_.source_path();
}

// ---------------------------------------------------------------------------
// SMAcT

std::filesystem::path default_scratch_dir() {
    if (const char* env = std::getenv("SOUPFORGE_SCRATCH"); env && *env) {
        return std::filesystem::path(env);
    }
    return std::filesystem::temp_directory_path() / "soupforge";
}

namespace {

struct ScratchDir {
    std::filesystem::path dir;

    explicit ScratchDir(const std::filesystem::path& root) {
        std::random_device rd;
        dir = root / ("smact-" + std::to_string(::getpid()) + "-" + std::to_string(rd()));
        std::filesystem::create_directories(dir);
    }
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(dir, ec);
    }
};

/// Streams round_to(out_dtype, (sum of parts in order) / divisor) to `out`.
/// The first part is decoded (not added to zero) so signed zeros and exact
/// values survive identity merges bit-for-bit. Plain sequential f64 adds:
/// the incremental sum file replays the identical operation sequence, which
/// is what makes the two trial modes byte-identical.
void write_scaled_sum(std::span<const Checkpoint* const> parts, double divisor,
                      const MergeSchema& schema, bool force_f64,
                      const std::filesystem::path& out,
                      std::map<std::string, std::string> metadata) {
    std::vector<CheckpointWriter::Decl> decls;
    decls.reserve(schema.tensors.size());
    for (const TensorInfo& t : schema.tensors) {
        decls.push_back({t.name, force_f64 ? DType::f64 : t.dtype, t.shape});
    }
    CheckpointWriter writer(out, std::move(decls), std::move(metadata));

    std::uint64_t largest = 1;
    for (const TensorInfo& t : schema.tensors) largest = std::max(largest, t.num_elements());
    const std::size_t kSlab = static_cast<std::size_t>(std::min<std::uint64_t>(largest, 1u << 20));
    std::vector<double> acc(kSlab);
    std::vector<std::byte> io(kSlab * sizeof(double));

    for (const TensorInfo& t : schema.tensors) {
        const DType out_dtype = force_f64 ? DType::f64 : t.dtype;
        const std::uint64_t total = t.num_elements();
        std::uint64_t done = 0;
        while (done < total) {
            const std::size_t n =
                static_cast<std::size_t>(std::min<std::uint64_t>(kSlab, total - done));
            auto sums = std::span(acc).first(n);
            for (std::size_t k = 0; k < parts.size(); ++k) {
                const Checkpoint& part = *parts[k];
                const TensorMeta* meta = part.find(t.name);
                auto raw = std::span(io).first(n * dtype_size(meta->dtype));
                part.read_bytes(*meta, done * dtype_size(meta->dtype), raw);
                if (k == 0) {
                    decode_to_f64(meta->dtype, raw, sums);
                } else {
                    accumulate_sum(meta->dtype, raw, sums);
                }
            }
            if (divisor != 1.0) {
                for (double& v : sums) v /= divisor;
            }
            auto raw_out = std::span(io).first(n * dtype_size(out_dtype));
            encode_from_f64(out_dtype, sums, raw_out);
            writer.write(t.name, done * dtype_size(out_dtype), raw_out);
            done += n;
        }
    }
    writer.finalize();
}

std::map<std::string, std::string> trial_metadata(std::span<const std::string> candidates,
                                                  const std::vector<std::size_t>& members) {
    std::vector<std::string> paths;
    paths.reserve(members.size());
    for (std::size_t i : members) paths.push_back(candidates[i]);
    MergePlan plan = MergePlan::uniform(std::move(paths));
    return merge_provenance(plan, Strategy::smact);
}

}  // namespace

SelectiveResult smact(std::span<const std::string> candidate_paths, Oracle& oracle,
                      const SmactOptions& options) {
    if (candidate_paths.empty()) {
        throw Error(Errc::invalid_argument, "selective merging needs at least one candidate");
    }
    std::vector<Checkpoint> ckpts;
    ckpts.reserve(candidate_paths.size());
    for (const std::string& p : candidate_paths) ckpts.push_back(Checkpoint::open(p));
    const MergeSchema schema = validate_compat(ckpts);

    const bool incremental = options.mode == TrialMode::incremental;
    ScratchDir scratch(options.scratch_dir.empty() ? default_scratch_dir() : options.scratch_dir);

    SelectiveResult result;
    result.accepted = {0};

    // Running element sums of the accepted set, stored as an f64 checkpoint.
    std::filesystem::path sum_path = scratch.dir / "sum-0.ckpt";
    std::optional<Checkpoint> sum_ckpt;
    if (incremental) {
        const Checkpoint* first[] = {&ckpts[0]};
        write_scaled_sum(first, 1.0, schema, /*force_f64=*/true, sum_path, {});
        sum_ckpt = Checkpoint::open(sum_path);
    }

    auto write_trial = [&](std::optional<std::size_t> candidate,
                           const std::filesystem::path& out) {
        std::vector<std::size_t> members = result.accepted;
        if (candidate) members.push_back(*candidate);

        std::vector<const Checkpoint*> parts;
        if (incremental) {
            parts.push_back(&*sum_ckpt);
            if (candidate) parts.push_back(&ckpts[*candidate]);
        } else {
            for (std::size_t i : members) parts.push_back(&ckpts[i]);
        }
        write_scaled_sum(parts, static_cast<double>(members.size()), schema,
                         /*force_f64=*/false, out, trial_metadata(candidate_paths, members));
    };

    auto finish_plan = [&] {
        std::vector<std::string> paths;
        for (std::size_t i : result.accepted) paths.push_back(candidate_paths[i]);
        result.final_plan = MergePlan::uniform(std::move(paths));
    };

    const std::filesystem::path trial_path = scratch.dir / "trial.ckpt";
    double best = 0.0;
    try {
        write_trial(std::nullopt, trial_path);
        best = check_score(oracle.score(trial_path), oracle.description());
        ++result.evaluations_used;
        std::filesystem::remove(trial_path);
    } catch (const Error& e) {
        finish_plan();
        throw SmactAborted(e, std::move(result));
    }
    result.trace.push_back({0, best, true, best});

    for (std::size_t i = 1; i < candidate_paths.size(); ++i) {
        double wer = 0.0;
        try {
            write_trial(i, trial_path);
            wer = check_score(oracle.score(trial_path), oracle.description());
            ++result.evaluations_used;
            std::filesystem::remove(trial_path);
        } catch (const Error& e) {
            finish_plan();
            throw SmactAborted(e, std::move(result));
        }
        const bool accept = wer < best;
        if (accept) {
            if (incremental) {
                // fold the candidate into the running sums
                std::filesystem::path next = scratch.dir / ("sum-" + std::to_string(i) + ".ckpt");
                const Checkpoint* parts[] = {&*sum_ckpt, &ckpts[i]};
                write_scaled_sum(parts, 1.0, schema, /*force_f64=*/true, next, {});
                sum_ckpt = Checkpoint::open(next);
                std::filesystem::remove(sum_path);
                sum_path = next;
            }
            result.accepted.push_back(i);
            best = wer;
        }
        result.trace.push_back({i, wer, accept, best});
    }

    finish_plan();
    if (options.final_out) {
        std::vector<const Checkpoint*> parts;
        if (incremental) {
            parts.push_back(&*sum_ckpt);
        } else {
            for (std::size_t i : result.accepted) parts.push_back(&ckpts[i]);
        }
        write_scaled_sum(parts, static_cast<double>(result.accepted.size()), schema,
                         /*force_f64=*/false, *options.final_out,
                         trial_metadata(candidate_paths, result.accepted));
    }
    return result;
}

}  // namespace soupforge
