// Copyright 2026 The SoupForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "soupforge/tensor_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <atomic>
#include <cstring>
#include <limits>
#include <random>
#include <variant>

#include <nlohmann/json.hpp>

#include "soupforge/error.hpp"

namespace soupforge {

namespace {

using nlohmann::json;

constexpr std::string_view kMetadataKey = "__metadata__";
// Headers beyond this are rejected as malformed rather than allocated.
constexpr std::uint64_t kMaxHeaderBytes = 256ull * 1024 * 1024;

std::uint64_t checked_product(const std::vector<std::int64_t>& shape) {
    std::uint64_t n = 1;
    for (std::int64_t d : shape) {
        if (d < 0) throw Error(Errc::invalid_tensor_entry, "negative dimension in shape");
        if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / static_cast<std::uint64_t>(d)) {
            throw Error(Errc::invalid_tensor_entry, "shape element count overflows");
        }
        n *= static_cast<std::uint64_t>(d);
    }
    return n;
}

[[noreturn]] void throw_errno(const std::string& what) {
    throw Error(Errc::io_error, what + ": " + std::strerror(errno));
}

// EINTR/short-transfer safe positional I/O.
void pread_exact(int fd, std::span<std::byte> out, std::uint64_t offset) {
    std::size_t done = 0;
    while (done < out.size()) {
        ssize_t n = ::pread(fd, out.data() + done, out.size() - done,
                            static_cast<off_t>(offset + done));
        if (n < 0) {
            if (errno == EINTR) continue;
            throw_errno("pread");
        }
        if (n == 0) throw Error(Errc::truncated_payload, "unexpected end of file");
        done += static_cast<std::size_t>(n);
    }
}

void pwrite_exact(int fd, std::span<const std::byte> data, std::uint64_t offset) {
    std::size_t done = 0;
    while (done < data.size()) {
        ssize_t n = ::pwrite(fd, data.data() + done, data.size() - done,
                             static_cast<off_t>(offset + done));
        if (n < 0) {
            if (errno == EINTR) continue;
            throw_errno("pwrite");
        }
        done += static_cast<std::size_t>(n);
    }
}

// RAII fd.
struct FileHandle {
    int fd = -1;

    explicit FileHandle(int f) : fd(f) {}
    ~FileHandle() {
        if (fd >= 0) ::close(fd);
    }
    FileHandle(const FileHandle&) = delete;
    FileHandle& operator=(const FileHandle&) = delete;
};

std::string build_header_json(const std::vector<TensorMeta>& metas,
                              const std::map<std::string, std::string>& metadata) {
    json table = json::object();
    if (!metadata.empty()) {
        table[std::string(kMetadataKey)] = metadata;
    }
    for (const TensorMeta& m : metas) {
        table[m.name] = {{"data_offsets", {m.begin, m.end}},
                         {"dtype", dtype_name(m.dtype)},
                         {"shape", m.shape}};
    }
    return table.dump();
}

void check_name(const std::string& name) {
    if (name.empty()) throw Error(Errc::invalid_tensor_entry, "empty tensor name");
    if (name == kMetadataKey) {
        throw Error(Errc::invalid_tensor_entry, "'__metadata__' is reserved");
    }
}

// Assigns canonical (name-sorted) order and contiguous payload offsets.
// Expects names to be unique and valid.
void canonicalize(std::vector<TensorMeta>& metas) {
    std::sort(metas.begin(), metas.end(),
              [](const TensorMeta& a, const TensorMeta& b) { return a.name < b.name; });
    std::uint64_t offset = 0;
    for (TensorMeta& m : metas) {
        const std::uint64_t bytes = m.num_elements() * dtype_size(m.dtype);
        m.begin = offset;
        m.end = offset + bytes;
        offset = m.end;
    }
}

void check_overlaps(std::vector<TensorMeta> metas) {
    std::sort(metas.begin(), metas.end(), [](const TensorMeta& a, const TensorMeta& b) {
        return a.begin < b.begin;
    });
    std::uint64_t high = 0;
    std::string high_name;
    for (const TensorMeta& m : metas) {
        if (m.begin == m.end) continue;  // zero-sized tensors never overlap
        if (m.begin < high) {
            throw Error(Errc::overlapping_ranges,
                        "tensors '" + high_name + "' and '" + m.name + "' overlap");
        }
        high = m.end;
        high_name = m.name;
    }
}

std::filesystem::path make_temp_path(const std::filesystem::path& final_path) {
    static std::atomic<std::uint64_t> counter{0};
    std::random_device rd;
    const std::uint64_t tag =
        (static_cast<std::uint64_t>(rd()) << 20) ^ static_cast<std::uint64_t>(::getpid()) ^
        counter.fetch_add(1);
    return final_path.parent_path() /
           (final_path.filename().string() + ".tmp." + std::to_string(tag));
}

}  // namespace

std::uint64_t TensorMeta::num_elements() const {
    return checked_product(shape);
}

std::uint64_t TensorInfo::num_elements() const {
    return checked_product(shape);
}

const TensorInfo* MergeSchema::find(std::string_view name) const {
    auto it = std::lower_bound(tensors.begin(), tensors.end(), name,
                               [](const TensorInfo& t, std::string_view n) { return t.name < n; });
    if (it == tensors.end() || it->name != name) return nullptr;
    return &*it;
}

// ---------------------------------------------------------------------------
// Checkpoint

struct Checkpoint::Source {
    // file-backed: open fd plus the absolute offset of the payload region
    // memory-backed: the payload bytes themselves
    std::variant<std::monostate, std::shared_ptr<FileHandle>, std::vector<std::byte>> backing;
    std::uint64_t payload_file_offset = 0;
};

const TensorMeta* Checkpoint::find(std::string_view name) const {
    auto it = std::lower_bound(metas_.begin(), metas_.end(), name,
                               [](const TensorMeta& m, std::string_view n) { return m.name < n; });
    if (it == metas_.end() || it->name != name) return nullptr;
    return &*it;
}

void Checkpoint::read_bytes(const TensorMeta& meta, std::uint64_t byte_offset,
                            std::span<std::byte> out) const {
    if (byte_offset + out.size() > meta.byte_size()) {
        throw Error(Errc::out_of_range, "read past tensor '" + meta.name + "'");
    }
    if (out.empty()) return;
    if (!source_) throw Error(Errc::io_error, "checkpoint has no payload source");
    if (auto* fh = std::get_if<std::shared_ptr<FileHandle>>(&source_->backing)) {
        pread_exact((*fh)->fd, out, source_->payload_file_offset + meta.begin + byte_offset);
    } else if (auto* mem = std::get_if<std::vector<std::byte>>(&source_->backing)) {
        std::memcpy(out.data(), mem->data() + meta.begin + byte_offset, out.size());
    } else {
        throw Error(Errc::io_error, "checkpoint has no payload source");
    }
}

std::vector<std::byte> Checkpoint::read_tensor(const TensorMeta& meta) const {
    std::vector<std::byte> out(meta.byte_size());
    read_bytes(meta, 0, out);
    return out;
}

std::vector<double> Checkpoint::read_values(const TensorMeta& meta) const {
    const std::vector<std::byte> raw = read_tensor(meta);
    std::vector<double> vals(meta.num_elements());
    decode_to_f64(meta.dtype, raw, vals);
    return vals;
}

Checkpoint Checkpoint::open(const std::filesystem::path& path) {
    int raw_fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
    if (raw_fd < 0) throw_errno("open '" + path.string() + "'");
    auto fh = std::make_shared<FileHandle>(raw_fd);

    const off_t file_size = ::lseek(raw_fd, 0, SEEK_END);
    if (file_size < 0) throw_errno("lseek");
    if (file_size < 8) {
        throw Error(Errc::malformed_header, "'" + path.string() + "': shorter than header length field");
    }

    std::uint8_t len_bytes[8];
    pread_exact(raw_fd, std::as_writable_bytes(std::span(len_bytes)), 0);
    std::uint64_t header_len = 0;
    for (int i = 7; i >= 0; --i) header_len = (header_len << 8) | len_bytes[i];

    if (header_len > kMaxHeaderBytes || 8 + header_len > static_cast<std::uint64_t>(file_size)) {
        throw Error(Errc::malformed_header,
                    "'" + path.string() + "': declared header length exceeds file size");
    }

    std::string header(header_len, '\0');
    pread_exact(raw_fd, std::as_writable_bytes(std::span(header.data(), header.size())), 8);

    // nlohmann silently keeps the last of duplicate keys; detect duplicates
    // with a parser callback watching depth-1 keys.
    std::vector<std::string> top_keys;
    json::parser_callback_t cb = [&top_keys](int depth, json::parse_event_t event, json& parsed) {
        if (depth == 1 && event == json::parse_event_t::key) {
            top_keys.push_back(parsed.get<std::string>());
        }
        return true;
    };
    json table;
    try {
        table = json::parse(header, cb);
    } catch (const json::exception& e) {
        throw Error(Errc::malformed_header, "'" + path.string() + "': header is not valid JSON: " + e.what());
    }
    if (!table.is_object()) {
        throw Error(Errc::malformed_header, "'" + path.string() + "': header is not a JSON object");
    }
    {
        std::vector<std::string> sorted = top_keys;
        std::sort(sorted.begin(), sorted.end());
        auto dup = std::adjacent_find(sorted.begin(), sorted.end());
        if (dup != sorted.end()) {
            throw Error(Errc::duplicate_tensor,
                        "'" + path.string() + "': duplicate tensor name '" + *dup + "'");
        }
    }

    const std::uint64_t payload_size = static_cast<std::uint64_t>(file_size) - 8 - header_len;

    Checkpoint ckpt;
    ckpt.source_path_ = path.string();
    ckpt.payload_size_ = payload_size;

    std::uint64_t max_end = 0;
    for (const auto& [key, entry] : table.items()) {
        if (key == kMetadataKey) {
            if (!entry.is_object()) {
                throw Error(Errc::malformed_header, "__metadata__ must be an object");
            }
            for (const auto& [mk, mv] : entry.items()) {
                if (!mv.is_string()) {
                    throw Error(Errc::malformed_header, "__metadata__ values must be strings");
                }
                ckpt.metadata_[mk] = mv.get<std::string>();
            }
            continue;
        }
        check_name(key);
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets")) {
            throw Error(Errc::invalid_tensor_entry, "tensor '" + key + "': incomplete entry");
        }
        TensorMeta meta;
        meta.name = key;
        if (!entry["dtype"].is_string()) {
            throw Error(Errc::invalid_tensor_entry, "tensor '" + key + "': dtype must be a string");
        }
        const std::string dtype_str = entry["dtype"].get<std::string>();
        const auto dtype = dtype_from_name(dtype_str);
        if (!dtype) {
            throw Error(Errc::unsupported_dtype,
                        "tensor '" + key + "': unsupported dtype '" + dtype_str + "'");
        }
        meta.dtype = *dtype;
        if (!entry["shape"].is_array()) {
            throw Error(Errc::invalid_tensor_entry, "tensor '" + key + "': shape must be an array");
        }
        for (const auto& dim : entry["shape"]) {
            if (!dim.is_number_unsigned()) {
                throw Error(Errc::invalid_tensor_entry,
                            "tensor '" + key + "': shape entries must be non-negative integers");
            }
            meta.shape.push_back(dim.get<std::int64_t>());
        }
        const auto& offs = entry["data_offsets"];
        if (!offs.is_array() || offs.size() != 2 || !offs[0].is_number_unsigned() ||
            !offs[1].is_number_unsigned()) {
            throw Error(Errc::invalid_tensor_entry,
                        "tensor '" + key + "': data_offsets must be [begin, end]");
        }
        meta.begin = offs[0].get<std::uint64_t>();
        meta.end = offs[1].get<std::uint64_t>();
        if (meta.end < meta.begin) {
            throw Error(Errc::invalid_tensor_entry, "tensor '" + key + "': end offset < begin");
        }
        const std::uint64_t expected = meta.num_elements() * dtype_size(meta.dtype);
        if (meta.byte_size() != expected) {
            throw Error(Errc::invalid_tensor_entry,
                        "tensor '" + key + "': byte range does not match dtype x shape");
        }
        if (meta.end > payload_size) {
            throw Error(Errc::truncated_payload,
                        "tensor '" + key + "': byte range exceeds payload (" +
                            std::to_string(meta.end) + " > " + std::to_string(payload_size) + ")");
        }
        max_end = std::max(max_end, meta.end);
        ckpt.metas_.push_back(std::move(meta));
    }

    if (max_end != payload_size) {
        throw Error(Errc::payload_size_mismatch,
                    "'" + path.string() + "': payload has " + std::to_string(payload_size) +
                        " bytes but tensors end at " + std::to_string(max_end));
    }
    check_overlaps(ckpt.metas_);

    std::sort(ckpt.metas_.begin(), ckpt.metas_.end(),
              [](const TensorMeta& a, const TensorMeta& b) { return a.name < b.name; });

    auto source = std::make_shared<Source>();
    source->backing = std::move(fh);
    source->payload_file_offset = 8 + header_len;
    ckpt.source_ = std::move(source);
    return ckpt;
}

// ---------------------------------------------------------------------------
// CheckpointBuilder

CheckpointBuilder& CheckpointBuilder::add(std::string name, DType dtype,
                                          std::vector<std::int64_t> shape,
                                          std::span<const std::byte> data) {
    check_name(name);
    TensorMeta meta;
    meta.name = std::move(name);
    meta.dtype = dtype;
    meta.shape = std::move(shape);
    const std::uint64_t expected = meta.num_elements() * dtype_size(dtype);
    if (data.size() != expected) {
        throw Error(Errc::invalid_tensor_entry,
                    "tensor '" + meta.name + "': got " + std::to_string(data.size()) +
                        " bytes, shape needs " + std::to_string(expected));
    }
    pending_.push_back({std::move(meta), {data.begin(), data.end()}});
    return *this;
}

CheckpointBuilder& CheckpointBuilder::add_values(std::string name, DType dtype,
                                                 std::vector<std::int64_t> shape,
                                                 std::span<const double> values) {
    std::vector<std::byte> raw(values.size() * dtype_size(dtype));
    encode_from_f64(dtype, values, raw);
    return add(std::move(name), dtype, std::move(shape), raw);
}

CheckpointBuilder& CheckpointBuilder::set_metadata(std::string key, std::string value) {
    metadata_[std::move(key)] = std::move(value);
    return *this;
}

Checkpoint CheckpointBuilder::build(std::string source_label) {
    std::sort(pending_.begin(), pending_.end(),
              [](const Pending& a, const Pending& b) { return a.meta.name < b.meta.name; });
    for (std::size_t i = 1; i < pending_.size(); ++i) {
        if (pending_[i].meta.name == pending_[i - 1].meta.name) {
            throw Error(Errc::duplicate_tensor,
                        "duplicate tensor name '" + pending_[i].meta.name + "'");
        }
    }

    Checkpoint ckpt;
    ckpt.source_path_ = std::move(source_label);
    ckpt.metadata_ = std::move(metadata_);

    std::uint64_t total = 0;
    for (const Pending& p : pending_) total += p.data.size();

    std::vector<std::byte> payload;
    payload.reserve(total);
    for (Pending& p : pending_) {
        p.meta.begin = payload.size();
        payload.insert(payload.end(), p.data.begin(), p.data.end());
        p.meta.end = payload.size();
        ckpt.metas_.push_back(std::move(p.meta));
    }
    ckpt.payload_size_ = payload.size();

    auto source = std::make_shared<Checkpoint::Source>();
    source->backing = std::move(payload);
    ckpt.source_ = std::move(source);

    pending_.clear();
    metadata_.clear();
    return ckpt;
}

// ---------------------------------------------------------------------------
// CheckpointWriter

CheckpointWriter::CheckpointWriter(const std::filesystem::path& path, std::vector<Decl> tensors,
                                   std::map<std::string, std::string> metadata)
    : final_path_(path), temp_path_(make_temp_path(path)) {
    metas_.reserve(tensors.size());
    for (Decl& d : tensors) {
        check_name(d.name);
        TensorMeta m;
        m.name = std::move(d.name);
        m.dtype = d.dtype;
        m.shape = std::move(d.shape);
        metas_.push_back(std::move(m));
    }
    canonicalize(metas_);
    for (std::size_t i = 0; i < metas_.size(); ++i) {
        if (!index_.emplace(metas_[i].name, i).second) {
            throw Error(Errc::duplicate_tensor, "duplicate tensor name '" + metas_[i].name + "'");
        }
    }
    written_.assign(metas_.size(), 0);

    const std::string header = build_header_json(metas_, metadata);
    header_bytes_ = 8 + header.size();

    fd_ = ::open(temp_path_.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd_ < 0) throw_errno("open '" + temp_path_.string() + "'");

    std::uint8_t len_bytes[8];
    const std::uint64_t n = header.size();
    for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<std::uint8_t>(n >> (8 * i));

    try {
        pwrite_exact(fd_, std::as_bytes(std::span(len_bytes)), 0);
        pwrite_exact(fd_, std::as_bytes(std::span(header.data(), header.size())), 8);
    } catch (...) {
        ::close(fd_);
        fd_ = -1;
        std::error_code ec;
        std::filesystem::remove(temp_path_, ec);
        throw;
    }
}

CheckpointWriter::~CheckpointWriter() {
    if (fd_ >= 0) ::close(fd_);
    if (!finalized_) {
        std::error_code ec;
        std::filesystem::remove(temp_path_, ec);
    }
}

void CheckpointWriter::write(std::string_view name, std::uint64_t byte_offset,
                             std::span<const std::byte> data) {
    if (finalized_) throw Error(Errc::invalid_argument, "writer already finalized");
    auto it = index_.find(std::string(name));
    if (it == index_.end()) {
        throw Error(Errc::invalid_argument, "undeclared tensor '" + std::string(name) + "'");
    }
    const TensorMeta& m = metas_[it->second];
    if (byte_offset + data.size() > m.byte_size()) {
        throw Error(Errc::out_of_range, "write past tensor '" + m.name + "'");
    }
    pwrite_exact(fd_, data, header_bytes_ + m.begin + byte_offset);
    written_[it->second] += data.size();
}

void CheckpointWriter::write_tensor(std::string_view name, std::span<const std::byte> data) {
    write(name, 0, data);
}

void CheckpointWriter::finalize() {
    if (finalized_) return;
    for (std::size_t i = 0; i < metas_.size(); ++i) {
        if (written_[i] != metas_[i].byte_size()) {
            throw Error(Errc::io_error,
                        "tensor '" + metas_[i].name + "': " + std::to_string(written_[i]) +
                            " of " + std::to_string(metas_[i].byte_size()) + " bytes written");
        }
    }
    // atomicity contract is namespace-level (rename), not durability: either
    // the complete file appears at the target path or nothing does
    if (::close(fd_) != 0) {
        fd_ = -1;
        throw_errno("close");
    }
    fd_ = -1;
    std::error_code ec;
    std::filesystem::rename(temp_path_, final_path_, ec);
    if (ec) {
        std::filesystem::remove(temp_path_, ec);
        throw Error(Errc::io_error, "rename to '" + final_path_.string() + "' failed");
    }
    finalized_ = true;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::vector<CheckpointWriter::Decl> decls;
    decls.reserve(ckpt.metas().size());
    for (const TensorMeta& m : ckpt.metas()) {
        decls.push_back({m.name, m.dtype, m.shape});
    }
    CheckpointWriter writer(path, std::move(decls), ckpt.metadata());

    constexpr std::uint64_t kChunk = 4ull * 1024 * 1024;
    std::vector<std::byte> buf;
    for (const TensorMeta& m : ckpt.metas()) {
        std::uint64_t offset = 0;
        while (offset < m.byte_size()) {
            const std::uint64_t n = std::min(kChunk, m.byte_size() - offset);
            buf.resize(n);
            ckpt.read_bytes(m, offset, buf);
            writer.write(m.name, offset, buf);
            offset += n;
        }
    }
    writer.finalize();
}

MergeSchema validate_compat(std::span<const Checkpoint> ckpts) {
    if (ckpts.empty()) {
        throw Error(Errc::invalid_argument, "validate_compat requires at least one checkpoint");
    }
    const Checkpoint& first = ckpts.front();
    for (const Checkpoint& other : ckpts.subspan(1)) {
        // both meta lists are name-sorted; walk them in lockstep
        std::size_t i = 0, j = 0;
        const auto& a = first.metas();
        const auto& b = other.metas();
        while (i < a.size() || j < b.size()) {
            if (j >= b.size() || (i < a.size() && a[i].name < b[j].name)) {
                throw Error(Errc::missing_tensor, "tensor '" + a[i].name + "' missing from '" +
                                                      other.source_path() + "'");
            }
            if (i >= a.size() || b[j].name < a[i].name) {
                throw Error(Errc::missing_tensor, "tensor '" + b[j].name + "' missing from '" +
                                                      first.source_path() + "'");
            }
            if (a[i].dtype != b[j].dtype) {
                throw Error(Errc::dtype_mismatch,
                            "tensor '" + a[i].name + "': dtype " + std::string(dtype_name(a[i].dtype)) +
                                " in '" + first.source_path() + "' vs " +
                                std::string(dtype_name(b[j].dtype)) + " in '" + other.source_path() +
                                "'");
            }
            if (a[i].shape != b[j].shape) {
                throw Error(Errc::shape_mismatch, "tensor '" + a[i].name + "': shape mismatch between '" +
                                                      first.source_path() + "' and '" +
                                                      other.source_path() + "'");
            }
            ++i;
            ++j;
        }
    }
    MergeSchema schema;
    schema.tensors.reserve(first.metas().size());
    for (const TensorMeta& m : first.metas()) {
        schema.tensors.push_back({m.name, m.dtype, m.shape});
    }
    return schema;
}

}  // namespace soupforge
