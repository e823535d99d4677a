// Copyright 2026 The SoupForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "soupforge/dtype.hpp"

namespace soupforge {

/// One entry of the checkpoint tensor table. `begin`/`end` are byte offsets
/// into the payload region (relative, not absolute file offsets).
struct TensorMeta {
    std::string name;
    DType dtype = DType::f32;
    std::vector<std::int64_t> shape;
    std::uint64_t begin = 0;
    std::uint64_t end = 0;

    std::uint64_t num_elements() const;  // empty shape -> 1, any zero dim -> 0
    std::uint64_t byte_size() const { return end - begin; }

    bool operator==(const TensorMeta&) const = default;
};

/// Shape/dtype signature shared by all checkpoints of a merge.
struct TensorInfo {
    std::string name;
    DType dtype = DType::f32;
    std::vector<std::int64_t> shape;

    std::uint64_t num_elements() const;
    std::uint64_t byte_size() const { return num_elements() * dtype_size(dtype); }

    bool operator==(const TensorInfo&) const = default;
};

struct MergeSchema {
    std::vector<TensorInfo> tensors;  // canonical name order

    const TensorInfo* find(std::string_view name) const;
};

/// An immutable named bag of tensors. Metas are held in canonical (name)
/// order; payload bytes stay on disk (or in a shared memory block) and are
/// fetched on demand, so holding many open checkpoints is cheap. Copies
/// share the payload source; concurrent reads are safe.
class Checkpoint {
public:
    Checkpoint() = default;

    /// Parse the container at `path`. Tensor payloads are not loaded;
    /// only the header is read and validated.
    static Checkpoint open(const std::filesystem::path& path);

    const std::string& source_path() const { return source_path_; }
    const std::vector<TensorMeta>& metas() const { return metas_; }
    const std::map<std::string, std::string>& metadata() const { return metadata_; }
    std::uint64_t payload_size() const { return payload_size_; }

    const TensorMeta* find(std::string_view name) const;

    /// Copy `out.size()` payload bytes of `meta` starting at `byte_offset`
    /// (relative to the tensor's own range) into `out`.
    void read_bytes(const TensorMeta& meta, std::uint64_t byte_offset,
                    std::span<std::byte> out) const;

    std::vector<std::byte> read_tensor(const TensorMeta& meta) const;
    std::vector<double> read_values(const TensorMeta& meta) const;

private:
    friend class CheckpointBuilder;
    struct Source;

    std::shared_ptr<const Source> source_;
    std::vector<TensorMeta> metas_;
    std::map<std::string, std::string> metadata_;
    std::string source_path_;
    std::uint64_t payload_size_ = 0;
};

/// Assembles an in-memory Checkpoint (tests, fixtures, synthetic models).
class CheckpointBuilder {
public:
    CheckpointBuilder& add(std::string name, DType dtype, std::vector<std::int64_t> shape,
                           std::span<const std::byte> data);
    /// Encodes `values` into `dtype` storage.
    CheckpointBuilder& add_values(std::string name, DType dtype, std::vector<std::int64_t> shape,
                                  std::span<const double> values);
    CheckpointBuilder& set_metadata(std::string key, std::string value);

    Checkpoint build(std::string source_label = "<memory>");

private:
    struct Pending {
        TensorMeta meta;
        std::vector<std::byte> data;
    };
    std::vector<Pending> pending_;
    std::map<std::string, std::string> metadata_;
};

/// Streams a new checkpoint file: declare every tensor up front, write
/// payload bytes in any order, then finalize. Data lands in a temporary
/// file that is renamed into place on finalize() and removed otherwise,
/// so a crash or error never leaves a partial file at `path`.
class CheckpointWriter {
public:
    struct Decl {
        std::string name;
        DType dtype = DType::f32;
        std::vector<std::int64_t> shape;
    };

    CheckpointWriter(const std::filesystem::path& path, std::vector<Decl> tensors,
                     std::map<std::string, std::string> metadata = {});
    ~CheckpointWriter();

    CheckpointWriter(const CheckpointWriter&) = delete;
    CheckpointWriter& operator=(const CheckpointWriter&) = delete;

    /// Canonically ordered metas with assigned payload offsets.
    const std::vector<TensorMeta>& metas() const { return metas_; }

    /// Write `data` at `byte_offset` within tensor `name`'s payload range.
    /// Ranges must not be written twice; completeness is checked by byte count.
    void write(std::string_view name, std::uint64_t byte_offset, std::span<const std::byte> data);
    void write_tensor(std::string_view name, std::span<const std::byte> data);

    void finalize();

private:
    std::filesystem::path final_path_;
    std::filesystem::path temp_path_;
    std::vector<TensorMeta> metas_;
    std::map<std::string, std::size_t> index_;   // name -> metas_ index
    std::vector<std::uint64_t> written_;         // bytes written per tensor
    std::uint64_t header_bytes_ = 0;
    int fd_ = -1;
    bool finalized_ = false;
};

/// Canonical serialization of `ckpt` to `path` (atomic, streamed).
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Verify that every checkpoint carries the same tensor set with identical
/// per-name dtype and shape; returns the shared schema.
MergeSchema validate_compat(std::span<const Checkpoint> ckpts);

}  // namespace soupforge
