#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "skt/model.hpp"

namespace skt {

// SKT1 container (normative, little-endian):
//   magic "SKT1"; version u32 = 1
//   config: n_layers u32, d_model u32, n_heads u32, head_dim u32,
//           n_kv count u32 + one u32 per layer, ffn_hidden u32,
//           vocab_size u32, window u32, rope_base f32, norm_eps f32,
//           attention_kind u8, sparse block/local/global u32 each,
//           tied_embeddings u8
//   tensor_count u32; data_offset u64 (absolute, 32-byte aligned)
//   index entries: name u16-length + UTF-8, dtype u8, n_dims u8,
//                  dims u64 each, offset u64 (relative to data_offset,
//                  multiple of 32), byte_len u64
//   zero padding up to data_offset, then the tensor payloads.
constexpr uint32_t kContainerVersion = 1;

enum class StoredType : uint8_t {
    F32 = 0,
    F16 = 1,
    Q8_0 = 2,
    Q5_0 = 3,
    Q5_1 = 4,
    Q4_0 = 5,
    Q4_1 = 6,
};

const char* stored_type_name(StoredType t);
StoredType stored_type(FormatId id);
// Quantized codes map back to a block format; F32/F16 return nullopt.
std::optional<FormatId> stored_format(StoredType t);

struct TensorIndexEntry {
    std::string name;
    StoredType dtype = StoredType::F32;
    std::vector<int64_t> dims;
    uint64_t offset = 0;  // relative to data_offset
    uint64_t byte_len = 0;
};

// Exact payload size implied by dtype and dims; throws shape_error for
// quantized dtypes whose shape cannot be block-encoded.
uint64_t entry_byte_len(StoredType dtype, std::span<const int64_t> dims);

// Read-only mapping of a whole file. Pages become resident on first access;
// nothing is copied up front.
class MappedFile {
public:
    static std::shared_ptr<MappedFile> open(const std::string& path);
    ~MappedFile();

    MappedFile(const MappedFile&) = delete;
    MappedFile& operator=(const MappedFile&) = delete;

    std::span<const uint8_t> bytes() const { return {data_, size_}; }

private:
    MappedFile(const uint8_t* data, size_t size) : data_(data), size_(size) {}
    const uint8_t* data_ = nullptr;
    size_t size_ = 0;
};

// A parsed container backed by its mapping. Copies share the mapping.
class ModelFile {
public:
    const std::string& path() const { return path_; }
    const ModelConfig& config() const { return cfg_; }
    const std::vector<TensorIndexEntry>& index() const { return index_; }
    uint64_t data_offset() const { return data_offset_; }
    uint64_t file_bytes() const { return map_->bytes().size(); }

    bool has(std::string_view name) const;
    const TensorIndexEntry& entry(std::string_view name) const;

    // View-backed weight; quantized payloads are never copied. The returned
    // object keeps the mapping alive. byte_len is recomputed from dtype and
    // shape and must match the index before any payload access.
    Weight tensor(std::string_view name) const;

    // Raw payload bytes of an entry (bounds-checked against the mapping).
    std::span<const uint8_t> payload(const TensorIndexEntry& e) const;

    // "f32" for unquantized files, else the block format of the quantized
    // tensors (mixed files report "mixed").
    std::string format_label() const;

    friend ModelFile open_model(const std::string& path);

private:
    std::string path_;
    std::shared_ptr<MappedFile> map_;
    ModelConfig cfg_;
    std::vector<TensorIndexEntry> index_;
    uint64_t data_offset_ = 0;
};

// Maps the file, parses header and index eagerly, and verifies that the
// declared index and data ranges lie inside the file. Per-tensor integrity
// stays with validate() so damaged files can still be inspected.
ModelFile open_model(const std::string& path);

// Builds a runnable model over the mapping (weights stay disk-backed).
Model load_model(const ModelFile& mf, int64_t max_positions = 4096);

// ---- writing ----

struct TensorPlan {
    std::string name;
    StoredType dtype = StoredType::F32;
    std::vector<int64_t> dims;
};

using PayloadSink = std::function<void(std::span<const uint8_t>)>;

// Streaming writer: lays out the header and index for `plan`, then calls
// emit(i, sink) per tensor, which must push exactly entry_byte_len bytes.
// Whole models never need to sit in memory.
void write_container(const std::string& path, const ModelConfig& cfg,
                     const std::vector<TensorPlan>& plan,
                     const std::function<void(size_t, const PayloadSink&)>& emit);

// In-memory convenience over write_container. Weight names and shapes must
// exactly cover the layout contract for `cfg`.
void write_model(const std::string& path, const ModelConfig& cfg, const WeightMap& weights);

// ---- validation ----

struct ValidationIssue {
    std::string tensor;  // empty for file-level issues
    std::string message;
};

struct ValidationReport {
    bool ok = true;
    std::vector<ValidationIssue> issues;
    int64_t tensors_checked = 0;

    void fail(std::string tensor, std::string message) {
        ok = false;
        issues.push_back({std::move(tensor), std::move(message)});
    }
};

// Checks every index invariant: recomputed byte_len, 32-byte alignment,
// ascending non-overlapping ranges inside the file, dtype codes, and name
// coverage against the layout contract for the embedded config.
ValidationReport validate(const ModelFile& mf);

// validate() over a path; files that fail to open report the open error
// instead of throwing.
ValidationReport validate_file(const std::string& path);

// ---- model production ----

// Manifest: one line per tensor, `name n_dims d0 [d1] filename`, blank lines
// and #-comments ignored; files are raw little-endian F32 inside `dir`.
// The manifest must exactly cover the layout contract for `cfg`.
void convert_f32_bundle(const std::string& dir, const std::string& manifest_path,
                        const ModelConfig& cfg, const std::string& out_path);

struct QuantizeReport {
    struct Row {
        std::string name;
        StoredType from = StoredType::F32;
        StoredType to = StoredType::F32;
        uint64_t bytes_before = 0;
        uint64_t bytes_after = 0;
    };
    std::vector<Row> rows;
    uint64_t rank2_bytes_before = 0;  // payload bytes of re-encoded tensors
    uint64_t rank2_bytes_after = 0;
    uint64_t file_bytes_before = 0;
    uint64_t file_bytes_after = 0;

    double rank2_ratio() const {
        return rank2_bytes_after ? double(rank2_bytes_before) / double(rank2_bytes_after) : 0.0;
    }
    double file_ratio() const {
        return file_bytes_after ? double(file_bytes_before) / double(file_bytes_after) : 0.0;
    }
};

// Re-encodes every rank-2 tensor except tok_embed in `format`; norm gains
// and the embedding stay F32. Streams tensor by tensor. Rejects inputs that
// already contain quantized tensors.
QuantizeReport quantize_model(const std::string& in_path, FormatId format,
                              const std::string& out_path);

// Seeded N(0, 0.02) initialization of every tensor in the layout contract,
// written as F32. One splitmix64-driven stream in layout order, so equal
// seeds give byte-identical files.
void init_random_model(const std::string& path, const ModelConfig& cfg, uint64_t seed);

}  // namespace skt
