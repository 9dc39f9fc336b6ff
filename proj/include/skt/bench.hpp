#pragma once

#include <string>
#include <vector>

#include "skt/model.hpp"

namespace skt {

struct BenchParams {
    int64_t prompt_tokens = 16;  // includes BOS
    int64_t gen_tokens = 32;
    int repeats = 3;
    std::string device_label = "unknown";
};

struct BenchRow {
    std::string model;
    std::string format;
    std::string device_label;
    int64_t prompt_tokens = 0;
    int64_t gen_tokens = 0;
    std::string repeat;  // "1".."R", or "mean" for the summary row
    double prefill_tps = 0.0;
    double decode_tps = 0.0;
    double wall_seconds = 0.0;
    uint64_t model_file_bytes = 0;
};

// R per-repetition rows followed by one summary row. Summary TPS pools the
// timings: decode_tps = gen_tokens * repeats / total decode seconds (prefill
// analogous); wall_seconds is the mean.
struct BenchResult {
    std::vector<BenchRow> rows;
    const BenchRow& summary() const { return rows.back(); }
};

inline constexpr const char* kBenchCsvHeader =
    "model,format,device_label,prompt_tokens,gen_tokens,repeat,prefill_tps,decode_tps,"
    "wall_seconds,model_file_bytes";

// Deterministic benchmark prompt: the bytes after BOS cycle 'a'..'z', so a
// given token count means the same work on every machine.
std::string bench_prompt_bytes(int64_t prompt_tokens);

// One untimed warmup generation (mmap first-touch), then `repeats` timed
// runs of greedy generation with EOS ignored, monotonic clocks bracketing
// prefill and decode separately.
BenchResult run_bench(const Model& model, const std::string& model_path,
                      const std::string& format_label, uint64_t model_file_bytes,
                      const BenchParams& params);

// The measurement protocol, emitted as a #-comment next to every summary row.
std::string bench_protocol_note(const BenchParams& params);

// Appends rows to `path`, writing the header first if the file is new or
// empty. Comment lines start with '#'.
void append_bench_csv(const std::string& path, const BenchResult& result,
                      const BenchParams& params);

// Reads rows back (header checked, comments skipped). Throws format_error on
// schema violations.
std::vector<BenchRow> parse_bench_csv(const std::string& path);

std::string bench_row_csv(const BenchRow& row);

}  // namespace skt
