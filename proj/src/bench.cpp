#include "skt/bench.hpp"

#include <sys/stat.h>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace skt {

std::string bench_prompt_bytes(int64_t prompt_tokens) {
    if (prompt_tokens < 1) throw format_error("prompt_tokens must be >= 1");
    std::string s;
    s.reserve(static_cast<size_t>(prompt_tokens - 1));
    for (int64_t i = 0; i + 1 < prompt_tokens; i++)
        s.push_back(static_cast<char>('a' + (i % 26)));
    return s;
}

BenchResult run_bench(const Model& model, const std::string& model_path,
                      const std::string& format_label, uint64_t model_file_bytes,
                      const BenchParams& params) {
    if (params.gen_tokens < 1) throw format_error("gen_tokens must be >= 1");
    if (params.repeats < 1) throw format_error("repeats must be >= 1");
    if (params.device_label.find(',') != std::string::npos ||
        params.device_label.find('\n') != std::string::npos)
        throw format_error("device label must not contain commas or newlines");

    const std::string prompt = bench_prompt_bytes(params.prompt_tokens);
    GenerationParams gen;
    gen.max_tokens = params.gen_tokens;
    gen.mode = GenerationParams::Mode::GREEDY;
    gen.ignore_eos = true;

    generate(model, prompt, gen);  // warmup, excluded from stats

    BenchResult result;
    BenchRow base;
    base.model = model_path;
    base.format = format_label;
    base.device_label = params.device_label;
    base.prompt_tokens = params.prompt_tokens;
    base.gen_tokens = params.gen_tokens;
    base.model_file_bytes = model_file_bytes;

    double prefill_total = 0.0, decode_total = 0.0, wall_total = 0.0;
    for (int r = 1; r <= params.repeats; r++) {
        const GenerateResult g = generate(model, prompt, gen);
        const double prefill_s = std::max(g.prefill_seconds, 1e-9);
        const double decode_s = std::max(g.decode_seconds, 1e-9);
        prefill_total += prefill_s;
        decode_total += decode_s;
        wall_total += prefill_s + decode_s;

        BenchRow row = base;
        row.repeat = std::to_string(r);
        row.prefill_tps = static_cast<double>(params.prompt_tokens) / prefill_s;
        row.decode_tps = static_cast<double>(g.tokens_generated) / decode_s;
        row.wall_seconds = prefill_s + decode_s;
        result.rows.push_back(std::move(row));
    }

    BenchRow mean = base;
    mean.repeat = "mean";
    mean.prefill_tps =
        static_cast<double>(params.prompt_tokens * params.repeats) / prefill_total;
    mean.decode_tps = static_cast<double>(params.gen_tokens * params.repeats) / decode_total;
    mean.wall_seconds = wall_total / params.repeats;
    result.rows.push_back(std::move(mean));
    return result;
}

std::string bench_protocol_note(const BenchParams& params) {
    std::ostringstream ss;
    ss << "# protocol: prompt=bos+cyclic-bytes(" << params.prompt_tokens << " tokens)"
       << " gen=" << params.gen_tokens << " greedy, eos ignored; warmup=1 (excluded)"
       << " repeats=" << params.repeats
       << "; steady clock around prefill and decode separately";
    return ss.str();
}

std::string bench_row_csv(const BenchRow& row) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(6);
    ss << row.model << ',' << row.format << ',' << row.device_label << ','
       << row.prompt_tokens << ',' << row.gen_tokens << ',' << row.repeat << ','
       << row.prefill_tps << ',' << row.decode_tps << ',' << row.wall_seconds << ','
       << row.model_file_bytes;
    return ss.str();
}

void append_bench_csv(const std::string& path, const BenchResult& result,
                      const BenchParams& params) {
    struct stat st{};
    const bool need_header = stat(path.c_str(), &st) != 0 || st.st_size == 0;
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    if (need_header) out << kBenchCsvHeader << '\n';
    for (const BenchRow& row : result.rows) {
        out << bench_row_csv(row) << '\n';
        if (row.repeat == "mean") out << bench_protocol_note(params) << '\n';
    }
    out.flush();
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

std::vector<BenchRow> parse_bench_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::string line;
    bool saw_header = false;
    std::vector<BenchRow> rows;
    int line_no = 0;
    while (std::getline(in, line)) {
        line_no++;
        if (line.empty() || line[0] == '#') continue;
        if (!saw_header) {
            if (line != kBenchCsvHeader)
                throw format_error("CSV line 1 is not the expected header");
            saw_header = true;
            continue;
        }
        std::vector<std::string> fields;
        std::string field;
        std::istringstream ss(line);
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 10)
            throw format_error("CSV line " + std::to_string(line_no) + " has " +
                               std::to_string(fields.size()) + " fields, expected 10");
        try {
            BenchRow row;
            row.model = fields[0];
            row.format = fields[1];
            row.device_label = fields[2];
            row.prompt_tokens = std::stoll(fields[3]);
            row.gen_tokens = std::stoll(fields[4]);
            row.repeat = fields[5];
            row.prefill_tps = std::stod(fields[6]);
            row.decode_tps = std::stod(fields[7]);
            row.wall_seconds = std::stod(fields[8]);
            row.model_file_bytes = std::stoull(fields[9]);
            rows.push_back(std::move(row));
        } catch (const std::logic_error&) {
            throw format_error("CSV line " + std::to_string(line_no) + " has a non-numeric field");
        }
    }
    if (!saw_header) throw format_error("CSV has no header row");
    return rows;
}

}  // namespace skt
