// skt: build, quantize, inspect, run and benchmark SKT1 model files.
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "skt/bench.hpp"
#include "skt/store.hpp"

namespace {

using nlohmann::json;

skt::ModelConfig config_from_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw skt::format_error("config '" + path + "': " + e.what());
    }

    static const std::set<std::string> known = {
        "n_layers", "d_model", "n_heads", "head_dim", "n_kv_heads", "ffn_hidden",
        "vocab_size", "window", "rope_base", "norm_eps", "attention", "sparse",
        "tied_embeddings"};
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.count(key))
            throw skt::format_error("config '" + path + "': unknown key '" + key + "'");
    }

    skt::ModelConfig cfg;
    try {
        cfg.n_layers = j.at("n_layers").get<int>();
        cfg.d_model = j.at("d_model").get<int>();
        cfg.head_dim = j.value("head_dim", 64);
        cfg.n_heads = j.value("n_heads", cfg.head_dim ? cfg.d_model / cfg.head_dim : 0);
        if (j.contains("n_kv_heads")) {
            const json& kv = j.at("n_kv_heads");
            if (kv.is_array()) cfg.n_kv_heads = kv.get<std::vector<int>>();
            else cfg.n_kv_heads.assign(static_cast<size_t>(cfg.n_layers), kv.get<int>());
        } else {
            cfg.n_kv_heads.assign(static_cast<size_t>(cfg.n_layers), cfg.n_heads);
        }
        cfg.ffn_hidden = j.value("ffn_hidden", 4 * cfg.d_model);
        cfg.vocab_size = j.value("vocab_size", skt::ByteTokenizer::kVocabSize);
        cfg.window = j.value("window", 2048);
        cfg.rope_base = j.value("rope_base", 10000.0f);
        cfg.norm_eps = j.value("norm_eps", 1e-5f);
        const std::string kind = j.value("attention", "gqa_sliding");
        if (kind == "gqa_sliding") cfg.attention_kind = skt::AttentionKind::GQA_SLIDING;
        else if (kind == "block_sparse") cfg.attention_kind = skt::AttentionKind::BLOCK_SPARSE;
        else throw skt::format_error("config: attention must be gqa_sliding or block_sparse");
        if (j.contains("sparse")) {
            const json& s = j.at("sparse");
            cfg.sparse.block = s.value("block", 64);
            cfg.sparse.local_blocks = s.value("local_blocks", 4);
            cfg.sparse.global_blocks = s.value("global_blocks", 1);
        }
        cfg.tied_embeddings = j.value("tied_embeddings", true);
    } catch (const json::exception& e) {
        throw skt::format_error("config '" + path + "': " + e.what());
    }
    cfg.validate();
    return cfg;
}

skt::ModelConfig resolve_config(const std::string& preset, const std::string& config_path) {
    if (!preset.empty() && !config_path.empty())
        throw skt::format_error("give either --preset or --config, not both");
    if (!preset.empty()) return skt::preset_config(preset);
    if (!config_path.empty()) return config_from_json(config_path);
    throw skt::format_error("one of --preset or --config is required");
}

std::string attention_name(skt::AttentionKind k) {
    return k == skt::AttentionKind::GQA_SLIDING ? "gqa_sliding" : "block_sparse";
}

void print_config(const skt::ModelConfig& cfg) {
    std::ostringstream kv;
    for (size_t i = 0; i < cfg.n_kv_heads.size(); i++)
        kv << (i ? "," : "") << cfg.n_kv_heads[i];
    std::cout << "config: n_layers=" << cfg.n_layers << " d_model=" << cfg.d_model
              << " n_heads=" << cfg.n_heads << " head_dim=" << cfg.head_dim
              << " n_kv_heads=[" << kv.str() << "]"
              << " ffn_hidden=" << cfg.ffn_hidden << " vocab_size=" << cfg.vocab_size
              << " window=" << cfg.window << " rope_base=" << cfg.rope_base
              << " norm_eps=" << cfg.norm_eps
              << " attention=" << attention_name(cfg.attention_kind);
    if (cfg.attention_kind == skt::AttentionKind::BLOCK_SPARSE)
        std::cout << " sparse=" << cfg.sparse.block << "/" << cfg.sparse.local_blocks << "/"
                  << cfg.sparse.global_blocks;
    std::cout << " tied=" << (cfg.tied_embeddings ? "yes" : "no") << "\n";
}

int cmd_inspect(const std::string& path) {
    const skt::ModelFile mf = skt::open_model(path);
    std::cout << "file: " << path << " (" << mf.file_bytes() << " bytes, format "
              << mf.format_label() << ")\n";
    print_config(mf.config());
    std::cout << "params: " << skt::count_params(mf.config()) << "\n";
    std::cout << "tensors:\n";
    std::map<std::string, std::pair<int64_t, uint64_t>> totals;
    for (const skt::TensorIndexEntry& e : mf.index()) {
        std::printf("  %-16s %-5s %-14s %12" PRIu64 " bytes\n", e.name.c_str(),
                    skt::stored_type_name(e.dtype), skt::shape_str(e.dims).c_str(), e.byte_len);
        auto& t = totals[skt::stored_type_name(e.dtype)];
        t.first++;
        t.second += e.byte_len;
    }
    for (const auto& [dtype, t] : totals)
        std::cout << "total " << dtype << ": " << t.first << " tensors, " << t.second
                  << " bytes\n";

    const skt::ValidationReport report = skt::validate(mf);
    for (const skt::ValidationIssue& issue : report.issues)
        std::cout << "invalid: " << (issue.tensor.empty() ? "(file)" : issue.tensor) << ": "
                  << issue.message << "\n";
    if (!report.ok) {
        std::cout << "validation: FAILED (" << report.issues.size() << " issues)\n";
        return 2;
    }
    std::cout << "validation: OK (" << report.tensors_checked << " tensors checked)\n";
    return 0;
}

void print_quantize_report(const skt::QuantizeReport& report) {
    for (const auto& row : report.rows)
        std::printf("  %-16s %-4s -> %-4s %12" PRIu64 " -> %12" PRIu64 " bytes\n",
                    row.name.c_str(), skt::stored_type_name(row.from),
                    skt::stored_type_name(row.to), row.bytes_before, row.bytes_after);
    std::printf("rank-2 payload: %" PRIu64 " -> %" PRIu64 " bytes (ratio %.3f)\n",
                report.rank2_bytes_before, report.rank2_bytes_after, report.rank2_ratio());
    std::printf("whole file:     %" PRIu64 " -> %" PRIu64 " bytes (ratio %.3f)\n",
                report.file_bytes_before, report.file_bytes_after, report.file_ratio());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"skt: quantized transformer inference engine over SKT1 model files"};
    app.require_subcommand(1);

    const std::vector<std::string> presets = skt::preset_names();
    std::vector<std::string> format_names;
    for (const auto& f : skt::kBlockFormats) format_names.push_back(f.name);

    // init-random
    auto* init = app.add_subcommand("init-random", "Write a seeded random-weight F32 model");
    std::string init_preset, init_config, init_out;
    uint64_t init_seed = 42;
    init->add_option("--preset", init_preset, "preset name")->check(CLI::IsMember(presets));
    init->add_option("--config", init_config, "config JSON file")->excludes("--preset");
    init->add_option("--seed", init_seed, "rng seed");
    init->add_option("-o,--out", init_out, "output model path")->required();

    // convert
    auto* convert = app.add_subcommand("convert", "Build a model file from a raw F32 bundle");
    std::string conv_dir, conv_manifest, conv_preset, conv_config, conv_out;
    convert->add_option("--dir", conv_dir, "directory holding the raw tensors")->required();
    convert->add_option("--manifest", conv_manifest, "manifest file")->required();
    convert->add_option("--preset", conv_preset, "preset name")->check(CLI::IsMember(presets));
    convert->add_option("--config", conv_config, "config JSON file")->excludes("--preset");
    convert->add_option("-o,--out", conv_out, "output model path")->required();

    // quantize
    auto* quant = app.add_subcommand("quantize", "Re-encode rank-2 weights block-wise");
    std::string q_in, q_format, q_out;
    quant->add_option("model", q_in, "input F32 model")->required();
    quant->add_option("--format", q_format, "block format")
        ->required()
        ->check(CLI::IsMember(format_names));
    quant->add_option("-o,--out", q_out, "output model path")->required();

    // generate
    auto* gen = app.add_subcommand("generate", "Generate bytes from a prompt");
    std::string g_model, g_prompt;
    int64_t g_max_tokens = 128, g_max_positions = 0;
    bool g_greedy = false, g_ignore_eos = false;
    float g_temp = 0.0f;
    int g_top_k = 40;
    uint64_t g_seed = 0;
    gen->add_option("model", g_model, "model file")->required();
    gen->add_option("--prompt", g_prompt, "prompt bytes");
    gen->add_option("--max-tokens", g_max_tokens, "generation cap")
        ->check(CLI::NonNegativeNumber);
    gen->add_flag("--greedy", g_greedy, "argmax decoding (default)");
    gen->add_option("--temp", g_temp, "sampling temperature (enables sampling)")
        ->excludes("--greedy");
    gen->add_option("--top-k", g_top_k, "sampling pool size");
    gen->add_option("--seed", g_seed, "sampling seed");
    gen->add_flag("--ignore-eos", g_ignore_eos, "keep decoding past EOS");
    gen->add_option("--max-positions", g_max_positions,
                    "position capacity (default: sized to the run)");

    // inspect
    auto* inspect = app.add_subcommand("inspect", "Print header, tensor table and validation");
    std::string i_model;
    inspect->add_option("model", i_model, "model file")->required();

    // bench
    auto* bench = app.add_subcommand("bench", "Measure prefill and decode tokens/second");
    std::string b_model, b_label = "unknown", b_csv;
    int64_t b_prompt = 16, b_gen = 32, b_max_positions = 0;
    int b_repeat = 3;
    bench->add_option("model", b_model, "model file")->required();
    bench->add_option("--prompt-tokens", b_prompt, "prompt length incl. BOS")
        ->check(CLI::PositiveNumber);
    bench->add_option("--gen-tokens", b_gen, "tokens to decode")->check(CLI::PositiveNumber);
    bench->add_option("--repeat", b_repeat, "timed repetitions")->check(CLI::PositiveNumber);
    bench->add_option("--device-label", b_label, "free-text hardware label for the CSV");
    bench->add_option("--csv", b_csv, "append rows to this CSV file");
    bench->add_option("--max-positions", b_max_positions,
                      "position capacity (default: sized to the run)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (init->parsed()) {
            const skt::ModelConfig cfg = resolve_config(init_preset, init_config);
            skt::init_random_model(init_out, cfg, init_seed);
            std::cout << "wrote " << init_out << " (" << skt::count_params(cfg)
                      << " params, seed " << init_seed << ")\n";
        } else if (convert->parsed()) {
            const skt::ModelConfig cfg = resolve_config(conv_preset, conv_config);
            skt::convert_f32_bundle(conv_dir, conv_manifest, cfg, conv_out);
            std::cout << "wrote " << conv_out << "\n";
        } else if (quant->parsed()) {
            const auto format = skt::format_from_name(q_format);
            if (!format) throw skt::format_error("unknown format '" + q_format + "'");
            const skt::QuantizeReport report = skt::quantize_model(q_in, *format, q_out);
            print_quantize_report(report);
            std::cout << "wrote " << q_out << "\n";
        } else if (gen->parsed()) {
            const skt::ModelFile mf = skt::open_model(g_model);
            const int64_t needed = 2 + static_cast<int64_t>(g_prompt.size()) + g_max_tokens;
            const skt::Model model =
                skt::load_model(mf, g_max_positions > 0 ? g_max_positions : needed);
            skt::GenerationParams params;
            params.max_tokens = g_max_tokens;
            params.mode = g_temp > 0.0f ? skt::GenerationParams::Mode::SAMPLE
                                        : skt::GenerationParams::Mode::GREEDY;
            params.temperature = g_temp > 0.0f ? g_temp : 1.0f;
            params.top_k = g_top_k;
            params.seed = g_seed;
            params.ignore_eos = g_ignore_eos;
            const skt::GenerateResult res = skt::generate(model, g_prompt, params);
            std::fwrite(res.text.data(), 1, res.text.size(), stdout);
            std::fflush(stdout);
            const double prefill_tps =
                static_cast<double>(res.prompt_tokens) / std::max(res.prefill_seconds, 1e-9);
            const double decode_tps =
                res.tokens_generated
                    ? static_cast<double>(res.tokens_generated) / std::max(res.decode_seconds, 1e-9)
                    : 0.0;
            std::fprintf(stderr, "prefill_tps=%.3f decode_tps=%.3f\n", prefill_tps, decode_tps);
        } else if (inspect->parsed()) {
            return cmd_inspect(i_model);
        } else if (bench->parsed()) {
            const skt::ModelFile mf = skt::open_model(b_model);
            const int64_t needed = 2 + b_prompt + b_gen;
            const skt::Model model =
                skt::load_model(mf, b_max_positions > 0 ? b_max_positions : needed);
            skt::BenchParams params;
            params.prompt_tokens = b_prompt;
            params.gen_tokens = b_gen;
            params.repeats = b_repeat;
            params.device_label = b_label;
            const skt::BenchResult result =
                skt::run_bench(model, b_model, mf.format_label(), mf.file_bytes(), params);
            std::cout << skt::kBenchCsvHeader << "\n";
            for (const skt::BenchRow& row : result.rows) {
                std::cout << skt::bench_row_csv(row) << "\n";
                if (row.repeat == "mean") std::cout << skt::bench_protocol_note(params) << "\n";
            }
            if (!b_csv.empty()) skt::append_bench_csv(b_csv, result, params);
        }
    } catch (const skt::format_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
