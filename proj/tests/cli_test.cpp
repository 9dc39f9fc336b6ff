// End-to-end tests for the skt binary: every subcommand, the exit-code
// contract (0 ok, 1 usage, 2 bad data, 3 runtime), and byte-level output
// determinism. The binary path arrives via the SKT_BIN environment variable.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "skt/bench.hpp"
#include "skt/model.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

struct Harness {
    fs::path dir;
    std::string bin;

    Harness() {
        std::string tmpl = (fs::temp_directory_path() / "skt_cli_XXXXXX").string();
        dir = mkdtemp(tmpl.data());
        const char* env = std::getenv("SKT_BIN");
        bin = env ? env : "";
    }
    ~Harness() { fs::remove_all(dir); }

    std::string file(const std::string& name) const { return (dir / name).string(); }

    RunResult run(const std::string& args) const {
        RunResult r;
        const std::string out = file("_stdout"), err = file("_stderr");
        const std::string cmd = bin + " " + args + " >" + out + " 2>" + err;
        const int status = std::system(cmd.c_str());
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = slurp(out);
        r.err = slurp(err);
        return r;
    }

    static std::string slurp(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    }

    void write_config() const {
        std::ofstream cfg(file("tiny.json"));
        cfg << R"({"n_layers": 1, "d_model": 64, "n_heads": 2, "head_dim": 32,
                   "n_kv_heads": 1, "ffn_hidden": 64, "vocab_size": 288, "window": 64})";
    }
};

}  // namespace

TEST_CASE("usage errors exit with code 1") {
    Harness h;
    REQUIRE(!h.bin.empty());
    CHECK(h.run("").code == 1);
    CHECK(h.run("frobnicate").code == 1);
    CHECK(h.run("--help").code == 0);
    CHECK(h.run("init-random").code == 1);  // missing -o
    CHECK(h.run("init-random --preset shakti-9b -o " + h.file("x.skt")).code == 1);
    CHECK(h.run("quantize " + h.file("x.skt") + " -o " + h.file("y.skt")).code == 1);
    CHECK(h.run("quantize x.skt --format q9_9 -o y.skt").code == 1);
    CHECK(h.run("generate m.skt --max-tokens -3").code == 1);
    CHECK(h.run("bench m.skt --repeat 0").code == 1);
}

TEST_CASE("init-random is deterministic per seed and inspect validates it") {
    Harness h;
    REQUIRE(!h.bin.empty());
    h.write_config();

    auto r1 = h.run("init-random --config " + h.file("tiny.json") + " --seed 7 -o " +
                    h.file("a.skt"));
    CHECK(r1.code == 0);
    CHECK(r1.out.find("wrote") != std::string::npos);
    auto r2 = h.run("init-random --config " + h.file("tiny.json") + " --seed 7 -o " +
                    h.file("b.skt"));
    CHECK(r2.code == 0);
    auto r3 = h.run("init-random --config " + h.file("tiny.json") + " --seed 8 -o " +
                    h.file("c.skt"));
    CHECK(r3.code == 0);

    CHECK(Harness::slurp(h.file("a.skt")) == Harness::slurp(h.file("b.skt")));
    CHECK(Harness::slurp(h.file("a.skt")) != Harness::slurp(h.file("c.skt")));

    auto ins = h.run("inspect " + h.file("a.skt"));
    CHECK(ins.code == 0);
    CHECK(ins.out.find("format f32") != std::string::npos);
    CHECK(ins.out.find("validation: OK") != std::string::npos);
    CHECK(ins.out.find("n_layers=1") != std::string::npos);
    CHECK(ins.out.find("tok_embed") != std::string::npos);

    // both config sources at once is a usage error
    CHECK(h.run("init-random --config " + h.file("tiny.json") +
                " --preset shakti-100m -o " + h.file("d.skt"))
              .code == 1);
}

TEST_CASE("config JSON problems are data errors") {
    Harness h;
    REQUIRE(!h.bin.empty());
    {
        std::ofstream bad(h.file("bad.json"));
        bad << R"({"n_layers": 1, "d_model": 64, "n_heads": 2, "head_dim": 32, "volcab": 1})";
    }
    auto r = h.run("init-random --config " + h.file("bad.json") + " -o " + h.file("x.skt"));
    CHECK(r.code == 2);
    CHECK(r.err.find("volcab") != std::string::npos);

    {
        std::ofstream syntax(h.file("syntax.json"));
        syntax << "{not json";
    }
    CHECK(h.run("init-random --config " + h.file("syntax.json") + " -o " + h.file("x.skt"))
              .code == 2);

    // missing config file is a runtime error, not a data error
    CHECK(h.run("init-random --config " + h.file("nope.json") + " -o " + h.file("x.skt"))
              .code == 3);
}

TEST_CASE("generate emits identical bytes across runs and modes behave") {
    Harness h;
    REQUIRE(!h.bin.empty());
    h.write_config();
    REQUIRE(h.run("init-random --config " + h.file("tiny.json") + " -o " + h.file("m.skt"))
                .code == 0);

    const std::string base =
        "generate " + h.file("m.skt") + " --prompt hello --max-tokens 24 --ignore-eos";
    auto g1 = h.run(base + " --greedy");
    auto g2 = h.run(base + " --greedy");
    CHECK(g1.code == 0);
    CHECK(g1.out == g2.out);
    CHECK(g1.err.find("prefill_tps=") != std::string::npos);
    CHECK(g1.err.find("decode_tps=") != std::string::npos);

    auto s1 = h.run(base + " --temp 0.8 --seed 5");
    auto s2 = h.run(base + " --temp 0.8 --seed 5");
    auto s3 = h.run(base + " --temp 0.8 --seed 6");
    CHECK(s1.code == 0);
    CHECK(s1.out == s2.out);
    CHECK(s1.out != s3.out);

    CHECK(h.run(base + " --greedy --temp 0.5").code == 1);  // mutually exclusive

    auto p = h.run("generate " + h.file("m.skt") + " --prompt hi --max-tokens 0");
    CHECK(p.code == 0);
    CHECK(p.out.empty());
    CHECK(p.err.find("decode_tps=0.000") != std::string::npos);

    CHECK(h.run("generate " + h.file("nothere.skt") + " --max-tokens 1").code == 3);
}

TEST_CASE("quantize reports ratios and the output still generates") {
    Harness h;
    REQUIRE(!h.bin.empty());
    h.write_config();
    REQUIRE(h.run("init-random --config " + h.file("tiny.json") + " -o " + h.file("m.skt"))
                .code == 0);

    auto q = h.run("quantize " + h.file("m.skt") + " --format q4_0 -o " + h.file("q4.skt"));
    CHECK(q.code == 0);
    CHECK(q.out.find("ratio 7.111") != std::string::npos);
    CHECK(q.out.find("wrote") != std::string::npos);

    auto ins = h.run("inspect " + h.file("q4.skt"));
    CHECK(ins.code == 0);
    CHECK(ins.out.find("format q4_0") != std::string::npos);
    CHECK(ins.out.find("validation: OK") != std::string::npos);

    auto g = h.run("generate " + h.file("q4.skt") +
                   " --prompt quant --max-tokens 8 --ignore-eos --greedy");
    CHECK(g.code == 0);

    // quantizing a quantized file is a data error
    CHECK(h.run("quantize " + h.file("q4.skt") + " --format q8_0 -o " + h.file("qq.skt"))
              .code == 2);
}

TEST_CASE("inspect flags corrupted files with exit code 2") {
    Harness h;
    REQUIRE(!h.bin.empty());
    h.write_config();
    REQUIRE(h.run("init-random --config " + h.file("tiny.json") + " -o " + h.file("m.skt"))
                .code == 0);

    auto bytes = Harness::slurp(h.file("m.skt"));
    // damage one byte in the index region (just past the fixed header)
    bytes[100] = static_cast<char>(bytes[100] ^ 0xFF);
    {
        std::ofstream out(h.file("bad.skt"), std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    auto ins = h.run("inspect " + h.file("bad.skt"));
    CHECK(ins.code == 2);

    std::ofstream(h.file("junk.skt")) << "this is not a model";
    auto junk = h.run("inspect " + h.file("junk.skt"));
    CHECK(junk.code == 2);
    CHECK(junk.err.find("not a model file") != std::string::npos);

    CHECK(h.run("generate " + h.file("junk.skt") + " --max-tokens 1").code == 2);
}

TEST_CASE("convert assembles a CLI-ready model from raw tensors") {
    Harness h;
    REQUIRE(!h.bin.empty());
    h.write_config();

    skt::ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = 64;
    cfg.n_heads = 2;
    cfg.head_dim = 32;
    cfg.n_kv_heads = {1};
    cfg.ffn_hidden = 64;
    cfg.vocab_size = 288;
    cfg.window = 64;

    uint64_t state = 99;
    std::ofstream manifest(h.file("manifest.txt"));
    manifest << "# tiny raw bundle\n";
    for (const skt::TensorSpec& spec : skt::model_layout(cfg)) {
        std::string fname = spec.name + ".raw";
        for (auto& c : fname)
            if (c == '.') c = '_';
        std::vector<float> data(static_cast<size_t>(skt::shape_numel(spec.dims)));
        for (float& v : data)
            v = static_cast<float>(skt::splitmix64_uniform(state) * 0.08 - 0.04);
        std::ofstream bin(h.file(fname), std::ios::binary);
        bin.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size() * 4));
        manifest << spec.name << " " << spec.dims.size();
        for (int64_t d : spec.dims) manifest << " " << d;
        manifest << " " << fname << "\n";
    }
    manifest.close();

    auto conv = h.run("convert --dir " + h.dir.string() + " --manifest " +
                      h.file("manifest.txt") + " --config " + h.file("tiny.json") + " -o " +
                      h.file("conv.skt"));
    CHECK(conv.code == 0);
    auto ins = h.run("inspect " + h.file("conv.skt"));
    CHECK(ins.code == 0);
    CHECK(ins.out.find("validation: OK") != std::string::npos);

    // a manifest that misses tensors is a data error
    std::ofstream(h.file("short.txt")) << "tok_embed 2 288 64 tok_embed_raw\n";
    CHECK(h.run("convert --dir " + h.dir.string() + " --manifest " + h.file("short.txt") +
                " --config " + h.file("tiny.json") + " -o " + h.file("c2.skt"))
              .code == 2);
}

TEST_CASE("bench prints the CSV schema and appends to a file") {
    Harness h;
    REQUIRE(!h.bin.empty());
    h.write_config();
    REQUIRE(h.run("init-random --config " + h.file("tiny.json") + " -o " + h.file("m.skt"))
                .code == 0);

    auto b = h.run("bench " + h.file("m.skt") +
                   " --prompt-tokens 6 --gen-tokens 4 --repeat 2 --device-label cli-test"
                   " --csv " + h.file("bench.csv"));
    CHECK(b.code == 0);
    CHECK(b.out.find(skt::kBenchCsvHeader) != std::string::npos);
    CHECK(b.out.find(",mean,") != std::string::npos);
    CHECK(b.out.find("# protocol:") != std::string::npos);

    auto rows = skt::parse_bench_csv(h.file("bench.csv"));
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].repeat == "1");
    CHECK(rows[1].repeat == "2");
    CHECK(rows[2].repeat == "mean");
    for (const auto& row : rows) {
        CHECK(row.prompt_tokens == 6);
        CHECK(row.gen_tokens == 4);
        CHECK(row.device_label == "cli-test");
        CHECK(row.decode_tps > 0.0);
        CHECK(row.model_file_bytes == fs::file_size(h.file("m.skt")));
    }
}
