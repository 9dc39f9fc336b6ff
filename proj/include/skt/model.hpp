#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "skt/attention.hpp"
#include "skt/quant.hpp"
#include "skt/tensor.hpp"

namespace skt {

enum class AttentionKind : uint8_t { GQA_SLIDING = 0, BLOCK_SPARSE = 1 };

struct ModelConfig {
    int n_layers = 0;
    int d_model = 0;
    int n_heads = 0;
    int head_dim = 0;
    std::vector<int> n_kv_heads;  // per layer
    int ffn_hidden = 0;
    int vocab_size = 0;
    int window = 2048;
    float rope_base = 10000.0f;
    float norm_eps = 1e-5f;
    AttentionKind attention_kind = AttentionKind::GQA_SLIDING;
    SparsePattern sparse;
    bool tied_embeddings = true;

    void validate() const;  // throws format_error on invariant violations
};

std::vector<std::string> preset_names();
ModelConfig preset_config(std::string_view name);

// Weight-name layout contract. Writers, loaders and the validator all derive
// the expected tensor set from this one function.
struct TensorSpec {
    std::string name;
    std::vector<int64_t> dims;
    bool quantizable;  // false for norm gains and the embedding table
};
std::vector<TensorSpec> model_layout(const ModelConfig& cfg);

// Closed-form parameter count over the layout contract.
int64_t count_params(const ModelConfig& cfg);

// Byte-level tokenizer: ids 0..255 are raw bytes, then BOS/EOS/PAD; the
// vocab is padded to a multiple of 32 with reserved ids.
struct ByteTokenizer {
    static constexpr int kBos = 256;
    static constexpr int kEos = 257;
    static constexpr int kPad = 258;
    static constexpr int kVocabSize = 288;  // 259 rounded up to a multiple of 32

    static std::vector<int> encode(std::string_view bytes);
    static std::string decode(std::span<const int> ids);  // specials stripped
};

using Weight = std::variant<Tensor, QuantizedTensor>;
using WeightMap = std::map<std::string, Weight>;

struct GenerationParams {
    enum class Mode { GREEDY, SAMPLE };
    int64_t max_tokens = 128;
    Mode mode = Mode::GREEDY;
    float temperature = 1.0f;  // SAMPLE only
    int top_k = 40;            // SAMPLE only
    uint64_t seed = 0;         // SAMPLE only
    bool ignore_eos = false;   // benchmark protocol: decode a fixed token count
};

// Immutable weights + config; safe to share across concurrent sessions.
class Model {
public:
    struct Layer {
        Tensor attn_norm, mlp_norm;
        Weight wq, wk, wv, wo, w_gate, w_up, w_down;
    };

    const ModelConfig& config() const { return cfg_; }
    const Tensor& tok_embed() const { return tok_embed_; }
    const Tensor& final_norm() const { return final_norm_; }
    const std::vector<Layer>& layers() const { return layers_; }
    const std::optional<Weight>& lm_head() const { return lm_head_; }
    const RopeTable& rope() const { return rope_; }
    int64_t max_positions() const { return max_positions_; }

    // Sum of element counts over all weight tensors.
    int64_t actual_param_count() const;

    friend Model build_model(ModelConfig cfg, const WeightMap& weights, int64_t max_positions);

private:
    ModelConfig cfg_;
    Tensor tok_embed_, final_norm_;
    std::vector<Layer> layers_;
    std::optional<Weight> lm_head_;
    RopeTable rope_;
    int64_t max_positions_ = 0;
};

Model build_model(ModelConfig cfg, const WeightMap& weights, int64_t max_positions = 4096);

// One generation stream: per-layer caches plus scratch buffers. Sessions are
// single-threaded; concurrent sessions each own one.
class Session {
public:
    explicit Session(const Model& model);

    int64_t pos() const { return pos_; }
    std::vector<KvCache>& caches() { return caches_; }

private:
    friend std::vector<float> prefill(const Model&, Session&, std::span<const int>);
    friend std::vector<float> decode_step(const Model&, Session&, int token);

    // One token through every layer; advances pos_. `prefill_sparse` applies
    // the block-sparse pattern to the key set (block-sparse prefill only).
    std::vector<float> forward(const Model& model, int token, bool prefill_sparse);

    std::vector<KvCache> caches_;
    int64_t pos_ = 0;
    // scratch
    std::vector<float> x_, xn_, q_, k_, v_, attn_, proj_, gate_, up_;
};

// Runs the prompt through the model and returns logits for the last token.
// Block-sparse models apply the sparse pattern across the prompt; sliding
// window models attend over at most `window` past positions.
std::vector<float> prefill(const Model& model, Session& session, std::span<const int> tokens);

// One-token step against the caches; returns logits[vocab_size].
std::vector<float> decode_step(const Model& model, Session& session, int token);

// GREEDY: argmax with lowest-index tie-break. SAMPLE: softmax(logits/T),
// top-k by probability (ties to lower index), renormalized, one splitmix64
// draw per call.
int sample_token(std::span<const float> logits, const GenerationParams& params,
                 uint64_t& rng_state);

struct GenerateResult {
    std::string text;
    std::vector<int> tokens;  // sampled tokens, including a terminating EOS
    int64_t prompt_tokens = 0;
    int64_t tokens_generated = 0;
    double prefill_seconds = 0.0;
    double decode_seconds = 0.0;
};

GenerateResult generate(const Model& model, std::string_view prompt,
                        const GenerationParams& params);

}  // namespace skt
