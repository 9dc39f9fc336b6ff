#include "skt/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace skt {

void ModelConfig::validate() const {
    if (n_layers < 1) throw format_error("config: n_layers must be >= 1");
    if (n_heads < 1 || head_dim < 1 || n_heads * head_dim != d_model)
        throw format_error("config: n_heads * head_dim must equal d_model");
    if (static_cast<int>(n_kv_heads.size()) != n_layers)
        throw format_error("config: n_kv_heads must list one entry per layer");
    for (int v : n_kv_heads)
        if (v < 1 || n_heads % v != 0)
            throw format_error("config: every n_kv_heads entry must divide n_heads=" +
                               std::to_string(n_heads) + ", got " + std::to_string(v));
    if (d_model % 32 != 0 || ffn_hidden % 32 != 0 || head_dim % 32 != 0)
        throw format_error("config: d_model, ffn_hidden and head_dim must be divisible by 32");
    if (vocab_size < 1) throw format_error("config: vocab_size must be >= 1");
    if (window < 1) throw format_error("config: window must be >= 1");
    if (norm_eps <= 0.0f) throw format_error("config: norm_eps must be > 0");
    if (attention_kind == AttentionKind::BLOCK_SPARSE &&
        (sparse.block < 1 || sparse.local_blocks < 0 || sparse.global_blocks < 0))
        throw format_error("config: invalid sparse pattern");
}

std::vector<std::string> preset_names() {
    return {"shakti-100m", "shakti-250m", "shakti-500m"};
}

ModelConfig preset_config(std::string_view name) {
    ModelConfig cfg;
    cfg.head_dim = 64;
    cfg.vocab_size = ByteTokenizer::kVocabSize;
    if (name == "shakti-100m") {
        cfg.n_layers = 10;
        cfg.d_model = 640;
    } else if (name == "shakti-250m") {
        cfg.n_layers = 16;
        cfg.d_model = 1024;
    } else if (name == "shakti-500m") {
        cfg.n_layers = 24;
        cfg.d_model = 2048;
        cfg.attention_kind = AttentionKind::BLOCK_SPARSE;
        cfg.sparse = SparsePattern{64, 4, 1};
    } else {
        std::string known;
        for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
        throw format_error("unknown preset '" + std::string(name) + "' (presets: " + known + ")");
    }
    cfg.n_heads = cfg.d_model / cfg.head_dim;
    // largest power of two not exceeding n_heads/4; 10 heads -> 2 kv heads
    int kv = 1;
    while (kv * 2 * 4 <= cfg.n_heads) kv *= 2;
    cfg.n_kv_heads.assign(static_cast<size_t>(cfg.n_layers), kv);
    cfg.ffn_hidden = 4 * cfg.d_model;
    cfg.validate();
    return cfg;
}

std::vector<TensorSpec> model_layout(const ModelConfig& cfg) {
    std::vector<TensorSpec> specs;
    const int64_t d = cfg.d_model, ffn = cfg.ffn_hidden, vocab = cfg.vocab_size;
    specs.push_back({"tok_embed", {vocab, d}, false});
    for (int i = 0; i < cfg.n_layers; i++) {
        const std::string p = "l" + std::to_string(i) + ".";
        const int64_t kv_dim =
            static_cast<int64_t>(cfg.n_kv_heads[static_cast<size_t>(i)]) * cfg.head_dim;
        specs.push_back({p + "attn_norm", {d}, false});
        specs.push_back({p + "wq", {d, d}, true});
        specs.push_back({p + "wk", {d, kv_dim}, true});
        specs.push_back({p + "wv", {d, kv_dim}, true});
        specs.push_back({p + "wo", {d, d}, true});
        specs.push_back({p + "mlp_norm", {d}, false});
        specs.push_back({p + "w_gate", {ffn, d}, true});
        specs.push_back({p + "w_up", {ffn, d}, true});
        specs.push_back({p + "w_down", {d, ffn}, true});
    }
    specs.push_back({"final_norm", {d}, false});
    if (!cfg.tied_embeddings) specs.push_back({"lm_head", {vocab, d}, true});
    return specs;
}

int64_t count_params(const ModelConfig& cfg) {
    const int64_t d = cfg.d_model, ffn = cfg.ffn_hidden, vocab = cfg.vocab_size;
    int64_t total = vocab * d;  // embedding
    for (int i = 0; i < cfg.n_layers; i++) {
        const int64_t kv_dim =
            static_cast<int64_t>(cfg.n_kv_heads[static_cast<size_t>(i)]) * cfg.head_dim;
        total += 2 * d;             // norm gains
        total += 2 * d * d;         // wq, wo
        total += 2 * d * kv_dim;    // wk, wv
        total += 3 * ffn * d;       // gate, up, down
    }
    total += d;  // final norm
    if (!cfg.tied_embeddings) total += vocab * d;
    return total;
}

std::vector<int> ByteTokenizer::encode(std::string_view bytes) {
    std::vector<int> ids;
    ids.reserve(bytes.size());
    for (unsigned char c : bytes) ids.push_back(static_cast<int>(c));
    return ids;
}

std::string ByteTokenizer::decode(std::span<const int> ids) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids)
        if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
    return out;
}

namespace {

struct WeightDims {
    int64_t rows, cols;
};

WeightDims weight_dims(const Weight& w) {
    if (const auto* t = std::get_if<Tensor>(&w)) {
        if (t->rank() == 2) return {t->dim(0), t->dim(1)};
        return {t->dim(0), 0};
    }
    const auto& q = std::get<QuantizedTensor>(w);
    return {q.rows(), q.cols()};
}

// y = W x for weights stored [out x in]
void matvec_w(const Weight& w, std::span<const float> x, std::span<float> y) {
    if (const auto* t = std::get_if<Tensor>(&w)) {
        matvec(t->f32(), t->dim(0), t->dim(1), x, y);
    } else {
        qmatvec(std::get<QuantizedTensor>(w), x, y);
    }
}

// y = W^T x for weights stored [in x out] (wk / wv in the layout contract)
void matvec_wt(const Weight& w, std::span<const float> x, std::span<float> y) {
    if (const auto* t = std::get_if<Tensor>(&w)) {
        matvec_t(t->f32(), t->dim(0), t->dim(1), x, y);
    } else {
        qmatvec_t(std::get<QuantizedTensor>(w), x, y);
    }
}

Weight take_weight(const WeightMap& weights, const TensorSpec& spec) {
    auto it = weights.find(spec.name);
    if (it == weights.end()) throw format_error("missing weight tensor '" + spec.name + "'");
    const Weight& w = it->second;
    if (const auto* t = std::get_if<Tensor>(&w)) {
        if (t->shape() != Shape(spec.dims.begin(), spec.dims.end()))
            throw format_error("weight '" + spec.name + "' has shape " + shape_str(t->shape()) +
                               ", expected " + shape_str(spec.dims));
        return t->widened();  // F16 is storage-only
    }
    const auto& q = std::get<QuantizedTensor>(w);
    if (!spec.quantizable)
        throw format_error("weight '" + spec.name + "' must not be quantized");
    if (spec.dims.size() != 2 || q.rows() != spec.dims[0] || q.cols() != spec.dims[1])
        throw format_error("weight '" + spec.name + "' has shape [" + std::to_string(q.rows()) +
                           "x" + std::to_string(q.cols()) + "], expected " + shape_str(spec.dims));
    return w;
}

}  // namespace

int64_t Model::actual_param_count() const {
    int64_t total = tok_embed_.numel() + final_norm_.numel();
    auto count = [](const Weight& w) {
        const WeightDims d = weight_dims(w);
        return d.cols ? d.rows * d.cols : d.rows;
    };
    for (const auto& l : layers_) {
        total += l.attn_norm.numel() + l.mlp_norm.numel();
        total += count(l.wq) + count(l.wk) + count(l.wv) + count(l.wo);
        total += count(l.w_gate) + count(l.w_up) + count(l.w_down);
    }
    if (lm_head_) total += count(*lm_head_);
    return total;
}

Model build_model(ModelConfig cfg, const WeightMap& weights, int64_t max_positions) {
    cfg.validate();
    const auto layout = model_layout(cfg);
    if (weights.size() != layout.size()) {
        for (const auto& [name, w] : weights) {
            (void)w;
            bool known = std::any_of(layout.begin(), layout.end(),
                                     [&](const TensorSpec& s) { return s.name == name; });
            if (!known) throw format_error("unexpected weight tensor '" + name + "'");
        }
    }

    if (max_positions < 1) throw format_error("max_positions must be >= 1");
    Model m;
    m.cfg_ = cfg;
    m.max_positions_ = max_positions;
    m.layers_.resize(static_cast<size_t>(cfg.n_layers));

    for (const auto& spec : layout) {
        Weight w = take_weight(weights, spec);
        if (spec.name == "tok_embed") {
            m.tok_embed_ = std::get<Tensor>(w);
        } else if (spec.name == "final_norm") {
            m.final_norm_ = std::get<Tensor>(w);
        } else if (spec.name == "lm_head") {
            m.lm_head_ = std::move(w);
        } else {
            const size_t dotp = spec.name.find('.');
            const int layer = std::stoi(spec.name.substr(1, dotp - 1));
            const std::string field = spec.name.substr(dotp + 1);
            Model::Layer& l = m.layers_[static_cast<size_t>(layer)];
            if (field == "attn_norm") l.attn_norm = std::get<Tensor>(w);
            else if (field == "mlp_norm") l.mlp_norm = std::get<Tensor>(w);
            else if (field == "wq") l.wq = std::move(w);
            else if (field == "wk") l.wk = std::move(w);
            else if (field == "wv") l.wv = std::move(w);
            else if (field == "wo") l.wo = std::move(w);
            else if (field == "w_gate") l.w_gate = std::move(w);
            else if (field == "w_up") l.w_up = std::move(w);
            else if (field == "w_down") l.w_down = std::move(w);
        }
    }

    m.rope_ = build_rope_table(cfg.head_dim, cfg.rope_base, m.max_positions_);
    return m;
}

Session::Session(const Model& model) {
    const ModelConfig& cfg = model.config();
    const int64_t cap = cfg.attention_kind == AttentionKind::GQA_SLIDING
                            ? std::min<int64_t>(cfg.window, model.max_positions())
                            : model.max_positions();
    caches_.reserve(static_cast<size_t>(cfg.n_layers));
    for (int i = 0; i < cfg.n_layers; i++)
        caches_.emplace_back(cap, cfg.n_kv_heads[static_cast<size_t>(i)], cfg.head_dim);
    x_.resize(static_cast<size_t>(cfg.d_model));
    xn_.resize(static_cast<size_t>(cfg.d_model));
    q_.resize(static_cast<size_t>(cfg.d_model));
    const int max_kv = *std::max_element(cfg.n_kv_heads.begin(), cfg.n_kv_heads.end());
    k_.resize(static_cast<size_t>(max_kv) * static_cast<size_t>(cfg.head_dim));
    v_.resize(k_.size());
    attn_.resize(static_cast<size_t>(cfg.d_model));
    proj_.resize(static_cast<size_t>(cfg.d_model));
    gate_.resize(static_cast<size_t>(cfg.ffn_hidden));
    up_.resize(static_cast<size_t>(cfg.ffn_hidden));
}

std::vector<float> Session::forward(const Model& model, int token, bool prefill_sparse) {
    Session& s = *this;
    const ModelConfig& cfg = model.config();
    if (token < 0 || token >= cfg.vocab_size)
        throw format_error("token id " + std::to_string(token) + " out of vocab range");
    if (s.pos() >= model.max_positions())
        throw std::runtime_error("sequence exceeds max supported positions (" +
                                 std::to_string(model.max_positions()) + ")");
    const int64_t pos = s.pos();

    auto embed = model.tok_embed().f32().subspan(
        static_cast<size_t>(token) * static_cast<size_t>(cfg.d_model),
        static_cast<size_t>(cfg.d_model));
    std::copy(embed.begin(), embed.end(), s.x_.begin());

    for (int li = 0; li < cfg.n_layers; li++) {
        const Model::Layer& l = model.layers()[static_cast<size_t>(li)];
        const int n_kv = cfg.n_kv_heads[static_cast<size_t>(li)];
        const size_t kv_dim = static_cast<size_t>(n_kv) * static_cast<size_t>(cfg.head_dim);
        KvCache& cache = s.caches_[static_cast<size_t>(li)];

        // attention block
        rmsnorm_into(s.x_, l.attn_norm.f32(), cfg.norm_eps, s.xn_);
        matvec_w(l.wq, s.xn_, s.q_);
        std::span<float> k(s.k_.data(), kv_dim), v(s.v_.data(), kv_dim);
        matvec_wt(l.wk, s.xn_, k);
        matvec_wt(l.wv, s.xn_, v);
        apply_rope(s.q_, cfg.n_heads, pos, model.rope());
        apply_rope(k, n_kv, pos, model.rope());
        cache.append(k, v, pos);
        if (prefill_sparse)
            gqa_attend_pattern(s.q_, cfg.n_heads, cache, cfg.sparse, pos, s.attn_);
        else
            gqa_attend(s.q_, cfg.n_heads, cache, s.attn_);
        matvec_w(l.wo, s.attn_, s.proj_);
        for (size_t i = 0; i < s.x_.size(); i++) s.x_[i] += s.proj_[i];

        // gated-SiLU MLP
        rmsnorm_into(s.x_, l.mlp_norm.f32(), cfg.norm_eps, s.xn_);
        matvec_w(l.w_gate, s.xn_, s.gate_);
        matvec_w(l.w_up, s.xn_, s.up_);
        silu_inplace(s.gate_);
        for (size_t i = 0; i < s.gate_.size(); i++) s.gate_[i] *= s.up_[i];
        matvec_w(l.w_down, s.gate_, s.proj_);
        for (size_t i = 0; i < s.x_.size(); i++) s.x_[i] += s.proj_[i];
    }

    rmsnorm_into(s.x_, model.final_norm().f32(), cfg.norm_eps, s.xn_);
    std::vector<float> logits(static_cast<size_t>(cfg.vocab_size));
    if (model.lm_head()) {
        matvec_w(*model.lm_head(), s.xn_, logits);
    } else {
        matvec(model.tok_embed().f32(), cfg.vocab_size, cfg.d_model, s.xn_, logits);
    }
    s.pos_++;
    return logits;
}

std::vector<float> prefill(const Model& model, Session& session, std::span<const int> tokens) {
    if (tokens.empty()) throw format_error("prefill: empty token list");
    if (session.pos_ != 0) throw std::runtime_error("prefill requires a fresh session");
    if (static_cast<int64_t>(tokens.size()) > model.max_positions())
        throw format_error("prompt of " + std::to_string(tokens.size()) +
                           " tokens exceeds max supported positions (" +
                           std::to_string(model.max_positions()) + ")");
    const bool sparse = model.config().attention_kind == AttentionKind::BLOCK_SPARSE;
    std::vector<float> logits;
    for (int tok : tokens) logits = session.forward(model, tok, sparse);
    return logits;
}

std::vector<float> decode_step(const Model& model, Session& session, int token) {
    if (session.pos_ == 0) throw std::runtime_error("decode_step on empty session; prefill first");
    for (const KvCache& c : session.caches_)
        if (c.next_pos() != session.pos_)
            throw std::runtime_error("cache position mismatch");
    return session.forward(model, token, false);
}

int sample_token(std::span<const float> logits, const GenerationParams& params,
                 uint64_t& rng_state) {
    if (logits.empty()) throw format_error("sample_token: empty logits");
    size_t best = 0;
    for (size_t i = 1; i < logits.size(); i++)
        if (logits[i] > logits[best]) best = i;
    if (std::isinf(logits[best]) && logits[best] < 0)
        throw format_error("sample_token: all logits are -inf");
    if (params.mode == GenerationParams::Mode::GREEDY) return static_cast<int>(best);

    if (params.temperature <= 0.0f) throw format_error("temperature must be > 0");
    if (params.top_k < 1) throw format_error("top_k must be >= 1");

    std::vector<float> probs(logits.begin(), logits.end());
    softmax_inplace(probs, 1.0f / params.temperature);

    // top-k by probability, ties to the lower index (stable sort keeps order)
    std::vector<int> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    const size_t k = std::min(static_cast<size_t>(params.top_k), probs.size());
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return probs[static_cast<size_t>(a)] > probs[static_cast<size_t>(b)]; });
    order.resize(k);

    double total = 0.0;
    for (int idx : order) total += probs[static_cast<size_t>(idx)];
    const double u = splitmix64_uniform(rng_state) * total;
    double cum = 0.0;
    for (int idx : order) {
        cum += probs[static_cast<size_t>(idx)];
        if (u < cum) return idx;
    }
    return order.back();
}

GenerateResult generate(const Model& model, std::string_view prompt,
                        const GenerationParams& params) {
    using clock = std::chrono::steady_clock;
    GenerateResult res;

    std::vector<int> tokens;
    tokens.push_back(ByteTokenizer::kBos);
    for (int id : ByteTokenizer::encode(prompt)) tokens.push_back(id);
    res.prompt_tokens = static_cast<int64_t>(tokens.size());

    Session session(model);
    auto t0 = clock::now();
    std::vector<float> logits = prefill(model, session, tokens);
    res.prefill_seconds = std::chrono::duration<double>(clock::now() - t0).count();

    uint64_t rng = params.seed;
    t0 = clock::now();
    while (res.tokens_generated < params.max_tokens) {
        const int tok = sample_token(logits, params, rng);
        res.tokens.push_back(tok);
        res.tokens_generated++;
        if (tok == ByteTokenizer::kEos && !params.ignore_eos) break;
        logits = decode_step(model, session, tok);
    }
    res.decode_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    res.text = ByteTokenizer::decode(res.tokens);
    return res;
}

}  // namespace skt
