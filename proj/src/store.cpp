#include "skt/store.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "the container code assumes a little-endian host");

namespace skt {

namespace {

constexpr char kMagic[4] = {'S', 'K', 'T', '1'};
constexpr uint64_t kAlign = 32;

uint64_t align_up(uint64_t v) { return (v + kAlign - 1) & ~(kAlign - 1); }

// ---- little-endian decode over a byte span ----

struct Cursor {
    std::span<const uint8_t> buf;
    size_t pos = 0;

    const uint8_t* need(size_t n, const char* what) {
        if (n > buf.size() - pos)
            throw format_error(std::string("truncated file (") + what + " extends past EOF)");
        const uint8_t* p = buf.data() + pos;
        pos += n;
        return p;
    }
    uint8_t u8(const char* what) { return *need(1, what); }
    uint16_t u16(const char* what) {
        const uint8_t* p = need(2, what);
        return static_cast<uint16_t>(p[0] | (p[1] << 8));
    }
    uint32_t u32(const char* what) {
        const uint8_t* p = need(4, what);
        return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
               (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
    }
    uint64_t u64(const char* what) {
        uint64_t lo = u32(what), hi = u32(what);
        return lo | (hi << 32);
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    std::string str(size_t n, const char* what) {
        const uint8_t* p = need(n, what);
        return std::string(reinterpret_cast<const char*>(p), n);
    }
};

// ---- little-endian encode into a growing buffer ----

struct HeaderBuf {
    std::vector<uint8_t> bytes;

    void u8(uint8_t v) { bytes.push_back(v); }
    void u16(uint16_t v) {
        bytes.push_back(static_cast<uint8_t>(v));
        bytes.push_back(static_cast<uint8_t>(v >> 8));
    }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; i++) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; i++) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
    void str(std::string_view s) {
        bytes.insert(bytes.end(), s.begin(), s.end());
    }
};

void encode_config(HeaderBuf& h, const ModelConfig& cfg) {
    h.u32(static_cast<uint32_t>(cfg.n_layers));
    h.u32(static_cast<uint32_t>(cfg.d_model));
    h.u32(static_cast<uint32_t>(cfg.n_heads));
    h.u32(static_cast<uint32_t>(cfg.head_dim));
    h.u32(static_cast<uint32_t>(cfg.n_kv_heads.size()));
    for (int v : cfg.n_kv_heads) h.u32(static_cast<uint32_t>(v));
    h.u32(static_cast<uint32_t>(cfg.ffn_hidden));
    h.u32(static_cast<uint32_t>(cfg.vocab_size));
    h.u32(static_cast<uint32_t>(cfg.window));
    h.f32(cfg.rope_base);
    h.f32(cfg.norm_eps);
    h.u8(static_cast<uint8_t>(cfg.attention_kind));
    h.u32(static_cast<uint32_t>(cfg.sparse.block));
    h.u32(static_cast<uint32_t>(cfg.sparse.local_blocks));
    h.u32(static_cast<uint32_t>(cfg.sparse.global_blocks));
    h.u8(cfg.tied_embeddings ? 1 : 0);
}

ModelConfig decode_config(Cursor& c) {
    ModelConfig cfg;
    cfg.n_layers = static_cast<int>(c.u32("config"));
    cfg.d_model = static_cast<int>(c.u32("config"));
    cfg.n_heads = static_cast<int>(c.u32("config"));
    cfg.head_dim = static_cast<int>(c.u32("config"));
    const uint32_t n_kv = c.u32("config");
    if (n_kv > (1u << 20)) throw format_error("config: implausible n_kv_heads count");
    cfg.n_kv_heads.resize(n_kv);
    for (uint32_t i = 0; i < n_kv; i++) cfg.n_kv_heads[i] = static_cast<int>(c.u32("config"));
    cfg.ffn_hidden = static_cast<int>(c.u32("config"));
    cfg.vocab_size = static_cast<int>(c.u32("config"));
    cfg.window = static_cast<int>(c.u32("config"));
    cfg.rope_base = c.f32("config");
    cfg.norm_eps = c.f32("config");
    const uint8_t kind = c.u8("config");
    if (kind > 1) throw format_error("config: unknown attention kind " + std::to_string(kind));
    cfg.attention_kind = static_cast<AttentionKind>(kind);
    cfg.sparse.block = c.u32("config");
    cfg.sparse.local_blocks = c.u32("config");
    cfg.sparse.global_blocks = c.u32("config");
    cfg.tied_embeddings = c.u8("config") != 0;
    return cfg;
}

std::string dims_str(std::span<const int64_t> dims) { return shape_str(dims); }

}  // namespace

const char* stored_type_name(StoredType t) {
    switch (t) {
        case StoredType::F32: return "f32";
        case StoredType::F16: return "f16";
        case StoredType::Q8_0: return "q8_0";
        case StoredType::Q5_0: return "q5_0";
        case StoredType::Q5_1: return "q5_1";
        case StoredType::Q4_0: return "q4_0";
        case StoredType::Q4_1: return "q4_1";
    }
    return "?";
}

StoredType stored_type(FormatId id) {
    switch (id) {
        case FormatId::Q8_0: return StoredType::Q8_0;
        case FormatId::Q5_0: return StoredType::Q5_0;
        case FormatId::Q5_1: return StoredType::Q5_1;
        case FormatId::Q4_0: return StoredType::Q4_0;
        case FormatId::Q4_1: return StoredType::Q4_1;
    }
    throw format_error("unknown block format id");
}

std::optional<FormatId> stored_format(StoredType t) {
    switch (t) {
        case StoredType::Q8_0: return FormatId::Q8_0;
        case StoredType::Q5_0: return FormatId::Q5_0;
        case StoredType::Q5_1: return FormatId::Q5_1;
        case StoredType::Q4_0: return FormatId::Q4_0;
        case StoredType::Q4_1: return FormatId::Q4_1;
        default: return std::nullopt;
    }
}

uint64_t entry_byte_len(StoredType dtype, std::span<const int64_t> dims) {
    if (dims.empty() || dims.size() > 4)
        throw shape_error("tensor rank must be 1..4, got " + std::to_string(dims.size()));
    for (int64_t d : dims)
        if (d < 1) throw shape_error("tensor dims must be >= 1, got " + dims_str(dims));
    const int64_t numel = shape_numel(dims);
    switch (dtype) {
        case StoredType::F32: return static_cast<uint64_t>(numel) * 4;
        case StoredType::F16: return static_cast<uint64_t>(numel) * 2;
        default: break;
    }
    const auto fmt = stored_format(dtype);
    if (!fmt) throw format_error("invalid dtype code " + std::to_string(int(dtype)));
    if (dims.size() != 2)
        throw shape_error("quantized tensors must be rank 2, got " + dims_str(dims));
    if (dims[1] % kBlockLen != 0)
        throw shape_error("quantized cols must be divisible by 32, got " + dims_str(dims));
    return QuantizedTensor::payload_size(*fmt, dims[0], dims[1]);
}

// ---- mapping ----

std::shared_ptr<MappedFile> MappedFile::open(const std::string& path) {
    const int fd = ::open(path.c_str(), O_RDONLY);
    if (fd < 0)
        throw std::runtime_error("cannot open '" + path + "': " + std::strerror(errno));
    struct stat st{};
    if (fstat(fd, &st) != 0) {
        const int err = errno;
        ::close(fd);
        throw std::runtime_error("cannot stat '" + path + "': " + std::strerror(err));
    }
    const size_t size = static_cast<size_t>(st.st_size);
    const uint8_t* data = nullptr;
    if (size > 0) {
        void* p = mmap(nullptr, size, PROT_READ, MAP_PRIVATE, fd, 0);
        if (p == MAP_FAILED) {
            const int err = errno;
            ::close(fd);
            throw std::runtime_error("cannot map '" + path + "': " + std::strerror(err));
        }
        data = static_cast<const uint8_t*>(p);
    }
    ::close(fd);
    return std::shared_ptr<MappedFile>(new MappedFile(data, size));
}

MappedFile::~MappedFile() {
    if (data_) munmap(const_cast<uint8_t*>(data_), size_);
}

// ---- reading ----

ModelFile open_model(const std::string& path) {
    ModelFile mf;
    mf.path_ = path;
    mf.map_ = MappedFile::open(path);
    Cursor c{mf.map_->bytes()};

    const std::string magic = c.str(4, "magic");
    if (std::memcmp(magic.data(), kMagic, 4) != 0)
        throw format_error("'" + path + "' is not a model file (bad magic)");
    const uint32_t version = c.u32("version");
    if (version != kContainerVersion)
        throw format_error("unsupported container version " + std::to_string(version) +
                           " (expected " + std::to_string(kContainerVersion) + ")");

    mf.cfg_ = decode_config(c);
    mf.cfg_.validate();

    const uint32_t tensor_count = c.u32("tensor count");
    mf.data_offset_ = 0;
    const uint64_t data_offset = c.u64("data offset");

    mf.index_.reserve(tensor_count);
    for (uint32_t i = 0; i < tensor_count; i++) {
        TensorIndexEntry e;
        const uint16_t name_len = c.u16("index");
        e.name = c.str(name_len, "index");
        e.dtype = static_cast<StoredType>(c.u8("index"));
        const uint8_t n_dims = c.u8("index");
        if (n_dims < 1 || n_dims > 4)
            throw format_error("tensor '" + e.name + "' has invalid rank " +
                               std::to_string(n_dims));
        for (uint8_t d = 0; d < n_dims; d++)
            e.dims.push_back(static_cast<int64_t>(c.u64("index")));
        e.offset = c.u64("index");
        e.byte_len = c.u64("index");
        mf.index_.push_back(std::move(e));
    }

    if (data_offset < c.pos)
        throw format_error("data offset overlaps the header");
    if (data_offset > mf.map_->bytes().size())
        throw format_error("truncated file (data section starts past EOF)");
    const uint64_t data_size = mf.map_->bytes().size() - data_offset;
    for (const TensorIndexEntry& e : mf.index_)
        if (e.offset > data_size || e.byte_len > data_size - e.offset)
            throw format_error("truncated file (tensor '" + e.name + "' data extends past EOF)");
    mf.data_offset_ = data_offset;
    return mf;
}

bool ModelFile::has(std::string_view name) const {
    return std::any_of(index_.begin(), index_.end(),
                       [&](const TensorIndexEntry& e) { return e.name == name; });
}

const TensorIndexEntry& ModelFile::entry(std::string_view name) const {
    for (const TensorIndexEntry& e : index_)
        if (e.name == name) return e;
    // suggest near-matches: longest shared prefix, then substring hits
    std::vector<std::pair<size_t, const std::string*>> scored;
    for (const TensorIndexEntry& e : index_) {
        size_t p = 0;
        while (p < e.name.size() && p < name.size() && e.name[p] == name[p]) p++;
        if (e.name.find(name) != std::string::npos) p = std::max(p, name.size());
        if (p >= 2) scored.emplace_back(p, &e.name);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::string msg = "unknown tensor '" + std::string(name) + "'";
    if (!scored.empty()) {
        msg += " (closest:";
        for (size_t i = 0; i < scored.size() && i < 3; i++)
            msg += std::string(i ? ", " : " ") + *scored[i].second;
        msg += ")";
    }
    throw format_error(msg);
}

std::span<const uint8_t> ModelFile::payload(const TensorIndexEntry& e) const {
    if (e.offset % kAlign != 0)
        throw format_error("tensor '" + e.name + "' offset is not 32-byte aligned");
    const uint64_t file_size = map_->bytes().size();
    if (e.offset > file_size - data_offset_ || e.byte_len > file_size - data_offset_ - e.offset)
        throw format_error("tensor '" + e.name + "' data extends past EOF");
    return map_->bytes().subspan(static_cast<size_t>(data_offset_ + e.offset),
                                 static_cast<size_t>(e.byte_len));
}

Weight ModelFile::tensor(std::string_view name) const {
    const TensorIndexEntry& e = entry(name);
    const uint64_t expect = entry_byte_len(e.dtype, e.dims);
    if (expect != e.byte_len)
        throw format_error("tensor '" + e.name + "' byte_len " + std::to_string(e.byte_len) +
                           " does not match its dtype/shape (expected " + std::to_string(expect) +
                           ")");
    const std::span<const uint8_t> bytes = payload(e);
    if (e.dtype == StoredType::F32)
        return Tensor::view(Dtype::F32, Shape(e.dims.begin(), e.dims.end()), bytes, map_);
    if (e.dtype == StoredType::F16)
        return Tensor::view(Dtype::F16, Shape(e.dims.begin(), e.dims.end()), bytes, map_);
    return QuantizedTensor::view(*stored_format(e.dtype), e.dims[0], e.dims[1], bytes, map_);
}

std::string ModelFile::format_label() const {
    std::string label = "f32";
    for (const TensorIndexEntry& e : index_) {
        if (e.dtype == StoredType::F32) continue;
        const char* n = stored_type_name(e.dtype);
        if (label == "f32") label = n;
        else if (label != n) return "mixed";
    }
    return label;
}

Model load_model(const ModelFile& mf, int64_t max_positions) {
    WeightMap weights;
    for (const TensorIndexEntry& e : mf.index()) weights.emplace(e.name, mf.tensor(e.name));
    return build_model(mf.config(), weights, max_positions);
}

// ---- writing ----

void write_container(const std::string& path, const ModelConfig& cfg,
                     const std::vector<TensorPlan>& plan,
                     const std::function<void(size_t, const PayloadSink&)>& emit) {
    cfg.validate();
    for (size_t i = 0; i < plan.size(); i++)
        for (size_t j = i + 1; j < plan.size(); j++)
            if (plan[i].name == plan[j].name)
                throw format_error("duplicate tensor '" + plan[i].name + "'");

    std::vector<uint64_t> offsets(plan.size()), lens(plan.size());
    uint64_t cursor = 0;
    for (size_t i = 0; i < plan.size(); i++) {
        lens[i] = entry_byte_len(plan[i].dtype, plan[i].dims);
        offsets[i] = align_up(cursor);
        cursor = offsets[i] + lens[i];
    }

    HeaderBuf h;
    h.str({kMagic, 4});
    h.u32(kContainerVersion);
    encode_config(h, cfg);
    h.u32(static_cast<uint32_t>(plan.size()));
    const size_t data_offset_pos = h.bytes.size();
    h.u64(0);  // data_offset, patched below
    for (size_t i = 0; i < plan.size(); i++) {
        const TensorPlan& t = plan[i];
        if (t.name.size() > 0xffff) throw format_error("tensor name too long");
        h.u16(static_cast<uint16_t>(t.name.size()));
        h.str(t.name);
        h.u8(static_cast<uint8_t>(t.dtype));
        h.u8(static_cast<uint8_t>(t.dims.size()));
        for (int64_t d : t.dims) h.u64(static_cast<uint64_t>(d));
        h.u64(offsets[i]);
        h.u64(lens[i]);
    }
    const uint64_t data_offset = align_up(h.bytes.size());
    for (int i = 0; i < 8; i++)
        h.bytes[data_offset_pos + static_cast<size_t>(i)] =
            static_cast<uint8_t>(data_offset >> (8 * i));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(h.bytes.data()),
              static_cast<std::streamsize>(h.bytes.size()));

    static const char zeros[kAlign] = {};
    auto pad_to = [&](uint64_t target, uint64_t from) {
        for (uint64_t n = target - from; n > 0;) {
            const uint64_t chunk = std::min<uint64_t>(n, kAlign);
            out.write(zeros, static_cast<std::streamsize>(chunk));
            n -= chunk;
        }
    };
    pad_to(data_offset, h.bytes.size());

    uint64_t written = 0;
    for (size_t i = 0; i < plan.size(); i++) {
        pad_to(offsets[i], written);
        written = offsets[i];
        uint64_t emitted = 0;
        PayloadSink sink = [&](std::span<const uint8_t> bytes) {
            out.write(reinterpret_cast<const char*>(bytes.data()),
                      static_cast<std::streamsize>(bytes.size()));
            emitted += bytes.size();
        };
        emit(i, sink);
        if (emitted != lens[i])
            throw std::runtime_error("writer for tensor '" + plan[i].name + "' produced " +
                                     std::to_string(emitted) + " bytes, expected " +
                                     std::to_string(lens[i]));
        written += emitted;
    }
    out.flush();
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

void write_model(const std::string& path, const ModelConfig& cfg, const WeightMap& weights) {
    const auto layout = model_layout(cfg);
    for (const auto& [name, w] : weights) {
        (void)w;
        if (!std::any_of(layout.begin(), layout.end(),
                         [&](const TensorSpec& s) { return s.name == name; }))
            throw format_error("unexpected weight tensor '" + name + "'");
    }

    std::vector<TensorPlan> plan;
    std::vector<const Weight*> sources;
    plan.reserve(layout.size());
    for (const TensorSpec& spec : layout) {
        auto it = weights.find(spec.name);
        if (it == weights.end()) throw format_error("missing weight tensor '" + spec.name + "'");
        const Weight& w = it->second;
        TensorPlan p;
        p.name = spec.name;
        if (const auto* t = std::get_if<Tensor>(&w)) {
            if (t->shape() != Shape(spec.dims.begin(), spec.dims.end()))
                throw format_error("weight '" + spec.name + "' has shape " +
                                   shape_str(t->shape()) + ", expected " + dims_str(spec.dims));
            p.dtype = t->dtype() == Dtype::F32 ? StoredType::F32 : StoredType::F16;
            p.dims = spec.dims;
        } else {
            const auto& q = std::get<QuantizedTensor>(w);
            if (!spec.quantizable)
                throw format_error("weight '" + spec.name + "' must not be quantized");
            if (spec.dims.size() != 2 || q.rows() != spec.dims[0] || q.cols() != spec.dims[1])
                throw format_error("weight '" + spec.name + "' has shape [" +
                                   std::to_string(q.rows()) + "x" + std::to_string(q.cols()) +
                                   "], expected " + dims_str(spec.dims));
            p.dtype = stored_type(q.format());
            p.dims = spec.dims;
        }
        plan.push_back(std::move(p));
        sources.push_back(&w);
    }

    write_container(path, cfg, plan, [&](size_t i, const PayloadSink& sink) {
        if (const auto* t = std::get_if<Tensor>(sources[i])) sink(t->bytes());
        else sink(std::get<QuantizedTensor>(*sources[i]).payload());
    });
}

// ---- validation ----

ValidationReport validate(const ModelFile& mf) {
    ValidationReport report;
    report.tensors_checked = static_cast<int64_t>(mf.index().size());

    if (mf.data_offset() % kAlign != 0)
        report.fail("", "data offset " + std::to_string(mf.data_offset()) +
                            " is not 32-byte aligned");

    const uint64_t data_size = mf.file_bytes() - mf.data_offset();
    uint64_t prev_end = 0;
    std::vector<std::string> seen;
    for (const TensorIndexEntry& e : mf.index()) {
        if (std::find(seen.begin(), seen.end(), e.name) != seen.end())
            report.fail(e.name, "duplicate tensor name");
        seen.push_back(e.name);

        uint64_t expect = 0;
        bool shape_ok = true;
        try {
            expect = entry_byte_len(e.dtype, e.dims);
        } catch (const format_error& err) {
            report.fail(e.name, err.what());
            shape_ok = false;
        }
        if (shape_ok && expect != e.byte_len)
            report.fail(e.name, "byte_len " + std::to_string(e.byte_len) +
                                    " does not match dtype/shape (expected " +
                                    std::to_string(expect) + ")");
        if (e.offset % kAlign != 0)
            report.fail(e.name, "offset " + std::to_string(e.offset) + " is not 32-byte aligned");
        if (e.offset > data_size || e.byte_len > data_size - e.offset)
            report.fail(e.name, "data range extends past EOF");
        if (e.offset < prev_end)
            report.fail(e.name, "offset overlaps the previous tensor");
        prev_end = e.offset + e.byte_len;
    }

    const auto layout = model_layout(mf.config());
    for (const TensorSpec& spec : layout) {
        const auto it = std::find_if(mf.index().begin(), mf.index().end(),
                                     [&](const TensorIndexEntry& e) { return e.name == spec.name; });
        if (it == mf.index().end()) {
            report.fail(spec.name, "missing from the file");
            continue;
        }
        if (it->dims != spec.dims)
            report.fail(spec.name, "dims " + dims_str(it->dims) + " do not match the layout (" +
                                       dims_str(spec.dims) + ")");
        if (!spec.quantizable && it->dtype != StoredType::F32 && it->dtype != StoredType::F16)
            report.fail(spec.name, "must not be quantized");
    }
    for (const TensorIndexEntry& e : mf.index())
        if (!std::any_of(layout.begin(), layout.end(),
                         [&](const TensorSpec& s) { return s.name == e.name; }))
            report.fail(e.name, "not part of the model layout");

    return report;
}

ValidationReport validate_file(const std::string& path) {
    try {
        const ModelFile mf = open_model(path);
        return validate(mf);
    } catch (const std::exception& e) {
        ValidationReport report;
        report.fail("", e.what());
        return report;
    }
}

// ---- model production ----

void convert_f32_bundle(const std::string& dir, const std::string& manifest_path,
                        const ModelConfig& cfg, const std::string& out_path) {
    cfg.validate();
    std::ifstream manifest(manifest_path);
    if (!manifest) throw std::runtime_error("cannot open manifest '" + manifest_path + "'");

    struct Entry {
        std::vector<int64_t> dims;
        std::string file;
    };
    std::map<std::string, Entry> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(manifest, line)) {
        line_no++;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ss(line);
        std::string name;
        if (!(ss >> name) || name[0] == '#') continue;
        const std::string where = "manifest line " + std::to_string(line_no);
        int n_dims = 0;
        if (!(ss >> n_dims) || n_dims < 1 || n_dims > 4)
            throw format_error(where + ": bad dim count");
        Entry e;
        for (int i = 0; i < n_dims; i++) {
            int64_t d = 0;
            if (!(ss >> d) || d < 1) throw format_error(where + ": bad dimension");
            e.dims.push_back(d);
        }
        if (!(ss >> e.file)) throw format_error(where + ": missing filename");
        std::string extra;
        if (ss >> extra) throw format_error(where + ": trailing tokens");
        if (!entries.emplace(name, std::move(e)).second)
            throw format_error(where + ": duplicate tensor '" + name + "'");
    }

    const auto layout = model_layout(cfg);
    for (const auto& [name, e] : entries) {
        (void)e;
        if (!std::any_of(layout.begin(), layout.end(),
                         [&](const TensorSpec& s) { return s.name == name; }))
            throw format_error("manifest tensor '" + name + "' is not part of the model layout");
    }

    std::vector<TensorPlan> plan;
    std::vector<std::string> files;
    for (const TensorSpec& spec : layout) {
        auto it = entries.find(spec.name);
        if (it == entries.end())
            throw format_error("manifest is missing tensor '" + spec.name + "'");
        if (it->second.dims != spec.dims)
            throw format_error("manifest tensor '" + spec.name + "' has dims " +
                               dims_str(it->second.dims) + ", expected " + dims_str(spec.dims));
        plan.push_back({spec.name, StoredType::F32, spec.dims});
        files.push_back(dir + "/" + it->second.file);
    }

    for (size_t i = 0; i < plan.size(); i++) {
        struct stat st{};
        if (stat(files[i].c_str(), &st) != 0)
            throw format_error("missing file '" + files[i] + "' for tensor '" + plan[i].name +
                               "'");
        const uint64_t expect = entry_byte_len(StoredType::F32, plan[i].dims);
        if (static_cast<uint64_t>(st.st_size) != expect)
            throw format_error("file '" + files[i] + "' has " + std::to_string(st.st_size) +
                               " bytes, expected " + std::to_string(expect) + " for tensor '" +
                               plan[i].name + "'");
    }

    write_container(out_path, cfg, plan, [&](size_t i, const PayloadSink& sink) {
        std::ifstream in(files[i], std::ios::binary);
        if (!in) throw std::runtime_error("cannot open '" + files[i] + "'");
        std::vector<uint8_t> buf(1 << 20);
        while (in) {
            in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
            const auto got = in.gcount();
            if (got > 0) sink({buf.data(), static_cast<size_t>(got)});
        }
    });
}

QuantizeReport quantize_model(const std::string& in_path, FormatId format,
                              const std::string& out_path) {
    const ModelFile mf = open_model(in_path);
    for (const TensorIndexEntry& e : mf.index())
        if (e.dtype != StoredType::F32)
            throw format_error("'" + in_path + "' is not an all-F32 model: tensor '" + e.name +
                               "' is " + stored_type_name(e.dtype));

    QuantizeReport report;
    std::vector<TensorPlan> plan;
    for (const TensorIndexEntry& e : mf.index()) {
        const bool requantize = e.dims.size() == 2 && e.name != "tok_embed";
        TensorPlan p{e.name, requantize ? stored_type(format) : StoredType::F32, e.dims};
        const uint64_t after = entry_byte_len(p.dtype, p.dims);
        report.rows.push_back({e.name, e.dtype, p.dtype, e.byte_len, after});
        if (requantize) {
            report.rank2_bytes_before += e.byte_len;
            report.rank2_bytes_after += after;
        }
        plan.push_back(std::move(p));
    }

    write_container(out_path, mf.config(), plan, [&](size_t i, const PayloadSink& sink) {
        const TensorIndexEntry& e = mf.index()[i];
        const Weight w = mf.tensor(e.name);
        const Tensor& t = std::get<Tensor>(w);
        if (plan[i].dtype == StoredType::F32) {
            sink(t.bytes());
            return;
        }
        const int64_t rows = e.dims[0], cols = e.dims[1];
        const std::span<const float> data = t.f32();
        const int block_bytes = format_info(format).block_bytes;
        std::vector<uint8_t> row_buf(static_cast<size_t>(cols / kBlockLen) *
                                     static_cast<size_t>(block_bytes));
        for (int64_t r = 0; r < rows; r++) {
            const std::span<const float> row =
                data.subspan(static_cast<size_t>(r * cols), static_cast<size_t>(cols));
            for (int64_t b = 0; b < cols / kBlockLen; b++)
                quantize_block(row.subspan(static_cast<size_t>(b) * kBlockLen, kBlockLen), format,
                               std::span<uint8_t>(row_buf)
                                   .subspan(static_cast<size_t>(b) * static_cast<size_t>(block_bytes),
                                            static_cast<size_t>(block_bytes)));
            sink(row_buf);
        }
    });

    report.file_bytes_before = mf.file_bytes();
    struct stat st{};
    if (stat(out_path.c_str(), &st) != 0)
        throw std::runtime_error("cannot stat '" + out_path + "'");
    report.file_bytes_after = static_cast<uint64_t>(st.st_size);
    return report;
}

namespace {

// Box-Muller over one splitmix64 stream; emits values in draw order.
struct NormalGen {
    uint64_t state;
    float stddev;
    bool have_spare = false;
    double spare = 0.0;

    float next() {
        if (have_spare) {
            have_spare = false;
            return static_cast<float>(spare * stddev);
        }
        const double u1 = 1.0 - splitmix64_uniform(state);  // (0, 1], keeps log finite
        const double u2 = splitmix64_uniform(state);
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare = r * std::sin(a);
        have_spare = true;
        return static_cast<float>(r * std::cos(a) * stddev);
    }
};

}  // namespace

void init_random_model(const std::string& path, const ModelConfig& cfg, uint64_t seed) {
    const auto layout = model_layout(cfg);
    std::vector<TensorPlan> plan;
    plan.reserve(layout.size());
    for (const TensorSpec& spec : layout) plan.push_back({spec.name, StoredType::F32, spec.dims});

    NormalGen gen{seed, 0.02f};
    write_container(path, cfg, plan, [&](size_t i, const PayloadSink& sink) {
        int64_t left = shape_numel(plan[i].dims);
        std::vector<float> buf;
        buf.reserve(1 << 16);
        while (left > 0) {
            buf.clear();
            const int64_t n = std::min<int64_t>(left, 1 << 16);
            for (int64_t j = 0; j < n; j++) buf.push_back(gen.next());
            sink({reinterpret_cast<const uint8_t*>(buf.data()), buf.size() * 4});
            left -= n;
        }
    });
}

}  // namespace skt
