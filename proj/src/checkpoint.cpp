#include "brio/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace brio::model {

namespace {

class Writer {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(std::string_view s) { out_.append(s); }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view in) : in_(in) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string_view bytes(std::size_t n) {
        need(n);
        auto s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) throw Error("checkpoint truncated");
    }
    std::string_view in_;
    std::size_t pos_ = 0;
};

void write_tensor(Writer& w, const std::string& name, const Tensor& t) {
    w.u64(name.size());
    w.bytes(name);
    w.u64(t.rank());
    for (std::size_t e : t.shape()) w.u64(e);
    for (double v : t.values()) w.f64(v);
}

}  // namespace

Checkpoint Checkpoint::fresh(const ModelConfig& cfg, std::uint64_t seed) {
    return Checkpoint{cfg, Parameters::init(cfg, seed), 0, {}, {}};
}

std::string serialize_checkpoint(const Checkpoint& c) {
    const bool has_moments = !c.adam_m.empty();
    if (has_moments && (c.adam_m.size() != c.params.size() || c.adam_v.size() != c.params.size())) {
        throw Error("checkpoint optimizer state does not match parameters");
    }
    Writer w;
    w.bytes(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    const ModelConfig& m = c.config;
    for (std::size_t v : {m.vocab_size, m.embed_dim, m.n_heads, m.n_enc_layers, m.n_dec_layers, m.ffn_dim,
                          m.max_src_len, m.max_tgt_len}) {
        w.u64(v);
    }
    w.f64(m.dropout_rate);
    w.u64(c.step_count);
    w.u64(c.params.size() * (has_moments ? 3 : 1));
    for (const auto& t : c.params.tensors) write_tensor(w, t.name, t.value);
    if (has_moments) {
        for (std::size_t i = 0; i < c.params.size(); ++i) write_tensor(w, "adam.m/" + c.params.tensors[i].name, c.adam_m[i]);
        for (std::size_t i = 0; i < c.params.size(); ++i) write_tensor(w, "adam.v/" + c.params.tensors[i].name, c.adam_v[i]);
    }
    return w.take();
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
    Reader r(bytes);
    if (r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) {
        throw Error("not a checkpoint (bad magic)");
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw Error("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint c;
    ModelConfig& m = c.config;
    for (std::size_t* f : {&m.vocab_size, &m.embed_dim, &m.n_heads, &m.n_enc_layers, &m.n_dec_layers, &m.ffn_dim,
                           &m.max_src_len, &m.max_tgt_len}) {
        *f = r.u64();
    }
    m.dropout_rate = r.f64();
    m.validate();
    c.step_count = r.u64();
    const std::uint64_t count = r.u64();
    std::vector<NamedTensor> all;
    for (std::uint64_t i = 0; i < count; ++i) {
        NamedTensor nt;
        nt.name = std::string(r.bytes(r.u64()));
        Shape shape(r.u64());
        for (auto& e : shape) e = r.u64();
        std::vector<double> values(shape_numel(shape));
        for (auto& v : values) v = r.f64();
        nt.value = Tensor(std::move(shape), std::move(values));
        all.push_back(std::move(nt));
    }
    if (!r.done()) {
        throw Error("trailing bytes after checkpoint tensors");
    }

    const auto specs = parameter_specs(m);
    if (all.size() != specs.size() && all.size() != 3 * specs.size()) {
        throw Error("checkpoint holds " + std::to_string(all.size()) + " tensors, config expects " +
                    std::to_string(specs.size()));
    }
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (all[i].name != specs[i].first || all[i].value.shape() != specs[i].second) {
            throw Error("checkpoint tensor '" + all[i].name + "' does not match expected '" + specs[i].first + "' " +
                        shape_str(specs[i].second));
        }
        c.params.tensors.push_back(std::move(all[i]));
    }
    if (!c.params.all_finite()) {
        throw Error("checkpoint contains non-finite parameters");
    }
    if (all.size() == 3 * specs.size()) {
        for (std::size_t i = 0; i < specs.size(); ++i) {
            auto& mt = all[specs.size() + i];
            auto& vt = all[2 * specs.size() + i];
            if (mt.name != "adam.m/" + specs[i].first || vt.name != "adam.v/" + specs[i].first ||
                mt.value.shape() != specs[i].second || vt.value.shape() != specs[i].second) {
                throw Error("checkpoint optimizer tensor mismatch at '" + specs[i].first + "'");
            }
            c.adam_m.push_back(std::move(mt.value));
            c.adam_v.push_back(std::move(vt.value));
        }
    }
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    const std::string bytes = serialize_checkpoint(c);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write checkpoint " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open checkpoint " + path.string());
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace brio::model
