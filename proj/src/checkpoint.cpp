#include "laser/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace laser {

namespace {

constexpr char kMagic[4] = {'L', 'A', 'S', 'R'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_f32(std::vector<std::uint8_t>& out, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

struct Reader {
    const std::vector<std::uint8_t>& buf;
    std::size_t at = 0;

    bool eof() const { return at >= buf.size(); }
    void need(std::size_t n, const char* what) const {
        if (at + n > buf.size())
            throw std::runtime_error(std::string("checkpoint: truncated ") + what);
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return buf[at++];
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = buf[at] | (static_cast<std::uint16_t>(buf[at + 1]) << 8);
        at += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[at + i]) << (8 * i);
        at += 4;
        return v;
    }
    float f32(const char* what) {
        const std::uint32_t v = u32(what);
        float f;
        std::memcpy(&f, &v, 4);
        return f;
    }
};

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

NamedTensor& Checkpoint::add(const std::string& name, std::vector<std::uint32_t> dims) {
    NamedTensor t;
    t.name = name;
    t.dims = std::move(dims);
    std::size_t n = 1;
    for (auto dim : t.dims) n *= dim;
    t.data.resize(n);
    tensors.push_back(std::move(t));
    return tensors.back();
}

void Checkpoint::add_matrix(const std::string& name, const Matrix& m) {
    auto& t = add(name, {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())});
    t.data = m.data();
}

void Checkpoint::add_vector(const std::string& name, const Vector& v) {
    auto& t = add(name, {static_cast<std::uint32_t>(v.dim())});
    t.data = v.data();
}

Matrix Checkpoint::matrix(const std::string& name) const {
    const NamedTensor* t = find(name);
    if (!t || t->dims.size() != 2)
        throw std::runtime_error("checkpoint: missing matrix tensor " + name);
    Matrix m(t->dims[0], t->dims[1]);
    m.data() = t->data;
    return m;
}

Vector Checkpoint::vector(const std::string& name) const {
    const NamedTensor* t = find(name);
    if (!t || t->dims.size() != 1)
        throw std::runtime_error("checkpoint: missing vector tensor " + name);
    Vector v(t->dims[0]);
    v.data() = t->data;
    return v;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u16(out, kVersion);

    const LaserConfig& c = ck.config;
    put_u32(out, static_cast<std::uint32_t>(c.seq_len));
    put_u32(out, static_cast<std::uint32_t>(c.embed_dim));
    put_u32(out, static_cast<std::uint32_t>(c.qk_dim));
    put_u32(out, static_cast<std::uint32_t>(c.segment_w));
    put_u32(out, static_cast<std::uint32_t>(c.gsta_layers));
    put_u32(out, static_cast<std::uint32_t>(c.ffn_ratio));
    put_u32(out, static_cast<std::uint32_t>(c.recent_k));
    put_u32(out, static_cast<std::uint32_t>(c.heads));
    put_u32(out, static_cast<std::uint32_t>(c.recency_buckets));
    put_f32(out, c.gamma);
    std::uint32_t flags = 0;
    if (c.sta_softmax) flags |= 1u;
    if (!c.fuse_full) flags |= 2u;
    if (!c.use_recency) flags |= 4u;
    put_u32(out, flags);

    for (const auto& t : ck.tensors) {
        if (t.name.size() > 0xffff) throw std::runtime_error("checkpoint: tensor name too long");
        put_u16(out, static_cast<std::uint16_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        out.push_back(static_cast<std::uint8_t>(t.dims.size()));
        std::size_t n = 1;
        for (auto dim : t.dims) {
            put_u32(out, dim);
            n *= dim;
        }
        if (n != t.data.size()) throw std::runtime_error("checkpoint: dims vs data " + t.name);
        for (float f : t.data) put_f32(out, f);
    }
    return out;
}

Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes};
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    r.at = 4;
    const std::uint16_t version = r.u16("version");
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

    Checkpoint ck;
    LaserConfig& c = ck.config;
    c.seq_len = r.u32("seq_len");
    c.embed_dim = r.u32("embed_dim");
    c.qk_dim = r.u32("qk_dim");
    c.segment_w = r.u32("segment_w");
    c.gsta_layers = r.u32("gsta_layers");
    c.ffn_ratio = r.u32("ffn_ratio");
    c.recent_k = r.u32("recent_k");
    c.heads = r.u32("heads");
    c.recency_buckets = r.u32("recency_buckets");
    c.gamma = r.f32("gamma");
    const std::uint32_t flags = r.u32("flags");
    c.sta_softmax = flags & 1u;
    c.fuse_full = !(flags & 2u);
    c.use_recency = !(flags & 4u);

    while (!r.eof()) {
        NamedTensor t;
        const std::uint16_t name_len = r.u16("tensor name length");
        r.need(name_len, "tensor name");
        t.name.assign(reinterpret_cast<const char*>(bytes.data() + r.at), name_len);
        r.at += name_len;
        const std::uint8_t rank = r.u8("tensor rank");
        std::size_t n = 1;
        for (std::uint8_t i = 0; i < rank; ++i) {
            t.dims.push_back(r.u32("tensor dim"));
            n *= t.dims.back();
        }
        t.data.resize(n);
        r.need(4 * n, "tensor payload");
        for (std::size_t i = 0; i < n; ++i) t.data[i] = r.f32("tensor payload");
        ck.tensors.push_back(std::move(t));
    }
    return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    const auto bytes = serialize_checkpoint(ck);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    const std::streamsize size = f.tellg();
    f.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f) throw std::runtime_error("checkpoint: short read from " + path);
    return parse_checkpoint(bytes);
}

void put_laser_params(Checkpoint& ck, const LaserParams& p) {
    ck.add_matrix("sta.w_q", p.sta.w_q);
    ck.add_matrix("sta.w_k", p.sta.w_k);
    ck.add_matrix("sta.w_v", p.sta.w_v);
    ck.add_matrix("sta.ffn_w1", p.sta.ffn_w1);
    ck.add_vector("sta.ffn_b1", p.sta.ffn_b1);
    ck.add_matrix("sta.ffn_w2", p.sta.ffn_w2);
    ck.add_vector("sta.ffn_b2", p.sta.ffn_b2);
    ck.add_vector("sta.ln_gain", p.sta.ln_gain);
    ck.add_vector("sta.ln_bias", p.sta.ln_bias);
    for (std::size_t i = 0; i < p.gsta.size(); ++i) {
        const std::string prefix = "gsta." + std::to_string(i) + ".";
        ck.add_matrix(prefix + "w_q", p.gsta[i].w_q);
        ck.add_matrix(prefix + "w_k", p.gsta[i].w_k);
        ck.add_matrix(prefix + "w_v", p.gsta[i].w_v);
    }
    ck.add_matrix("recency.table", p.recency.table);
    auto& edges = ck.add("recency.edges",
                         {static_cast<std::uint32_t>(p.recency.bucket_edges.size())});
    edges.data = p.recency.bucket_edges;
}

LaserParams get_laser_params(const Checkpoint& ck) {
    LaserParams p;
    p.sta.w_q = ck.matrix("sta.w_q");
    p.sta.w_k = ck.matrix("sta.w_k");
    p.sta.w_v = ck.matrix("sta.w_v");
    p.sta.ffn_w1 = ck.matrix("sta.ffn_w1");
    p.sta.ffn_b1 = ck.vector("sta.ffn_b1");
    p.sta.ffn_w2 = ck.matrix("sta.ffn_w2");
    p.sta.ffn_b2 = ck.vector("sta.ffn_b2");
    p.sta.ln_gain = ck.vector("sta.ln_gain");
    p.sta.ln_bias = ck.vector("sta.ln_bias");
    for (std::size_t i = 0; i < ck.config.gsta_layers; ++i) {
        const std::string prefix = "gsta." + std::to_string(i) + ".";
        GstaLayerParams layer;
        layer.w_q = ck.matrix(prefix + "w_q");
        layer.w_k = ck.matrix(prefix + "w_k");
        layer.w_v = ck.matrix(prefix + "w_v");
        p.gsta.push_back(std::move(layer));
    }
    p.recency.table = ck.matrix("recency.table");
    const NamedTensor* edges = ck.find("recency.edges");
    if (!edges) throw std::runtime_error("checkpoint: missing recency.edges");
    p.recency.bucket_edges = edges->data;
    return p;
}

}  // namespace laser
