#include "plora/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "plora/errors.hpp"

namespace plora {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[8] = {'P', 'L', 'O', 'R', 'A', 'C', 'K', 'P'};

class Writer {
public:
    explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
        if (!out_) throw DataError("cannot write checkpoint " + path.string());
    }
    void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void u64(std::uint64_t v) { bytes(&v, 8); }
    void f64(double v) { bytes(&v, 8); }
    void doubles(std::span<const double> v) { bytes(v.data(), v.size() * sizeof(double)); }
    void matrix(const Matrix& m) {
        u64(m.rows());
        u64(m.cols());
        doubles(m.data());
    }
    void vec(const std::vector<double>& v) {
        u64(v.size());
        doubles(v);
    }
    void finish() {
        out_.flush();
        if (!out_) throw DataError("checkpoint write failed");
    }

private:
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
        if (!in_) throw DataError("cannot open checkpoint " + path.string());
    }
    void bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!in_) throw DataError("truncated checkpoint");
    }
    std::uint8_t u8() { std::uint8_t v; bytes(&v, 1); return v; }
    std::uint32_t u32() { std::uint32_t v; bytes(&v, 4); return v; }
    std::uint64_t u64() { std::uint64_t v; bytes(&v, 8); return v; }
    double f64() { double v; bytes(&v, 8); return v; }
    std::size_t count() {
        const std::uint64_t n = u64();
        if (n > (std::uint64_t{1} << 32)) throw DataError("implausible size in checkpoint");
        return static_cast<std::size_t>(n);
    }
    Matrix matrix() {
        const std::size_t r = count(), c = count();
        std::vector<double> d(r * c);
        bytes(d.data(), d.size() * sizeof(double));
        return Matrix(r, c, std::move(d));
    }
    std::vector<double> vec() {
        std::vector<double> v(count());
        bytes(v.data(), v.size() * sizeof(double));
        return v;
    }
    std::vector<std::uint8_t> bits() {
        std::vector<std::uint8_t> v(count());
        bytes(v.data(), v.size());
        return v;
    }
    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

private:
    std::ifstream in_;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    Writer w(path);
    w.bytes(kMagic, sizeof kMagic);
    w.u32(kCheckpointVersion);
    const ModelParams& base = ckpt.model.base;
    w.u64(base.input_dim);
    w.u64(base.num_classes);
    w.u64(base.layers.size());
    for (const auto& l : base.layers) {
        w.u8(static_cast<std::uint8_t>(l.role));
        w.u8(static_cast<std::uint8_t>(l.activation));
        w.matrix(l.weight);
        w.vec(l.bias);
    }
    w.u64(ckpt.model.lora.size());
    for (const auto& [li, blk] : ckpt.model.lora) {
        w.u64(li);
        w.u64(blk.rank);
        w.f64(blk.beta);
        w.matrix(blk.a);
        w.matrix(blk.b);
    }
    w.u64(ckpt.model.adapters.size());
    for (const auto& [li, ad] : ckpt.model.adapters) {
        w.u64(li);
        w.u64(ad.rank);
        w.matrix(ad.down);
        w.vec(ad.down_bias);
        w.matrix(ad.up);
        w.vec(ad.up_bias);
    }
    w.u8(ckpt.mask ? 1 : 0);
    if (ckpt.mask) {
        const SparseMask& m = *ckpt.mask;
        w.f64(m.density());
        w.u64(m.seed());
        w.u64(m.layers());
        for (std::size_t l = 0; l < m.layers(); ++l) {
            w.u64(m.weight_bits()[l].size());
            w.bytes(m.weight_bits()[l].data(), m.weight_bits()[l].size());
            w.u64(m.bias_bits()[l].size());
            w.bytes(m.bias_bits()[l].data(), m.bias_bits()[l].size());
        }
    }
    w.finish();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    Reader r(path);
    char magic[8];
    r.bytes(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw DataError("not a checkpoint: " + path.string());
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ck;
    ModelParams& base = ck.model.base;
    base.input_dim = r.count();
    base.num_classes = r.count();
    const std::size_t depth = r.count();
    for (std::size_t i = 0; i < depth; ++i) {
        DenseLayer l;
        const std::uint8_t role = r.u8(), act = r.u8();
        if (role > 3 || act > 1) throw DataError("bad layer tag in checkpoint");
        l.role = static_cast<LayerRole>(role);
        l.activation = static_cast<Activation>(act);
        l.weight = r.matrix();
        l.bias = r.vec();
        base.layers.push_back(std::move(l));
    }
    base.validate();
    const std::size_t n_lora = r.count();
    for (std::size_t i = 0; i < n_lora; ++i) {
        LoraBlock b;
        b.layer = r.count();
        b.rank = r.count();
        b.beta = r.f64();
        b.a = r.matrix();
        b.b = r.matrix();
        ck.model.lora.emplace(b.layer, std::move(b));
    }
    const std::size_t n_ad = r.count();
    for (std::size_t i = 0; i < n_ad; ++i) {
        AdapterBlock a;
        a.layer = r.count();
        a.rank = r.count();
        a.down = r.matrix();
        a.down_bias = r.vec();
        a.up = r.matrix();
        a.up_bias = r.vec();
        ck.model.adapters.emplace(a.layer, std::move(a));
    }
    if (r.u8()) {
        const double density = r.f64();
        const std::uint64_t seed = r.u64();
        const std::size_t layers = r.count();
        SparseMask::Bits wb, bb;
        for (std::size_t l = 0; l < layers; ++l) {
            wb.push_back(r.bits());
            bb.push_back(r.bits());
        }
        ck.mask = SparseMask(std::move(wb), std::move(bb), density, seed);
        if (!ck.mask->congruent(base)) throw DataError("checkpoint mask does not match model");
    }
    if (!r.at_end()) throw DataError("trailing bytes in checkpoint");
    return ck;
}

}  // namespace plora
