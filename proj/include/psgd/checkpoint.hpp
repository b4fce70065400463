#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <variant>

#include <zlib.h>

#include "psgd/error.hpp"
#include "psgd/linalg.hpp"
#include "psgd/optimizer.hpp"
#include "psgd/precond.hpp"

namespace psgd {

inline constexpr char checkpoint_magic[8] = {'P', 'S', 'G', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t checkpoint_version = 1;

/// Optimizer state plus named opaque blobs (data-stream state and the like).
struct Checkpoint {
    OptimizerState state;
    std::map<std::string, std::string> extras;
};

namespace detail {

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int s = 0; s < 32; s += 8) u8(static_cast<std::uint8_t>(v >> s));
    }
    void u64(std::uint64_t v) {
        for (int s = 0; s < 64; s += 8) u8(static_cast<std::uint8_t>(v >> s));
    }
    void f64(double v) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, &v, sizeof bits);
        u64(bits);
    }
    void bytes(const std::string& s) {
        u64(s.size());
        out_ += s;
    }
    void vec(std::span<const double> v) {
        u64(v.size());
        for (double x : v) f64(x);
    }
    void mat(const Matrix& m) {
        u64(m.rows());
        u64(m.cols());
        for (double x : m.values()) f64(x);
    }
    const std::string& str() const noexcept { return out_; }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(const std::string& in) : in_(in) {}

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(in_[pos_++]);
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int s = 0; s < 32; s += 8) v |= std::uint32_t{u8()} << s;
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int s = 0; s < 64; s += 8) v |= std::uint64_t{u8()} << s;
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v = 0.0;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    std::string bytes() {
        const std::uint64_t n = u64();
        need(n);
        std::string s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    Vector vec() {
        const std::uint64_t n = u64();
        need(n * 8);
        Vector v(n);
        for (auto& x : v) x = f64();
        return v;
    }
    Matrix mat() {
        const std::uint64_t r = u64();
        const std::uint64_t c = u64();
        need(r * c * 8);
        Vector v(r * c);
        for (auto& x : v) x = f64();
        return Matrix(r, c, std::move(v));
    }
    bool done() const noexcept { return pos_ == in_.size(); }

private:
    void need(std::uint64_t n) const {
        if (n > in_.size() - pos_) throw Error(ErrorKind::checkpoint, "truncated checkpoint payload");
    }
    const std::string& in_;
    std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const std::string& s) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

inline void write_layout(Writer& w, const PreconditionerLayout& layout) {
    w.u64(layout.blocks().size());
    for (const auto& b : layout.blocks()) {
        w.u8(static_cast<std::uint8_t>(b.factor.index()));
        w.u64(b.offset);
        w.u64(b.length);
        std::visit(
            [&](const auto& f) {
                using T = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<T, TriFactor>) {
                    w.mat(f.matrix());
                } else if constexpr (std::is_same_v<T, KronBlock>) {
                    w.mat(f.factor.left.matrix());
                    w.mat(f.factor.right.matrix());
                } else {
                    w.mat(f.q11());
                    w.mat(f.q12());
                    w.vec(f.q22());
                }
            },
            b.factor);
    }
}

inline PreconditionerLayout read_layout(Reader& r) {
    const std::uint64_t n = r.u64();
    std::vector<LayoutBlock> blocks;
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::uint8_t tag = r.u8();
        LayoutBlock b;
        b.offset = r.u64();
        b.length = r.u64();
        switch (tag) {
            case 0: b.factor = TriFactor(r.mat()); break;
            case 1: {
                Matrix q1 = r.mat();
                Matrix q2 = r.mat();
                b.factor = KronBlock{KronFactor{TriFactor(std::move(q1)), TriFactor(std::move(q2))}};
                break;
            }
            case 2: {
                Matrix q11 = r.mat();
                Matrix q12 = r.mat();
                Vector q22 = r.vec();
                b.factor = LimitedMemoryTriFactor(std::move(q11), std::move(q12), std::move(q22));
                break;
            }
            default: throw Error(ErrorKind::checkpoint, "unknown layout block tag " + std::to_string(tag));
        }
        blocks.push_back(std::move(b));
    }
    return PreconditionerLayout(std::move(blocks));
}

} // namespace detail

/// Serialized checkpoint: magic, version, payload length, payload, crc32(payload).
inline std::string serialize_checkpoint(const Checkpoint& c) {
    detail::Writer p;
    const OptimizerState& s = c.state;
    p.u64(s.iteration);
    p.u64(s.gradient_evaluations);
    p.u64(s.preconditioner_updates);
    p.f64(s.options.step);
    p.f64(s.options.precond_step);
    p.f64(s.options.perturbation_scale);
    p.u64(s.options.update_every);
    p.u8(s.options.criterion ? static_cast<std::uint8_t>(*s.options.criterion) + 1 : 0);
    p.u8(static_cast<std::uint8_t>(s.options.norm));
    p.vec(s.theta);
    p.bytes(s.rng.state());
    detail::write_layout(p, s.layout);
    p.u64(c.extras.size());
    for (const auto& [k, v] : c.extras) {
        p.bytes(k);
        p.bytes(v);
    }

    detail::Writer out;
    for (char ch : checkpoint_magic) out.u8(static_cast<std::uint8_t>(ch));
    out.u32(checkpoint_version);
    out.bytes(p.str());
    out.u32(detail::crc32_of(p.str()));
    return out.str();
}

inline Checkpoint deserialize_checkpoint(const std::string& data) {
    detail::Reader r(data);
    for (char ch : checkpoint_magic)
        if (r.u8() != static_cast<std::uint8_t>(ch))
            throw Error(ErrorKind::checkpoint, "not a checkpoint file (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != checkpoint_version)
        throw Error(ErrorKind::checkpoint, "incompatible checkpoint version " + std::to_string(version) +
                                               " (this build reads version " +
                                               std::to_string(checkpoint_version) + ")");
    const std::string payload = r.bytes();
    const std::uint32_t crc = r.u32();
    if (!r.done()) throw Error(ErrorKind::checkpoint, "trailing bytes after checkpoint");
    if (crc != detail::crc32_of(payload))
        throw Error(ErrorKind::checkpoint, "checksum mismatch, checkpoint is corrupted");

    detail::Reader p(payload);
    Checkpoint c;
    OptimizerState& s = c.state;
    s.iteration = p.u64();
    s.gradient_evaluations = p.u64();
    s.preconditioner_updates = p.u64();
    s.options.step = p.f64();
    s.options.precond_step = p.f64();
    s.options.perturbation_scale = p.f64();
    s.options.update_every = p.u64();
    const std::uint8_t crit = p.u8();
    if (crit > 3) throw Error(ErrorKind::checkpoint, "bad criterion tag");
    s.options.criterion = crit == 0 ? std::nullopt : std::optional<Criterion>(static_cast<Criterion>(crit - 1));
    const std::uint8_t norm = p.u8();
    if (norm > 1) throw Error(ErrorKind::checkpoint, "bad norm tag");
    s.options.norm = static_cast<StepNorm>(norm);
    s.theta = p.vec();
    s.rng.restore(p.bytes());
    s.layout = detail::read_layout(p);
    const std::uint64_t n = p.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
        std::string k = p.bytes();
        c.extras[k] = p.bytes();
    }
    if (!p.done()) throw Error(ErrorKind::checkpoint, "trailing bytes in checkpoint payload");
    return c;
}

/// Writes atomically through a temporary file.
inline void checkpoint_save(const std::string& path, const Checkpoint& c) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error(ErrorKind::io, "cannot write checkpoint " + tmp);
        const std::string data = serialize_checkpoint(c);
        f.write(data.data(), static_cast<std::streamsize>(data.size()));
        if (!f) throw Error(ErrorKind::io, "write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint checkpoint_load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::io, "cannot open checkpoint " + path);
    const std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(data);
}

} // namespace psgd
