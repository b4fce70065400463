#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <zlib.h>

#include "psgd/error.hpp"
#include "psgd/linalg.hpp"
#include "psgd/models.hpp"
#include "psgd/random.hpp"

namespace psgd {

// ---------------------------------------------------------------------------
// Zebra pattern
// ---------------------------------------------------------------------------

/// round(10^x1 − 10^x2) mod 2, as 0 or 1.
inline int zebra_label(double x1, double x2) {
    const double r = std::round(std::pow(10.0, x1) - std::pow(10.0, x2));
    const long long k = static_cast<long long>(r);
    return static_cast<int>(((k % 2) + 2) % 2);
}

/// Fresh uniform points of [0,1]², mapped to [−1,1]² when normalize is set.
inline LabeledBatch zebra_batch(Rng& rng, std::size_t batch, bool normalize = true) {
    LabeledBatch b{Matrix(batch, 2), std::vector<int>(batch), Matrix()};
    for (std::size_t i = 0; i < batch; ++i) {
        const double x1 = rng.uniform();
        const double x2 = rng.uniform();
        b.labels[i] = zebra_label(x1, x2);
        b.inputs(i, 0) = normalize ? 2.0 * x1 - 1.0 : x1;
        b.inputs(i, 1) = normalize ? 2.0 * x2 - 1.0 : x2;
    }
    return b;
}

// ---------------------------------------------------------------------------
// Addition problem
// ---------------------------------------------------------------------------

struct AdditionSample {
    Matrix sequence;  // 2 × length: values, marks
    double target = 0.0;
    std::size_t first = 0;
    std::size_t second = 0;
};

/// Row 1 ~ U[−0.5, 0.5]; row 2 marks two distinct uniform positions.
inline AdditionSample addition_sequence(Rng& rng, std::size_t length) {
    require(length >= 2, "addition_sequence: length must be at least 2");
    AdditionSample s{Matrix(2, length), 0.0, 0, 0};
    for (std::size_t t = 0; t < length; ++t) s.sequence(0, t) = rng.uniform(-0.5, 0.5);
    s.first = static_cast<std::size_t>(rng.below(length));
    s.second = static_cast<std::size_t>(rng.below(length - 1));
    if (s.second >= s.first) ++s.second;
    s.sequence(1, s.first) = 1.0;
    s.sequence(1, s.second) = 1.0;
    s.target = s.sequence(0, s.first) + s.sequence(0, s.second);
    return s;
}

inline SequenceBatch addition_batch(Rng& rng, std::size_t length, std::size_t batch) {
    SequenceBatch b;
    b.length = length;
    b.batch = batch;
    b.inputs = 2;
    b.x.assign(length * 2 * batch, 0.0);
    b.targets.resize(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        const AdditionSample s = addition_sequence(rng, length);
        for (std::size_t t = 0; t < length; ++t)
            for (std::size_t k = 0; k < 2; ++k) b.x[(t * 2 + k) * batch + i] = s.sequence(k, t);
        b.targets[i] = s.target;
    }
    return b;
}

// ---------------------------------------------------------------------------
// Equalizer signal
// ---------------------------------------------------------------------------

/**
 * Continuously running channel simulation producing sliding windows.
 *
 * Each batch advances the channel by `batch` samples; window k holds the
 * newest `taps` outputs ending at the k-th new sample, newest first.
 */
class EqualizerStream {
public:
    using Source = std::function<double()>;

    EqualizerStream(std::uint64_t seed, std::size_t taps = 21)
        : EqualizerStream(Source{}, taps) {
        rng_ = Rng(seed);
        source_ = [this] { return rng_.uniform(-1.0, 1.0); };
        prime();
    }

    /// Explicit source, e.g. an impulse for testing.
    EqualizerStream(Source source, std::size_t taps = 21)
        : taps_(taps), history_(taps, 0.0), source_(std::move(source)) {
        require(taps_ >= 1, "equalizer stream needs at least one tap");
        if (source_) prime();
    }

    EqualizerStream(const EqualizerStream&) = delete;
    EqualizerStream& operator=(const EqualizerStream&) = delete;

    EqualizerBatch next_batch(std::size_t batch = 10) {
        EqualizerBatch b{Matrix(batch, taps_)};
        for (std::size_t k = 0; k < batch; ++k) {
            advance();
            for (std::size_t i = 0; i < taps_; ++i) b.windows(k, i) = newest(i);
        }
        return b;
    }

    /// Next raw channel output.
    double next_output() {
        advance();
        return newest(0);
    }

    std::size_t taps() const noexcept { return taps_; }
    const Rng& rng() const noexcept { return rng_; }

    /// Replaces the full simulation state (seeded streams only).
    void restore(const Rng& rng, Channel channel, std::vector<double> history, std::size_t head) {
        require(history.size() == taps_, "equalizer stream: history length mismatch",
                ErrorKind::checkpoint);
        rng_ = rng;
        channel_ = channel;
        history_ = std::move(history);
        head_ = head % taps_;
    }

    const Channel& channel() const noexcept { return channel_; }
    const std::vector<double>& history() const noexcept { return history_; }
    std::size_t head() const noexcept { return head_; }

private:
    void prime() {
        for (std::size_t i = 0; i + 1 < taps_; ++i) advance();
    }

    void advance() {
        head_ = (head_ + 1) % taps_;
        history_[head_] = channel_.push(source_());
    }

    double newest(std::size_t lag) const { return history_[(head_ + taps_ - lag) % taps_]; }

    std::size_t taps_;
    std::vector<double> history_;
    std::size_t head_ = 0;
    Source source_;
    Channel channel_;
    Rng rng_;
};

// ---------------------------------------------------------------------------
// IDX files
// ---------------------------------------------------------------------------

struct IdxDataset {
    std::size_t count = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> images;  // count × rows × cols
    std::vector<std::uint8_t> labels;

    std::size_t features() const noexcept { return rows * cols; }

    /// Pixel p mapped to 2p/255 − 1.
    static double normalize(std::uint8_t p) { return 2.0 * static_cast<double>(p) / 255.0 - 1.0; }

    /// Normalized images of the given sample indices, one row each.
    Matrix normalized(const std::vector<std::size_t>& index) const {
        Matrix m(index.size(), features());
        for (std::size_t r = 0; r < index.size(); ++r) {
            const std::uint8_t* src = images.data() + index[r] * features();
            double* dst = m.row(r).data();
            for (std::size_t k = 0; k < features(); ++k) dst[k] = normalize(src[k]);
        }
        return m;
    }
};

namespace detail {

/// Whole file through zlib, so gzip and raw files read the same way.
inline std::vector<std::uint8_t> read_maybe_gz(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw Error(ErrorKind::io, "cannot open " + path);
    std::vector<std::uint8_t> out;
    std::uint8_t buf[1 << 16];
    int n = 0;
    while ((n = gzread(f, buf, sizeof buf)) > 0) out.insert(out.end(), buf, buf + n);
    const bool failed = n < 0;
    gzclose(f);
    if (failed) throw Error(ErrorKind::io, "read error in " + path);
    return out;
}

inline std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at, const std::string& what) {
    if (b.size() < at + 4) throw Error(ErrorKind::parse, "truncated header field: " + what);
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
           (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

inline void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes, bool gz) {
    gzFile f = gzopen(path.c_str(), gz ? "wb9" : "wbT");
    if (!f) throw Error(ErrorKind::io, "cannot create " + path);
    const int n = bytes.empty() ? 0 : gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    gzclose(f);
    if (n != static_cast<int>(bytes.size())) throw Error(ErrorKind::io, "write error in " + path);
}

} // namespace detail

inline constexpr std::uint32_t idx_image_magic = 2051;
inline constexpr std::uint32_t idx_label_magic = 2049;

/// Reads an IDX image/label pair; either may be gzip-compressed.
inline IdxDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto img = detail::read_maybe_gz(images_path);
    const auto lab = detail::read_maybe_gz(labels_path);

    const std::uint32_t im = detail::be32(img, 0, "image magic");
    if (im != idx_image_magic)
        throw Error(ErrorKind::parse, "image magic is " + std::to_string(im) + ", expected 2051");
    const std::uint32_t lm = detail::be32(lab, 0, "label magic");
    if (lm != idx_label_magic)
        throw Error(ErrorKind::parse, "label magic is " + std::to_string(lm) + ", expected 2049");

    IdxDataset d;
    d.count = detail::be32(img, 4, "image count");
    d.rows = detail::be32(img, 8, "image rows");
    d.cols = detail::be32(img, 12, "image cols");
    const std::size_t label_count = detail::be32(lab, 4, "label count");
    if (label_count != d.count)
        throw Error(ErrorKind::parse, "image count " + std::to_string(d.count) +
                                          " does not match label count " + std::to_string(label_count));
    const std::size_t pixels = d.count * d.rows * d.cols;
    if (img.size() != 16 + pixels)
        throw Error(ErrorKind::parse, "image payload has " + std::to_string(img.size() - 16) +
                                          " bytes, header implies " + std::to_string(pixels));
    if (lab.size() != 8 + d.count)
        throw Error(ErrorKind::parse, "label payload has " + std::to_string(lab.size() - 8) +
                                          " bytes, header implies " + std::to_string(d.count));
    d.images.assign(img.begin() + 16, img.end());
    d.labels.assign(lab.begin() + 8, lab.end());
    return d;
}

/// Writes an IDX pair (gzip when gz is set).
inline void save_idx(const IdxDataset& d, const std::string& images_path,
                     const std::string& labels_path, bool gz = false) {
    require(d.images.size() == d.count * d.rows * d.cols && d.labels.size() == d.count,
            "save_idx: inconsistent dataset");
    std::vector<std::uint8_t> img;
    detail::put_be32(img, idx_image_magic);
    detail::put_be32(img, static_cast<std::uint32_t>(d.count));
    detail::put_be32(img, static_cast<std::uint32_t>(d.rows));
    detail::put_be32(img, static_cast<std::uint32_t>(d.cols));
    img.insert(img.end(), d.images.begin(), d.images.end());
    std::vector<std::uint8_t> lab;
    detail::put_be32(lab, idx_label_magic);
    detail::put_be32(lab, static_cast<std::uint32_t>(d.count));
    lab.insert(lab.end(), d.labels.begin(), d.labels.end());
    detail::write_file(images_path, img, gz);
    detail::write_file(labels_path, lab, gz);
}

/// The given samples as a normalized labeled batch.
inline LabeledBatch idx_batch(const IdxDataset& d, const std::vector<std::size_t>& index) {
    LabeledBatch b{d.normalized(index), std::vector<int>(index.size()), Matrix()};
    for (std::size_t i = 0; i < index.size(); ++i) b.labels[i] = d.labels[index[i]];
    return b;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Uniform sampling of dataset indices with replacement.
class BatchSampler {
public:
    BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
        : size_(dataset_size), batch_(batch_size), rng_(seed) {
        if (size_ == 0) throw Error(ErrorKind::precondition, "batch sampler: empty dataset");
        require(batch_ >= 1 && batch_ <= size_, "batch sampler: batch size must lie in [1, dataset size]");
    }

    std::vector<std::size_t> next() {
        std::vector<std::size_t> idx(batch_);
        for (auto& i : idx) i = static_cast<std::size_t>(rng_.below(size_));
        return idx;
    }

    std::size_t batch_size() const noexcept { return batch_; }
    Rng& rng() noexcept { return rng_; }
    const Rng& rng() const noexcept { return rng_; }

private:
    std::size_t size_;
    std::size_t batch_;
    Rng rng_;
};

} // namespace psgd
