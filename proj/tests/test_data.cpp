#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "psgd/data.hpp"

using namespace psgd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "psgd_test_data";
    fs::create_directories(dir);
    return dir / name;
}

IdxDataset synthetic(std::size_t count, Rng& rng) {
    IdxDataset d{count, 4, 3, {}, {}};
    for (std::size_t i = 0; i < count * 12; ++i) d.images.push_back(static_cast<std::uint8_t>(rng.below(256)));
    for (std::size_t i = 0; i < count; ++i) d.labels.push_back(static_cast<std::uint8_t>(rng.below(10)));
    return d;
}

std::vector<std::uint8_t> read_raw(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_raw(const fs::path& p, const std::vector<std::uint8_t>& b) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

} // namespace

TEST(Zebra, Examples) {
    EXPECT_EQ(zebra_label(0.3, 0.3), 0);
    EXPECT_EQ(zebra_label(1.0, 0.0), 1);
    EXPECT_EQ(zebra_label(0.5, 0.0), 0);
    EXPECT_EQ(zebra_label(0.0, 1.0), 1);  // round(−9) = −9, nonnegative representative 1
}

TEST(Zebra, BothClassesPresent) {
    Rng rng(1);
    std::size_t ones = 0;
    const std::size_t n = 1000000;
    for (std::size_t i = 0; i < n; ++i) ones += zebra_label(rng.uniform(), rng.uniform());
    EXPECT_GE(ones, n / 4);
    EXPECT_LE(ones, 3 * n / 4);
}

TEST(Zebra, BatchNormalization) {
    Rng a(2), b(2);
    const LabeledBatch raw = zebra_batch(a, 50, false);
    const LabeledBatch norm = zebra_batch(b, 50, true);
    EXPECT_EQ(raw.labels, norm.labels);
    for (std::size_t i = 0; i < 50; ++i) {
        EXPECT_EQ(raw.labels[i], zebra_label(raw.inputs(i, 0), raw.inputs(i, 1)));
        EXPECT_DOUBLE_EQ(norm.inputs(i, 0), 2.0 * raw.inputs(i, 0) - 1.0);
    }
}

TEST(Addition, SelfConsistent) {
    Rng rng(3);
    for (int t = 0; t < 2000; ++t) {
        const AdditionSample s = addition_sequence(rng, 2 + t % 120);
        EXPECT_NE(s.first, s.second);
        double marks = 0.0, target = 0.0;
        for (std::size_t k = 0; k < s.sequence.cols(); ++k) {
            marks += s.sequence(1, k);
            target += s.sequence(1, k) * s.sequence(0, k);
            EXPECT_LE(std::abs(s.sequence(0, k)), 0.5);
        }
        EXPECT_EQ(marks, 2.0);
        EXPECT_EQ(s.target, target);
        EXPECT_LE(std::abs(s.target), 1.0);
    }
    EXPECT_THROW(addition_sequence(rng, 1), Error);
}

TEST(Addition, ReproducibleBatches) {
    Rng a(4), b(4);
    const SequenceBatch x = addition_batch(a, 100, 10), y = addition_batch(b, 100, 10);
    EXPECT_EQ(x.x, y.x);
    EXPECT_EQ(x.targets, y.targets);
    Rng c(4);
    const AdditionSample first = addition_sequence(c, 100);
    for (std::size_t t = 0; t < 100; ++t) EXPECT_EQ(x.at(t, 0, 0), first.sequence(0, t));
    EXPECT_EQ(x.targets[0], first.target);
}

TEST(EqualizerStream, ZeroSourceGivesZeroOutput) {
    EqualizerStream s([] { return 0.0; });
    const EqualizerBatch b = s.next_batch(10);
    for (double x : b.windows.values()) EXPECT_EQ(x, 0.0);
}

TEST(EqualizerStream, ImpulseReproducesChannel) {
    int k = 0;
    EqualizerStream s([&k] { return k++ == 0 ? 1.0 : 0.0; }, 21);
    const Vector h = channel_impulse_response();
    // Priming consumed 20 samples; the newest window holds h[20..0].
    const EqualizerBatch b = s.next_batch(1);
    for (std::size_t lag = 0; lag < 21; ++lag) EXPECT_EQ(b.windows(0, lag), h[20 - lag]);
    for (std::size_t t = 21; t < h.size(); ++t) EXPECT_EQ(s.next_output(), h[t]);
}

TEST(EqualizerStream, OutputVariance) {
    EqualizerStream s(5);
    const Vector h = channel_impulse_response();
    double energy = 0.0;
    for (double x : h) energy += x * x;
    double sum2 = 0.0;
    const int n = 400000;
    for (int i = 0; i < n; ++i) {
        const double y = s.next_output();
        sum2 += y * y;
    }
    EXPECT_NEAR(sum2 / n, energy / 3.0, 0.05 * energy / 3.0);
}

TEST(EqualizerStream, WindowsSlideAcrossBatches) {
    EqualizerStream a(6), b(6);
    const EqualizerBatch x = a.next_batch(10);
    const EqualizerBatch y = a.next_batch(10);
    for (std::size_t lag = 1; lag < 21; ++lag) EXPECT_EQ(y.windows(0, lag), x.windows(9, lag - 1));
    const EqualizerBatch x2 = b.next_batch(10);
    EXPECT_EQ(x.windows, x2.windows);
}

TEST(Idx, RoundTripIsBitExact) {
    Rng rng(7);
    const IdxDataset d = synthetic(37, rng);
    for (bool gz : {false, true}) {
        const fs::path img = scratch(gz ? "rt-img.gz" : "rt-img"), lab = scratch(gz ? "rt-lab.gz" : "rt-lab");
        save_idx(d, img, lab, gz);
        const IdxDataset r = load_idx(img, lab);
        EXPECT_EQ(r.count, 37u);
        EXPECT_EQ(r.rows, 4u);
        EXPECT_EQ(r.cols, 3u);
        EXPECT_EQ(r.images, d.images);
        EXPECT_EQ(r.labels, d.labels);
        if (!gz) {
            const auto bytes = read_raw(img);
            EXPECT_EQ(bytes.size(), 16u + 37u * 12u);
            EXPECT_EQ(bytes[2], 0x08);
            EXPECT_EQ(bytes[3], 0x03);
        }
    }
}

TEST(Idx, NormalizationEndpoints) {
    EXPECT_EQ(IdxDataset::normalize(0), -1.0);
    EXPECT_EQ(IdxDataset::normalize(255), 1.0);
    IdxDataset d{2, 1, 2, {0, 255, 51, 204}, {3, 4}};
    const LabeledBatch b = idx_batch(d, {1, 0});
    EXPECT_EQ(b.labels, (std::vector<int>{4, 3}));
    EXPECT_EQ(b.inputs(1, 0), -1.0);
    EXPECT_EQ(b.inputs(1, 1), 1.0);
    EXPECT_DOUBLE_EQ(b.inputs(0, 0), -0.6);
}

TEST(Idx, CorruptionIsRejected) {
    Rng rng(8);
    const IdxDataset d = synthetic(5, rng);
    const fs::path img = scratch("bad-img"), lab = scratch("bad-lab");
    auto expect_parse = [&](const std::string& needle) {
        try {
            (void)load_idx(img, lab);
            FAIL() << needle;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::parse);
            EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
        }
    };

    save_idx(d, img, lab);
    auto bytes = read_raw(img);
    bytes[3] = 0x01;
    write_raw(img, bytes);
    expect_parse("image magic");

    save_idx(d, img, lab);
    bytes = read_raw(lab);
    bytes[3] = 0x03;
    write_raw(lab, bytes);
    expect_parse("label magic");

    save_idx(d, img, lab);
    bytes = read_raw(img);
    bytes.resize(bytes.size() - 1);
    write_raw(img, bytes);
    expect_parse("image payload");

    save_idx(d, img, lab);
    bytes = read_raw(lab);
    bytes[7] = 4;
    write_raw(lab, bytes);
    expect_parse("label count");

    write_raw(img, {0, 0, 8});
    expect_parse("truncated");

    try {
        (void)load_idx(scratch("missing-img"), lab);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::io);
    }
}

TEST(Idx, BundledSubsetLoads) {
    const char* env = std::getenv("PSGD_DATA_DIR");
    const fs::path dir = env ? fs::path(env) : fs::path(PSGD_SOURCE_DIR) / "data" / "mnist";
    const IdxDataset train = load_idx(dir / "train-images-idx3-ubyte.gz", dir / "train-labels-idx1-ubyte.gz");
    const IdxDataset test = load_idx(dir / "t10k-images-idx3-ubyte.gz", dir / "t10k-labels-idx1-ubyte.gz");
    EXPECT_EQ(train.rows, 28u);
    EXPECT_EQ(train.cols, 28u);
    EXPECT_EQ(train.count, 10000u);
    EXPECT_EQ(test.count, 10000u);
    std::set<int> classes(train.labels.begin(), train.labels.end());
    EXPECT_EQ(classes.size(), 10u);
}

TEST(Sampler, Contract) {
    EXPECT_THROW(BatchSampler(0, 1, 1), Error);
    EXPECT_THROW(BatchSampler(10, 11, 1), Error);
    BatchSampler a(600, 100, 9), b(600, 100, 9);
    for (int i = 0; i < 60; ++i) {
        const auto x = a.next();
        EXPECT_EQ(x, b.next());
        EXPECT_EQ(x.size(), 100u);
        for (auto k : x) EXPECT_LT(k, 600u);
    }
    // With replacement: a full-size batch repeats indices almost surely.
    BatchSampler full(50, 50, 10);
    const auto idx = full.next();
    EXPECT_LT(std::set<std::size_t>(idx.begin(), idx.end()).size(), 50u);
}
