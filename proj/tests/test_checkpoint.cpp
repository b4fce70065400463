#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "psgd/checkpoint.hpp"
#include "psgd/models.hpp"
#include "psgd/optimizer.hpp"

using namespace psgd;
namespace fs = std::filesystem;

namespace {

struct Quadratic {
    QuadraticModel m;
    Evaluation operator()(std::span<const double> theta, const QuadraticBatch& b) const {
        return quad_evaluate(m, theta, b);
    }
};

OptimizerState mixed_state(std::uint64_t seed) {
    PreconditionerLayout layout =
        PreconditionerLayout().add_dense(3).add_kron(2, 3).add_limited_memory(5, 2);
    OptimizerOptions o;
    o.step = 0.01;
    o.update_every = 2;
    o.norm = StepNorm::max_abs_diag;
    Rng rng(seed);
    return make_state(rng.normal_vector(14), std::move(layout), o, seed);
}

Quadratic model14() {
    Rng rng(99);
    return {QuadraticModel{random_hessian(14, 1.0, true, rng), Vector{}, -10.0}};
}

void advance(OptimizerState& s, const Quadratic& q, Rng& data, int k) {
    for (int i = 0; i < k; ++i) step_in_place(s, q, quad_batch(q.m, data));
}

} // namespace

TEST(Checkpoint, BitwiseRoundTrip) {
    const Quadratic q = model14();
    OptimizerState s = mixed_state(3);
    Rng data(1);
    advance(s, q, data, 37);
    Checkpoint c{s, {{"stream", std::string("\x00\x01\xff", 3)}, {"note", "x"}}};
    const Checkpoint r = deserialize_checkpoint(serialize_checkpoint(c));
    EXPECT_EQ(r.state, s);
    EXPECT_EQ(r.extras, c.extras);
    EXPECT_EQ(serialize_checkpoint(r), serialize_checkpoint(c));

    OptimizerState plain = s;
    plain.options.criterion = std::nullopt;
    EXPECT_EQ(deserialize_checkpoint(serialize_checkpoint({plain, {}})).state, plain);
}

TEST(Checkpoint, ResumedRunMatchesUninterrupted) {
    const Quadratic q = model14();
    OptimizerState a = mixed_state(4);
    Rng data_a(2);
    advance(a, q, data_a, 20);

    const fs::path path = fs::temp_directory_path() / "psgd_ckpt_resume.bin";
    checkpoint_save(path, {a, {{"data", data_a.state()}}});
    advance(a, q, data_a, 30);

    Checkpoint c = checkpoint_load(path);
    Rng data_b;
    data_b.restore(c.extras.at("data"));
    advance(c.state, q, data_b, 30);
    EXPECT_EQ(c.state, a);
    EXPECT_FALSE(fs::exists(path.string() + ".tmp"));
}

TEST(Checkpoint, CorruptionDetected) {
    const std::string good = serialize_checkpoint({mixed_state(5), {}});
    auto kind_of = [](const std::string& bytes) {
        try {
            (void)deserialize_checkpoint(bytes);
        } catch (const Error& e) {
            return std::pair{e.kind(), std::string(e.what())};
        }
        return std::pair{ErrorKind::precondition, std::string("no error")};
    };

    std::string flipped = good;
    flipped[good.size() / 2] ^= 0x20;
    auto [k1, m1] = kind_of(flipped);
    EXPECT_EQ(k1, ErrorKind::checkpoint);
    EXPECT_NE(m1.find("checksum"), std::string::npos);

    std::string version = good;
    version[8] = 7;
    auto [k2, m2] = kind_of(version);
    EXPECT_EQ(k2, ErrorKind::checkpoint);
    EXPECT_NE(m2.find("incompatible checkpoint version 7"), std::string::npos);

    auto [k3, m3] = kind_of("NOTACKPT" + good.substr(8));
    EXPECT_NE(m3.find("magic"), std::string::npos);

    auto [k4, m4] = kind_of(good.substr(0, good.size() - 3));
    EXPECT_EQ(k4, ErrorKind::checkpoint);

    auto [k5, m5] = kind_of(good + "x");
    EXPECT_EQ(k5, ErrorKind::checkpoint);
}

TEST(Checkpoint, MissingFileIsIoError) {
    try {
        (void)checkpoint_load("/nonexistent/dir/ckpt");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::io);
    }
}
