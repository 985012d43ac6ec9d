#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <random>
#include <vector>

#include "cmfl/checkpoint.hpp"
#include "support.hpp"

using namespace cmfl;
using cmfl::test::TempDir;
using cmfl::test::tiny_network;

namespace {

ParameterSet trained_params() {
    ParameterSet p = init_network(tiny_network());
    Gradients g = Gradients::zeros_like(p);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& t : g.per_tensor)
        for (double& v : t) v = n(rng);
    adam_step(p, g, OptimizerConfig{});
    adam_step(p, g, OptimizerConfig{});
    return p;
}

std::vector<char> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::filesystem::path& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

CheckpointError::Kind load_error(const std::filesystem::path& path) {
    try {
        (void)load_checkpoint(path);
    } catch (const CheckpointError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "load succeeded";
    return CheckpointError::Kind::io;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
    TempDir dir("ckpt");
    const ParameterSet p = trained_params();
    save_checkpoint(p, dir.path() / "c.bin");
    const ParameterSet q = load_checkpoint(dir.path() / "c.bin");

    EXPECT_EQ(q.config, p.config);
    EXPECT_EQ(q.adam_step, 2u);
    ASSERT_EQ(q.tensors.size(), p.tensors.size());
    for (std::size_t k = 0; k < p.tensors.size(); ++k) {
        EXPECT_EQ(q.tensors[k].name, p.tensors[k].name);
        EXPECT_EQ(q.tensors[k].shape, p.tensors[k].shape);
        EXPECT_EQ(q.tensors[k].values, p.tensors[k].values);
        EXPECT_EQ(q.adam_m[k], p.adam_m[k]);
        EXPECT_EQ(q.adam_v[k], p.adam_v[k]);
    }

    std::mt19937_64 rng(5);
    const Image xa = cmfl::test::random_image(3, 8, rng), xb = cmfl::test::random_image(1, 8, rng);
    const ForwardOutput a = forward(p, xa, xb), b = forward(q, xa, xb);
    EXPECT_EQ(a.p, b.p);
    EXPECT_EQ(a.q, b.q);
    EXPECT_EQ(a.r, b.r);

    // Saving the loaded copy reproduces the same bytes.
    save_checkpoint(q, dir.path() / "d.bin");
    EXPECT_EQ(slurp(dir.path() / "c.bin"), slurp(dir.path() / "d.bin"));
}

TEST(Checkpoint, Float32RoundsOnce) {
    TempDir dir("ckpt32");
    const ParameterSet p = trained_params();
    save_checkpoint(p, dir.path() / "c.bin", StoragePrecision::f32);
    const ParameterSet q = load_checkpoint(dir.path() / "c.bin");
    for (std::size_t k = 0; k < p.tensors.size(); ++k)
        for (std::size_t i = 0; i < p.tensors[k].values.size(); ++i)
            EXPECT_EQ(q.tensors[k].values[i], static_cast<double>(static_cast<float>(p.tensors[k].values[i])));
}

TEST(Checkpoint, HeaderLayout) {
    TempDir dir("ckpthdr");
    save_checkpoint(trained_params(), dir.path() / "c.bin");
    const auto bytes = slurp(dir.path() / "c.bin");
    ASSERT_GE(bytes.size(), 12u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "CMFLCKPT");
    EXPECT_EQ(bytes[8], 1);
    EXPECT_EQ(bytes[9], 0);
}

TEST(Checkpoint, Errors) {
    TempDir dir("ckpterr");
    const auto good = dir.path() / "c.bin";
    save_checkpoint(trained_params(), good);
    const auto bytes = slurp(good);

    EXPECT_EQ(load_error(dir.path() / "missing.bin"), CheckpointError::Kind::io);

    auto bad = bytes;
    bad[0] = 'X';
    spit(dir.path() / "magic.bin", bad);
    EXPECT_EQ(load_error(dir.path() / "magic.bin"), CheckpointError::Kind::bad_format);

    bad = bytes;
    bad[8] = 9;
    spit(dir.path() / "version.bin", bad);
    EXPECT_EQ(load_error(dir.path() / "version.bin"), CheckpointError::Kind::version_mismatch);

    bad.assign(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 2));
    spit(dir.path() / "short.bin", bad);
    EXPECT_EQ(load_error(dir.path() / "short.bin"), CheckpointError::Kind::truncated);

    bad = bytes;
    bad.push_back('\0');
    spit(dir.path() / "trailing.bin", bad);
    EXPECT_EQ(load_error(dir.path() / "trailing.bin"), CheckpointError::Kind::bad_format);
}

TEST(Checkpoint, ShapeMismatchAgainstEmbeddedConfig) {
    TempDir dir("ckptshape");
    // Weights of an 8-filter network under a header that declares 4 filters.
    NetworkConfig wide = tiny_network();
    wide.base_filters = 8;
    ParameterSet p = init_network(wide);
    p.config.base_filters = 4;
    save_checkpoint(p, dir.path() / "c.bin");
    EXPECT_EQ(load_error(dir.path() / "c.bin"), CheckpointError::Kind::shape_mismatch);
}
