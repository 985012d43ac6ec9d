#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <span>
#include <random>
#include <string>

#include <unistd.h>

#include "cmfl/datagen.hpp"
#include "cmfl/datasets.hpp"
#include "cmfl/harness.hpp"
#include "cmfl/network.hpp"

namespace cmfl::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("cmfl_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    [[nodiscard]] const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline NetworkConfig tiny_network(std::size_t size = 8) {
    NetworkConfig c;
    c.input_height = c.input_width = size;
    c.blocks_per_branch = 2;
    c.base_filters = 4;
    c.embedding_dim = 6;
    return c;
}

inline Image random_image(std::size_t channels, std::size_t size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(channels, size, size);
    for (double& v : img.pixels) v = u(rng);
    return img;
}

inline GeneratorSpec small_spec(std::uint64_t seed = 0) {
    GeneratorSpec s;
    s.image_size = 16;
    s.n_identities = 6;
    s.samples_per_identity = 4;
    s.seed = seed;
    return s;
}

/// Small, fast training config matched to small_spec().
inline TrainConfig small_train(std::uint64_t seed = 0) {
    TrainConfig c = TrainConfig::desk_scale();
    c.network = tiny_network(16);
    c.epochs = 2;
    c.batch_size = 16;
    c.seed = seed;
    return c;
}

/// Independently coded objective for gamma = 0: mean over the batch of
/// (1 - lambda) * BCE(r) + lambda * (BCE(p) + BCE(q)), with BCE(x) = -ln(clamp(x_t)).
/// Returns the loss and per-sample derivatives w.r.t. the raw head outputs.
struct BceReference {
    double loss = 0.0;
    std::vector<HeadGradient> head_grads;
};

inline BceReference bce_reference(std::span<const HeadOutputs> heads, double lambda) {
    const double lo = 1e-7, hi = 1.0 - 1e-7;
    const double n = static_cast<double>(heads.size());
    BceReference ref;
    for (const HeadOutputs& h : heads) {
        const bool bona = h.y == Label::bonafide;
        auto term = [&](double raw, double& d) {
            const double t = bona ? raw : 1.0 - raw;
            const double c = std::min(std::max(t, lo), hi);
            d = (c == t) ? (bona ? -1.0 / t : 1.0 / t) / n : 0.0;
            return -std::log(c);
        };
        HeadGradient g;
        const double lp = term(h.p, g.d_p), lq = term(h.q, g.d_q), lr = term(h.r, g.d_r);
        ref.loss += ((1.0 - lambda) * lr + lambda * (lp + lq)) / n;
        g.d_p *= lambda;
        g.d_q *= lambda;
        g.d_r *= 1.0 - lambda;
        ref.head_grads.push_back(g);
    }
    return ref;
}

}  // namespace cmfl::test
