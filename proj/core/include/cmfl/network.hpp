#pragma once

// Two-stream multi-head late-fusion classifier.
//
//   x_a -> branch A -> GAP -> e_p --+--> head A     -> p
//                                   |
//                                   +--> concat e_r -> head joint -> r
//                                   |
//   x_b -> branch B -> GAP -> e_q --+--> head B     -> q
//
// Each branch is `blocks_per_branch` x [3x3 conv (pad 1) -> ReLU -> 2x2 average
// pool] with the filter count doubling per block, followed by global average
// pooling and a linear map to `embedding_dim`. Input pixels in [0, 1] are
// mapped to [-1, 1] before the first convolution.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmfl/image.hpp"
#include "cmfl/losses.hpp"

namespace cmfl {

struct NetworkConfig {
    std::size_t input_height = 32;
    std::size_t input_width = 32;
    std::size_t channels_a = 3;
    std::size_t channels_b = 1;
    std::size_t blocks_per_branch = 3;
    std::size_t base_filters = 16;
    std::size_t embedding_dim = 64;
    std::uint64_t seed = 0;

    /// Throws ConfigError("incompatible geometry: ...") on invalid dimensions.
    void validate() const;
    /// Spatial size of each branch's feature map right before global pooling.
    [[nodiscard]] std::size_t final_height() const noexcept { return input_height >> blocks_per_branch; }
    [[nodiscard]] std::size_t final_width() const noexcept { return input_width >> blocks_per_branch; }
    [[nodiscard]] std::size_t filters_at(std::size_t block) const noexcept { return base_filters << block; }

    bool operator==(const NetworkConfig&) const = default;
};

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

struct ParamTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;
};

/// Network weights plus Adam state. Shapes are fixed by `config`.
struct ParameterSet {
    NetworkConfig config;
    std::vector<ParamTensor> tensors;
    std::vector<std::vector<double>> adam_m;
    std::vector<std::vector<double>> adam_v;
    std::uint64_t adam_step = 0;

    [[nodiscard]] std::size_t index_of(std::string_view name) const;
    [[nodiscard]] const ParamTensor& get(std::string_view name) const { return tensors[index_of(name)]; }
    [[nodiscard]] ParamTensor& get(std::string_view name) { return tensors[index_of(name)]; }
    [[nodiscard]] std::size_t parameter_count() const noexcept;
};

/// One gradient array per tensor of the matching ParameterSet.
struct Gradients {
    std::vector<std::vector<double>> per_tensor;

    [[nodiscard]] static Gradients zeros_like(const ParameterSet& params);
};

struct OptimizerConfig {
    double learning_rate = 1e-4;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const;
};

struct ForwardOutput {
    std::vector<double> e_p;
    std::vector<double> e_q;
    std::vector<double> e_r;
    double p = 0.5;
    double q = 0.5;
    double r = 0.5;
};

enum class Head { a, b, joint };

[[nodiscard]] std::string_view to_string(Head head) noexcept;
/// Accepts "A"/"a", "B"/"b", "joint". Throws ConfigError otherwise.
[[nodiscard]] Head parse_head(std::string_view text);

/// Deterministic He-style initialization from `config.seed`; biases are zero.
[[nodiscard]] ParameterSet init_network(const NetworkConfig& config);

[[nodiscard]] ForwardOutput forward(const ParameterSet& params, const Image& x_a, const Image& x_b);

/// Score of one head. A null image means the channel is unavailable; only the
/// channels required by `head` are read.
[[nodiscard]] double predict_score(const ParameterSet& params, const Image* x_a, const Image* x_b, Head head);

/// Batched per-head scores. `x_a`/`x_b` may be empty when `head` does not need them.
[[nodiscard]] std::vector<double> predict_scores(const ParameterSet& params, std::span<const Image* const> x_a,
                                                 std::span<const Image* const> x_b, Head head);

struct BatchItem {
    const Image* x_a = nullptr;
    const Image* x_b = nullptr;
    Label y = Label::bonafide;
};

/// Per-sample derivatives of the objective w.r.t. the three head probabilities.
struct HeadGradient {
    double d_p = 0.0;
    double d_q = 0.0;
    double d_r = 0.0;
};

struct BackwardResult {
    double loss = 0.0;
    std::vector<HeadOutputs> heads;
    Gradients grads;
};

/// Mean combined loss over the batch and its gradient for every parameter.
[[nodiscard]] BackwardResult backward(const ParameterSet& params, std::span<const BatchItem> batch,
                                      const LossParams& loss);

/// Cached forward pass over a batch; back-propagates arbitrary per-sample
/// head derivatives. Holds a reference to `params`, which must outlive it.
class BatchTrace {
public:
    BatchTrace(const ParameterSet& params, std::span<const BatchItem> batch);
    ~BatchTrace();
    BatchTrace(BatchTrace&&) noexcept;
    BatchTrace& operator=(BatchTrace&&) noexcept;
    BatchTrace(const BatchTrace&) = delete;
    BatchTrace& operator=(const BatchTrace&) = delete;

    [[nodiscard]] const std::vector<HeadOutputs>& heads() const noexcept;
    /// `head_grads[i]` is used as-is; include any 1/N batch scaling yourself.
    [[nodiscard]] Gradients backward(std::span<const HeadGradient> head_grads) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Mean combined loss only; used by finite-difference checks.
[[nodiscard]] double batch_objective(const ParameterSet& params, std::span<const BatchItem> batch,
                                     const LossParams& loss);

/// Adam with bias correction; weight decay is a decoupled multiplicative shrink
/// applied before the moment update.
void adam_step(ParameterSet& params, const Gradients& grads, const OptimizerConfig& opt);

}  // namespace cmfl
