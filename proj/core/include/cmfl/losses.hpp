#pragma once

// Loss functions for the two-stream multi-head classifier. Every function is
// pure and returns its value together with analytic first derivatives.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace cmfl {

enum class Label : int { attack = 0, bonafide = 1 };

inline constexpr double kProbEps = 1e-7;

/// Clamp a probability into [kProbEps, 1 - kProbEps] before taking a log.
[[nodiscard]] double clamp_prob(double p) noexcept;

struct LossParams {
    double alpha_bonafide = 1.0;
    double alpha_attack = 1.0;
    double gamma = 3.0;
    double lambda = 0.5;
    /// Treat the cross-modal weight as a constant during differentiation.
    bool detach_weight = false;

    [[nodiscard]] double alpha_for(Label y) const noexcept {
        return y == Label::bonafide ? alpha_bonafide : alpha_attack;
    }
    /// Throws ConfigError on out-of-range values.
    void validate() const;
};

/// Value and partial derivatives. For single-argument losses only `d_p` is
/// used (derivative w.r.t. p_t); `cmfl` fills d_p/d_q w.r.t. (p_t, q_t);
/// `combined_loss` and `batch_loss` fill all three w.r.t. the raw head outputs.
struct LossValue {
    double value = 0.0;
    double d_p = 0.0;
    double d_q = 0.0;
    double d_r = 0.0;
};

[[nodiscard]] double target_prob(double p, Label y) noexcept;

[[nodiscard]] LossValue binary_ce(double p_t) noexcept;
[[nodiscard]] LossValue alpha_balanced_ce(double p_t, double alpha_t) noexcept;
[[nodiscard]] LossValue focal_loss(double p_t, double alpha_t, double gamma) noexcept;

/// Harmonic mean of (p_t, q_t) weighted by the other branch's probability q_t.
/// Asymmetric: cross_modal_weight(a, b) != cross_modal_weight(b, a) in general.
[[nodiscard]] double cross_modal_weight(double p_t, double q_t) noexcept;

/// Partials of cross_modal_weight w.r.t. its first and second arguments.
struct WeightGradient {
    double d_p = 0.0;
    double d_q = 0.0;
};
[[nodiscard]] WeightGradient cross_modal_weight_grad(double p_t, double q_t) noexcept;

[[nodiscard]] LossValue cmfl(double p_t, double q_t, double alpha_t, double gamma,
                             bool detach_weight = false) noexcept;

/// (1 - lambda) * CE(r_t) + lambda * (CMFL(p_t, q_t) + CMFL(q_t, p_t)).
[[nodiscard]] LossValue combined_loss(double p, double q, double r, Label y, const LossParams& params) noexcept;

struct HeadOutputs {
    double p = 0.5;
    double q = 0.5;
    double r = 0.5;
    Label y = Label::bonafide;
};

/// Mean of per-sample combined losses. Throws std::invalid_argument("empty batch").
[[nodiscard]] LossValue batch_loss(std::span<const HeadOutputs> samples, const LossParams& params);

struct FiniteDiffOptions {
    double step = 1e-6;
    /// Denominator floor for the relative error; below it the comparison is absolute.
    double relative_floor = 1e-4;
    /// Differentiable interior; a coordinate within `step` of a bound is rejected.
    double lower = kProbEps;
    double upper = 1.0 - kProbEps;
};

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
    std::vector<double> analytic;
    std::vector<double> numeric;
};

using ScalarFn = std::function<double(std::span<const double>)>;
using GradientFn = std::function<std::vector<double>(std::span<const double>)>;

/// Central-difference check of `gradient` against `value` at `point`.
/// Throws std::domain_error("non-differentiable point") when a coordinate sits
/// on (or within one step of) the clamp boundary.
[[nodiscard]] GradCheckReport finite_diff_check(const ScalarFn& value, const GradientFn& gradient,
                                                std::span<const double> point, const FiniteDiffOptions& opts = {});

}  // namespace cmfl
