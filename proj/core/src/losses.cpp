#include "cmfl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cmfl/error.hpp"

namespace cmfl {

namespace {

constexpr double kWeightDenominatorFloor = 1e-12;

// d/dp_t of ln(clamp(p_t)); zero where the clamp is active.
double log_clamped_slope(double p_t) noexcept {
    if (p_t <= kProbEps || p_t >= 1.0 - kProbEps) return 0.0;
    return 1.0 / p_t;
}

}  // namespace

double clamp_prob(double p) noexcept { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

void LossParams::validate() const {
    if (!(alpha_bonafide >= 0.0) || !(alpha_attack >= 0.0)) throw ConfigError("loss alpha must be >= 0");
    if (!(gamma >= 0.0)) throw ConfigError("loss gamma must be >= 0");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("loss lambda must lie in [0, 1]");
}

double target_prob(double p, Label y) noexcept { return y == Label::bonafide ? p : 1.0 - p; }

LossValue binary_ce(double p_t) noexcept { return alpha_balanced_ce(p_t, 1.0); }

LossValue alpha_balanced_ce(double p_t, double alpha_t) noexcept {
    LossValue out;
    out.value = -alpha_t * std::log(clamp_prob(p_t));
    out.d_p = -alpha_t * log_clamped_slope(p_t);
    return out;
}

LossValue focal_loss(double p_t, double alpha_t, double gamma) noexcept {
    if (gamma == 0.0) return alpha_balanced_ce(p_t, alpha_t);
    const double log_p = std::log(clamp_prob(p_t));
    const double one_minus = 1.0 - p_t;
    const double modulator = std::pow(one_minus, gamma);
    LossValue out;
    out.value = -alpha_t * modulator * log_p;
    // d/dp [(1-p)^g] = -g (1-p)^(g-1)
    const double d_modulator = one_minus > 0.0 ? -gamma * std::pow(one_minus, gamma - 1.0) : 0.0;
    out.d_p = -alpha_t * (d_modulator * log_p + modulator * log_clamped_slope(p_t));
    return out;
}

double cross_modal_weight(double p_t, double q_t) noexcept {
    const double sum = p_t + q_t;
    if (sum < kWeightDenominatorFloor) return 0.0;
    return q_t * (2.0 * p_t * q_t) / sum;
}

WeightGradient cross_modal_weight_grad(double p_t, double q_t) noexcept {
    // w = 2 p q^2 / (p + q)
    const double sum = p_t + q_t;
    if (sum < kWeightDenominatorFloor) return {};
    const double sum2 = sum * sum;
    return {2.0 * q_t * q_t * q_t / sum2, 2.0 * p_t * q_t * (q_t + 2.0 * p_t) / sum2};
}

LossValue cmfl(double p_t, double q_t, double alpha_t, double gamma, bool detach_weight) noexcept {
    if (gamma == 0.0) return alpha_balanced_ce(p_t, alpha_t);

    const double w = cross_modal_weight(p_t, q_t);
    const double log_p = std::log(clamp_prob(p_t));
    const double one_minus = 1.0 - w;
    const double modulator = std::pow(one_minus, gamma);

    LossValue out;
    out.value = -alpha_t * modulator * log_p;
    out.d_p = -alpha_t * modulator * log_clamped_slope(p_t);
    if (!detach_weight && one_minus > 0.0) {
        // d/dw [-(1-w)^g ln p] = g (1-w)^(g-1) ln p
        const double d_w = alpha_t * gamma * std::pow(one_minus, gamma - 1.0) * log_p;
        const WeightGradient wg = cross_modal_weight_grad(p_t, q_t);
        out.d_p += d_w * wg.d_p;
        out.d_q = d_w * wg.d_q;
    }
    return out;
}

LossValue combined_loss(double p, double q, double r, Label y, const LossParams& params) noexcept {
    const double p_t = target_prob(p, y);
    const double q_t = target_prob(q, y);
    const double r_t = target_prob(r, y);
    const double alpha = params.alpha_for(y);
    const double sign = y == Label::bonafide ? 1.0 : -1.0;

    const LossValue joint = binary_ce(r_t);
    const LossValue branch_p = cmfl(p_t, q_t, alpha, params.gamma, params.detach_weight);
    const LossValue branch_q = cmfl(q_t, p_t, alpha, params.gamma, params.detach_weight);

    const double lam = params.lambda;
    LossValue out;
    out.value = (1.0 - lam) * joint.value + lam * (branch_p.value + branch_q.value);
    out.d_p = sign * lam * (branch_p.d_p + branch_q.d_q);
    out.d_q = sign * lam * (branch_p.d_q + branch_q.d_p);
    out.d_r = sign * (1.0 - lam) * joint.d_p;
    return out;
}

LossValue batch_loss(std::span<const HeadOutputs> samples, const LossParams& params) {
    if (samples.empty()) throw std::invalid_argument("empty batch");
    LossValue total;
    for (const HeadOutputs& s : samples) {
        const LossValue v = combined_loss(s.p, s.q, s.r, s.y, params);
        total.value += v.value;
        total.d_p += v.d_p;
        total.d_q += v.d_q;
        total.d_r += v.d_r;
    }
    const double n = static_cast<double>(samples.size());
    total.value /= n;
    total.d_p /= n;
    total.d_q /= n;
    total.d_r /= n;
    return total;
}

GradCheckReport finite_diff_check(const ScalarFn& value, const GradientFn& gradient, std::span<const double> point,
                                  const FiniteDiffOptions& opts) {
    const double h = opts.step;
    for (const double x : point) {
        if (!(x - h > opts.lower && x + h < opts.upper)) throw std::domain_error("non-differentiable point");
    }

    GradCheckReport report;
    report.analytic = gradient(point);
    if (report.analytic.size() != point.size())
        throw std::invalid_argument("gradient dimension does not match point dimension");

    std::vector<double> probe(point.begin(), point.end());
    report.numeric.resize(point.size());
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double x0 = probe[i];
        probe[i] = x0 + h;
        const double up = value(probe);
        probe[i] = x0 - h;
        const double down = value(probe);
        probe[i] = x0;
        report.numeric[i] = (up - down) / (2.0 * h);

        const double a = report.analytic[i];
        const double n = report.numeric[i];
        const double denom = std::max({std::abs(a), std::abs(n), opts.relative_floor});
        const double rel = std::abs(a - n) / denom;
        if (rel > report.max_relative_error) {
            report.max_relative_error = rel;
            report.worst_index = i;
        }
    }
    return report;
}

}  // namespace cmfl
