#pragma once

// ISO/IEC 30107-3 style error rates. Decision convention: a score at or above
// the threshold is classified bonafide (ties go bonafide). Candidate
// thresholds are -inf, the midpoints between adjacent distinct scores, and
// +inf.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmfl/losses.hpp"
#include "cmfl/network.hpp"

namespace cmfl {

struct LabeledScore {
    double score = 0.0;
    Label label = Label::bonafide;
};

enum class ThresholdRule { bpcer_at_target, eer, fixed };

[[nodiscard]] std::string_view to_string(ThresholdRule rule) noexcept;
[[nodiscard]] ThresholdRule parse_threshold_rule(std::string_view text);

struct MetricsReport {
    double threshold = 0.0;
    ThresholdRule threshold_rule = ThresholdRule::fixed;
    double apcer = 0.0;
    double bpcer = 0.0;
    double acer = 0.0;
    double far = 0.0;
    double frr = 0.0;
    double hter = 0.0;
    std::size_t n_attack = 0;
    std::size_t n_bonafide = 0;
};

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

[[nodiscard]] Label classify(double score, double threshold) noexcept;

/// APCER/BPCER/ACER at a given threshold. Throws std::invalid_argument when a
/// class is absent. FAR/FRR/HTER are filled with the same rates.
[[nodiscard]] MetricsReport apcer_bpcer_acer(std::span<const LabeledScore> records, double threshold,
                                             ThresholdRule rule = ThresholdRule::fixed);

/// Largest candidate threshold whose dev BPCER does not exceed `target`
/// (the admissible threshold that rejects the most attacks).
[[nodiscard]] double threshold_at_bpcer(std::span<const LabeledScore> dev, double target = 0.01);

struct EerPoint {
    double threshold = 0.0;
    double eer = 0.0;
    double far = 0.0;
    double frr = 0.0;
};

/// Candidate minimizing |FAR - FRR|; ties go to the smaller threshold.
[[nodiscard]] EerPoint eer_threshold(std::span<const LabeledScore> dev);

/// FAR/FRR/HTER (and the equal APCER/BPCER/ACER) at a fixed threshold.
[[nodiscard]] MetricsReport hter(std::span<const LabeledScore> eval, double threshold,
                                 ThresholdRule rule = ThresholdRule::fixed);

struct SweepRow {
    double threshold = 0.0;
    double far = 0.0;
    double frr = 0.0;
    double apcer = 0.0;
    double bpcer = 0.0;
};

/// Exhaustive table over all candidate thresholds, ascending, computed by
/// direct counting (O(n^2)). Rates for an absent class are 0.
[[nodiscard]] std::vector<SweepRow> brute_force_sweep(std::span<const LabeledScore> records);

/// Threshold selection over a sweep table, applying the same rules as
/// threshold_at_bpcer / eer_threshold.
[[nodiscard]] double select_bpcer_threshold(std::span<const SweepRow> table, double target);
[[nodiscard]] EerPoint select_eer(std::span<const SweepRow> table);

/// One scored sample. Heads that were not evaluated are empty.
struct ScoreRecord {
    std::string sample_id;
    Label label = Label::bonafide;
    std::string attack_type;
    std::optional<double> score_p;
    std::optional<double> score_q;
    std::optional<double> score_r;

    [[nodiscard]] std::optional<double> score(Head head) const noexcept;
};

/// Throws DataError if a record lacks the requested head's score.
[[nodiscard]] std::vector<LabeledScore> labeled_scores(std::span<const ScoreRecord> records, Head head);

inline constexpr std::string_view kScoreHeader = "sample_id\tlabel\tattack_type\tscore_p\tscore_q\tscore_r";

/// Header plus one line per record; scores with 9 significant digits, "NA"
/// for heads that were not evaluated.
[[nodiscard]] std::string format_score_file(std::span<const ScoreRecord> records);
void write_score_file(const std::filesystem::path& path, std::span<const ScoreRecord> records);
[[nodiscard]] std::vector<ScoreRecord> read_score_file(const std::filesystem::path& path);

}  // namespace cmfl
