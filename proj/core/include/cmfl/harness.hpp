#pragma once

// Experiment orchestration: training loop, evaluation, and the protocol-level
// studies (leave-one-out tables, gamma sweep, single-channel deployment,
// cross-dataset, score distributions, loss curves).
//
// Seeding: one master seed (TrainConfig::seed) fans out to independent streams
// ("init", "shuffle", "augment", "split") so that, e.g., turning augmentation
// off does not change the initial weights.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmfl/datasets.hpp"
#include "cmfl/error.hpp"
#include "cmfl/losses.hpp"
#include "cmfl/metrics.hpp"
#include "cmfl/network.hpp"
#include "cmfl/run_io.hpp"

namespace cmfl {

struct TrainConfig {
    NetworkConfig network;
    OptimizerConfig optimizer;
    LossParams loss;
    std::size_t epochs = 25;
    std::size_t batch_size = 64;
    double hflip_prob = 0.5;
    bool shuffle = true;
    std::uint64_t seed = 0;

    void validate() const;
    /// 10 epochs, batch 32, learning rate 3e-3, 32x32 inputs.
    [[nodiscard]] static TrainConfig desk_scale();
};

void to_json(nlohmann::json& j, const LossParams& p);
void from_json(const nlohmann::json& j, LossParams& p);
void to_json(nlohmann::json& j, const OptimizerConfig& o);
void from_json(const nlohmann::json& j, OptimizerConfig& o);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// FNV-1a of the canonical JSON dump, as 16 hex digits.
[[nodiscard]] std::string config_hash(const nlohmann::json& config);

/// Thrown when a cancel flag is raised mid-run.
class Interrupted : public RuntimeFailure {
public:
    Interrupted() : RuntimeFailure("interrupted") {}
};

struct TrainHooks {
    /// Polled between batches.
    const std::atomic<bool>* cancel = nullptr;
    /// Sees every optimization step before the update is applied.
    std::function<void(std::size_t epoch, std::size_t batch, std::span<const BatchItem> items,
                       const BackwardResult& result)>
        on_batch;
    std::function<void(std::size_t epoch, double mean_loss)> on_epoch;
};

/// Sample order and flip decisions for one epoch. The augment stream draws one
/// number per sample whatever hflip_prob is.
struct EpochPlan {
    std::vector<std::size_t> order;
    std::vector<bool> flipped;
};

[[nodiscard]] EpochPlan plan_epoch(std::size_t n_samples, const TrainConfig& cfg, std::size_t epoch);

struct TrainResult {
    ParameterSet params;
    std::vector<double> epoch_loss;
};

/// Trains on `split.train`. The network is initialized from
/// derive_seed(cfg.seed, "init"); `cfg.network.seed` is ignored. Throws
/// DataError("degenerate split: ...") if the train fold lacks a class.
[[nodiscard]] TrainResult train(const Dataset& data, const ProtocolSplit& split, const TrainConfig& cfg,
                                const TrainHooks& hooks = {});

struct EvalOptions {
    Head head = Head::joint;
    ThresholdRule rule = ThresholdRule::bpcer_at_target;
    double bpcer_target = 0.01;
    /// Used only with ThresholdRule::fixed.
    double fixed_threshold = 0.5;
};

struct Evaluation {
    std::string protocol;
    Head head = Head::joint;
    MetricsReport report;
    std::vector<ScoreRecord> dev_scores;
    std::vector<ScoreRecord> eval_scores;
};

/// Scores every head whose channels are present in `data` (an empty image
/// means the channel was not loaded), picks the threshold on dev with
/// `options.rule`, and reports on eval.
[[nodiscard]] Evaluation evaluate(const ParameterSet& params, const Dataset& data, const ProtocolSplit& split,
                                  const EvalOptions& options = {});

/// Score records for `ids`; heads whose channels are missing are left empty.
[[nodiscard]] std::vector<ScoreRecord> score_samples(const ParameterSet& params, const Dataset& data,
                                                     std::span<const std::string> ids);

/// Load options reading only the channels `head` needs.
[[nodiscard]] LoadOptions channels_for(Head head);

/// Throws DataError if image shapes disagree with the network config.
void check_compatible(const ParameterSet& params, const Dataset& data);

[[nodiscard]] nlohmann::json report_json(const Evaluation& evaluation, const EvalOptions& options);

/// Writes checkpoint.bin, losscurve.tsv, scores_{dev,eval}_<head>.tsv and
/// report_<protocol>.json into `dir`.
void write_leg(const RunDirectory& dir, const TrainResult& trained, const Evaluation& evaluation,
               const EvalOptions& options);

struct ProtocolResult {
    std::string protocol;
    std::string attack;
    MetricsReport report;
    std::vector<double> epoch_loss;
};

struct ExperimentResult {
    std::vector<ProtocolResult> rows;
    double mean_acer = 0.0;
    double std_acer = 0.0;  // population (N denominator)
    std::uint64_t seed = 0;
    std::string config_hash;
};

/// Mean and population standard deviation of the rows' ACER.
void aggregate(ExperimentResult& result);

[[nodiscard]] nlohmann::json to_json(const ExperimentResult& result);

struct StudyOptions {
    EvalOptions eval;
    SplitRatios ratios;
    /// When set, each leg's artifacts go to a subdirectory of this run.
    const RunDirectory* run = nullptr;
    TrainHooks hooks;
};

/// One train + evaluate per attack type. Throws ConfigError with fewer than
/// two attack types and RuntimeFailure if a leg's excluded attack leaks into
/// train or dev.
[[nodiscard]] ExperimentResult run_loo(const Dataset& data, const TrainConfig& cfg, const StudyOptions& options = {});

struct GammaResult {
    double gamma = 0.0;
    ExperimentResult result;
};

inline const std::vector<double> kDefaultGammas{0.0, 1.0, 2.0, 3.0, 4.0};

/// run_loo once per gamma; gamma = 0 is the plain BCE multi-head baseline.
[[nodiscard]] std::vector<GammaResult> run_gamma_sweep(const Dataset& data, const TrainConfig& cfg,
                                                       std::span<const double> gammas,
                                                       const StudyOptions& options = {});

struct SingleChannelCell {
    double gamma = 0.0;
    Head head = Head::a;
    std::vector<double> acer_per_seed;
    double median_acer = 0.0;
};

struct SingleChannelStudy {
    std::vector<std::uint64_t> seeds;
    std::vector<SingleChannelCell> cells;  // (gamma 0, A), (0, B), (3, A), (3, B)

    [[nodiscard]] const SingleChannelCell& cell(double gamma, Head head) const;
};

[[nodiscard]] double median(std::vector<double> values);

/// Grandtest per seed; for each seed trains with gamma 0 and gamma 3 and
/// evaluates heads A and B separately.
[[nodiscard]] SingleChannelStudy run_single_channel_study(const Dataset& data, const TrainConfig& cfg,
                                                          std::span<const std::uint64_t> seeds,
                                                          const StudyOptions& options = {});

[[nodiscard]] nlohmann::json to_json(const SingleChannelStudy& study);

struct CrossDatasetResult {
    double threshold = 0.0;
    MetricsReport intra;
    MetricsReport cross;
};

/// Trains on the source grandtest, takes the EER threshold of the source dev
/// fold (joint head), and reports HTER on the source and target eval folds.
[[nodiscard]] CrossDatasetResult run_cross_dataset(const Dataset& source, const Dataset& target,
                                                   const TrainConfig& cfg, const StudyOptions& options = {});

[[nodiscard]] nlohmann::json to_json(const CrossDatasetResult& result);

inline constexpr std::size_t kHistogramBins = 64;

struct HeadHistogram {
    Head head = Head::joint;
    std::vector<std::size_t> bonafide;
    std::vector<std::size_t> attack;
    /// Shared mass of the two class-normalized histograms, in [0, 1].
    double overlap = 0.0;
};

struct ScoreDistributions {
    std::vector<ScoreRecord> scores;
    std::vector<HeadHistogram> heads;  // A, B, joint
};

/// Histograms over [0, 1] (the last bin is closed) of every head's eval scores.
[[nodiscard]] ScoreDistributions dump_score_distributions(const ParameterSet& params, const Dataset& data,
                                                          const ProtocolSplit& split,
                                                          std::size_t bins = kHistogramBins);

[[nodiscard]] std::string format_histograms(const ScoreDistributions& dist);

struct LossCurveColumn {
    double gamma = 0.0;
    double q = 0.0;
    std::vector<double> values;
};

struct LossCurveTable {
    std::vector<double> p_t;  // 0.01, 0.02, ..., 0.99
    std::vector<double> ce;
    std::vector<LossCurveColumn> columns;
};

/// CMFL(p_t; q, gamma) with alpha = 1 for every (gamma, q) pair.
[[nodiscard]] LossCurveTable emit_loss_curves(std::span<const double> gammas, std::span<const double> q_values);

[[nodiscard]] std::string format_loss_curves(const LossCurveTable& table);

}  // namespace cmfl
