#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <numeric>
#include <set>

#include "cmfl/checkpoint.hpp"
#include "cmfl/harness.hpp"
#include "cmfl/rng.hpp"
#include "support.hpp"

using namespace cmfl;
using cmfl::test::small_spec;
using cmfl::test::small_train;
using cmfl::test::TempDir;

namespace {

const Dataset& small_data() {
    static const Dataset data = Dataset::from_samples(generate(small_spec()));
    return data;
}

ProtocolSplit small_split(std::uint64_t seed = 0) { return make_grandtest(small_data().manifest(), {}, seed); }

}  // namespace

TEST(TrainConfig, DefaultsAndValidation) {
    const TrainConfig paper;
    EXPECT_EQ(paper.epochs, 25u);
    EXPECT_EQ(paper.batch_size, 64u);
    EXPECT_EQ(paper.optimizer.learning_rate, 1e-4);
    EXPECT_EQ(paper.optimizer.weight_decay, 1e-5);
    EXPECT_EQ(paper.loss.gamma, 3.0);
    EXPECT_EQ(paper.loss.lambda, 0.5);

    const TrainConfig desk = TrainConfig::desk_scale();
    EXPECT_LE(desk.epochs, 10u);
    EXPECT_EQ(desk.network.input_height, 32u);

    TrainConfig bad = desk;
    bad.batch_size = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = desk;
    bad.hflip_prob = 1.5;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(TrainConfig, JsonRoundTripAndHash) {
    TrainConfig c = TrainConfig::desk_scale();
    c.loss.gamma = 2.0;
    c.seed = 17;
    const nlohmann::json j = c;
    const TrainConfig back = j.get<TrainConfig>();
    EXPECT_EQ(nlohmann::json(back), j);
    EXPECT_EQ(config_hash(j).size(), 16u);
    EXPECT_EQ(config_hash(j), config_hash(nlohmann::json(back)));
    c.seed = 18;
    EXPECT_NE(config_hash(nlohmann::json(c)), config_hash(j));
}

TEST(PlanEpoch, FlipsAndOrder) {
    TrainConfig c = small_train();
    c.hflip_prob = 0.0;
    const EpochPlan none = plan_epoch(50, c, 0);
    for (bool f : none.flipped) EXPECT_FALSE(f);
    std::vector<std::size_t> sorted = none.order;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> expected(50);
    std::iota(expected.begin(), expected.end(), std::size_t{0});
    EXPECT_EQ(sorted, expected);

    // Augmentation settings do not move the shuffle stream.
    c.hflip_prob = 1.0;
    const EpochPlan all = plan_epoch(50, c, 0);
    EXPECT_EQ(all.order, none.order);
    for (bool f : all.flipped) EXPECT_TRUE(f);

    EXPECT_NE(plan_epoch(50, c, 1).order, none.order);
    c.shuffle = false;
    EXPECT_EQ(plan_epoch(50, c, 3).order, expected);
}

TEST(Train, DeterministicAndSeedSensitive) {
    const TrainConfig c = small_train(4);
    const TrainResult a = train(small_data(), small_split(), c);
    const TrainResult b = train(small_data(), small_split(), c);
    ASSERT_EQ(a.epoch_loss.size(), 2u);
    EXPECT_EQ(a.epoch_loss, b.epoch_loss);
    for (std::size_t k = 0; k < a.params.tensors.size(); ++k)
        EXPECT_EQ(a.params.tensors[k].values, b.params.tensors[k].values);

    const TrainResult other = train(small_data(), small_split(), small_train(5));
    EXPECT_NE(other.epoch_loss, a.epoch_loss);
}

TEST(Train, LossDecreasesForMostSeeds) {
    int decreasing = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        TrainConfig c = small_train(seed);
        c.epochs = 5;
        const TrainResult r = train(small_data(), small_split(seed), c);
        if (r.epoch_loss.back() < r.epoch_loss.front()) ++decreasing;
    }
    EXPECT_GE(decreasing, 3);
}

TEST(Train, DegenerateSplits) {
    ProtocolSplit split = small_split();
    ProtocolSplit empty = split;
    empty.train.clear();
    EXPECT_THROW((void)train(small_data(), empty, small_train()), DataError);

    ProtocolSplit one_class = split;
    one_class.train.clear();
    for (const auto& id : split.train)
        if (small_data().by_id(id).label == Label::bonafide) one_class.train.push_back(id);
    try {
        (void)train(small_data(), one_class, small_train());
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("degenerate split"), std::string::npos);
    }
}

TEST(Train, ShapeMismatchWithNetwork) {
    TrainConfig c = small_train();
    c.network.input_height = c.network.input_width = 32;
    EXPECT_THROW((void)train(small_data(), small_split(), c), DataError);
}

TEST(Train, CancelFlagInterrupts) {
    std::atomic<bool> cancel{true};
    TrainHooks hooks;
    hooks.cancel = &cancel;
    EXPECT_THROW((void)train(small_data(), small_split(), small_train(), hooks), Interrupted);
}

TEST(Train, GammaZeroMatchesIndependentBce) {
    TrainConfig c = small_train(2);
    c.loss.gamma = 0.0;
    c.loss.lambda = 0.5;
    c.epochs = 1;
    bool checked = false;
    TrainHooks hooks;
    hooks.on_batch = [&](std::size_t epoch, std::size_t batch, std::span<const BatchItem> items,
                         const BackwardResult& result) {
        if (epoch != 0 || batch != 0) return;
        // Parameters before the first update are the initialization.
        NetworkConfig net = c.network;
        net.seed = derive_seed(c.seed, "init");
        const ParameterSet init = init_network(net);
        const BatchTrace trace(init, items);
        const auto ref = cmfl::test::bce_reference(trace.heads(), 0.5);
        EXPECT_NEAR(result.loss, ref.loss, 1e-12);
        const Gradients g = trace.backward(ref.head_grads);
        double worst = 0.0;
        for (std::size_t k = 0; k < g.per_tensor.size(); ++k)
            for (std::size_t i = 0; i < g.per_tensor[k].size(); ++i)
                worst = std::max(worst, std::abs(g.per_tensor[k][i] - result.grads.per_tensor[k][i]));
        EXPECT_LE(worst, 1e-12);
        checked = true;
    };
    (void)train(small_data(), small_split(), c, hooks);
    EXPECT_TRUE(checked);
}

TEST(Evaluate, HeadsAndThresholdRules) {
    const TrainResult t = train(small_data(), small_split(), small_train());
    const ProtocolSplit split = small_split();
    for (Head head : {Head::a, Head::b, Head::joint}) {
        EvalOptions eo;
        eo.head = head;
        const Evaluation ev = evaluate(t.params, small_data(), split, eo);
        EXPECT_EQ(ev.eval_scores.size(), split.eval.size());
        EXPECT_EQ(ev.dev_scores.size(), split.dev.size());
        EXPECT_EQ(ev.report.acer, (ev.report.apcer + ev.report.bpcer) / 2.0);
        EXPECT_LE(ev.report.bpcer, 1.0);
        const auto dev = labeled_scores(ev.dev_scores, head);
        EXPECT_EQ(ev.report.threshold, threshold_at_bpcer(dev, 0.01));
    }
    EvalOptions fixed;
    fixed.rule = ThresholdRule::fixed;
    fixed.fixed_threshold = 0.25;
    EXPECT_EQ(evaluate(t.params, small_data(), split, fixed).report.threshold, 0.25);

    const nlohmann::json j = report_json(evaluate(t.params, small_data(), split), EvalOptions{});
    EXPECT_EQ(j["protocol"], "grandtest");
    EXPECT_EQ(j["head"], "joint");
    EXPECT_EQ(j["threshold_rule"], "BPCER_AT_TARGET");
    EXPECT_EQ(j["bpcer_target"], 0.01);
}

TEST(Evaluate, SingleChannelDataScoresOneHead) {
    TempDir dir("evalA");
    save_dataset(dir.path(), small_data());
    const Dataset only_a = load_dataset(dir.path(), channels_for(Head::a));
    const TrainResult t = train(small_data(), small_split(), small_train());
    EvalOptions eo;
    eo.head = Head::a;
    const Evaluation ev = evaluate(t.params, only_a, small_split(), eo);
    for (const auto& r : ev.eval_scores) {
        EXPECT_TRUE(r.score_p);
        EXPECT_FALSE(r.score_q);
        EXPECT_FALSE(r.score_r);
    }
    eo.head = Head::joint;
    EXPECT_THROW((void)evaluate(t.params, only_a, small_split(), eo), DataError);

    // Same head-A scores as with both channels loaded.
    EvalOptions full;
    full.head = Head::a;
    const Evaluation both = evaluate(t.params, small_data(), small_split(), full);
    for (std::size_t i = 0; i < ev.eval_scores.size(); ++i)
        EXPECT_NEAR(*ev.eval_scores[i].score_p, *both.eval_scores[i].score_p, 1e-12);
}

TEST(Loo, ShapeAggregatesAndArtifacts) {
    TempDir dir("loo");
    const RunDirectory run(dir.path());
    TrainConfig c = small_train();
    c.epochs = 1;
    StudyOptions opts;
    opts.run = &run;
    const ExperimentResult r = run_loo(small_data(), c, opts);
    ASSERT_EQ(r.rows.size(), 3u);
    std::set<std::string> attacks;
    double sum = 0.0;
    for (const auto& row : r.rows) {
        attacks.insert(row.attack);
        EXPECT_EQ(row.protocol, "loo_" + row.attack);
        sum += row.report.acer;
        for (const char* f : {"checkpoint.bin", "losscurve.tsv", "scores_dev_joint.tsv", "scores_eval_joint.tsv"})
            EXPECT_TRUE(std::filesystem::exists(dir.path() / row.protocol / f)) << f;
        EXPECT_TRUE(std::filesystem::exists(dir.path() / row.protocol / ("report_" + row.protocol + ".json")));
    }
    EXPECT_EQ(attacks.size(), 3u);
    const double mean = sum / 3.0;
    double ss = 0.0;
    for (const auto& row : r.rows) ss += (row.report.acer - mean) * (row.report.acer - mean);
    EXPECT_NEAR(r.mean_acer, mean, 1e-12);
    EXPECT_NEAR(r.std_acer, std::sqrt(ss / 3.0), 1e-12);
    EXPECT_EQ(r.config_hash, config_hash(nlohmann::json(c)));

    const nlohmann::json j = to_json(r);
    EXPECT_EQ(j["rows"].size(), 3u);
    EXPECT_EQ(j["std_kind"], "population");

    // The checkpoint reloads to the same scores.
    const ParameterSet p = load_checkpoint(dir.path() / r.rows[0].protocol / "checkpoint.bin");
    const auto back = read_score_file(dir.path() / r.rows[0].protocol / "scores_eval_joint.tsv");
    const auto ids = make_loo(small_data().manifest(), r.rows[0].attack, derive_seed(c.seed, "split")).eval;
    const auto fresh = score_samples(p, small_data(), ids);
    ASSERT_EQ(back.size(), fresh.size());
    for (std::size_t i = 0; i < back.size(); ++i) EXPECT_NEAR(*back[i].score_r, *fresh[i].score_r, 1e-8);
}

TEST(Loo, AttackListOrderDoesNotMatter) {
    GeneratorSpec reversed = small_spec();
    std::reverse(reversed.attack_types.begin(), reversed.attack_types.end());
    const Dataset other = Dataset::from_samples(generate(reversed));
    TrainConfig c = small_train();
    c.epochs = 1;
    const ExperimentResult a = run_loo(small_data(), c), b = run_loo(other, c);
    ASSERT_EQ(a.rows.size(), b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        EXPECT_EQ(a.rows[i].attack, b.rows[i].attack);
        EXPECT_EQ(a.rows[i].report.acer, b.rows[i].report.acer);
        EXPECT_EQ(a.rows[i].epoch_loss, b.rows[i].epoch_loss);
    }
}

TEST(Loo, NeedsTwoAttacks) {
    GeneratorSpec spec = small_spec();
    spec.attack_types = {AttackType::a_visible};
    EXPECT_THROW((void)run_loo(Dataset::from_samples(generate(spec)), small_train()), ConfigError);
}

TEST(GammaSweep, OneResultPerGamma) {
    TrainConfig c = small_train();
    c.epochs = 1;
    const std::vector<double> gammas{0.0, 2.0};
    const auto results = run_gamma_sweep(small_data(), c, gammas);
    ASSERT_EQ(results.size(), 2u);
    EXPECT_EQ(results[1].gamma, 2.0);
    EXPECT_EQ(results[0].result.rows.size(), 3u);
    const std::vector<double> bad{-1.0};
    EXPECT_THROW((void)run_gamma_sweep(small_data(), c, bad), ConfigError);
}

TEST(SingleChannel, CellsAndMedians) {
    TrainConfig c = small_train();
    c.epochs = 1;
    const std::vector<std::uint64_t> seeds{0, 1, 2};
    const SingleChannelStudy s = run_single_channel_study(small_data(), c, seeds);
    ASSERT_EQ(s.cells.size(), 4u);
    for (const auto& cell : s.cells) {
        ASSERT_EQ(cell.acer_per_seed.size(), 3u);
        EXPECT_EQ(cell.median_acer, median(cell.acer_per_seed));
    }
    EXPECT_NO_THROW((void)s.cell(3.0, Head::a));
    EXPECT_THROW((void)s.cell(1.0, Head::a), std::out_of_range);
    EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
    EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
}

TEST(CrossDataset, ThresholdFromSourceDev) {
    GeneratorSpec target_spec = small_spec(9);
    target_spec.noise_sigma = 0.05;
    const Dataset target = Dataset::from_samples(generate(target_spec));
    TrainConfig c = small_train();
    c.epochs = 1;
    const CrossDatasetResult r = run_cross_dataset(small_data(), target, c);
    EXPECT_EQ(r.intra.threshold, r.threshold);
    EXPECT_EQ(r.cross.threshold, r.threshold);
    EXPECT_EQ(r.cross.threshold_rule, ThresholdRule::eer);
    EXPECT_EQ(r.cross.hter, (r.cross.far + r.cross.frr) / 2.0);
}

TEST(ScoreDistributions, HistogramCounts) {
    const TrainResult t = train(small_data(), small_split(), small_train());
    const ScoreDistributions d = dump_score_distributions(t.params, small_data(), small_split());
    ASSERT_EQ(d.heads.size(), 3u);
    std::size_t nb = 0, na = 0;
    for (const auto& r : d.scores) (r.label == Label::bonafide ? nb : na) += 1;
    for (const auto& h : d.heads) {
        EXPECT_EQ(h.bonafide.size(), kHistogramBins);
        EXPECT_EQ(std::accumulate(h.bonafide.begin(), h.bonafide.end(), std::size_t{0}), nb);
        EXPECT_EQ(std::accumulate(h.attack.begin(), h.attack.end(), std::size_t{0}), na);
        EXPECT_GE(h.overlap, 0.0);
        EXPECT_LE(h.overlap, 1.0 + 1e-12);
    }
    const std::string text = format_histograms(d);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), static_cast<long>(kHistogramBins + 1));
    EXPECT_EQ(text.rfind("bin_lo\tbin_hi\tA_bonafide\tA_attack", 0), 0u);
}

TEST(LossCurves, ReproducesFigureProperties) {
    const std::vector<double> gammas{1.0, 2.0, 3.0}, qs{0.0, 0.25, 0.5, 0.75, 1.0};
    const LossCurveTable t = emit_loss_curves(gammas, qs);
    ASSERT_EQ(t.p_t.size(), 99u);
    ASSERT_EQ(t.columns.size(), 15u);
    for (std::size_t g = 0; g < 3; ++g) {
        EXPECT_EQ(t.columns[g * 5].values, t.ce);
        for (std::size_t q = 1; q < 5; ++q)
            for (std::size_t i = 0; i < 99; ++i)
                EXPECT_LE(t.columns[g * 5 + q].values[i], t.columns[g * 5 + q - 1].values[i]);
    }
    // gamma 3, q 1 at p_t = 0.5.
    EXPECT_NEAR(t.columns[2 * 5 + 4].values[49], 0.0256721177985, 1e-6);

    const std::string text = format_loss_curves(t);
    EXPECT_EQ(text.rfind("p_t\tce\tcmfl_g1_q0\t", 0), 0u);
    const std::vector<double> bad{1.5};
    EXPECT_THROW((void)emit_loss_curves(gammas, bad), ConfigError);
}
