#include "cmfl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "cmfl/checkpoint.hpp"
#include "cmfl/rng.hpp"

namespace cmfl {

namespace {

constexpr std::size_t kScoreChunk = 64;

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void require_keys_object(const nlohmann::json& j, const char* what) {
    if (!j.is_object()) throw ConfigError(std::string(what) + " must be an object");
}

bool has_both_classes(const Dataset& data, std::span<const std::string> ids) {
    bool attack = false, bonafide = false;
    for (const auto& id : ids) (data.by_id(id).label == Label::bonafide ? bonafide : attack) = true;
    return attack && bonafide;
}

}  // namespace

void TrainConfig::validate() const {
    network.validate();
    optimizer.validate();
    loss.validate();
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) throw ConfigError("hflip_prob must lie in [0, 1]");
}

TrainConfig TrainConfig::desk_scale() {
    TrainConfig c;
    c.epochs = 10;
    c.batch_size = 32;
    c.optimizer.learning_rate = 3e-3;
    return c;
}

void to_json(nlohmann::json& j, const LossParams& p) {
    j = {{"alpha_bonafide", p.alpha_bonafide},
         {"alpha_attack", p.alpha_attack},
         {"gamma", p.gamma},
         {"lambda", p.lambda},
         {"detach_weight", p.detach_weight}};
}

void from_json(const nlohmann::json& j, LossParams& p) {
    require_keys_object(j, "loss");
    const LossParams d;
    p.alpha_bonafide = j.value("alpha_bonafide", d.alpha_bonafide);
    p.alpha_attack = j.value("alpha_attack", d.alpha_attack);
    p.gamma = j.value("gamma", d.gamma);
    p.lambda = j.value("lambda", d.lambda);
    p.detach_weight = j.value("detach_weight", d.detach_weight);
}

void to_json(nlohmann::json& j, const OptimizerConfig& o) {
    j = {{"learning_rate", o.learning_rate},
         {"weight_decay", o.weight_decay},
         {"beta1", o.beta1},
         {"beta2", o.beta2},
         {"eps", o.eps}};
}

void from_json(const nlohmann::json& j, OptimizerConfig& o) {
    require_keys_object(j, "optimizer");
    const OptimizerConfig d;
    o.learning_rate = j.value("learning_rate", d.learning_rate);
    o.weight_decay = j.value("weight_decay", d.weight_decay);
    o.beta1 = j.value("beta1", d.beta1);
    o.beta2 = j.value("beta2", d.beta2);
    o.eps = j.value("eps", d.eps);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"network", c.network},   {"optimizer", c.optimizer}, {"loss", c.loss},
         {"epochs", c.epochs},     {"batch_size", c.batch_size}, {"hflip_prob", c.hflip_prob},
         {"shuffle", c.shuffle},   {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    require_keys_object(j, "train");
    const TrainConfig d;
    c.network = j.contains("network") ? j.at("network").get<NetworkConfig>() : d.network;
    c.optimizer = j.contains("optimizer") ? j.at("optimizer").get<OptimizerConfig>() : d.optimizer;
    c.loss = j.contains("loss") ? j.at("loss").get<LossParams>() : d.loss;
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.hflip_prob = j.value("hflip_prob", d.hflip_prob);
    c.shuffle = j.value("shuffle", d.shuffle);
    c.seed = j.value("seed", d.seed);
}

std::string config_hash(const nlohmann::json& config) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(config.dump())));
    return buf;
}

EpochPlan plan_epoch(std::size_t n_samples, const TrainConfig& cfg, std::size_t epoch) {
    EpochPlan plan;
    plan.order.resize(n_samples);
    std::iota(plan.order.begin(), plan.order.end(), std::size_t{0});
    if (cfg.shuffle) {
        Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", epoch));
        std::shuffle(plan.order.begin(), plan.order.end(), shuffle_rng);
    }
    Rng augment_rng(derive_seed(cfg.seed, "augment", epoch));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    plan.flipped.resize(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) plan.flipped[i] = u(augment_rng) < cfg.hflip_prob;
    return plan;
}

TrainResult train(const Dataset& data, const ProtocolSplit& split, const TrainConfig& cfg, const TrainHooks& hooks) {
    cfg.validate();
    if (split.train.empty()) throw DataError("degenerate split: empty train fold");
    if (!has_both_classes(data, split.train)) throw DataError("degenerate split: train fold lacks a class");

    NetworkConfig net = cfg.network;
    net.seed = derive_seed(cfg.seed, "init");
    TrainResult result{init_network(net), {}};
    check_compatible(result.params, data);

    std::vector<const MultiModalSample*> samples;
    samples.reserve(split.train.size());
    for (const auto& id : split.train) {
        const auto& s = data.by_id(id);
        if (s.x_a.empty() || s.x_b.empty()) throw DataError("training needs both channels: " + id);
        samples.push_back(&s);
    }

    const std::size_t n = samples.size();
    std::vector<Image> flipped_a, flipped_b;
    std::vector<BatchItem> items;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const EpochPlan plan = plan_epoch(n, cfg, epoch);
        double loss_sum = 0.0;
        for (std::size_t start = 0, batch = 0; start < n; start += cfg.batch_size, ++batch) {
            if (hooks.cancel && hooks.cancel->load()) throw Interrupted();
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            // Reserve up front so pointers into the flip buffers stay valid.
            flipped_a.clear();
            flipped_b.clear();
            flipped_a.reserve(stop - start);
            flipped_b.reserve(stop - start);
            items.clear();
            for (std::size_t i = start; i < stop; ++i) {
                const MultiModalSample& s = *samples[plan.order[i]];
                BatchItem item{&s.x_a, &s.x_b, s.label};
                if (plan.flipped[i]) {
                    flipped_a.push_back(hflip(s.x_a));
                    flipped_b.push_back(hflip(s.x_b));
                    item.x_a = &flipped_a.back();
                    item.x_b = &flipped_b.back();
                }
                items.push_back(item);
            }
            const BackwardResult step = backward(result.params, items, cfg.loss);
            if (!std::isfinite(step.loss)) throw RuntimeFailure("non-finite training loss");
            if (hooks.on_batch) hooks.on_batch(epoch, batch, items, step);
            adam_step(result.params, step.grads, cfg.optimizer);
            loss_sum += step.loss * static_cast<double>(items.size());
        }
        const double mean = loss_sum / static_cast<double>(n);
        result.epoch_loss.push_back(mean);
        if (hooks.on_epoch) hooks.on_epoch(epoch, mean);
    }
    return result;
}

LoadOptions channels_for(Head head) {
    LoadOptions o;
    o.load_a = head != Head::b;
    o.load_b = head != Head::a;
    return o;
}

void check_compatible(const ParameterSet& params, const Dataset& data) {
    const NetworkConfig& c = params.config;
    auto check = [&c](const Image& img, std::size_t channels, const std::string& id, const char* which) {
        if (img.empty()) return;
        if (img.channels != channels || img.height != c.input_height || img.width != c.input_width) {
            throw DataError("shape mismatch for " + id + " channel " + which + ": got " + std::to_string(img.channels) +
                            "x" + std::to_string(img.height) + "x" + std::to_string(img.width) + ", network expects " +
                            std::to_string(channels) + "x" + std::to_string(c.input_height) + "x" +
                            std::to_string(c.input_width));
        }
    };
    for (const auto& s : data.samples()) {
        check(s.x_a, c.channels_a, s.id, "A");
        check(s.x_b, c.channels_b, s.id, "B");
    }
}

std::vector<ScoreRecord> score_samples(const ParameterSet& params, const Dataset& data,
                                       std::span<const std::string> ids) {
    std::vector<const MultiModalSample*> samples;
    bool have_a = true, have_b = true;
    for (const auto& id : ids) {
        const auto& s = data.by_id(id);
        have_a = have_a && !s.x_a.empty();
        have_b = have_b && !s.x_b.empty();
        samples.push_back(&s);
    }

    std::vector<ScoreRecord> out(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        out[i].sample_id = samples[i]->id;
        out[i].label = samples[i]->label;
        out[i].attack_type = samples[i]->attack_type;
    }
    if (samples.empty()) return out;

    if (have_a && have_b) {
        for (std::size_t start = 0; start < samples.size(); start += kScoreChunk) {
            const std::size_t stop = std::min(samples.size(), start + kScoreChunk);
            std::vector<BatchItem> items;
            for (std::size_t i = start; i < stop; ++i)
                items.push_back({&samples[i]->x_a, &samples[i]->x_b, samples[i]->label});
            const BatchTrace trace(params, items);
            const auto& heads = trace.heads();
            for (std::size_t i = start; i < stop; ++i) {
                out[i].score_p = heads[i - start].p;
                out[i].score_q = heads[i - start].q;
                out[i].score_r = heads[i - start].r;
            }
        }
    } else if (have_a || have_b) {
        std::vector<const Image*> images;
        for (const auto* s : samples) images.push_back(have_a ? &s->x_a : &s->x_b);
        const Head head = have_a ? Head::a : Head::b;
        const std::vector<double> scores = have_a ? predict_scores(params, images, {}, head)
                                                  : predict_scores(params, {}, images, head);
        for (std::size_t i = 0; i < samples.size(); ++i)
            (have_a ? out[i].score_p : out[i].score_q) = scores[i];
    }
    return out;
}

Evaluation evaluate(const ParameterSet& params, const Dataset& data, const ProtocolSplit& split,
                    const EvalOptions& options) {
    check_compatible(params, data);
    if (split.eval.empty()) throw DataError("degenerate split: empty eval fold");
    Evaluation ev;
    ev.protocol = split.name;
    ev.head = options.head;
    ev.dev_scores = score_samples(params, data, split.dev);
    ev.eval_scores = score_samples(params, data, split.eval);

    const std::vector<LabeledScore> eval = labeled_scores(ev.eval_scores, options.head);
    double threshold = options.fixed_threshold;
    if (options.rule != ThresholdRule::fixed) {
        if (split.dev.empty()) throw DataError("degenerate split: empty dev fold");
        const std::vector<LabeledScore> dev = labeled_scores(ev.dev_scores, options.head);
        threshold = options.rule == ThresholdRule::eer ? eer_threshold(dev).threshold
                                                       : threshold_at_bpcer(dev, options.bpcer_target);
    }
    ev.report = apcer_bpcer_acer(eval, threshold, options.rule);
    return ev;
}

nlohmann::json report_json(const Evaluation& evaluation, const EvalOptions& options) {
    nlohmann::json j;
    j["protocol"] = evaluation.protocol;
    j["head"] = std::string(to_string(evaluation.head));
    j["threshold_rule"] = std::string(to_string(options.rule));
    if (options.rule == ThresholdRule::bpcer_at_target) j["bpcer_target"] = options.bpcer_target;
    j["metrics"] = evaluation.report;
    return j;
}

void write_leg(const RunDirectory& dir, const TrainResult& trained, const Evaluation& evaluation,
               const EvalOptions& options) {
    save_checkpoint(trained.params, dir.file("checkpoint.bin"));
    std::string curve = "epoch\tmean_loss\n";
    for (std::size_t e = 0; e < trained.epoch_loss.size(); ++e)
        curve += std::to_string(e + 1) + "\t" + format_double(trained.epoch_loss[e]) + "\n";
    dir.write_text("losscurve.tsv", curve);
    const std::string head(to_string(evaluation.head));
    dir.write_text("scores_dev_" + head + ".tsv", format_score_file(evaluation.dev_scores));
    dir.write_text("scores_eval_" + head + ".tsv", format_score_file(evaluation.eval_scores));
    dir.write_json("report_" + evaluation.protocol + ".json", report_json(evaluation, options));
}

void aggregate(ExperimentResult& result) {
    if (result.rows.empty()) {
        result.mean_acer = result.std_acer = 0.0;
        return;
    }
    const double n = static_cast<double>(result.rows.size());
    double sum = 0.0;
    for (const auto& r : result.rows) sum += r.report.acer;
    result.mean_acer = sum / n;
    double ss = 0.0;
    for (const auto& r : result.rows) ss += (r.report.acer - result.mean_acer) * (r.report.acer - result.mean_acer);
    result.std_acer = std::sqrt(ss / n);
}

nlohmann::json to_json(const ExperimentResult& result) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : result.rows) {
        nlohmann::json row;
        row["protocol"] = r.protocol;
        row["attack"] = r.attack;
        row["metrics"] = r.report;
        row["epoch_loss"] = r.epoch_loss;
        rows.push_back(std::move(row));
    }
    return {{"rows", rows},
            {"mean_acer", result.mean_acer},
            {"std_acer", result.std_acer},
            {"std_kind", "population"},
            {"seed", result.seed},
            {"config_hash", result.config_hash}};
}

ExperimentResult run_loo(const Dataset& data, const TrainConfig& cfg, const StudyOptions& options) {
    cfg.validate();
    const auto attacks = data.manifest().attack_types();
    if (attacks.size() < 2) throw ConfigError("leave-one-out needs at least two attack types");

    ExperimentResult result;
    result.seed = cfg.seed;
    result.config_hash = config_hash(nlohmann::json(cfg));
    const std::uint64_t split_seed = derive_seed(cfg.seed, "split");
    for (const auto& attack : attacks) {
        const ProtocolSplit split = make_loo(data.manifest(), attack, split_seed, options.ratios);
        for (const auto* fold : {&split.train, &split.dev})
            for (const auto& id : *fold)
                if (data.by_id(id).attack_type == attack)
                    throw RuntimeFailure("excluded attack " + attack + " leaked into " + split.name);

        const TrainResult trained = train(data, split, cfg, options.hooks);
        const Evaluation ev = evaluate(trained.params, data, split, options.eval);
        if (options.run) write_leg(options.run->sub(split.name), trained, ev, options.eval);
        result.rows.push_back({split.name, attack, ev.report, trained.epoch_loss});
    }
    aggregate(result);
    return result;
}

std::vector<GammaResult> run_gamma_sweep(const Dataset& data, const TrainConfig& cfg, std::span<const double> gammas,
                                         const StudyOptions& options) {
    if (gammas.empty()) throw ConfigError("gamma list is empty");
    for (const double g : gammas)
        if (!(g >= 0.0)) throw ConfigError("gamma must be >= 0, got " + format_double(g));

    std::vector<GammaResult> out;
    for (const double g : gammas) {
        TrainConfig c = cfg;
        c.loss.gamma = g;
        StudyOptions o = options;
        std::optional<RunDirectory> sub;
        if (options.run) {
            char name[32];
            std::snprintf(name, sizeof name, "gamma_%g", g);
            sub.emplace(options.run->sub(name));
            o.run = &*sub;
        }
        out.push_back({g, run_loo(data, c, o)});
    }
    return out;
}

const SingleChannelCell& SingleChannelStudy::cell(double gamma, Head head) const {
    for (const auto& c : cells)
        if (c.gamma == gamma && c.head == head) return c;
    throw std::out_of_range("no such single-channel cell");
}

double median(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("median of empty set");
    std::sort(values.begin(), values.end());
    const std::size_t m = values.size() / 2;
    return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

SingleChannelStudy run_single_channel_study(const Dataset& data, const TrainConfig& cfg,
                                            std::span<const std::uint64_t> seeds, const StudyOptions& options) {
    if (seeds.empty()) throw ConfigError("seed list is empty");
    SingleChannelStudy study;
    study.seeds.assign(seeds.begin(), seeds.end());
    for (const double g : {0.0, 3.0})
        for (const Head h : {Head::a, Head::b}) study.cells.push_back({g, h, {}, 0.0});

    for (const std::uint64_t seed : seeds) {
        const ProtocolSplit split = make_grandtest(data.manifest(), options.ratios, derive_seed(seed, "split"));
        for (const double g : {0.0, 3.0}) {
            TrainConfig c = cfg;
            c.seed = seed;
            c.loss.gamma = g;
            const TrainResult trained = train(data, split, c, options.hooks);
            for (const Head h : {Head::a, Head::b}) {
                EvalOptions eo = options.eval;
                eo.head = h;
                Evaluation ev = evaluate(trained.params, data, split, eo);
                ev.protocol = split.name + "_head_" + std::string(to_string(h));
                if (options.run) {
                    char name[64];
                    std::snprintf(name, sizeof name, "seed_%llu_gamma_%g", static_cast<unsigned long long>(seed), g);
                    write_leg(options.run->sub(name), trained, ev, eo);
                }
                for (auto& cell : study.cells)
                    if (cell.gamma == g && cell.head == h) cell.acer_per_seed.push_back(ev.report.acer);
            }
        }
    }
    for (auto& cell : study.cells) cell.median_acer = median(cell.acer_per_seed);
    return study;
}

nlohmann::json to_json(const SingleChannelStudy& study) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : study.cells) {
        cells.push_back({{"gamma", c.gamma},
                         {"head", std::string(to_string(c.head))},
                         {"acer_per_seed", c.acer_per_seed},
                         {"median_acer", c.median_acer}});
    }
    return {{"seeds", study.seeds}, {"cells", cells}, {"aggregate", "median over seeds"}};
}

CrossDatasetResult run_cross_dataset(const Dataset& source, const Dataset& target, const TrainConfig& cfg,
                                     const StudyOptions& options) {
    const std::uint64_t split_seed = derive_seed(cfg.seed, "split");
    const ProtocolSplit src = make_grandtest(source.manifest(), options.ratios, split_seed);
    const ProtocolSplit tgt = make_grandtest(target.manifest(), options.ratios, split_seed);

    const TrainResult trained = train(source, src, cfg, options.hooks);
    check_compatible(trained.params, target);

    EvalOptions eo;
    eo.head = Head::joint;
    eo.rule = ThresholdRule::eer;
    Evaluation intra = evaluate(trained.params, source, src, eo);

    CrossDatasetResult out;
    out.threshold = intra.report.threshold;
    out.intra = intra.report;
    const auto target_scores = score_samples(trained.params, target, tgt.eval);
    out.cross = hter(labeled_scores(target_scores, Head::joint), out.threshold, ThresholdRule::eer);

    if (options.run) {
        write_leg(*options.run, trained, intra, eo);
        options.run->write_text("scores_cross_joint.tsv", format_score_file(target_scores));
    }
    return out;
}

nlohmann::json to_json(const CrossDatasetResult& result) {
    nlohmann::json j;
    if (std::isfinite(result.threshold))
        j["threshold"] = result.threshold;
    else
        j["threshold"] = result.threshold > 0 ? "+inf" : "-inf";
    j["threshold_rule"] = std::string(to_string(ThresholdRule::eer));
    j["head"] = std::string(to_string(Head::joint));
    j["intra"] = result.intra;
    j["cross"] = result.cross;
    return j;
}

ScoreDistributions dump_score_distributions(const ParameterSet& params, const Dataset& data,
                                            const ProtocolSplit& split, std::size_t bins) {
    if (bins == 0) throw ConfigError("histogram needs at least one bin");
    check_compatible(params, data);
    ScoreDistributions out;
    out.scores = score_samples(params, data, split.eval);
    for (const Head head : {Head::a, Head::b, Head::joint}) {
        HeadHistogram h;
        h.head = head;
        h.bonafide.assign(bins, 0);
        h.attack.assign(bins, 0);
        for (const auto& r : out.scores) {
            const auto s = r.score(head);
            if (!s) continue;
            const double clamped = std::clamp(*s, 0.0, 1.0);
            const auto bin = std::min(bins - 1, static_cast<std::size_t>(clamped * static_cast<double>(bins)));
            (r.label == Label::bonafide ? h.bonafide : h.attack)[bin] += 1;
        }
        const double nb = static_cast<double>(std::accumulate(h.bonafide.begin(), h.bonafide.end(), std::size_t{0}));
        const double na = static_cast<double>(std::accumulate(h.attack.begin(), h.attack.end(), std::size_t{0}));
        if (nb > 0 && na > 0) {
            for (std::size_t b = 0; b < bins; ++b)
                h.overlap += std::min(static_cast<double>(h.bonafide[b]) / nb, static_cast<double>(h.attack[b]) / na);
        }
        out.heads.push_back(std::move(h));
    }
    return out;
}

std::string format_histograms(const ScoreDistributions& dist) {
    std::string out = "bin_lo\tbin_hi";
    for (const auto& h : dist.heads) {
        const std::string name(to_string(h.head));
        out += "\t" + name + "_bonafide\t" + name + "_attack";
    }
    out += "\n";
    const std::size_t bins = dist.heads.empty() ? 0 : dist.heads.front().bonafide.size();
    for (std::size_t b = 0; b < bins; ++b) {
        const double lo = static_cast<double>(b) / static_cast<double>(bins);
        const double hi = static_cast<double>(b + 1) / static_cast<double>(bins);
        out += format_double(lo) + "\t" + format_double(hi);
        for (const auto& h : dist.heads)
            out += "\t" + std::to_string(h.bonafide[b]) + "\t" + std::to_string(h.attack[b]);
        out += "\n";
    }
    return out;
}

LossCurveTable emit_loss_curves(std::span<const double> gammas, std::span<const double> q_values) {
    for (const double g : gammas)
        if (!(g >= 0.0)) throw ConfigError("gamma must be >= 0");
    for (const double q : q_values)
        if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("q must lie in [0, 1]");

    LossCurveTable t;
    for (int i = 1; i <= 99; ++i) t.p_t.push_back(i / 100.0);
    for (const double p : t.p_t) t.ce.push_back(binary_ce(p).value);
    for (const double g : gammas) {
        for (const double q : q_values) {
            LossCurveColumn col{g, q, {}};
            for (const double p : t.p_t) col.values.push_back(cmfl(p, q, 1.0, g).value);
            t.columns.push_back(std::move(col));
        }
    }
    return t;
}

std::string format_loss_curves(const LossCurveTable& table) {
    std::string out = "p_t\tce";
    for (const auto& c : table.columns) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "\tcmfl_g%g_q%g", c.gamma, c.q);
        out += buf;
    }
    out += "\n";
    for (std::size_t i = 0; i < table.p_t.size(); ++i) {
        out += format_double(table.p_t[i]) + "\t" + format_double(table.ce[i]);
        for (const auto& c : table.columns) out += "\t" + format_double(c.values[i]);
        out += "\n";
    }
    return out;
}

}  // namespace cmfl
