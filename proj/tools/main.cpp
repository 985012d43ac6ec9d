#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "cli_config.hpp"
#include "cmfl/checkpoint.hpp"
#include "cmfl/datagen.hpp"
#include "cmfl/datasets.hpp"
#include "cmfl/error.hpp"
#include "cmfl/harness.hpp"
#include "cmfl/rng.hpp"
#include "cmfl/run_io.hpp"

namespace fs = std::filesystem;
using namespace cmfl;

namespace {

std::atomic<bool> g_interrupted{false};

extern "C" void on_sigint(int) { g_interrupted.store(true); }

enum ExitCode { kOk = 0, kConfig = 2, kData = 3, kRuntime = 4, kInterrupted = 130 };

struct Args {
    std::string config_path;
    std::string out;
    std::string name;
    bool force = false;
    std::vector<double> q_values{0.0, 0.25, 0.5, 0.75, 1.0};
    std::string run_path;
    cli::Overrides ov;
};

cli::CliConfig effective_config(const Args& args) {
    cli::CliConfig c = args.config_path.empty() ? cli::CliConfig{} : cli::load_config(args.config_path);
    cli::apply_overrides(c, args.ov);
    return c;
}

void add_common(CLI::App* cmd, Args& a) {
    cmd->add_option("--config", a.config_path, "JSON config file (comments allowed)");
    cmd->add_option("--seed", a.ov.seed, "Master seed (generator and training)");
}

void add_training(CLI::App* cmd, Args& a) {
    cmd->add_option("--data", a.ov.data, "Dataset directory");
    cmd->add_option("--epochs", a.ov.epochs);
    cmd->add_option("--batch-size", a.ov.batch_size);
    cmd->add_option("--lr", a.ov.learning_rate, "Adam learning rate");
    cmd->add_option("--gamma", a.ov.gamma, "CMFL focusing parameter");
    cmd->add_option("--lambda", a.ov.lambda, "Weight of the branch terms");
    cmd->add_option("--threshold-rule", a.ov.threshold_rule, "BPCER_AT_TARGET, EER or FIXED");
    cmd->add_option("--bpcer-target", a.ov.bpcer_target);
    cmd->add_option("--image-size", a.ov.image_size);
}

void add_output(CLI::App* cmd, Args& a) {
    cmd->add_option("--out", a.out, "Output root; runs go to <out>/runs/<name>")->required();
    cmd->add_option("--name", a.name, "Run name (default: the subcommand)");
}

Dataset load_input(const std::string& path, const cli::CliConfig& c, LoadOptions opts = {}) {
    if (path.empty()) throw ConfigError("no dataset given (use --data or input.data)");
    opts.mad_k = c.input.mad_k;
    return load_dataset(path, opts);
}

ProtocolSplit make_split(const Dataset& data, const cli::CliConfig& c) {
    const std::uint64_t split_seed = derive_seed(c.train.seed, "split");
    if (c.protocol.name == "grandtest") return make_grandtest(data.manifest(), c.protocol.ratios, split_seed);
    return make_loo(data.manifest(), c.protocol.name.substr(4), split_seed, c.protocol.ratios);
}

EvalOptions eval_options(const cli::CliConfig& c) {
    EvalOptions e;
    e.head = c.protocol.head;
    e.rule = c.protocol.threshold_rule;
    e.bpcer_target = c.protocol.bpcer_target;
    return e;
}

RunDirectory open_run(const Args& a, const std::string& command, const cli::CliConfig& c) {
    RunDirectory dir(fs::path(a.out) / "runs" / (a.name.empty() ? command : a.name));
    dir.set_status("running");
    dir.write_json("config.json", cli::to_json(c));
    return dir;
}

TrainHooks progress_hooks() {
    TrainHooks h;
    h.cancel = &g_interrupted;
    h.on_epoch = [](std::size_t epoch, double loss) {
        std::fprintf(stderr, "  epoch %zu  loss %.6f\n", epoch + 1, loss);
    };
    return h;
}

void print_metrics(const std::string& label, const MetricsReport& m) {
    std::printf("%-24s threshold %-12.6g APCER %6.2f%%  BPCER %6.2f%%  ACER %6.2f%%\n", label.c_str(), m.threshold,
                100 * m.apcer, 100 * m.bpcer, 100 * m.acer);
}

void print_loo_table(const ExperimentResult& r) {
    std::printf("%-24s %8s\n", "protocol", "ACER(%)");
    for (const auto& row : r.rows) std::printf("%-24s %8.2f\n", row.protocol.c_str(), 100 * row.report.acer);
    std::printf("%-24s %6.2f±%.2f\n", "Mean±Std", 100 * r.mean_acer, 100 * r.std_acer);
}

int cmd_gen_data(const Args& a) {
    const cli::CliConfig c = effective_config(a);
    const auto samples = generate(c.generator);
    Dataset ds = Dataset::from_samples(samples);
    save_dataset(a.out, ds, a.force);
    nlohmann::json echo = cli::to_json(c);
    std::ofstream(fs::path(a.out) / "generator.json") << echo.at("generator").dump(2) << "\n";

    std::map<std::string, std::size_t> counts;
    for (const auto& s : samples) counts[s.attack_type] += 1;
    std::printf("wrote %zu samples to %s\n", samples.size(), a.out.c_str());
    for (const auto& [type, n] : counts) std::printf("  %-14s %zu\n", type.c_str(), n);

    std::printf("nearest-centroid separability vs bonafide (channel A / channel B):\n");
    for (const AttackType t : c.generator.attack_types) {
        std::vector<MultiModalSample> pair;
        for (const auto& s : samples)
            if (s.label == Label::bonafide || s.attack_type == to_string(t)) pair.push_back(s);
        try {
            std::printf("  %-14s %.3f / %.3f\n", std::string(to_string(t)).c_str(),
                        oracle_separability(pair, Channel::a), oracle_separability(pair, Channel::b));
        } catch (const DataError& e) {
            std::printf("  %-14s n/a (%s)\n", std::string(to_string(t)).c_str(), e.what());
        }
    }
    return kOk;
}

int cmd_train(const Args&, const RunDirectory& run, const cli::CliConfig& c) {
    const Dataset data = load_input(c.input.data, c);
    const ProtocolSplit split = make_split(data, c);
    std::fprintf(stderr, "training %s: %zu train / %zu dev / %zu eval\n", split.name.c_str(), split.train.size(),
                 split.dev.size(), split.eval.size());
    const TrainResult trained = train(data, split, c.train, progress_hooks());
    const EvalOptions eo = eval_options(c);
    const Evaluation ev = evaluate(trained.params, data, split, eo);
    write_leg(run, trained, ev, eo);
    print_metrics(split.name + " (" + std::string(to_string(eo.head)) + ")", ev.report);
    return kOk;
}

int cmd_eval(const Args&, const RunDirectory& run, const cli::CliConfig& c) {
    if (c.input.checkpoint.empty()) throw ConfigError("no checkpoint given (use --checkpoint)");
    const ParameterSet params = load_checkpoint(c.input.checkpoint);
    const EvalOptions eo = eval_options(c);
    const Dataset data = load_input(c.input.data, c, channels_for(eo.head));
    const ProtocolSplit split = make_split(data, c);
    const Evaluation ev = evaluate(params, data, split, eo);
    const std::string head(to_string(eo.head));
    run.write_text("scores_dev_" + head + ".tsv", format_score_file(ev.dev_scores));
    run.write_text("scores_eval_" + head + ".tsv", format_score_file(ev.eval_scores));
    nlohmann::json report = report_json(ev, eo);
    report["kind"] = "evaluation";
    run.write_json("report_" + ev.protocol + ".json", report);
    print_metrics(split.name + " (" + head + ")", ev.report);
    return kOk;
}

StudyOptions study_options(const cli::CliConfig& c, const RunDirectory& run) {
    StudyOptions o;
    o.eval = eval_options(c);
    o.ratios = c.protocol.ratios;
    o.run = &run;
    o.hooks = progress_hooks();
    return o;
}

int cmd_loo(const Args&, const RunDirectory& run, const cli::CliConfig& c) {
    const Dataset data = load_input(c.input.data, c);
    const ExperimentResult r = run_loo(data, c.train, study_options(c, run));
    nlohmann::json report = to_json(r);
    report["kind"] = "loo";
    report["head"] = std::string(to_string(c.protocol.head));
    report["threshold_rule"] = std::string(to_string(c.protocol.threshold_rule));
    run.write_json("report_loo.json", report);
    print_loo_table(r);
    return kOk;
}

void print_sweep_table(const nlohmann::json& report) {
    const auto& results = report.at("results");
    if (results.empty()) return;
    std::printf("%-8s", "gamma");
    for (const auto& row : results.front().at("rows")) std::printf(" %22s", row.at("attack").get<std::string>().c_str());
    std::printf(" %16s\n", "Mean±Std");
    for (const auto& g : results) {
        std::printf("%-8g", g.at("gamma").get<double>());
        for (const auto& row : g.at("rows")) std::printf(" %22.2f", 100 * row.at("metrics").at("acer").get<double>());
        std::printf(" %10.2f±%.2f\n", 100 * g.at("mean_acer").get<double>(), 100 * g.at("std_acer").get<double>());
    }
}

int cmd_sweep_gamma(const Args&, const RunDirectory& run, const cli::CliConfig& c) {
    const Dataset data = load_input(c.input.data, c);
    const auto results = run_gamma_sweep(data, c.train, c.protocol.gammas, study_options(c, run));
    nlohmann::json report = {{"kind", "sweep_gamma"}, {"results", nlohmann::json::array()}};
    for (const auto& g : results) {
        nlohmann::json entry = to_json(g.result);
        entry["gamma"] = g.gamma;
        report["results"].push_back(std::move(entry));
    }
    run.write_json("report_sweep_gamma.json", report);
    print_sweep_table(report);
    return kOk;
}

void print_single_channel(const nlohmann::json& report) {
    std::printf("%-10s %-6s %12s   per-seed ACER(%%)\n", "loss", "head", "median(%)");
    for (const auto& cell : report.at("cells")) {
        const double g = cell.at("gamma").get<double>();
        const std::string loss = g == 0.0 ? "BCE" : "CMFL(" + std::to_string(static_cast<int>(g)) + ")";
        std::printf("%-10s %-6s %12.2f  ", loss.c_str(), cell.at("head").get<std::string>().c_str(),
                    100 * cell.at("median_acer").get<double>());
        for (const auto& v : cell.at("acer_per_seed")) std::printf(" %.2f", 100 * v.get<double>());
        std::printf("\n");
    }
}

int cmd_single_channel(const Args&, const RunDirectory& run, const cli::CliConfig& c) {
    const Dataset data = load_input(c.input.data, c);
    const SingleChannelStudy study = run_single_channel_study(data, c.train, c.protocol.seeds, study_options(c, run));
    nlohmann::json report = to_json(study);
    report["kind"] = "single_channel";
    report["threshold_rule"] = std::string(to_string(c.protocol.threshold_rule));
    run.write_json("report_single_channel.json", report);
    print_single_channel(report);
    return kOk;
}

void print_xdb(const nlohmann::json& report) {
    std::printf("EER threshold (source dev): %s\n", report.at("threshold").dump().c_str());
    std::printf("intra HTER %6.2f%%   cross HTER %6.2f%%\n", 100 * report.at("intra").at("hter").get<double>(),
                100 * report.at("cross").at("hter").get<double>());
}

int cmd_xdb(const Args&, const RunDirectory& run, const cli::CliConfig& c) {
    const Dataset source = load_input(c.input.data, c);
    if (c.input.target_data.empty()) throw ConfigError("no target dataset given (use --target-data)");
    const Dataset target = load_input(c.input.target_data, c);
    const CrossDatasetResult r = run_cross_dataset(source, target, c.train, study_options(c, run));
    nlohmann::json report = to_json(r);
    report["kind"] = "xdb";
    run.write_json("report_xdb.json", report);
    print_xdb(report);
    return kOk;
}

int cmd_loss_curves(const Args& a, const RunDirectory& run, const cli::CliConfig& c) {
    const LossCurveTable t = emit_loss_curves(c.protocol.gammas, a.q_values);
    run.write_text("losscurve.tsv", format_loss_curves(t));
    std::printf("wrote %zu columns x %zu points to %s\n", t.columns.size(), t.p_t.size(),
                run.file("losscurve.tsv").c_str());
    return kOk;
}

int cmd_dump_scores(const Args&, const RunDirectory& run, const cli::CliConfig& c) {
    if (c.input.checkpoint.empty()) throw ConfigError("no checkpoint given (use --checkpoint)");
    const ParameterSet params = load_checkpoint(c.input.checkpoint);
    const Dataset data = load_input(c.input.data, c);
    const ProtocolSplit split = make_split(data, c);
    const ScoreDistributions d = dump_score_distributions(params, data, split);
    for (const Head h : {Head::a, Head::b, Head::joint})
        run.write_text("scores_eval_" + std::string(to_string(h)) + ".tsv", format_score_file(d.scores));
    run.write_text("histograms.tsv", format_histograms(d));
    for (const auto& h : d.heads)
        std::printf("head %-6s class overlap %.4f\n", std::string(to_string(h.head)).c_str(), h.overlap);
    return kOk;
}

int cmd_report(const Args& a) {
    const fs::path dir(a.run_path);
    if (!fs::is_directory(dir)) throw DataError("missing run directory: " + dir.string());
    std::vector<fs::path> reports;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string n = e.path().filename().string();
        if (n.rfind("report_", 0) == 0 && e.path().extension() == ".json") reports.push_back(e.path());
    }
    std::sort(reports.begin(), reports.end());
    if (reports.empty()) throw DataError("no report_*.json in " + dir.string());
    for (const auto& p : reports) {
        const nlohmann::json r = nlohmann::json::parse(read_text(p));
        const std::string kind = r.value("kind", "evaluation");
        std::printf("== %s\n", p.filename().c_str());
        if (kind == "loo") {
            ExperimentResult er;
            for (const auto& row : r.at("rows"))
                er.rows.push_back({row.at("protocol"), row.at("attack"), row.at("metrics").get<MetricsReport>(), {}});
            er.mean_acer = r.at("mean_acer");
            er.std_acer = r.at("std_acer");
            print_loo_table(er);
        } else if (kind == "sweep_gamma") {
            print_sweep_table(r);
        } else if (kind == "single_channel") {
            print_single_channel(r);
        } else if (kind == "xdb") {
            print_xdb(r);
        } else {
            print_metrics(r.value("protocol", "?") + " (" + r.value("head", "?") + ")",
                          r.at("metrics").get<MetricsReport>());
        }
    }
    const fs::path status = dir / "status";
    if (fs::exists(status)) std::printf("status: %s", read_text(status).c_str());
    return kOk;
}

template <typename Fn>
int run_command(const Args& a, const std::string& command, Fn&& fn) {
    const cli::CliConfig c = effective_config(a);
    const RunDirectory run = open_run(a, command, c);
    try {
        const int code = fn(a, run, c);
        run.set_status("complete");
        return code;
    } catch (const Interrupted&) {
        run.set_status("interrupted");
        throw;
    } catch (...) {
        run.set_status("failed");
        throw;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-modal focal loss: training and evaluation for two-channel presentation-attack detection"};
    app.require_subcommand(1);
    Args a;

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic two-channel dataset");
    add_common(gen, a);
    gen->add_option("--out", a.out, "Dataset directory")->required();
    gen->add_flag("--force", a.force, "Overwrite an existing dataset");
    gen->add_option("--image-size", a.ov.image_size);
    gen->add_option("--n-identities", a.ov.n_identities);
    gen->add_option("--samples-per-identity", a.ov.samples_per_identity);
    gen->add_option("--noise-sigma", a.ov.noise_sigma);
    gen->add_option("--attack-strength", a.ov.attack_strength);

    struct Runner {
        CLI::App* cmd;
        int (*fn)(const Args&, const RunDirectory&, const cli::CliConfig&);
    };
    std::vector<Runner> runners;
    auto add_run = [&](const char* name, const char* help, auto fn) {
        auto* cmd = app.add_subcommand(name, help);
        add_common(cmd, a);
        add_training(cmd, a);
        add_output(cmd, a);
        runners.push_back({cmd, fn});
        return cmd;
    };

    auto* train_cmd = add_run("train", "Train on one protocol and evaluate", cmd_train);
    train_cmd->add_option("--protocol", a.ov.protocol, "grandtest or loo_<attack>");
    train_cmd->add_option("--head", a.ov.head, "A, B or joint");

    auto* eval_cmd = add_run("eval", "Evaluate a checkpoint", cmd_eval);
    eval_cmd->add_option("--checkpoint", a.ov.checkpoint)->required();
    eval_cmd->add_option("--protocol", a.ov.protocol, "grandtest or loo_<attack>");
    eval_cmd->add_option("--head", a.ov.head, "A, B or joint");

    auto* loo_cmd = add_run("loo", "Leave-one-out unseen-attack table", cmd_loo);
    loo_cmd->add_option("--head", a.ov.head, "A, B or joint");

    auto* sweep_cmd = add_run("sweep-gamma", "Leave-one-out table for each gamma", cmd_sweep_gamma);
    sweep_cmd->add_option("--gammas", a.ov.gammas, "Comma-separated gamma values")->delimiter(',');

    auto* single_cmd = add_run("single-channel", "Heads A and B alone, BCE vs CMFL, over seeds", cmd_single_channel);
    single_cmd->add_option("--seeds", a.ov.seeds, "Comma-separated seeds")->delimiter(',');

    auto* xdb_cmd = add_run("xdb", "Cross-dataset HTER at the source EER threshold", cmd_xdb);
    xdb_cmd->add_option("--target-data", a.ov.target_data, "Target dataset directory")->required();

    auto* curves_cmd = add_run("loss-curves", "Tabulate CMFL over p_t for several q", cmd_loss_curves);
    curves_cmd->add_option("--gammas", a.ov.gammas, "Comma-separated gamma values")->delimiter(',');
    curves_cmd->add_option("--q-values", a.q_values, "Comma-separated q values")->delimiter(',');

    auto* dump_cmd = add_run("dump-scores", "Per-head score files and histograms", cmd_dump_scores);
    dump_cmd->add_option("--checkpoint", a.ov.checkpoint)->required();
    dump_cmd->add_option("--protocol", a.ov.protocol, "grandtest or loo_<attack>");

    auto* report_cmd = app.add_subcommand("report", "Print the tables of a finished run");
    report_cmd->add_option("--run", a.run_path, "Run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfig;
    }

    std::signal(SIGINT, on_sigint);
    try {
        if (gen->parsed()) return cmd_gen_data(a);
        if (report_cmd->parsed()) return cmd_report(a);
        for (const auto& r : runners)
            if (r.cmd->parsed()) return run_command(a, r.cmd->get_name(), r.fn);
        return kConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const Interrupted&) {
        std::cerr << "interrupted; partial run left with status 'interrupted'\n";
        return kInterrupted;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kData;
    } catch (const std::invalid_argument& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return kRuntime;
    }
}
