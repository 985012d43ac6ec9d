#include "cli_config.hpp"

#include <fstream>
#include <sstream>

#include "cmfl/error.hpp"

namespace cmfl::cli {

namespace {

void check_against(const nlohmann::json& doc, const nlohmann::json& reference, const std::string& prefix) {
    if (!doc.is_object()) {
        if (reference.is_object())
            throw ConfigError("config key '" + (prefix.empty() ? std::string("<root>") : prefix) + "' must be an object");
        return;
    }
    for (const auto& [key, value] : doc.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!reference.contains(key)) throw ConfigError("unknown config key '" + path + "'");
        if (reference.at(key).is_object()) check_against(value, reference.at(key), path);
    }
}

nlohmann::json ratios_json(const SplitRatios& r) { return {{"train", r.train}, {"dev", r.dev}, {"eval", r.eval}}; }

}  // namespace

nlohmann::json to_json(const CliConfig& c) {
    nlohmann::json protocol = {{"name", c.protocol.name},
                               {"ratios", ratios_json(c.protocol.ratios)},
                               {"head", std::string(to_string(c.protocol.head))},
                               {"threshold_rule", std::string(to_string(c.protocol.threshold_rule))},
                               {"bpcer_target", c.protocol.bpcer_target},
                               {"gammas", c.protocol.gammas},
                               {"seeds", c.protocol.seeds}};
    nlohmann::json input = {{"data", c.input.data},
                            {"target_data", c.input.target_data},
                            {"checkpoint", c.input.checkpoint},
                            {"mad_k", c.input.mad_k}};
    return {{"generator", c.generator}, {"train", c.train}, {"protocol", protocol}, {"input", input}};
}

void reject_unknown_keys(const nlohmann::json& doc) { check_against(doc, to_json(CliConfig{}), ""); }

CliConfig config_from_json(const nlohmann::json& doc) {
    reject_unknown_keys(doc);
    // Overlay the document on the defaults so partial sections keep the
    // CLI defaults (which differ from the library defaults for training).
    nlohmann::json merged = to_json(CliConfig{});
    merged.merge_patch(doc);

    CliConfig c;
    try {
        c.generator = merged.at("generator").get<GeneratorSpec>();
        c.train = merged.at("train").get<TrainConfig>();
        const auto& p = merged.at("protocol");
        c.protocol.name = p.at("name").get<std::string>();
        c.protocol.ratios = {p.at("ratios").at("train").get<double>(), p.at("ratios").at("dev").get<double>(),
                             p.at("ratios").at("eval").get<double>()};
        c.protocol.head = parse_head(p.at("head").get<std::string>());
        c.protocol.threshold_rule = parse_threshold_rule(p.at("threshold_rule").get<std::string>());
        c.protocol.bpcer_target = p.at("bpcer_target").get<double>();
        c.protocol.gammas = p.at("gammas").get<std::vector<double>>();
        c.protocol.seeds = p.at("seeds").get<std::vector<std::uint64_t>>();
        const auto& in = merged.at("input");
        c.input.data = in.at("data").get<std::string>();
        c.input.target_data = in.at("target_data").get<std::string>();
        c.input.checkpoint = in.at("checkpoint").get<std::string>();
        c.input.mad_k = in.at("mad_k").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config value has the wrong type: ") + e.what());
    }
    validate(c);
    return c;
}

CliConfig parse_config(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("cannot parse config: ") + e.what());
    }
    return config_from_json(doc);
}

CliConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void apply_overrides(CliConfig& c, const Overrides& o) {
    if (o.seed) c.generator.seed = c.train.seed = *o.seed;
    if (o.epochs) c.train.epochs = *o.epochs;
    if (o.batch_size) c.train.batch_size = *o.batch_size;
    if (o.learning_rate) c.train.optimizer.learning_rate = *o.learning_rate;
    if (o.gamma) c.train.loss.gamma = *o.gamma;
    if (o.lambda) c.train.loss.lambda = *o.lambda;
    if (o.head) c.protocol.head = parse_head(*o.head);
    if (o.threshold_rule) c.protocol.threshold_rule = parse_threshold_rule(*o.threshold_rule);
    if (o.bpcer_target) c.protocol.bpcer_target = *o.bpcer_target;
    if (o.protocol) c.protocol.name = *o.protocol;
    if (o.gammas) c.protocol.gammas = *o.gammas;
    if (o.seeds) c.protocol.seeds = *o.seeds;
    if (o.data) c.input.data = *o.data;
    if (o.target_data) c.input.target_data = *o.target_data;
    if (o.checkpoint) c.input.checkpoint = *o.checkpoint;
    if (o.image_size) {
        c.generator.image_size = *o.image_size;
        c.train.network.input_height = c.train.network.input_width = *o.image_size;
    }
    if (o.n_identities) c.generator.n_identities = *o.n_identities;
    if (o.samples_per_identity) c.generator.samples_per_identity = *o.samples_per_identity;
    if (o.noise_sigma) c.generator.noise_sigma = *o.noise_sigma;
    if (o.attack_strength) c.generator.attack_strength = *o.attack_strength;
    validate(c);
}

void validate(const CliConfig& c) {
    c.generator.validate();
    c.train.validate();
    const auto& r = c.protocol.ratios;
    if (!(r.train > 0 && r.dev > 0 && r.eval > 0)) throw ConfigError("protocol.ratios must all be positive");
    if (!(c.protocol.bpcer_target >= 0.0 && c.protocol.bpcer_target <= 1.0))
        throw ConfigError("protocol.bpcer_target must lie in [0, 1]");
    for (const double g : c.protocol.gammas)
        if (!(g >= 0.0)) throw ConfigError("protocol.gammas must be >= 0");
    if (c.protocol.name != "grandtest" && c.protocol.name.rfind("loo_", 0) != 0)
        throw ConfigError("protocol.name must be 'grandtest' or 'loo_<attack>'");
    if (!(c.input.mad_k > 0.0)) throw ConfigError("input.mad_k must be positive");
}

}  // namespace cmfl::cli
