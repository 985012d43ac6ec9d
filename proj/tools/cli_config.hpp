#pragma once

// Configuration document for the cmfl command-line tool. Every field has a
// built-in default; a JSON config file (comments allowed) may set any subset,
// and command-line flags override both.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmfl/datagen.hpp"
#include "cmfl/datasets.hpp"
#include "cmfl/harness.hpp"

namespace cmfl::cli {

struct ProtocolConfig {
    std::string name = "grandtest";  // "grandtest" or "loo_<attack>"
    SplitRatios ratios;
    Head head = Head::joint;
    ThresholdRule threshold_rule = ThresholdRule::bpcer_at_target;
    double bpcer_target = 0.01;
    std::vector<double> gammas = kDefaultGammas;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
};

struct InputConfig {
    std::string data;
    std::string target_data;
    std::string checkpoint;
    double mad_k = kDefaultMadClip;
};

struct CliConfig {
    GeneratorSpec generator;
    TrainConfig train = TrainConfig::desk_scale();
    ProtocolConfig protocol;
    InputConfig input;
};

/// Command-line values; unset fields leave the config untouched.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch_size;
    std::optional<double> learning_rate;
    std::optional<double> gamma;
    std::optional<double> lambda;
    std::optional<std::string> head;
    std::optional<std::string> threshold_rule;
    std::optional<double> bpcer_target;
    std::optional<std::string> protocol;
    std::optional<std::vector<double>> gammas;
    std::optional<std::vector<std::uint64_t>> seeds;
    std::optional<std::string> data;
    std::optional<std::string> target_data;
    std::optional<std::string> checkpoint;
    std::optional<std::size_t> image_size;
    std::optional<std::size_t> n_identities;
    std::optional<std::size_t> samples_per_identity;
    std::optional<double> noise_sigma;
    std::optional<double> attack_strength;
};

[[nodiscard]] nlohmann::json to_json(const CliConfig& config);

/// Throws ConfigError naming the first key that has no counterpart in the
/// default document, e.g. "unknown config key 'train.optimizer.lr'".
void reject_unknown_keys(const nlohmann::json& doc);

/// Defaults overlaid with `doc`. Validates the result.
[[nodiscard]] CliConfig config_from_json(const nlohmann::json& doc);

/// Parses JSON text with comments allowed.
[[nodiscard]] CliConfig parse_config(const std::string& text);
[[nodiscard]] CliConfig load_config(const std::filesystem::path& path);

/// `seed` applies to both the generator and training seeds.
void apply_overrides(CliConfig& config, const Overrides& overrides);

void validate(const CliConfig& config);

}  // namespace cmfl::cli
