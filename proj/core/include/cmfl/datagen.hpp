#pragma once

// Deterministic synthetic two-channel data. Every bonafide sample is two views
// of one smooth random "face" surface: channel A is a tinted rendering of the
// surface, channel B a blurred gradient-magnitude map of it. Attacks perturb
// only the channel(s) in which they are meant to be visible.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmfl/image.hpp"
#include "cmfl/losses.hpp"

namespace cmfl {

enum class AttackType { a_visible, b_visible, both_visible };

inline constexpr std::string_view kBonafide = "bonafide";

[[nodiscard]] std::string_view to_string(AttackType type) noexcept;
/// "A_VISIBLE", "B_VISIBLE" or "BOTH_VISIBLE"; throws ConfigError otherwise.
[[nodiscard]] AttackType parse_attack_type(std::string_view text);

struct GeneratorSpec {
    std::size_t image_size = 32;
    std::size_t n_identities = 24;
    /// Samples per identity for each class (bonafide and every attack type).
    std::size_t samples_per_identity = 16;
    std::vector<AttackType> attack_types{AttackType::a_visible, AttackType::b_visible, AttackType::both_visible};
    double attack_strength = 0.5;
    double noise_sigma = 0.02;
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const GeneratorSpec& s);
void from_json(const nlohmann::json& j, GeneratorSpec& s);

struct MultiModalSample {
    std::string id;
    std::string identity;
    Image x_a;
    Image x_b;
    Label label = Label::bonafide;
    std::string attack_type{kBonafide};
};

inline constexpr std::size_t kChannelsA = 3;
inline constexpr std::size_t kChannelsB = 1;

[[nodiscard]] std::string identity_name(std::size_t identity_index);

/// One sample. The underlying bonafide pair (surface, jitter, sensor noise)
/// depends only on (seed, identity_index, draw_index); the attack perturbation
/// draws from its own stream. Hence an A_VISIBLE sample and a bonafide sample
/// rendered with the same draw index have byte-identical x_b.
[[nodiscard]] MultiModalSample render_sample(const GeneratorSpec& spec, std::size_t identity_index,
                                             std::size_t draw_index, std::optional<AttackType> attack);

/// Identity-major, bonafide first, then attacks in `spec.attack_types` order.
[[nodiscard]] std::vector<MultiModalSample> generate(const GeneratorSpec& spec);

enum class Channel { a, b };

/// Per-plane [mean, std, mean |Laplacian|] descriptor used by the oracle.
[[nodiscard]] std::vector<double> image_descriptor(const Image& img);

/// Leave-one-out nearest-centroid accuracy (bonafide vs attack) on z-scored
/// descriptors of one channel. Throws DataError if a class is absent or has
/// fewer than 50 samples.
[[nodiscard]] double oracle_separability(std::span<const MultiModalSample> samples, Channel channel);

}  // namespace cmfl
