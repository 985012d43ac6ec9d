#include "cmfl/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "cmfl/error.hpp"
#include "cmfl/preprocessing.hpp"
#include "cmfl/rng.hpp"

namespace cmfl {

namespace {

constexpr std::size_t kComponents = 6;
constexpr std::size_t kMinIdentities = 6;
constexpr std::size_t kMinOracleClass = 50;

struct IdentityParams {
    std::array<double, kComponents> amplitude{};
    std::array<double, kComponents> freq_x{};
    std::array<double, kComponents> freq_y{};
    std::array<double, kComponents> phase{};
    std::array<double, kChannelsA> tint{};
    double centre_x = 0.5;
    double centre_y = 0.5;
};

IdentityParams identity_params(std::uint64_t seed, std::size_t identity) {
    Rng rng(derive_seed(seed, "identity", identity));
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unit;
    std::uniform_int_distribution<int> freq(0, 2);
    IdentityParams p;
    for (std::size_t k = 0; k < kComponents; ++k) {
        p.amplitude[k] = normal(rng);
        p.freq_x[k] = freq(rng);
        p.freq_y[k] = freq(rng);
        if (p.freq_x[k] == 0 && p.freq_y[k] == 0) p.freq_x[k] = 1;
        p.phase[k] = 2.0 * std::numbers::pi * unit(rng);
    }
    for (double& t : p.tint) t = 0.6 + 0.4 * unit(rng);
    p.centre_x = 0.45 + 0.1 * unit(rng);
    p.centre_y = 0.45 + 0.1 * unit(rng);
    return p;
}

using Plane = std::vector<double>;

Plane box_blur3(const Plane& in, std::size_t n) {
    Plane out(in.size());
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            double sum = 0.0;
            int count = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const auto yy = static_cast<std::ptrdiff_t>(y) + dy;
                    const auto xx = static_cast<std::ptrdiff_t>(x) + dx;
                    if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(n) || xx >= static_cast<std::ptrdiff_t>(n))
                        continue;
                    sum += in[static_cast<std::size_t>(yy) * n + static_cast<std::size_t>(xx)];
                    ++count;
                }
            out[y * n + x] = sum / count;
        }
    return out;
}

Plane gradient_magnitude(const Plane& in, std::size_t n) {
    Plane out(in.size());
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const std::size_t xl = x == 0 ? x : x - 1, xr = x + 1 == n ? x : x + 1;
            const std::size_t yu = y == 0 ? y : y - 1, yd = y + 1 == n ? y : y + 1;
            const double gx = (in[y * n + xr] - in[y * n + xl]) / static_cast<double>(xr - xl);
            const double gy = (in[yd * n + x] - in[yu * n + x]) / static_cast<double>(yd - yu);
            out[y * n + x] = std::sqrt(gx * gx + gy * gy);
        }
    return out;
}

}  // namespace

std::string_view to_string(AttackType type) noexcept {
    switch (type) {
        case AttackType::a_visible: return "A_VISIBLE";
        case AttackType::b_visible: return "B_VISIBLE";
        case AttackType::both_visible: return "BOTH_VISIBLE";
    }
    return "A_VISIBLE";
}

AttackType parse_attack_type(std::string_view text) {
    if (text == "A_VISIBLE") return AttackType::a_visible;
    if (text == "B_VISIBLE") return AttackType::b_visible;
    if (text == "BOTH_VISIBLE") return AttackType::both_visible;
    throw ConfigError("unknown attack type '" + std::string(text) + "'");
}

void GeneratorSpec::validate() const {
    if (image_size < 8) throw ConfigError("generator image_size must be >= 8");
    if (n_identities < kMinIdentities) throw ConfigError("generator n_identities must be >= 6");
    if (samples_per_identity < 1) throw ConfigError("generator samples_per_identity must be >= 1");
    if (!(attack_strength > 0.0 && attack_strength <= 1.0)) throw ConfigError("attack_strength must lie in (0, 1]");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
    for (std::size_t i = 0; i < attack_types.size(); ++i)
        for (std::size_t j = i + 1; j < attack_types.size(); ++j)
            if (attack_types[i] == attack_types[j]) throw ConfigError("duplicate attack type in generator spec");
}

void to_json(nlohmann::json& j, const GeneratorSpec& s) {
    std::vector<std::string> attacks;
    for (const AttackType t : s.attack_types) attacks.emplace_back(to_string(t));
    j = nlohmann::json{{"image_size", s.image_size},
                       {"n_identities", s.n_identities},
                       {"samples_per_identity", s.samples_per_identity},
                       {"attack_types", attacks},
                       {"attack_strength", s.attack_strength},
                       {"noise_sigma", s.noise_sigma},
                       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, GeneratorSpec& s) {
    const GeneratorSpec d;
    s.image_size = j.value("image_size", d.image_size);
    s.n_identities = j.value("n_identities", d.n_identities);
    s.samples_per_identity = j.value("samples_per_identity", d.samples_per_identity);
    s.attack_strength = j.value("attack_strength", d.attack_strength);
    s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    s.seed = j.value("seed", d.seed);
    s.attack_types = d.attack_types;
    if (j.contains("attack_types")) {
        s.attack_types.clear();
        for (const auto& a : j.at("attack_types")) s.attack_types.push_back(parse_attack_type(a.get<std::string>()));
    }
}

std::string identity_name(std::size_t identity_index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "id%03zu", identity_index);
    return buf;
}

MultiModalSample render_sample(const GeneratorSpec& spec, std::size_t identity_index, std::size_t draw_index,
                               std::optional<AttackType> attack) {
    const std::size_t n = spec.image_size;
    const IdentityParams ident = identity_params(spec.seed, identity_index);

    // Base stream: pose jitter and sensor noise for the underlying bonafide pair.
    Rng rng(derive_seed(spec.seed, "draw", identity_index, draw_index));
    std::normal_distribution<double> normal;
    std::array<double, kComponents> amp{}, phase{};
    for (std::size_t k = 0; k < kComponents; ++k) {
        amp[k] = ident.amplitude[k] + 0.2 * normal(rng);
        phase[k] = ident.phase[k] + 0.3 * normal(rng);
    }
    const double brightness = 0.03 * normal(rng);
    const double shift_x = 0.03 * normal(rng), shift_y = 0.03 * normal(rng);
    Plane noise_a(kChannelsA * n * n), noise_b(n * n);
    for (double& v : noise_a) v = normal(rng);
    for (double& v : noise_b) v = normal(rng);

    // Relief: an elliptical bump plus identity-specific low-frequency detail.
    Plane relief(n * n);
    const double inv_n = 1.0 / static_cast<double>(n);
    const double norm = 1.0 / std::sqrt(static_cast<double>(kComponents));
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const double u = (static_cast<double>(x) + 0.5) * inv_n;
            const double v = (static_cast<double>(y) + 0.5) * inv_n;
            const double dx = (u - ident.centre_x - shift_x) / 0.28;
            const double dy = (v - ident.centre_y - shift_y) / 0.34;
            double detail = 0.0;
            for (std::size_t k = 0; k < kComponents; ++k)
                detail += amp[k] * std::cos(2.0 * std::numbers::pi * (ident.freq_x[k] * u + ident.freq_y[k] * v) + phase[k]);
            relief[y * n + x] = std::exp(-0.5 * (dx * dx + dy * dy)) + 0.04 * norm * detail;
        }

    Plane depth = box_blur3(gradient_magnitude(relief, n), n);
    // Gradients are per pixel; rescale so the depth range does not depend on n.
    for (double& d : depth) d = 0.15 + 4.0 * d * static_cast<double>(n) / 32.0;

    Plane texture;
    const bool texture_a = attack && (*attack == AttackType::a_visible || *attack == AttackType::both_visible);
    const bool flatten_b = attack && (*attack == AttackType::b_visible || *attack == AttackType::both_visible);
    if (attack) {
        Rng arng(derive_seed(spec.seed, "attack", identity_index, draw_index));
        std::uniform_real_distribution<double> unit;
        if (texture_a) {
            const double period = 2.5 + unit(arng);
            const double px = 2.0 * std::numbers::pi * unit(arng), py = 2.0 * std::numbers::pi * unit(arng);
            texture.resize(n * n);
            for (std::size_t y = 0; y < n; ++y)
                for (std::size_t x = 0; x < n; ++x)
                    texture[y * n + x] = std::sin(2.0 * std::numbers::pi * static_cast<double>(x) / period + px) *
                                         std::sin(2.0 * std::numbers::pi * static_cast<double>(y) / period + py);
        }
        if (flatten_b) {
            double mean = 0.0;
            for (const double d : depth) mean += d;
            mean /= static_cast<double>(depth.size());
            const double keep = (1.0 - spec.attack_strength) * (1.0 - spec.attack_strength);
            for (double& d : depth) d = mean + keep * (d - mean);
        }
    }

    MultiModalSample s;
    s.identity = identity_name(identity_index);
    s.label = attack ? Label::attack : Label::bonafide;
    s.attack_type = attack ? std::string(to_string(*attack)) : std::string(kBonafide);
    s.x_a = Image(kChannelsA, n, n);
    s.x_b = Image(kChannelsB, n, n);
    for (std::size_t c = 0; c < kChannelsA; ++c)
        for (std::size_t i = 0; i < n * n; ++i) {
            double v = ident.tint[c] * (0.25 + 0.55 * relief[i]) + brightness;
            if (texture_a) v += 0.3 * spec.attack_strength * texture[i];
            s.x_a.pixels[c * n * n + i] = quantize_unit8(v + spec.noise_sigma * noise_a[c * n * n + i]);
        }
    for (std::size_t i = 0; i < n * n; ++i) s.x_b.pixels[i] = quantize_unit8(depth[i] + spec.noise_sigma * noise_b[i]);
    return s;
}

std::vector<MultiModalSample> generate(const GeneratorSpec& spec) {
    spec.validate();
    std::vector<MultiModalSample> out;
    out.reserve(spec.n_identities * spec.samples_per_identity * (1 + spec.attack_types.size()));
    char buf[96];
    for (std::size_t id = 0; id < spec.n_identities; ++id) {
        for (std::size_t k = 0; k < spec.samples_per_identity; ++k) {
            MultiModalSample s = render_sample(spec, id, k, std::nullopt);
            std::snprintf(buf, sizeof buf, "%s_%s_%02zu", s.identity.c_str(), s.attack_type.c_str(), k);
            s.id = buf;
            out.push_back(std::move(s));
        }
        for (const AttackType t : spec.attack_types) {
            // Slots keep each class on its own draws regardless of list order.
            const std::size_t slot = static_cast<std::size_t>(t) + 1;
            for (std::size_t k = 0; k < spec.samples_per_identity; ++k) {
                MultiModalSample s = render_sample(spec, id, slot * spec.samples_per_identity + k, t);
                std::snprintf(buf, sizeof buf, "%s_%s_%02zu", s.identity.c_str(), s.attack_type.c_str(), k);
                s.id = buf;
                out.push_back(std::move(s));
            }
        }
    }
    return out;
}

std::vector<double> image_descriptor(const Image& img) {
    std::vector<double> f;
    const std::size_t h = img.height, w = img.width;
    for (std::size_t c = 0; c < img.channels; ++c) {
        const auto plane = img.plane(c);
        double mean = 0.0;
        for (const double v : plane) mean += v;
        mean /= static_cast<double>(plane.size());
        double var = 0.0;
        for (const double v : plane) var += (v - mean) * (v - mean);
        var /= static_cast<double>(plane.size());
        double lap = 0.0;
        std::size_t count = 0;
        for (std::size_t y = 1; y + 1 < h; ++y)
            for (std::size_t x = 1; x + 1 < w; ++x) {
                const double l = 4.0 * plane[y * w + x] - plane[(y - 1) * w + x] - plane[(y + 1) * w + x] -
                                 plane[y * w + x - 1] - plane[y * w + x + 1];
                lap += std::abs(l);
                ++count;
            }
        f.push_back(mean);
        f.push_back(std::sqrt(var));
        f.push_back(count ? lap / static_cast<double>(count) : 0.0);
    }
    return f;
}

double oracle_separability(std::span<const MultiModalSample> samples, Channel channel) {
    std::vector<std::vector<double>> feats;
    std::vector<int> cls;
    std::array<std::size_t, 2> counts{};
    for (const MultiModalSample& s : samples) {
        feats.push_back(image_descriptor(channel == Channel::a ? s.x_a : s.x_b));
        cls.push_back(static_cast<int>(s.label));
        ++counts[static_cast<std::size_t>(s.label)];
    }
    if (counts[0] == 0 || counts[1] == 0) throw DataError("class absent");
    if (counts[0] < kMinOracleClass || counts[1] < kMinOracleClass)
        throw DataError("separability oracle needs at least 50 samples per class");

    const std::size_t dim = feats.front().size();
    for (std::size_t d = 0; d < dim; ++d) {
        double mean = 0.0, var = 0.0;
        for (const auto& f : feats) mean += f[d];
        mean /= static_cast<double>(feats.size());
        for (const auto& f : feats) var += (f[d] - mean) * (f[d] - mean);
        const double sd = std::sqrt(var / static_cast<double>(feats.size()));
        for (auto& f : feats) f[d] = sd > 0.0 ? (f[d] - mean) / sd : 0.0;
    }

    std::array<std::vector<double>, 2> sums{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
    for (std::size_t i = 0; i < feats.size(); ++i)
        for (std::size_t d = 0; d < dim; ++d) sums[static_cast<std::size_t>(cls[i])][d] += feats[i][d];

    std::size_t correct = 0;
    for (std::size_t i = 0; i < feats.size(); ++i) {
        std::array<double, 2> dist{};
        for (std::size_t k = 0; k < 2; ++k) {
            const bool own = static_cast<std::size_t>(cls[i]) == k;
            const double n = static_cast<double>(counts[k]) - (own ? 1.0 : 0.0);
            for (std::size_t d = 0; d < dim; ++d) {
                const double centroid = (sums[k][d] - (own ? feats[i][d] : 0.0)) / n;
                dist[k] += (feats[i][d] - centroid) * (feats[i][d] - centroid);
            }
        }
        const int predicted = dist[1] <= dist[0] ? 1 : 0;
        if (predicted == cls[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(feats.size());
}

}  // namespace cmfl
