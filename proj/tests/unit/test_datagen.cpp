#include <gtest/gtest.h>

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "cmfl/datagen.hpp"
#include "cmfl/error.hpp"

using namespace cmfl;

namespace {

struct Moments {
    double mean = 0.0;
    double var = 0.0;
};

Moments plane_moments(const Image& img) {
    Moments m;
    for (double v : img.pixels) m.mean += v;
    m.mean /= static_cast<double>(img.pixels.size());
    for (double v : img.pixels) m.var += (v - m.mean) * (v - m.mean);
    m.var /= static_cast<double>(img.pixels.size() - 1);
    return m;
}

// Two-sided Welch t-test p-value.
double welch_p(const std::vector<double>& x, const std::vector<double>& y) {
    auto mv = [](const std::vector<double>& v) {
        const double n = static_cast<double>(v.size());
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
        double ss = 0.0;
        for (double a : v) ss += (a - mean) * (a - mean);
        return std::pair{mean, ss / (n - 1)};
    };
    const auto [mx, vx] = mv(x);
    const auto [my, vy] = mv(y);
    const double nx = static_cast<double>(x.size()), ny = static_cast<double>(y.size());
    const double se2 = vx / nx + vy / ny;
    if (se2 == 0.0) return mx == my ? 1.0 : 0.0;
    const double t = (mx - my) / std::sqrt(se2);
    const double df = se2 * se2 / ((vx / nx) * (vx / nx) / (nx - 1) + (vy / ny) * (vy / ny) / (ny - 1));
    const boost::math::students_t dist(df);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

// p-values for per-image mean and variance of one channel, class vs bonafide.
std::pair<double, double> channel_test(const std::vector<MultiModalSample>& samples, std::string_view attack,
                                       Channel channel) {
    std::vector<double> am, av, bm, bv;
    for (const auto& s : samples) {
        const Moments m = plane_moments(channel == Channel::a ? s.x_a : s.x_b);
        if (s.attack_type == attack) {
            am.push_back(m.mean);
            av.push_back(m.var);
        } else if (s.label == Label::bonafide) {
            bm.push_back(m.mean);
            bv.push_back(m.var);
        }
    }
    return {welch_p(am, bm), welch_p(av, bv)};
}

std::vector<MultiModalSample> only(const std::vector<MultiModalSample>& all, std::string_view attack) {
    std::vector<MultiModalSample> out;
    for (const auto& s : all)
        if (s.label == Label::bonafide || s.attack_type == attack) out.push_back(s);
    return out;
}

const std::vector<MultiModalSample>& default_samples() {
    static const std::vector<MultiModalSample> samples = generate(GeneratorSpec{});
    return samples;
}

}  // namespace

TEST(Generator, Deterministic) {
    GeneratorSpec spec;
    spec.n_identities = 6;
    spec.samples_per_identity = 2;
    const auto a = generate(spec), b = generate(spec);
    ASSERT_EQ(a.size(), 6u * 2u * 4u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].id, b[i].id);
        EXPECT_EQ(a[i].x_a, b[i].x_a);
        EXPECT_EQ(a[i].x_b, b[i].x_b);
    }
    spec.seed = 1;
    EXPECT_NE(generate(spec)[0].x_a, a[0].x_a);
}

TEST(Generator, SampleInvariants) {
    GeneratorSpec spec;
    spec.n_identities = 6;
    spec.samples_per_identity = 3;
    std::set<std::string> ids;
    for (const auto& s : generate(spec)) {
        EXPECT_TRUE(ids.insert(s.id).second) << s.id;
        EXPECT_EQ(s.label == Label::bonafide, s.attack_type == kBonafide);
        EXPECT_EQ(s.x_a.channels, kChannelsA);
        EXPECT_EQ(s.x_b.channels, kChannelsB);
        EXPECT_EQ(s.x_a.height, 32u);
        for (const Image* img : {&s.x_a, &s.x_b})
            for (double v : img->pixels) {
                EXPECT_GE(v, 0.0);
                EXPECT_LE(v, 1.0);
            }
        EXPECT_EQ(s.id.rfind(s.identity, 0), 0u);
    }
}

TEST(Generator, AVisibleLeavesChannelBUntouched) {
    const GeneratorSpec spec;
    for (std::size_t id = 0; id < 3; ++id)
        for (std::size_t draw = 0; draw < 4; ++draw) {
            const auto bona = render_sample(spec, id, draw, std::nullopt);
            const auto a = render_sample(spec, id, draw, AttackType::a_visible);
            const auto b = render_sample(spec, id, draw, AttackType::b_visible);
            EXPECT_EQ(a.x_b, bona.x_b);
            EXPECT_NE(a.x_a, bona.x_a);
            EXPECT_EQ(b.x_a, bona.x_a);
            EXPECT_NE(b.x_b, bona.x_b);
        }
}

TEST(Generator, ChannelStatisticsTwoSampleTests) {
    GeneratorSpec spec;
    spec.n_identities = 25;
    spec.samples_per_identity = 8;  // 200 per class
    const auto samples = generate(spec);

    const auto [bm, bv] = channel_test(samples, "A_VISIBLE", Channel::b);
    EXPECT_GT(bm, 0.01);
    EXPECT_GT(bv, 0.01);

    // BOTH_VISIBLE differs from bonafide in each channel.
    const auto [am2, av2] = channel_test(samples, "BOTH_VISIBLE", Channel::a);
    const auto [bm2, bv2] = channel_test(samples, "BOTH_VISIBLE", Channel::b);
    EXPECT_LT(std::min(am2, av2), 0.01);
    EXPECT_LT(std::min(bm2, bv2), 0.01);
}

TEST(Generator, SeparabilityBars) {
    const auto& all = default_samples();
    const auto a_vis = only(all, "A_VISIBLE");
    EXPECT_LE(oracle_separability(a_vis, Channel::b), 0.60);
    EXPECT_GE(oracle_separability(a_vis, Channel::a), 0.90);

    const auto b_vis = only(all, "B_VISIBLE");
    EXPECT_LE(oracle_separability(b_vis, Channel::a), 0.60);
    EXPECT_GE(oracle_separability(b_vis, Channel::b), 0.90);

    EXPECT_GE(oracle_separability(all, Channel::a), 0.0);
}

TEST(Generator, OracleErrors) {
    const auto& all = default_samples();
    std::vector<MultiModalSample> bona;
    for (const auto& s : all)
        if (s.label == Label::bonafide) bona.push_back(s);
    EXPECT_THROW((void)oracle_separability(bona, Channel::a), DataError);
    EXPECT_THROW((void)oracle_separability(bona, Channel::b), DataError);

    std::vector<MultiModalSample> few(all.begin(), all.begin() + 40);
    EXPECT_THROW((void)oracle_separability(few, Channel::a), DataError);
}

TEST(GeneratorSpec, Validation) {
    GeneratorSpec s;
    EXPECT_NO_THROW(s.validate());
    s.n_identities = 5;
    EXPECT_THROW(s.validate(), ConfigError);
    s = {};
    s.attack_strength = 0.0;
    EXPECT_THROW(s.validate(), ConfigError);
    s = {};
    s.noise_sigma = -1.0;
    EXPECT_THROW(s.validate(), ConfigError);
    s = {};
    s.attack_types = {AttackType::a_visible, AttackType::a_visible};
    EXPECT_THROW(s.validate(), ConfigError);
    s = {};
    s.image_size = 4;
    EXPECT_THROW((void)generate(s), ConfigError);
}

TEST(GeneratorSpec, JsonRoundTripAndNames) {
    GeneratorSpec s;
    s.seed = 99;
    s.attack_types = {AttackType::both_visible};
    nlohmann::json j = s;
    const GeneratorSpec back = j.get<GeneratorSpec>();
    EXPECT_EQ(back.seed, 99u);
    ASSERT_EQ(back.attack_types.size(), 1u);
    EXPECT_EQ(back.attack_types[0], AttackType::both_visible);

    for (AttackType t : {AttackType::a_visible, AttackType::b_visible, AttackType::both_visible})
        EXPECT_EQ(parse_attack_type(to_string(t)), t);
    EXPECT_THROW((void)parse_attack_type("PRINT"), ConfigError);
    EXPECT_EQ(identity_name(7), "id007");
}
