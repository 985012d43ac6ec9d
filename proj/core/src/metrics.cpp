#include "cmfl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "cmfl/error.hpp"

namespace cmfl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct ClassCounts {
    std::size_t attack = 0;
    std::size_t bonafide = 0;
};

ClassCounts count_classes(std::span<const LabeledScore> records) {
    ClassCounts c;
    for (const auto& r : records) (r.label == Label::bonafide ? c.bonafide : c.attack) += 1;
    return c;
}

void require_both(const ClassCounts& c) {
    if (c.attack == 0) throw std::invalid_argument("class absent: no attack records");
    if (c.bonafide == 0) throw std::invalid_argument("class absent: no bonafide records");
}

double rate(std::size_t k, std::size_t n) { return n == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(n); }

std::vector<double> candidates(std::span<const LabeledScore> records) {
    std::vector<double> s;
    s.reserve(records.size());
    for (const auto& r : records) {
        if (!std::isfinite(r.score)) throw std::invalid_argument("scores must be finite");
        s.push_back(r.score);
    }
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    std::vector<double> c;
    c.reserve(s.size() + 1);
    c.push_back(-kInf);
    for (std::size_t i = 1; i < s.size(); ++i) c.push_back(0.5 * (s[i - 1] + s[i]));
    c.push_back(kInf);
    return c;
}

struct SortedScores {
    std::vector<double> attack;
    std::vector<double> bonafide;

    explicit SortedScores(std::span<const LabeledScore> records) {
        for (const auto& r : records) (r.label == Label::bonafide ? bonafide : attack).push_back(r.score);
        std::sort(attack.begin(), attack.end());
        std::sort(bonafide.begin(), bonafide.end());
    }
    // Bonafide scores strictly below the threshold are rejected.
    [[nodiscard]] std::size_t bonafide_rejected(double t) const {
        return static_cast<std::size_t>(std::lower_bound(bonafide.begin(), bonafide.end(), t) - bonafide.begin());
    }
    [[nodiscard]] std::size_t attack_accepted(double t) const {
        return attack.size() -
               static_cast<std::size_t>(std::lower_bound(attack.begin(), attack.end(), t) - attack.begin());
    }
};

void put_threshold(nlohmann::json& j, const char* key, double t) {
    if (std::isfinite(t))
        j[key] = t;
    else
        j[key] = t > 0 ? "+inf" : "-inf";
}

double get_threshold(const nlohmann::json& j, const char* key) {
    const auto& v = j.at(key);
    if (v.is_string()) return v.get<std::string>() == "+inf" ? kInf : -kInf;
    return v.get<double>();
}

std::string format_score(const std::optional<double>& s) {
    if (!s) return "NA";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", *s);
    return buf;
}

}  // namespace

std::string_view to_string(ThresholdRule rule) noexcept {
    switch (rule) {
        case ThresholdRule::bpcer_at_target: return "BPCER_AT_TARGET";
        case ThresholdRule::eer: return "EER";
        case ThresholdRule::fixed: return "FIXED";
    }
    return "FIXED";
}

ThresholdRule parse_threshold_rule(std::string_view text) {
    if (text == "BPCER_AT_TARGET" || text == "bpcer") return ThresholdRule::bpcer_at_target;
    if (text == "EER" || text == "eer") return ThresholdRule::eer;
    if (text == "FIXED" || text == "fixed") return ThresholdRule::fixed;
    throw ConfigError("unknown threshold rule '" + std::string(text) + "'");
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
    j = nlohmann::json::object();
    put_threshold(j, "threshold", r.threshold);
    j["threshold_rule"] = std::string(to_string(r.threshold_rule));
    j["apcer"] = r.apcer;
    j["bpcer"] = r.bpcer;
    j["acer"] = r.acer;
    j["far"] = r.far;
    j["frr"] = r.frr;
    j["hter"] = r.hter;
    j["n_attack"] = r.n_attack;
    j["n_bonafide"] = r.n_bonafide;
}

void from_json(const nlohmann::json& j, MetricsReport& r) {
    r.threshold = get_threshold(j, "threshold");
    r.threshold_rule = parse_threshold_rule(j.at("threshold_rule").get<std::string>());
    r.apcer = j.at("apcer").get<double>();
    r.bpcer = j.at("bpcer").get<double>();
    r.acer = j.at("acer").get<double>();
    r.far = j.at("far").get<double>();
    r.frr = j.at("frr").get<double>();
    r.hter = j.at("hter").get<double>();
    r.n_attack = j.at("n_attack").get<std::size_t>();
    r.n_bonafide = j.at("n_bonafide").get<std::size_t>();
}

Label classify(double score, double threshold) noexcept {
    return score >= threshold ? Label::bonafide : Label::attack;
}

MetricsReport apcer_bpcer_acer(std::span<const LabeledScore> records, double threshold, ThresholdRule rule) {
    const ClassCounts counts = count_classes(records);
    require_both(counts);
    std::size_t accepted_attacks = 0, rejected_bonafide = 0;
    for (const auto& r : records) {
        const Label predicted = classify(r.score, threshold);
        if (r.label == Label::attack && predicted == Label::bonafide) ++accepted_attacks;
        if (r.label == Label::bonafide && predicted == Label::attack) ++rejected_bonafide;
    }
    MetricsReport m;
    m.threshold = threshold;
    m.threshold_rule = rule;
    m.n_attack = counts.attack;
    m.n_bonafide = counts.bonafide;
    m.apcer = rate(accepted_attacks, counts.attack);
    m.bpcer = rate(rejected_bonafide, counts.bonafide);
    m.acer = (m.apcer + m.bpcer) / 2.0;
    m.far = m.apcer;
    m.frr = m.bpcer;
    m.hter = (m.far + m.frr) / 2.0;
    return m;
}

MetricsReport hter(std::span<const LabeledScore> eval, double threshold, ThresholdRule rule) {
    return apcer_bpcer_acer(eval, threshold, rule);
}

double threshold_at_bpcer(std::span<const LabeledScore> dev, double target) {
    const ClassCounts counts = count_classes(dev);
    if (counts.bonafide == 0) throw std::invalid_argument("class absent: no bonafide records");
    const std::vector<double> cand = candidates(dev);
    const SortedScores sorted(dev);
    for (std::size_t i = cand.size(); i-- > 0;) {
        if (rate(sorted.bonafide_rejected(cand[i]), counts.bonafide) <= target) return cand[i];
    }
    return cand.front();  // BPCER at -inf is 0, so this is unreachable for target >= 0
}

EerPoint eer_threshold(std::span<const LabeledScore> dev) {
    const ClassCounts counts = count_classes(dev);
    require_both(counts);
    const std::vector<double> cand = candidates(dev);
    const SortedScores sorted(dev);
    EerPoint best;
    double best_gap = kInf;
    for (const double t : cand) {
        const double far = rate(sorted.attack_accepted(t), counts.attack);
        const double frr = rate(sorted.bonafide_rejected(t), counts.bonafide);
        const double gap = std::abs(far - frr);
        if (gap < best_gap) {
            best_gap = gap;
            best = {t, (far + frr) / 2.0, far, frr};
        }
    }
    return best;
}

std::vector<SweepRow> brute_force_sweep(std::span<const LabeledScore> records) {
    const ClassCounts counts = count_classes(records);
    std::vector<SweepRow> table;
    for (const double t : candidates(records)) {
        std::size_t accepted_attacks = 0, rejected_bonafide = 0;
        for (const auto& r : records) {
            const bool accept = r.score >= t;
            if (r.label == Label::attack && accept) ++accepted_attacks;
            if (r.label == Label::bonafide && !accept) ++rejected_bonafide;
        }
        SweepRow row;
        row.threshold = t;
        row.far = row.apcer = rate(accepted_attacks, counts.attack);
        row.frr = row.bpcer = rate(rejected_bonafide, counts.bonafide);
        table.push_back(row);
    }
    return table;
}

double select_bpcer_threshold(std::span<const SweepRow> table, double target) {
    if (table.empty()) throw std::invalid_argument("empty sweep table");
    double best = table.front().threshold;
    for (const auto& row : table)
        if (row.bpcer <= target) best = std::max(best, row.threshold);
    return best;
}

EerPoint select_eer(std::span<const SweepRow> table) {
    if (table.empty()) throw std::invalid_argument("empty sweep table");
    EerPoint best;
    double best_gap = kInf;
    for (const auto& row : table) {
        const double gap = std::abs(row.far - row.frr);
        if (gap < best_gap || (gap == best_gap && row.threshold < best.threshold)) {
            best_gap = gap;
            best = {row.threshold, (row.far + row.frr) / 2.0, row.far, row.frr};
        }
    }
    return best;
}

std::optional<double> ScoreRecord::score(Head head) const noexcept {
    switch (head) {
        case Head::a: return score_p;
        case Head::b: return score_q;
        case Head::joint: return score_r;
    }
    return std::nullopt;
}

std::vector<LabeledScore> labeled_scores(std::span<const ScoreRecord> records, Head head) {
    std::vector<LabeledScore> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        const auto s = r.score(head);
        if (!s) throw DataError("sample " + r.sample_id + " has no score for head " + std::string(to_string(head)));
        out.push_back({*s, r.label});
    }
    return out;
}

std::string format_score_file(std::span<const ScoreRecord> records) {
    std::string out(kScoreHeader);
    out += '\n';
    for (const auto& r : records) {
        out += r.sample_id + '\t' + (r.label == Label::bonafide ? "1" : "0") + '\t' + r.attack_type + '\t' +
               format_score(r.score_p) + '\t' + format_score(r.score_q) + '\t' + format_score(r.score_r) + '\n';
    }
    return out;
}

void write_score_file(const std::filesystem::path& path, std::span<const ScoreRecord> records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << format_score_file(records);
    if (!out) throw DataError("failed writing " + path.string());
}

std::vector<ScoreRecord> read_score_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("missing file: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kScoreHeader) throw DataError("score file: unexpected header in " + path.string());
    std::vector<ScoreRecord> out;
    auto parse_score = [&path](const std::string& s) -> std::optional<double> {
        if (s == "NA") return std::nullopt;
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw DataError("score file " + path.string() + ": bad score '" + s + "'");
        }
    };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, '\t')) cols.push_back(col);
        if (cols.size() != 6) throw DataError("score file " + path.string() + ": expected 6 columns");
        ScoreRecord r;
        r.sample_id = cols[0];
        if (cols[1] != "0" && cols[1] != "1") throw DataError("score file " + path.string() + ": bad label");
        r.label = cols[1] == "1" ? Label::bonafide : Label::attack;
        r.attack_type = cols[2];
        r.score_p = parse_score(cols[3]);
        r.score_q = parse_score(cols[4]);
        r.score_r = parse_score(cols[5]);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace cmfl
