#include "cmfl/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cmfl/error.hpp"
#include "cmfl/raster.hpp"
#include "cmfl/rng.hpp"

namespace cmfl {

namespace {

std::vector<std::string> split_tabs(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t tab = line.find('\t', start);
        out.emplace_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
        if (tab == std::string_view::npos) break;
        start = tab + 1;
    }
    return out;
}

bool has_tab_or_newline(std::string_view s) { return s.find_first_of("\t\r\n") != std::string_view::npos; }

constexpr int kSplitAttempts = 64;

struct IdentityFolds {
    std::vector<std::string> train, dev, eval;
};

IdentityFolds assign_identities(const Manifest& manifest, const SplitRatios& ratios, std::uint64_t seed,
                                const std::optional<std::string>& excluded) {
    if (!(ratios.train > 0.0 && ratios.dev > 0.0 && ratios.eval > 0.0))
        throw ConfigError("split ratios must all be positive");

    std::set<std::string> bona_ids, attack_ids;
    std::map<std::string, std::set<std::string>> attack_identities;
    for (const auto& r : manifest.records) {
        if (r.label == Label::bonafide) {
            bona_ids.insert(r.identity);
        } else if (!excluded || r.attack_type != *excluded) {
            attack_ids.insert(r.identity);
            attack_identities[r.attack_type].insert(r.identity);
        }
    }
    if (bona_ids.size() < 3 || attack_ids.size() < 3)
        throw DataError("too few identities: need at least 3 per class, have " + std::to_string(bona_ids.size()) +
                        " bonafide and " + std::to_string(attack_ids.size()) + " attack");

    const std::vector<std::string> all = manifest.identities();
    const double total = ratios.train + ratios.dev + ratios.eval;
    const std::size_t n = all.size();
    const auto n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(ratios.train / total * n)));
    const auto n_dev = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(ratios.dev / total * n)));
    if (n_train + n_dev >= n) throw DataError("too few identities for a three-way split");

    auto fold_ok = [&](const std::set<std::string>& fold) {
        auto meets = [&fold](const std::set<std::string>& ids) {
            return std::any_of(ids.begin(), ids.end(), [&fold](const std::string& id) { return fold.count(id) > 0; });
        };
        if (!meets(bona_ids) || !meets(attack_ids)) return false;
        for (const auto& [attack, ids] : attack_identities)
            if (ids.size() >= 3 && !meets(ids)) return false;
        return true;
    };

    IdentityFolds first;
    for (int attempt = 0; attempt < kSplitAttempts; ++attempt) {
        std::vector<std::string> order = all;
        Rng rng(derive_seed(seed, "split", static_cast<std::uint64_t>(attempt)));
        std::shuffle(order.begin(), order.end(), rng);
        IdentityFolds f;
        f.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
        f.dev.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                     order.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev));
        f.eval.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev), order.end());
        if (attempt == 0) first = f;
        const std::set<std::string> tr(f.train.begin(), f.train.end()), dv(f.dev.begin(), f.dev.end()),
            ev(f.eval.begin(), f.eval.end());
        if (fold_ok(tr) && fold_ok(dv) && fold_ok(ev)) return f;
    }
    return first;
}

}  // namespace

std::vector<std::string> Manifest::attack_types() const {
    std::set<std::string> s;
    for (const auto& r : records)
        if (r.label == Label::attack) s.insert(r.attack_type);
    return {s.begin(), s.end()};
}

std::vector<std::string> Manifest::identities() const {
    std::set<std::string> s;
    for (const auto& r : records) s.insert(r.identity);
    return {s.begin(), s.end()};
}

Manifest parse_manifest(std::string_view text) {
    Manifest m;
    std::set<std::string, std::less<>> seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool header_seen = false;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (!header_seen) {
            if (line != kManifestHeader) throw DataError("manifest: unexpected header line");
            header_seen = true;
            continue;
        }
        if (line.empty()) continue;
        const auto cols = split_tabs(line);
        if (cols.size() != 7)
            throw DataError("manifest line " + std::to_string(line_no) + ": expected 7 columns, got " +
                            std::to_string(cols.size()));
        ManifestRecord r;
        r.id = cols[0];
        r.path_a = cols[1];
        r.path_b = cols[2];
        if (cols[3] == "1")
            r.label = Label::bonafide;
        else if (cols[3] == "0")
            r.label = Label::attack;
        else
            throw DataError("manifest line " + std::to_string(line_no) + ": label must be 0 or 1");
        r.attack_type = cols[4];
        r.identity = cols[5];
        r.fold = cols[6];
        if (r.id.empty() || r.identity.empty() || r.attack_type.empty())
            throw DataError("manifest line " + std::to_string(line_no) + ": empty required field");
        if ((r.label == Label::bonafide) != (r.attack_type == kBonafide))
            throw DataError("manifest line " + std::to_string(line_no) + ": label inconsistent with attack_type");
        if (!seen.insert(r.id).second) throw DataError("duplicate sample id: " + r.id);
        m.records.push_back(std::move(r));
    }
    if (!header_seen) throw DataError("manifest: missing header line");
    return m;
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("missing file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_manifest(ss.str());
}

std::string format_manifest(const Manifest& manifest) {
    std::string out(kManifestHeader);
    out += '\n';
    for (const auto& r : manifest.records) {
        for (const std::string* f : {&r.id, &r.path_a, &r.path_b, &r.attack_type, &r.identity, &r.fold})
            if (has_tab_or_newline(*f)) throw DataError("manifest field contains a tab or newline: " + *f);
        out += r.id + '\t' + r.path_a + '\t' + r.path_b + '\t' + (r.label == Label::bonafide ? "1" : "0") + '\t' +
               r.attack_type + '\t' + r.identity + '\t' + r.fold + '\n';
    }
    return out;
}

Dataset::Dataset(Manifest manifest, std::vector<MultiModalSample> samples)
    : manifest_(std::move(manifest)), samples_(std::move(samples)) {
    if (manifest_.records.size() != samples_.size()) throw DataError("manifest and samples differ in length");
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        if (!index_.emplace(samples_[i].id, i).second) throw DataError("duplicate sample id: " + samples_[i].id);
        if (manifest_.records[i].id != samples_[i].id) throw DataError("manifest order does not match samples");
    }
}

Dataset Dataset::from_samples(std::vector<MultiModalSample> samples) {
    Manifest m;
    for (const auto& s : samples) {
        ManifestRecord r;
        r.id = s.id;
        r.path_a = "data/" + s.id + (s.x_a.channels == 1 ? "_a.pgm" : "_a.ppm");
        r.path_b = "data/" + s.id + (s.x_b.channels == 1 ? "_b.pgm" : "_b.ppm");
        r.label = s.label;
        r.attack_type = s.attack_type;
        r.identity = s.identity;
        m.records.push_back(std::move(r));
    }
    return Dataset(std::move(m), std::move(samples));
}

const MultiModalSample& Dataset::by_id(std::string_view id) const {
    const auto it = index_.find(std::string(id));
    if (it == index_.end()) throw DataError("unknown sample id: " + std::string(id));
    return samples_[it->second];
}

Dataset load_dataset(const std::filesystem::path& root, const LoadOptions& options) {
    Manifest manifest = read_manifest(root / "manifest.tsv");
    std::vector<MultiModalSample> samples;
    samples.reserve(manifest.records.size());

    auto decode = [&](const std::string& rel, bool depth_like) {
        const std::filesystem::path path = root / rel;
        if (!std::filesystem::exists(path)) throw DataError("missing file: " + path.string());
        if (options.on_read) options.on_read(path);
        const Raster raster = read_raster(path);
        Image img = raster.bit_depth == 16 && depth_like ? mad_normalize(to_depth(raster), options.mad_k)
                                                         : to_image(raster);
        if (options.resize_height != 0 && options.resize_width != 0)
            img = resize_bilinear(img, options.resize_height, options.resize_width);
        return img;
    };

    std::array<std::optional<std::array<std::size_t, 3>>, 2> shape;
    auto check_shape = [&shape](std::size_t k, const Image& img, const std::string& id) {
        const std::array<std::size_t, 3> s{img.channels, img.height, img.width};
        if (!shape[k]) shape[k] = s;
        if (*shape[k] != s)
            throw DataError("shape mismatch: sample " + id + " channel " + (k == 0 ? "A" : "B") + " is " +
                            std::to_string(s[0]) + "x" + std::to_string(s[1]) + "x" + std::to_string(s[2]));
    };

    for (const auto& r : manifest.records) {
        MultiModalSample s;
        s.id = r.id;
        s.identity = r.identity;
        s.label = r.label;
        s.attack_type = r.attack_type;
        if (options.load_a) {
            s.x_a = decode(r.path_a, false);
            check_shape(0, s.x_a, r.id);
        }
        if (options.load_b) {
            s.x_b = decode(r.path_b, true);
            check_shape(1, s.x_b, r.id);
        }
        samples.push_back(std::move(s));
    }
    return Dataset(std::move(manifest), std::move(samples));
}

void save_dataset(const std::filesystem::path& root, const Dataset& dataset, bool overwrite) {
    namespace fs = std::filesystem;
    if (fs::exists(root) && !fs::is_empty(root)) {
        if (!overwrite) throw ConfigError("output directory " + root.string() + " is not empty (use --force)");
        // Only dataset files are replaced; anything else in `root` is left alone.
        fs::remove_all(root / "data");
        fs::remove(root / "manifest.tsv");
    }
    fs::create_directories(root / "data");
    const auto& records = dataset.manifest().records;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const MultiModalSample& s = dataset.samples()[i];
        write_pnm(root / records[i].path_a, s.x_a);
        write_pnm(root / records[i].path_b, s.x_b);
    }
    std::ofstream out(root / "manifest.tsv", std::ios::binary | std::ios::trunc);
    out << format_manifest(dataset.manifest());
    if (!out) throw DataError("failed writing manifest in " + root.string());
}

namespace {

// Fold contents are kept in id order so that the manifest's record order has
// no influence on training.
void sort_folds(ProtocolSplit& split) {
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.dev.begin(), split.dev.end());
    std::sort(split.eval.begin(), split.eval.end());
}

}  // namespace

ProtocolSplit make_grandtest(const Manifest& manifest, const SplitRatios& ratios, std::uint64_t seed) {
    const IdentityFolds folds = assign_identities(manifest, ratios, seed, std::nullopt);
    const std::set<std::string> tr(folds.train.begin(), folds.train.end()), dv(folds.dev.begin(), folds.dev.end());
    ProtocolSplit split;
    split.name = "grandtest";
    for (const auto& r : manifest.records) {
        if (tr.count(r.identity))
            split.train.push_back(r.id);
        else if (dv.count(r.identity))
            split.dev.push_back(r.id);
        else
            split.eval.push_back(r.id);
    }
    sort_folds(split);
    return split;
}

ProtocolSplit make_loo(const Manifest& manifest, const std::string& attack, std::uint64_t seed,
                       const SplitRatios& ratios) {
    const auto attacks = manifest.attack_types();
    if (std::find(attacks.begin(), attacks.end(), attack) == attacks.end())
        throw DataError("unknown attack type '" + attack + "' for leave-one-out protocol");

    const IdentityFolds folds = assign_identities(manifest, ratios, seed, attack);
    const std::set<std::string> tr(folds.train.begin(), folds.train.end()), dv(folds.dev.begin(), folds.dev.end());
    ProtocolSplit split;
    split.name = "loo_" + attack;
    split.excluded_attack = attack;
    for (const auto& r : manifest.records) {
        if (r.attack_type == attack) {
            split.eval.push_back(r.id);
        } else if (tr.count(r.identity)) {
            split.train.push_back(r.id);
        } else if (dv.count(r.identity)) {
            split.dev.push_back(r.id);
        } else if (r.label == Label::bonafide) {
            split.eval.push_back(r.id);
        }
    }
    sort_folds(split);
    return split;
}

}  // namespace cmfl
