#pragma once

// Dataset directory layout:
//
//   <root>/manifest.tsv
//   <root>/data/<id>_a.ppm           8-bit channel A (P6, or P5 for 1 channel)
//   <root>/data/<id>_b.pgm | .d16    8-bit (synthetic) or 16-bit depth channel B
//
// manifest.tsv has a fixed header line and one tab-separated record per sample:
//
//   id  path_a  path_b  label  attack_type  identity  fold
//
// Paths are relative to <root>; label is 1 for bonafide and 0 for attacks;
// fold is an optional hint and may be empty.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cmfl/datagen.hpp"
#include "cmfl/preprocessing.hpp"

namespace cmfl {

inline constexpr std::string_view kManifestHeader = "id\tpath_a\tpath_b\tlabel\tattack_type\tidentity\tfold";

struct ManifestRecord {
    std::string id;
    std::string path_a;
    std::string path_b;
    Label label = Label::bonafide;
    std::string attack_type{kBonafide};
    std::string identity;
    std::string fold;
};

struct Manifest {
    std::vector<ManifestRecord> records;

    /// Sorted, without "bonafide".
    [[nodiscard]] std::vector<std::string> attack_types() const;
    [[nodiscard]] std::vector<std::string> identities() const;
};

/// Throws DataError on malformed lines, inconsistent labels or
/// "duplicate sample id".
[[nodiscard]] Manifest parse_manifest(std::string_view text);
[[nodiscard]] Manifest read_manifest(const std::filesystem::path& path);
[[nodiscard]] std::string format_manifest(const Manifest& manifest);

/// In-memory dataset; immutable after construction.
class Dataset {
public:
    Dataset() = default;
    Dataset(Manifest manifest, std::vector<MultiModalSample> samples);
    /// Builds a manifest with the default synthetic file names.
    static Dataset from_samples(std::vector<MultiModalSample> samples);

    [[nodiscard]] const Manifest& manifest() const noexcept { return manifest_; }
    [[nodiscard]] const std::vector<MultiModalSample>& samples() const noexcept { return samples_; }
    [[nodiscard]] const MultiModalSample& by_id(std::string_view id) const;
    [[nodiscard]] std::size_t size() const noexcept { return samples_.size(); }

private:
    Manifest manifest_;
    std::vector<MultiModalSample> samples_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct LoadOptions {
    bool load_a = true;
    bool load_b = true;
    /// Clip width for depth normalization of 16-bit channel-B rasters.
    double mad_k = kDefaultMadClip;
    /// Resize every image to this size when non-zero (pre-cropped real data).
    std::size_t resize_height = 0;
    std::size_t resize_width = 0;
    /// Called with each raster path right before it is opened.
    std::function<void(const std::filesystem::path&)> on_read;
};

/// Decodes every referenced raster. 8-bit rasters pass through; 16-bit
/// channel-B rasters go through mad_normalize. Errors: missing file (names
/// the file), shape mismatch, duplicate id.
[[nodiscard]] Dataset load_dataset(const std::filesystem::path& root, const LoadOptions& options = {});

/// Writes rasters and manifest. Refuses a non-empty `root` unless `overwrite`.
void save_dataset(const std::filesystem::path& root, const Dataset& dataset, bool overwrite = false);

struct SplitRatios {
    double train = 0.5;
    double dev = 0.25;
    double eval = 0.25;
};

struct ProtocolSplit {
    std::string name;
    std::vector<std::string> train;
    std::vector<std::string> dev;
    std::vector<std::string> eval;
    std::optional<std::string> excluded_attack;
};

/// Identity-level split by `ratios`; every attack type lands in every fold
/// when counts allow. Throws DataError("too few identities ...") unless at
/// least 3 identities carry each class.
[[nodiscard]] ProtocolSplit make_grandtest(const Manifest& manifest, const SplitRatios& ratios = {},
                                           std::uint64_t seed = 0);

/// Leave-one-out: `attack` is absent from train and dev; eval holds the
/// bonafide samples of the held-out identities plus every sample of `attack`.
[[nodiscard]] ProtocolSplit make_loo(const Manifest& manifest, const std::string& attack, std::uint64_t seed = 0,
                                     const SplitRatios& ratios = {});

}  // namespace cmfl
