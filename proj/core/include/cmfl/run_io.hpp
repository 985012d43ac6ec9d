#pragma once

// Run directory:
//
//   <dir>/config.json              effective configuration
//   <dir>/status                   "running", "complete", "interrupted" or "failed"
//   <dir>/checkpoint.bin
//   <dir>/scores_<split>_<head>.tsv
//   <dir>/report_<protocol>.json
//   <dir>/losscurve.tsv
//   <dir>/histograms.tsv
//
// Multi-protocol runs put each leg's artifacts in a subdirectory named after
// the protocol.

#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace cmfl {

class RunDirectory {
public:
    /// Creates `path` (and parents) if needed.
    explicit RunDirectory(std::filesystem::path path);

    [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }
    [[nodiscard]] std::filesystem::path file(std::string_view name) const { return path_ / std::string(name); }
    [[nodiscard]] RunDirectory sub(std::string_view name) const { return RunDirectory(path_ / std::string(name)); }

    /// Writes via a temporary file and rename so a reader never sees a torn file.
    void write_text(std::string_view name, std::string_view content) const;
    void write_json(std::string_view name, const nlohmann::json& value) const;
    void set_status(std::string_view status) const;
    [[nodiscard]] std::string status() const;

private:
    std::filesystem::path path_;
};

[[nodiscard]] std::string read_text(const std::filesystem::path& path);

}  // namespace cmfl
