#pragma once

// Versioned binary checkpoint:
//
//   8 bytes   magic "CMFLCKPT"
//   u32       format version
//   u64 + N   network config as JSON text
//   u64       Adam step counter
//   u32       record count
//   records   u32 name length, name, u8 dtype (1 = f32, 2 = f64), u32 rank,
//             u64 dims[rank], little-endian payload
//
// Weights are stored as "<name>", Adam moments as "adam.m/<name>" and
// "adam.v/<name>". All integers are little-endian.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "cmfl/network.hpp"

namespace cmfl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class StoragePrecision : std::uint8_t { f32 = 1, f64 = 2 };

class CheckpointError : public std::runtime_error {
public:
    enum class Kind { io, bad_format, version_mismatch, truncated, shape_mismatch };

    CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    [[nodiscard]] Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// f64 storage round-trips bit-exactly; f32 rounds every value once.
void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path,
                     StoragePrecision precision = StoragePrecision::f64);

[[nodiscard]] ParameterSet load_checkpoint(const std::filesystem::path& path);

}  // namespace cmfl
