#include "cmfl/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace cmfl {

namespace {

constexpr std::array<char, 8> kMagic{'C', 'M', 'F', 'L', 'C', 'K', 'P', 'T'};
constexpr std::size_t kMaxRank = 8;

template <typename T>
void put_le(std::vector<char>& out, T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    auto bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        out.push_back(static_cast<char>(bits & 0xffU));
        if constexpr (sizeof(U) > 1) bits >>= 8;
    }
}

class Reader {
public:
    explicit Reader(std::span<const char> bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                     std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
        need(sizeof(U));
        U bits = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            bits |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return std::bit_cast<T>(bits);
    }

    std::string get_string(std::size_t n) {
        need(n);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    [[nodiscard]] bool at_end() const noexcept { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw CheckpointError(CheckpointError::Kind::truncated, "truncated checkpoint");
    }

    std::span<const char> bytes_;
    std::size_t pos_ = 0;
};

void put_record(std::vector<char>& out, const std::string& name, const std::vector<std::size_t>& shape,
                const std::vector<double>& values, StoragePrecision precision) {
    put_le(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_le(out, static_cast<std::uint8_t>(precision));
    put_le(out, static_cast<std::uint32_t>(shape.size()));
    for (const std::size_t d : shape) put_le(out, static_cast<std::uint64_t>(d));
    for (const double v : values) {
        if (precision == StoragePrecision::f32)
            put_le(out, static_cast<float>(v));
        else
            put_le(out, v);
    }
}

struct Record {
    std::vector<std::size_t> shape;
    std::vector<double> values;
};

}  // namespace

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path, StoragePrecision precision) {
    std::vector<char> out(kMagic.begin(), kMagic.end());
    put_le(out, kCheckpointVersion);
    const std::string config = nlohmann::json(params.config).dump();
    put_le(out, static_cast<std::uint64_t>(config.size()));
    out.insert(out.end(), config.begin(), config.end());
    put_le(out, params.adam_step);

    const bool has_moments = params.adam_m.size() == params.tensors.size();
    put_le(out, static_cast<std::uint32_t>(params.tensors.size() * (has_moments ? 3 : 1)));
    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
        const ParamTensor& t = params.tensors[k];
        put_record(out, t.name, t.shape, t.values, precision);
        if (has_moments) {
            put_record(out, "adam.m/" + t.name, t.shape, params.adam_m[k], precision);
            put_record(out, "adam.v/" + t.name, t.shape, params.adam_v[k], precision);
        }
    }

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path.string() + " for writing");
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw CheckpointError(CheckpointError::Kind::io, "failed writing " + path.string());
}

ParameterSet load_checkpoint(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path.string());
    const std::vector<char> bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

    if (bytes.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin()))
        throw CheckpointError(CheckpointError::Kind::bad_format, "bad checkpoint format");
    Reader in(std::span<const char>(bytes).subspan(kMagic.size()));

    const auto version = in.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw CheckpointError(CheckpointError::Kind::version_mismatch,
                              "unsupported checkpoint version " + std::to_string(version));

    const auto config_len = in.get<std::uint64_t>();
    if (config_len > bytes.size()) throw CheckpointError(CheckpointError::Kind::truncated, "truncated checkpoint");
    const std::string config_text = in.get_string(config_len);
    NetworkConfig config;
    try {
        config = nlohmann::json::parse(config_text).get<NetworkConfig>();
        config.validate();
    } catch (const std::exception& e) {
        throw CheckpointError(CheckpointError::Kind::bad_format, std::string("bad checkpoint config: ") + e.what());
    }

    ParameterSet params = init_network(config);
    params.adam_step = in.get<std::uint64_t>();

    const auto count = in.get<std::uint32_t>();
    std::unordered_map<std::string, Record> records;
    for (std::uint32_t r = 0; r < count; ++r) {
        const auto name_len = in.get<std::uint32_t>();
        if (name_len > bytes.size()) throw CheckpointError(CheckpointError::Kind::truncated, "truncated checkpoint");
        std::string name = in.get_string(name_len);
        const auto dtype = in.get<std::uint8_t>();
        if (dtype != static_cast<std::uint8_t>(StoragePrecision::f32) &&
            dtype != static_cast<std::uint8_t>(StoragePrecision::f64))
            throw CheckpointError(CheckpointError::Kind::bad_format, "unknown dtype tag in record " + name);
        const auto rank = in.get<std::uint32_t>();
        if (rank > kMaxRank) throw CheckpointError(CheckpointError::Kind::bad_format, "bad rank in record " + name);
        Record rec;
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const auto d = in.get<std::uint64_t>();
            if (d > bytes.size()) throw CheckpointError(CheckpointError::Kind::truncated, "truncated checkpoint");
            rec.shape.push_back(static_cast<std::size_t>(d));
            n *= static_cast<std::size_t>(d);
        }
        if (n > bytes.size()) throw CheckpointError(CheckpointError::Kind::truncated, "truncated checkpoint");
        rec.values.resize(n);
        for (double& v : rec.values)
            v = dtype == static_cast<std::uint8_t>(StoragePrecision::f32) ? static_cast<double>(in.get<float>())
                                                                          : in.get<double>();
        if (!records.emplace(std::move(name), std::move(rec)).second)
            throw CheckpointError(CheckpointError::Kind::bad_format, "duplicate record in checkpoint");
    }
    if (!in.at_end()) throw CheckpointError(CheckpointError::Kind::bad_format, "trailing bytes after checkpoint records");

    auto take = [&](const std::string& name, const ParamTensor& like, std::vector<double>& dst, bool required) {
        auto it = records.find(name);
        if (it == records.end()) {
            if (required) throw CheckpointError(CheckpointError::Kind::shape_mismatch, "missing record " + name);
            return;
        }
        if (it->second.shape != like.shape)
            throw CheckpointError(CheckpointError::Kind::shape_mismatch, "shape mismatch for " + name);
        dst = std::move(it->second.values);
        records.erase(it);
    };
    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
        const ParamTensor& t = params.tensors[k];
        take(t.name, t, params.tensors[k].values, true);
        take("adam.m/" + t.name, t, params.adam_m[k], false);
        take("adam.v/" + t.name, t, params.adam_v[k], false);
    }
    if (!records.empty())
        throw CheckpointError(CheckpointError::Kind::shape_mismatch, "unexpected record " + records.begin()->first);
    return params;
}

}  // namespace cmfl
