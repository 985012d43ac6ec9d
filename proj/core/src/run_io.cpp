#include "cmfl/run_io.hpp"

#include <fstream>
#include <sstream>
#include <system_error>

#include "cmfl/error.hpp"

namespace cmfl {

RunDirectory::RunDirectory(std::filesystem::path path) : path_(std::move(path)) {
    std::error_code ec;
    std::filesystem::create_directories(path_, ec);
    if (ec) throw DataError("cannot create run directory " + path_.string() + ": " + ec.message());
}

void RunDirectory::write_text(std::string_view name, std::string_view content) const {
    const auto target = file(name);
    auto tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw DataError("failed writing " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, target, ec);
    if (ec) throw DataError("cannot rename " + tmp.string() + ": " + ec.message());
}

void RunDirectory::write_json(std::string_view name, const nlohmann::json& value) const {
    write_text(name, value.dump(2) + "\n");
}

void RunDirectory::set_status(std::string_view status) const { write_text("status", std::string(status) + "\n"); }

std::string RunDirectory::status() const {
    std::string s = read_text(file("status"));
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    return s;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("missing file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace cmfl
