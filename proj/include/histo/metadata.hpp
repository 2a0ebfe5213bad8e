#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "histo/error.hpp"
#include "histo/image_io.hpp"
#include "histo/seed.hpp"

namespace histo {

inline constexpr const char* kToolVersion = "0.1.0";

/// FNV-1a 64 digest of a file's bytes, as "fnv1a64:<hex>".
inline std::string file_digest(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return "fnv1a64:" + hex64(Fnv1a64().bytes(bytes).value());
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Everything needed to re-run an artifact-producing command, written as
/// flat key=value lines.
struct RunMetadata {
  std::string command_line;
  std::uint64_t master_seed = 0;
  std::string input_digest;
  std::vector<std::pair<std::string, std::string>> config;
  std::string tool_version = kToolVersion;
  std::string timestamp = utc_timestamp();

  std::string to_text() const {
    std::string s;
    s += "command=" + command_line + "\n";
    s += "tool_version=" + tool_version + "\n";
    s += "master_seed=" + std::to_string(master_seed) + "\n";
    s += "input_digest=" + input_digest + "\n";
    s += "timestamp=" + timestamp + "\n";
    for (const auto& [k, v] : config) s += "config." + k + "=" + v + "\n";
    return s;
  }

  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "run_metadata.txt", std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + (dir / "run_metadata.txt").string());
    out << to_text();
  }

  /// Metadata for a single-file artifact goes to `<file>.meta.txt`.
  void write_beside(const std::filesystem::path& file) const {
    const std::filesystem::path target = file.string() + ".meta.txt";
    std::ofstream out(target, std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + target.string());
    out << to_text();
  }
};

}  // namespace histo
