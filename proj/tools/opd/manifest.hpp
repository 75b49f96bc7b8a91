#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace opd::cli {

struct FileDigest {
  std::filesystem::path path;
  std::string sha256;
};

/// Record of one command run; enough to repeat it exactly.
struct Manifest {
  std::string command;
  std::vector<std::string> args;  // after the program name, including the command
  std::filesystem::path cwd;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string config_text;
  std::vector<FileDigest> inputs;
  std::vector<FileDigest> outputs;

  std::string to_json() const;
  static Manifest from_json(const std::string& text);

  void save(const std::filesystem::path& path) const;
  static Manifest load(const std::filesystem::path& path);
};

FileDigest digest(const std::filesystem::path& path);

}  // namespace opd::cli
