#include "manifest.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "opd/errors.hpp"
#include "opd/hashing.hpp"

namespace opd::cli {
namespace {

using nlohmann::json;

json files_to_json(const std::vector<FileDigest>& files) {
  json out = json::array();
  for (const auto& f : files) {
    out.push_back({{"path", f.path.generic_string()},
                   {"basename", f.path.filename().generic_string()},
                   {"sha256", f.sha256}});
  }
  return out;
}

std::vector<FileDigest> files_from_json(const json& j) {
  std::vector<FileDigest> out;
  for (const auto& f : j) out.push_back({f.at("path").get<std::string>(), f.at("sha256").get<std::string>()});
  return out;
}

}  // namespace

FileDigest digest(const std::filesystem::path& path) { return {path, sha256_file(path)}; }

std::string Manifest::to_json() const {
  json j;
  j["command"] = command;
  j["args"] = args;
  j["cwd"] = cwd.generic_string();
  j["seed"] = seed;
  j["config_hash"] = config_hash;
  j["config"] = config_text;
  j["inputs"] = files_to_json(inputs);
  j["outputs"] = files_to_json(outputs);
  return j.dump(2) + "\n";
}

Manifest Manifest::from_json(const std::string& text) {
  Manifest m;
  try {
    const json j = json::parse(text);
    m.command = j.at("command").get<std::string>();
    m.args = j.at("args").get<std::vector<std::string>>();
    m.cwd = j.at("cwd").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config_text = j.at("config").get<std::string>();
    m.inputs = files_from_json(j.at("inputs"));
    m.outputs = files_from_json(j.at("outputs"));
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void Manifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json();
}

Manifest Manifest::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace opd::cli
