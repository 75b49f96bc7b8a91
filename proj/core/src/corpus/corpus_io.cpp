#include <algorithm>
#include <array>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "opd/corpus.hpp"
#include "opd/errors.hpp"

namespace opd {
namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::array<const char*, 8> kFields = {"patient_id", "date", "dept",  "doctor",
                                                "text",       "codes", "meds", "procs"};

std::string where(std::size_t line_no) { return "line " + std::to_string(line_no) + ": "; }

std::string get_string(const nlohmann::json& obj, const char* key, std::size_t line_no) {
  const auto& v = obj.at(key);
  if (!v.is_string()) throw ParseError(where(line_no) + "field '" + key + "' must be a string");
  return v.get<std::string>();
}

std::vector<std::string> get_list(const nlohmann::json& obj, const char* key, std::size_t line_no) {
  const auto& v = obj.at(key);
  if (!v.is_array()) throw ParseError(where(line_no) + "field '" + key + "' must be a list");
  std::vector<std::string> out;
  for (const auto& item : v) {
    if (!item.is_string()) throw ParseError(where(line_no) + "field '" + key + "' must hold strings");
    out.push_back(item.get<std::string>());
  }
  return out;
}

}  // namespace

std::string encounter_to_json(const Encounter& e) {
  std::vector<std::string> codes = e.codes;
  std::sort(codes.begin(), codes.end());
  ordered_json j;
  j["patient_id"] = e.patient_id;
  j["date"] = format_date(e.date);
  j["dept"] = e.dept;
  j["doctor"] = e.doctor;
  j["text"] = e.text;
  j["codes"] = codes;
  j["meds"] = e.meds;
  j["procs"] = e.procs;
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::strict);
}

Encounter encounter_from_json(std::string_view line, std::size_t line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& err) {
    throw ParseError(where(line_no) + "malformed record: " + err.what());
  }
  if (!j.is_object()) throw ParseError(where(line_no) + "record must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(kFields.begin(), kFields.end(), [&](const char* f) { return key == f; }) == kFields.end()) {
      throw ParseError(where(line_no) + "unknown field '" + key + "'");
    }
  }
  for (const char* f : kFields) {
    if (!j.contains(f)) throw ParseError(where(line_no) + "missing field '" + f + "'");
  }
  Encounter e;
  e.patient_id = get_string(j, "patient_id", line_no);
  try {
    e.date = parse_date(get_string(j, "date", line_no));
  } catch (const ParseError& err) {
    throw ParseError(where(line_no) + err.what());
  }
  e.dept = get_string(j, "dept", line_no);
  e.doctor = get_string(j, "doctor", line_no);
  e.text = get_string(j, "text", line_no);
  e.codes = get_list(j, "codes", line_no);
  e.meds = get_list(j, "meds", line_no);
  e.procs = get_list(j, "procs", line_no);
  try {
    validate(e);
  } catch (const ValidationError& err) {
    throw ValidationError(where(line_no) + err.what());
  }
  std::sort(e.codes.begin(), e.codes.end());
  return e;
}

void write_encounters(const std::filesystem::path& path, std::span<const Encounter> encounters) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& e : encounters) out << encounter_to_json(e) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<Encounter> read_encounters(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Encounter> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    out.push_back(encounter_from_json(line, line_no));
  }
  return out;
}

}  // namespace opd
