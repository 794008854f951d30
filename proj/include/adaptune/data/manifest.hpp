#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "adaptune/error.hpp"

namespace adaptune::data {

enum class Label : std::size_t { normal = 0, mild = 1, moderate = 2, severe = 3 };
enum class Split : std::size_t { train = 0, dev = 1, eval = 2 };
enum class Task { detect, severity };

inline constexpr std::array<const char*, 4> kLabelNames = {"normal", "mild", "moderate", "severe"};
inline constexpr std::array<const char*, 3> kSplitNames = {"train", "dev", "eval"};

inline std::string to_string(Label l) { return kLabelNames[static_cast<std::size_t>(l)]; }
inline std::string to_string(Split s) { return kSplitNames[static_cast<std::size_t>(s)]; }
inline std::string to_string(Task t) { return t == Task::detect ? "detect" : "severity"; }

inline std::optional<Label> parse_label(const std::string& s) {
  for (std::size_t i = 0; i < kLabelNames.size(); ++i)
    if (s == kLabelNames[i]) return static_cast<Label>(i);
  return std::nullopt;
}

inline std::optional<Split> parse_split(const std::string& s) {
  for (std::size_t i = 0; i < kSplitNames.size(); ++i)
    if (s == kSplitNames[i]) return static_cast<Split>(i);
  return std::nullopt;
}

inline Task parse_task(const std::string& s) {
  if (s == "detect") return Task::detect;
  if (s == "severity") return Task::severity;
  throw ConfigError("unknown task '" + s + "' (expected detect or severity)");
}

inline std::size_t n_classes(Task t) { return t == Task::detect ? 2 : 4; }

/// Class index of a label under a task: detection maps normal → 0, any CLP
/// severity → 1; severity keeps the four grades in order.
inline std::size_t class_index(Label l, Task t) {
  const auto i = static_cast<std::size_t>(l);
  return t == Task::detect ? (i == 0 ? 0 : 1) : i;
}

inline std::vector<std::string> class_names(Task t) {
  if (t == Task::detect) return {"normal", "clp"};
  return {kLabelNames.begin(), kLabelNames.end()};
}

struct ManifestEntry {
  std::string id;
  std::string path;
  Label label = Label::normal;
  Split split = Split::train;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Parses JSONL text; blank lines are skipped. Errors name the 1-based line.
inline std::vector<ManifestEntry> parse_manifest(std::istream& in, const std::string& source = "manifest") {
  std::vector<ManifestEntry> out;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + "invalid JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw DataError(where + "expected a JSON object");
    const auto field = [&](const char* key) {
      if (!j.contains(key) || !j[key].is_string()) throw DataError(where + "missing string field '" + key + "'");
      return j[key].get<std::string>();
    };
    ManifestEntry e;
    e.id = field("id");
    e.path = field("path");
    const std::string label = field("label"), split = field("split");
    const auto l = parse_label(label);
    if (!l) throw LabelError(where + "unknown label '" + label + "'");
    const auto s = parse_split(split);
    if (!s) throw DataError(where + "unknown split '" + split + "'");
    e.label = *l;
    e.split = *s;
    if (e.id.empty()) throw DataError(where + "empty id");
    if (!ids.insert(e.id).second) throw DataError(where + "duplicate id '" + e.id + "'");
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  return parse_manifest(in, path.string());
}

inline std::string manifest_line(const ManifestEntry& e) {
  nlohmann::ordered_json j;
  j["id"] = e.id;
  j["path"] = e.path;
  j["label"] = to_string(e.label);
  j["split"] = to_string(e.split);
  return j.dump();
}

inline void save_manifest(std::span<const ManifestEntry> entries, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const ManifestEntry& e : entries) out << manifest_line(e) << '\n';
  if (!out) throw IoError("failed writing manifest " + path.string());
}

/// Audio path of an entry; relative paths are taken from the manifest's directory.
inline std::filesystem::path resolve_audio(const std::filesystem::path& manifest_path, const ManifestEntry& e) {
  const std::filesystem::path p(e.path);
  return p.is_absolute() ? p : manifest_path.parent_path() / p;
}

struct ManifestStats {
  std::array<std::array<std::size_t, 4>, 3> counts{};  // [split][label]

  std::size_t operator()(Split s, Label l) const {
    return counts[static_cast<std::size_t>(s)][static_cast<std::size_t>(l)];
  }
  std::size_t total(Split s) const {
    std::size_t t = 0;
    for (std::size_t c : counts[static_cast<std::size_t>(s)]) t += c;
    return t;
  }
  std::size_t total() const { return total(Split::train) + total(Split::dev) + total(Split::eval); }
};

inline ManifestStats manifest_stats(std::span<const ManifestEntry> entries) {
  ManifestStats s;
  for (const ManifestEntry& e : entries) ++s.counts[static_cast<std::size_t>(e.split)][static_cast<std::size_t>(e.label)];
  return s;
}

}  // namespace adaptune::data
