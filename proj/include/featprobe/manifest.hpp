#pragma once

// Dataset manifests are JSON-lines: one header object followed by one record
// per line.
//
//   {"sampleRate": 16000, "clipSeconds": 4, "tasks": {"class": "classification"}}
//   {"path": "clips/0000.wav", "split": "train", "labels": {"class": 1}}

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "featprobe/error.hpp"

namespace featprobe {

enum class Split { train, test };
enum class TaskKind { classification, regression };

inline const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }
inline const char* task_kind_name(TaskKind k) {
  return k == TaskKind::classification ? "classification" : "regression";
}

struct ManifestRecord {
  std::string path;  // as written in the manifest
  Split split = Split::train;
  std::map<std::string, double> labels;
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t test = 0;
};

/// 64-bit FNV-1a; stable across platforms, used for config and example-order hashes.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

struct DatasetManifest {
  int sampleRate = 16000;
  double clipSeconds = 4.0;
  std::map<std::string, TaskKind> tasks;
  std::vector<ManifestRecord> records;
  std::filesystem::path baseDir;  // directory relative record paths resolve against

  std::filesystem::path resolve(const ManifestRecord& r) const {
    std::filesystem::path p(r.path);
    return p.is_absolute() ? p : baseDir / p;
  }

  std::size_t clip_samples() const {
    return static_cast<std::size_t>(clipSeconds * sampleRate + 0.5);
  }

  SplitCounts split_counts() const {
    SplitCounts c;
    for (const auto& r : records) (r.split == Split::train ? c.train : c.test)++;
    return c;
  }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].split == s) out.push_back(i);
    return out;
  }

  std::vector<double> labels(const std::string& task) const {
    require(tasks.count(task) > 0, Errc::manifest, "unknown task '" + task + "'");
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.labels.at(task));
    return out;
  }

  /// Identifies the example universe and its order.
  std::string order_hash() const {
    std::uint64_t h = fnv1a("featprobe-order");
    for (const auto& r : records) {
      h = fnv1a(r.path, h);
      h = fnv1a(split_name(r.split), h);
    }
    return hex64(h);
  }
};

namespace detail {

inline TaskKind parse_task_kind(const std::string& s) {
  if (s == "classification") return TaskKind::classification;
  if (s == "regression") return TaskKind::regression;
  throw Error(Errc::manifest, "unknown task kind '" + s + "'");
}

}  // namespace detail

inline DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& baseDir = {}) {
  using nlohmann::json;
  DatasetManifest m;
  m.baseDir = baseDir;
  std::string line;
  bool haveHeader = false;
  std::size_t lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(Errc::manifest, "line " + std::to_string(lineNo) + ": " + e.what());
    }
    require(j.is_object(), Errc::manifest, "line " + std::to_string(lineNo) + " is not an object");
    if (!haveHeader) {
      require(j.contains("sampleRate") && j.contains("tasks"), Errc::manifest,
              "first line must be the header with sampleRate and tasks");
      m.sampleRate = j.at("sampleRate").get<int>();
      m.clipSeconds = j.value("clipSeconds", 4.0);
      require(m.sampleRate > 0 && m.clipSeconds > 0, Errc::manifest,
              "sampleRate and clipSeconds must be positive");
      for (auto& [task, kind] : j.at("tasks").items())
        m.tasks.emplace(task, detail::parse_task_kind(kind.get<std::string>()));
      haveHeader = true;
      continue;
    }
    const std::size_t idx = m.records.size();
    const std::string where = "record " + std::to_string(idx);
    ManifestRecord r;
    require(j.contains("path") && j.at("path").is_string(), Errc::manifest, where + ": missing path");
    r.path = j.at("path").get<std::string>();
    const std::string split = j.value("split", std::string{});
    if (split == "train")
      r.split = Split::train;
    else if (split == "test")
      r.split = Split::test;
    else
      throw Error(Errc::manifest, where + ": unknown split '" + split + "'");
    const json labels = j.value("labels", json::object());
    for (const auto& [task, kind] : m.tasks) {
      require(labels.contains(task) && labels.at(task).is_number(), Errc::manifest,
              where + ": missing label for task '" + task + "'");
      const double v = labels.at(task).get<double>();
      if (kind == TaskKind::classification)
        require(v >= 0 && v == static_cast<double>(static_cast<long long>(v)), Errc::manifest,
                where + ": classification label for '" + task + "' must be a non-negative integer");
      r.labels.emplace(task, v);
    }
    m.records.push_back(std::move(r));
  }
  require(haveHeader, Errc::manifest, "manifest has no header line");
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), Errc::io, "cannot read manifest " + path.string());
  return parse_manifest(in, path.parent_path());
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  using nlohmann::ordered_json;
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), Errc::io, "cannot write manifest " + path.string());
  ordered_json header;
  header["sampleRate"] = m.sampleRate;
  header["clipSeconds"] = m.clipSeconds;
  header["tasks"] = ordered_json::object();
  for (const auto& [task, kind] : m.tasks) header["tasks"][task] = task_kind_name(kind);
  out << header.dump() << '\n';
  for (const auto& r : m.records) {
    ordered_json j;
    j["path"] = r.path;
    j["split"] = split_name(r.split);
    j["labels"] = ordered_json::object();
    for (const auto& [task, v] : r.labels) {
      if (m.tasks.count(task) && m.tasks.at(task) == TaskKind::classification)
        j["labels"][task] = static_cast<long long>(v);
      else
        j["labels"][task] = v;
    }
    out << j.dump() << '\n';
  }
  require(static_cast<bool>(out), Errc::io, "write failed: " + path.string());
}

}  // namespace featprobe
