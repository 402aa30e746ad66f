#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "cqil/common.hpp"

namespace cqil {

enum class Liveness { live, attack };

enum class AttackCategory {
  none,
  mask_resin,
  mask_silicone,
  mask_plaster,
  mask_headgear,
  print,
  replay,
};

enum class Split { train, dev, test, unassigned };

inline const char* to_string(Liveness l) {
  return l == Liveness::live ? "live" : "attack";
}

inline const char* to_string(AttackCategory c) {
  switch (c) {
    case AttackCategory::none: return "none";
    case AttackCategory::mask_resin: return "mask_resin";
    case AttackCategory::mask_silicone: return "mask_silicone";
    case AttackCategory::mask_plaster: return "mask_plaster";
    case AttackCategory::mask_headgear: return "mask_headgear";
    case AttackCategory::print: return "print";
    case AttackCategory::replay: return "replay";
  }
  return "?";
}

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
    case Split::unassigned: return "unassigned";
  }
  return "?";
}

inline Liveness liveness_from_string(const std::string& s) {
  if (s == "live") return Liveness::live;
  if (s == "attack") return Liveness::attack;
  throw Error("unknown liveness value: " + s);
}

inline AttackCategory attack_category_from_string(const std::string& s) {
  for (AttackCategory c :
       {AttackCategory::none, AttackCategory::mask_resin, AttackCategory::mask_silicone,
        AttackCategory::mask_plaster, AttackCategory::mask_headgear, AttackCategory::print,
        AttackCategory::replay})
    if (s == to_string(c)) return c;
  throw Error("unknown attack category: " + s);
}

inline Split split_from_string(const std::string& s) {
  for (Split sp : {Split::train, Split::dev, Split::test, Split::unassigned})
    if (s == to_string(sp)) return sp;
  throw Error("unknown split value: " + s);
}

inline bool is_mask(AttackCategory c) {
  return c == AttackCategory::mask_resin || c == AttackCategory::mask_silicone ||
         c == AttackCategory::mask_plaster || c == AttackCategory::mask_headgear;
}

struct SampleRecord {
  std::string path;
  int subject_id = 0;
  Liveness liveness = Liveness::live;
  AttackCategory attack_category = AttackCategory::none;
  double quality_score = 0.0;
  Split split = Split::unassigned;

  void validate() const {
    CQIL_CHECK_MSG(subject_id >= 0, "subject_id must be >= 0");
    const bool cat_none = attack_category == AttackCategory::none;
    CQIL_CHECK_MSG((liveness == Liveness::live) == cat_none,
                   "liveness/attack_category inconsistent for " << path);
    CQIL_CHECK_MSG(quality_score >= 0.0 && quality_score <= 1.0,
                   "quality_score out of [0,1] for " << path);
  }
};

inline constexpr const char* kManifestHeader =
    "path,subject_id,liveness,attack_category,quality_score";

namespace detail {
inline std::string format_score(double q) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", q);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}
}  // namespace detail

// Manifest CSV: UTF-8, LF line endings, scores with 6 decimals. When
// with_split is set an extra `split` column is appended (used for the
// per-subset protocol files).
inline void write_manifest(const std::vector<SampleRecord>& records,
                           const std::string& path, bool with_split = false) {
  std::ofstream f(path, std::ios::binary);
  CQIL_CHECK_MSG(f.good(), "cannot open " << path << " for writing");
  f << kManifestHeader;
  if (with_split) f << ",split";
  f << "\n";
  for (const auto& r : records) {
    f << r.path << "," << r.subject_id << "," << to_string(r.liveness) << ","
      << to_string(r.attack_category) << "," << detail::format_score(r.quality_score);
    if (with_split) f << "," << to_string(r.split);
    f << "\n";
  }
  CQIL_CHECK_MSG(f.good(), "short write to " << path);
}

inline std::vector<SampleRecord> read_manifest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  CQIL_CHECK_MSG(f.good(), "cannot open manifest " << path);
  std::string line;
  CQIL_CHECK_MSG(std::getline(f, line), "empty manifest " << path);
  bool with_split = false;
  if (line == std::string(kManifestHeader) + ",split")
    with_split = true;
  else
    CQIL_CHECK_MSG(line == kManifestHeader, "bad manifest header in " << path);
  std::vector<SampleRecord> records;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    CQIL_CHECK_MSG(cells.size() == (with_split ? 6u : 5u),
                   "bad manifest row in " << path << ": " << line);
    SampleRecord r;
    r.path = cells[0];
    r.subject_id = std::stoi(cells[1]);
    r.liveness = liveness_from_string(cells[2]);
    r.attack_category = attack_category_from_string(cells[3]);
    r.quality_score = std::stod(cells[4]);
    if (with_split) r.split = split_from_string(cells[5]);
    r.validate();
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace cqil
