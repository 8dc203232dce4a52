#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vcae/common.hpp"

namespace vcae {

// Self-describing array container used for checkpoints, factor datasets and
// feature caches. Layout (documented in docs/formats.md):
//
//   "VCAR1\n"
//   <decimal header length>"\n"
//   <header JSON>                  {"meta": ..., "arrays": [...]}
//   <float64 little-endian payload, row-major, arrays back to back>
//
// Array entries carry name/rows/cols/offset (offset in doubles from the
// payload start). The format is stable across versions.
class ArchiveWriter {
 public:
  nlohmann::json meta = nlohmann::json::object();

  void add(const std::string& name, const Mat& m);
  void save(const std::string& path) const;

 private:
  std::vector<std::pair<std::string, Mat>> arrays_;
};

class Archive {
 public:
  static Archive load(const std::string& path);

  const nlohmann::json& meta() const { return meta_; }
  bool has(const std::string& name) const { return arrays_.count(name) > 0; }
  const Mat& get(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  nlohmann::json meta_;
  std::map<std::string, Mat> arrays_;
};

}  // namespace vcae
