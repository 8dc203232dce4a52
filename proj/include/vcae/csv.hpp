#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vcae/common.hpp"

namespace vcae {

// Append-only metrics log: one row per (run_id, epoch, split, metric, value).
class MetricsCsv {
 public:
  explicit MetricsCsv(std::string path) : path_(std::move(path)) {}

  void append(const std::string& run_id, int epoch, const std::string& split,
              const std::string& metric, double value) {
    bool fresh = !std::ifstream(path_).good();
    std::ofstream f(path_, std::ios::app);
    if (!f) throw IngestionError("metrics csv: cannot open " + path_);
    if (fresh) f << "run_id,epoch,split,metric,value\n";
    std::ostringstream v;
    v.precision(17);
    v << value;
    f << run_id << ',' << epoch << ',' << split << ',' << metric << ',' << v.str() << '\n';
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct CsvRow {
  std::string run_id;
  int epoch = 0;
  std::string split;
  std::string metric;
  double value = 0.0;
};

inline std::vector<CsvRow> read_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IngestionError("metrics csv: cannot open " + path);
  std::vector<CsvRow> rows;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (first) {
      first = false;
      continue;  // header
    }
    if (line.empty()) continue;
    std::istringstream is(line);
    CsvRow r;
    std::string tok;
    std::getline(is, r.run_id, ',');
    std::getline(is, tok, ',');
    r.epoch = std::stoi(tok);
    std::getline(is, r.split, ',');
    std::getline(is, r.metric, ',');
    std::getline(is, tok, ',');
    r.value = std::stod(tok);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace vcae
