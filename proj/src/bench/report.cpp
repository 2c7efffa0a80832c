#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <tuple>

#include "contour/errors.hpp"
#include "contour/train.hpp"

namespace contour {

namespace {

struct Stat {
  std::vector<double> xs;
  void add(double x) { xs.push_back(x); }
  double mean() const {
    double s = 0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
  }
  // Sample standard deviation; 0 for a single run.
  double stddev() const {
    if (xs.size() < 2) return 0.0;
    const double m = mean();
    double s = 0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size() - 1));
  }
};

struct Group {
  std::int64_t params = 0;
  Stat max_acc, efficiency, final_acc, zero_shot;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string build_report(const std::filesystem::path& runs_dir) {
  if (!std::filesystem::is_directory(runs_dir)) throw FormatError(runs_dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(runs_dir)) {
    if (e.is_regular_file() && e.path().filename() == "metrics.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  std::map<std::tuple<std::string, std::string, std::string>, Group> groups;
  for (const auto& f : files) {
    std::ifstream in(f);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(f.string() + ": " + e.what());
    }
    if (!j.contains("max_val_accuracy")) continue;
    Group& g = groups[{j.value("kind", "train"), j.at("arch").get<std::string>(), j.value("dataset", "")}];
    g.params = j.at("param_count").get<std::int64_t>();
    g.max_acc.add(j.at("max_val_accuracy").get<double>());
    g.efficiency.add(j.at("sample_efficiency").get<double>());
    g.final_acc.add(j.at("final_val_accuracy").get<double>());
    if (j.contains("transfer")) g.zero_shot.add(j["transfer"].at("zero_shot_accuracy").get<double>());
  }

  std::string csv =
      "kind,arch,dataset,runs,param_count,max_val_accuracy_mean,max_val_accuracy_std,sample_efficiency_mean,"
      "sample_efficiency_std,final_val_accuracy_mean,final_val_accuracy_std,zero_shot_accuracy_mean,"
      "zero_shot_accuracy_std\n";
  for (const auto& [key, g] : groups) {
    const auto& [kind, arch, dataset] = key;
    csv += kind + "," + arch + "," + dataset + "," + std::to_string(g.max_acc.xs.size()) + "," +
           std::to_string(g.params) + "," + fmt(g.max_acc.mean()) + "," + fmt(g.max_acc.stddev()) + "," +
           fmt(g.efficiency.mean()) + "," + fmt(g.efficiency.stddev()) + "," + fmt(g.final_acc.mean()) + "," +
           fmt(g.final_acc.stddev()) + "," + (g.zero_shot.xs.empty() ? "" : fmt(g.zero_shot.mean())) + "," +
           (g.zero_shot.xs.empty() ? "" : fmt(g.zero_shot.stddev())) + "\n";
  }
  return csv;
}

}  // namespace contour
