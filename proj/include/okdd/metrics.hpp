#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "okdd/tensor.hpp"

namespace okdd {

// Top-1 error in percent; argmax ties break toward the lowest class index.
inline double top1_error(const Tensor& predictions, std::span<const int> labels) {
  if (predictions.shape().size() != 2)
    throw ShapeError("top1_error: expected [n, classes], got " + shape_str(predictions.shape()));
  const int n = predictions.shape()[0], classes = predictions.shape()[1];
  if (static_cast<int>(labels.size()) != n)
    throw ShapeError("top1_error: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  if (n == 0) throw std::invalid_argument("top1_error: empty prediction set");
  int correct = 0;
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < classes; ++j)
      if (predictions.at({i, j}) > predictions.at({i, best})) best = j;
    correct += best == labels[i];
  }
  return 100.0 * (1.0 - static_cast<double>(correct) / n);
}

// Top-1 error of the arithmetic mean of the peers' probability predictions.
inline double ensemble_error(std::span<const Tensor> peer_predictions,
                             std::span<const int> labels) {
  if (peer_predictions.empty()) throw std::invalid_argument("ensemble_error: no peers");
  const Shape shape = peer_predictions[0].shape();
  std::vector<double> avg(static_cast<std::size_t>(shape_numel(shape)), 0.0);
  for (const Tensor& p : peer_predictions) {
    if (p.shape() != shape)
      throw ShapeError("ensemble_error: peer shape " + shape_str(p.shape()) +
                       " differs from " + shape_str(shape));
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += p.values()[i];
  }
  for (double& v : avg) v /= static_cast<double>(peer_predictions.size());
  return top1_error(Tensor::of(shape, std::move(avg)), labels);
}

// Mean over all unordered peer pairs and samples of the Euclidean distance
// between prediction rows.
inline double peer_diversity(std::span<const Tensor> peer_predictions) {
  const int peers = static_cast<int>(peer_predictions.size());
  if (peers < 2) throw std::invalid_argument("peer_diversity: needs at least 2 peers");
  const int n = peer_predictions[0].shape()[0];
  const int classes = peer_predictions[0].shape()[1];
  double acc = 0.0;
  int pairs = 0;
  for (int a = 0; a < peers; ++a)
    for (int b = a + 1; b < peers; ++b) {
      ++pairs;
      for (int i = 0; i < n; ++i) {
        double d = 0.0;
        for (int j = 0; j < classes; ++j) {
          const double diff =
              peer_predictions[a].at({i, j}) - peer_predictions[b].at({i, j});
          d += diff * diff;
        }
        acc += std::sqrt(d);
      }
    }
  return acc / (static_cast<double>(pairs) * n);
}

struct EpochRow {
  int epoch = 0;
  double lr = 0.0;
  double rampup = 0.0;
  std::vector<double> ce;           // per student, leader last
  double dis1 = 0.0;
  double dis2 = 0.0;
  double kd = 0.0;
  std::vector<double> err_student;  // per-student test error, percent
  double err_leader = 0.0;
  double err_ensemble = 0.0;        // auxiliary peers only
  double diversity = 0.0;
  double headline_err = 0.0;        // the number the method reports
};

struct ExperimentReport {
  std::vector<std::pair<std::string, std::string>> config_echo;
  int m = 0;
  std::vector<EpochRow> rows;
};

namespace detail {

inline std::string fmt_fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace detail

inline std::string report_csv_header(int m) {
  std::string h = "epoch,lr,rampup";
  for (int a = 1; a <= m; ++a) h += ",ce_" + std::to_string(a);
  h += ",dis1,dis2,kd";
  for (int a = 1; a <= m; ++a) h += ",err_" + std::to_string(a);
  h += ",err_leader,err_ensemble,diversity,headline_err";
  return h;
}

inline std::string report_to_csv(const ExperimentReport& report) {
  std::string out = report_csv_header(report.m) + "\n";
  for (const EpochRow& r : report.rows) {
    out += std::to_string(r.epoch);
    out += "," + detail::fmt_fixed6(r.lr);
    out += "," + detail::fmt_fixed6(r.rampup);
    for (double v : r.ce) out += "," + detail::fmt_fixed6(v);
    out += "," + detail::fmt_fixed6(r.dis1);
    out += "," + detail::fmt_fixed6(r.dis2);
    out += "," + detail::fmt_fixed6(r.kd);
    for (double v : r.err_student) out += "," + detail::fmt_fixed6(v);
    out += "," + detail::fmt_fixed6(r.err_leader);
    out += "," + detail::fmt_fixed6(r.err_ensemble);
    out += "," + detail::fmt_fixed6(r.diversity);
    out += "," + detail::fmt_fixed6(r.headline_err);
    out += "\n";
  }
  return out;
}

// CSV report plus a sidecar ".cfg" file echoing the effective configuration.
// Re-emission of an identical report is byte-identical.
inline void emit_csv(const ExperimentReport& report, const std::string& path) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open report for writing: " + path);
    out << report_to_csv(report);
    if (!out) throw std::runtime_error("write failed for report: " + path);
  }
  std::string cfg_path = path;
  const auto dot = cfg_path.rfind('.');
  if (dot != std::string::npos) cfg_path.resize(dot);
  cfg_path += ".cfg";
  std::ofstream cfg(cfg_path, std::ios::binary);
  if (!cfg) throw std::runtime_error("cannot open config echo for writing: " + cfg_path);
  for (const auto& [k, v] : report.config_echo) cfg << k << " = " << v << "\n";
  if (!cfg) throw std::runtime_error("write failed for config echo: " + cfg_path);
}

}  // namespace okdd
