#include "birads/metrics.hpp"

#include "json.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace birads {
namespace {

using nlohmann::json;

constexpr std::array<const char*, 5> kDescriptorKeys = {"shape", "orientation", "margin", "echo_pattern", "posterior"};
constexpr std::array<const char*, 4> kSubtypeKeys = {"margin_indistinct", "margin_angular", "margin_microlobulated",
                                                     "margin_spiculated"};

template <typename Derived>
Eigen::Index argmax(const Eigen::MatrixBase<Derived>& column) {
  Eigen::Index best = 0;
  column.maxCoeff(&best);
  return best;
}

double argmax_accuracy(const Eigen::MatrixXd& outputs, const Eigen::MatrixXd& targets) {
  long hits = 0;
  for (Eigen::Index j = 0; j < outputs.cols(); ++j) hits += argmax(outputs.col(j)) == argmax(targets.col(j));
  return static_cast<double>(hits) / static_cast<double>(outputs.cols());
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::string csv_cell(const std::optional<double>& v) {
  if (!v) return "NA";
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << *v;
  return out.str();
}

// Visits each optional field with its column name, in CSV order.
template <typename Report, typename Fn>
void for_each_field(Report& r, Fn&& fn) {
  fn("tumor_accuracy", r.tumor_accuracy);
  fn("sensitivity", r.sensitivity);
  fn("specificity", r.specificity);
  for (int k = 0; k < 5; ++k) fn(kDescriptorKeys[k], r.descriptor_accuracy[k]);
  for (int k = 0; k < 4; ++k) fn(kSubtypeKeys[k], r.subtype_accuracy[k]);
  fn("likelihood_r2", r.likelihood_r2);
  fn("likelihood_mse", r.likelihood_mse);
}

}  // namespace

ConfusionMetrics confusion_metrics(const std::vector<int>& predictions, const std::vector<int>& targets) {
  if (predictions.size() != targets.size()) throw std::invalid_argument("predictions and targets differ in length");
  if (targets.empty()) throw std::invalid_argument("confusion metrics need at least one case");
  ConfusionMetrics m;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const bool p = predictions[i] != 0;
    const bool t = targets[i] != 0;
    if (p && t) ++m.tp;
    else if (!p && !t) ++m.tn;
    else if (p) ++m.fp;
    else ++m.fn;
  }
  m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(targets.size());
  if (m.tp + m.fn > 0) m.sensitivity = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  if (m.tn + m.fp > 0) m.specificity = static_cast<double>(m.tn) / static_cast<double>(m.tn + m.fp);
  return m;
}

RegressionMetrics regression_metrics(const std::vector<double>& predictions, const std::vector<double>& targets) {
  if (predictions.size() != targets.size()) throw std::invalid_argument("predictions and targets differ in length");
  if (targets.size() < 2) throw std::invalid_argument("regression metrics need at least two cases");
  const double n = static_cast<double>(targets.size());
  double mean = 0.0;
  for (double t : targets) mean += t;
  mean /= n;
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    ss_res += (predictions[i] - targets[i]) * (predictions[i] - targets[i]);
    ss_tot += (targets[i] - mean) * (targets[i] - mean);
  }
  RegressionMetrics m;
  m.mse = ss_res / n;
  if (ss_tot > 0.0) m.r2 = 1.0 - ss_res / ss_tot;
  return m;
}

MetricsReport compute_metrics(const TaskValues<double>& outputs, const TaskTargets& targets, const BranchMask& branches) {
  const Eigen::Index n = outputs.batch_size();
  if (n == 0 || targets.batch_size() != n) throw std::invalid_argument("outputs and targets differ in size");
  MetricsReport r;
  r.count = static_cast<std::size_t>(n);

  std::vector<int> pred(n), truth(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    pred[j] = static_cast<int>(argmax(outputs.tumor.col(j)));
    truth[j] = static_cast<int>(argmax(targets.tumor.col(j)));
  }
  const auto cm = confusion_metrics(pred, truth);
  r.tumor_accuracy = cm.accuracy;
  r.sensitivity = cm.sensitivity;
  r.specificity = cm.specificity;

  for (int k = 0; k < 5; ++k) {
    if (branches.descriptors[k]) r.descriptor_accuracy[k] = argmax_accuracy(outputs.task(k + 1), targets.task(k + 1));
  }
  if (branches.descriptors[2]) {
    for (int s = 0; s < 4; ++s) {
      long hits = 0;
      for (Eigen::Index j = 0; j < n; ++j) hits += (outputs.subtypes(s, j) >= 0.5) == (targets.subtypes(s, j) >= 0.5);
      r.subtype_accuracy[s] = static_cast<double>(hits) / static_cast<double>(n);
    }
  }
  if (branches.likelihood && n >= 2) {
    std::vector<double> x(outputs.likelihood.data(), outputs.likelihood.data() + n);
    std::vector<double> y(targets.likelihood.data(), targets.likelihood.data() + n);
    const auto rm = regression_metrics(x, y);
    r.likelihood_r2 = rm.r2;
    r.likelihood_mse = rm.mse;
  }
  return r;
}

MetricsReport evaluate_model(const Model& model, const std::vector<Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("cannot evaluate on an empty record set");
  return compute_metrics(predict(model, samples), stack_targets(samples), model.config().branches);
}

MetricsReport mean_report(const std::vector<MetricsReport>& reports) {
  MetricsReport out;
  std::vector<std::pair<double, int>> sums;
  bool first = true;
  for (const auto& r : reports) {
    out.count += r.count;
    std::size_t i = 0;
    for_each_field(r, [&](const char*, const std::optional<double>& v) {
      if (first) sums.emplace_back(0.0, 0);
      if (v) sums[i].first += *v, ++sums[i].second;
      ++i;
    });
    first = false;
  }
  std::size_t i = 0;
  for_each_field(out, [&](const char*, std::optional<double>& v) {
    if (i < sums.size() && sums[i].second > 0) v = sums[i].first / sums[i].second;
    ++i;
  });
  return out;
}

std::string metrics_report_to_json(const MetricsReport& report) {
  json j;
  j["count"] = report.count;
  for_each_field(report, [&](const char* key, const std::optional<double>& v) { j[key] = optional_json(v); });
  return j.dump();
}

MetricsReport metrics_report_from_json(const std::string& text) {
  const json j = json::parse(text);
  MetricsReport r;
  r.count = j.at("count").get<std::size_t>();
  for_each_field(r, [&](const char* key, std::optional<double>& v) { v = optional_from(j, key); });
  return r;
}

std::string metrics_csv_header() {
  std::string header = "label,count";
  MetricsReport dummy;
  for_each_field(dummy, [&](const char* key, const std::optional<double>&) { header += std::string(",") + key; });
  return header;
}

std::string metrics_csv_row(const std::string& label, const MetricsReport& report) {
  std::string row = label + "," + std::to_string(report.count);
  for_each_field(report, [&](const char*, const std::optional<double>& v) { row += "," + csv_cell(v); });
  return row;
}

}  // namespace birads
