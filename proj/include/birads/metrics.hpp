#pragma once

#include "birads/model.hpp"
#include "birads/samples.hpp"
#include "birads/tasks.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace birads {

/// Malignant (1) is the positive class. A rate whose denominator class is
/// absent from the targets is left empty rather than reported as 0.
struct ConfusionMetrics {
  long tp = 0, tn = 0, fp = 0, fn = 0;
  double accuracy = 0.0;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
};

ConfusionMetrics confusion_metrics(const std::vector<int>& predictions, const std::vector<int>& targets);

struct RegressionMetrics {
  std::optional<double> r2;  // empty for constant targets
  double mse = 0.0;
};

RegressionMetrics regression_metrics(const std::vector<double>& predictions, const std::vector<double>& targets);

struct MetricsReport {
  std::size_t count = 0;
  std::optional<double> tumor_accuracy, sensitivity, specificity;
  std::array<std::optional<double>, 5> descriptor_accuracy;  // shape, orientation, margin, echo, posterior
  std::array<std::optional<double>, 4> subtype_accuracy;     // indistinct, angular, microlobulated, spiculated
  std::optional<double> likelihood_r2, likelihood_mse;

  bool operator==(const MetricsReport&) const = default;
};

/// Metrics of `outputs` against `targets`. Descriptor, subtype and
/// likelihood entries are left empty for branches disabled in `branches`.
MetricsReport compute_metrics(const TaskValues<double>& outputs, const TaskTargets& targets,
                              const BranchMask& branches = {});

MetricsReport evaluate_model(const Model& model, const std::vector<Sample>& samples);

/// Field-wise unweighted mean over the reports in which the field is present.
MetricsReport mean_report(const std::vector<MetricsReport>& reports);

std::string metrics_report_to_json(const MetricsReport& report);
MetricsReport metrics_report_from_json(const std::string& text);

/// CSV header and row; absent cells are written as "NA".
std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& label, const MetricsReport& report);

}  // namespace birads
