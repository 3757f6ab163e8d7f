#pragma once

#include "birads/tasks.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace birads {

class ObjectiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kProbabilityClamp = 1e-7;

struct LossWeights {
  std::array<double, kTaskCount> lambda = {0.2, 0.2, 0.2, 0.2, 0.2, 0.1, 0.1, 0.1, 0.1, 0.2, 0.5};
  double lambda_a = 0.2;

  void validate() const {
    for (double l : lambda) {
      if (!(l >= 0.0)) throw ObjectiveError("loss weights must be nonnegative");
    }
    if (!(lambda_a >= 0.0)) throw ObjectiveError("agreement weight must be nonnegative");
  }
  bool operator==(const LossWeights&) const = default;
};

struct LossBreakdown {
  std::array<double, kTaskCount> task{};  // L1..L11
  double agreement = 0.0;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    for (int k = 0; k < kTaskCount; ++k) task[k] += o.task[k];
    agreement += o.agreement;
    total += o.total;
    return *this;
  }
  LossBreakdown& operator*=(double s) {
    for (double& t : task) t *= s;
    agreement *= s;
    total *= s;
    return *this;
  }
  /// Name of the first non-finite component, or empty.
  std::string first_non_finite() const {
    for (int k = 0; k < kTaskCount; ++k) {
      if (!std::isfinite(task[k])) return "L" + std::to_string(k + 1) + " (" + std::string(kTaskNames[k]) + ")";
    }
    if (!std::isfinite(agreement)) return "L_a (agreement)";
    if (!std::isfinite(total)) return "total";
    return {};
  }
};

namespace detail {

template <typename Scalar>
Scalar clamp_probability(Scalar p) {
  return std::clamp(p, Scalar(kProbabilityClamp), Scalar(1.0 - kProbabilityClamp));
}

/// d clamp(p) / dp: one inside the clamp window, zero outside.
template <typename Scalar>
Scalar clamp_slope(Scalar p) {
  return (p > Scalar(kProbabilityClamp) && p < Scalar(1.0 - kProbabilityClamp)) ? Scalar(1) : Scalar(0);
}

}  // namespace detail

/// Batch-mean loss of task k (1-based). Categorical tasks use clamped cross
/// entropy, subtype tasks binary cross entropy, task 10 squared error.
/// When `grad` is non-null it receives dL/dX with the shape of X.
template <typename Scalar, typename DerivedX, typename DerivedY>
double task_loss(int k, const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y,
                 Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>* grad = nullptr) {
  if (k < 1 || k > kTaskCount) throw ObjectiveError("task index " + std::to_string(k) + " out of range 1..11");
  if (x.rows() != kTaskArity[k - 1] || y.rows() != x.rows() || y.cols() != x.cols()) {
    throw ObjectiveError("shape mismatch for task " + std::to_string(k) + ": expected " +
                         std::to_string(kTaskArity[k - 1]) + " rows, got X " + std::to_string(x.rows()) + "x" +
                         std::to_string(x.cols()) + " and Y " + std::to_string(y.rows()) + "x" + std::to_string(y.cols()));
  }
  const Eigen::Index batch = x.cols();
  if (batch == 0) throw ObjectiveError("empty batch");
  if (grad) grad->setZero(x.rows(), x.cols());
  const Scalar inv_batch = Scalar(1) / Scalar(batch);
  double sum = 0.0;
  for (Eigen::Index j = 0; j < batch; ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Scalar p = x(i, j);
      const Scalar t = static_cast<Scalar>(y(i, j));
      if (is_categorical_task(k)) {
        if (t == Scalar(0)) continue;
        const Scalar pc = detail::clamp_probability(p);
        sum -= static_cast<double>(t * std::log(pc));
        if (grad) (*grad)(i, j) = -t / pc * detail::clamp_slope(p) * inv_batch;
      } else if (is_subtype_task(k)) {
        const Scalar pc = detail::clamp_probability(p);
        sum -= static_cast<double>(t * std::log(pc) + (Scalar(1) - t) * std::log(Scalar(1) - pc));
        if (grad) (*grad)(i, j) = (-t / pc + (Scalar(1) - t) / (Scalar(1) - pc)) * detail::clamp_slope(p) * inv_batch;
      } else {
        const Scalar d = p - t;
        sum += static_cast<double>(d * d);
        if (grad) (*grad)(i, j) = Scalar(2) * d * inv_batch;
      }
    }
  }
  return sum / static_cast<double>(batch);
}

/// Batch mean of ( |X11 - X10| - |Y11 - Y10| )^2 where X11 / Y11 are the
/// malignant-class probability / indicator.
template <typename Scalar>
double agreement_loss(const TaskValues<Scalar>& outputs, const TaskTargets& targets,
                      TaskValues<Scalar>* grad = nullptr) {
  const Eigen::Index batch = outputs.batch_size();
  if (batch == 0 || targets.batch_size() != batch) throw ObjectiveError("agreement loss batch mismatch");
  const Scalar inv_batch = Scalar(1) / Scalar(batch);
  double sum = 0.0;
  for (Eigen::Index j = 0; j < batch; ++j) {
    const Scalar gap = outputs.tumor(1, j) - outputs.likelihood(0, j);
    const Scalar target_gap = static_cast<Scalar>(std::abs(targets.tumor(1, j) - targets.likelihood(0, j)));
    const Scalar r = std::abs(gap) - target_gap;
    sum += static_cast<double>(r * r);
    if (grad) {
      const Scalar sign = gap > Scalar(0) ? Scalar(1) : (gap < Scalar(0) ? Scalar(-1) : Scalar(0));
      const Scalar g = Scalar(2) * r * sign * inv_batch;
      grad->tumor(1, j) += g;
      grad->likelihood(0, j) -= g;
    }
  }
  return sum / static_cast<double>(batch);
}

/// Scalar-argument form of the agreement term for one sample.
inline double agreement_loss(double x10, double x11, double y10, double y11) {
  const double r = std::abs(x11 - x10) - std::abs(y11 - y10);
  return r * r;
}

template <typename Scalar>
struct ObjectiveResult {
  LossBreakdown breakdown;
  TaskValues<Scalar> gradient;  // d total / d outputs
};

/// Weighted total: sum_k lambda_k L_k + lambda_a L_a, with its gradient.
template <typename Scalar>
ObjectiveResult<Scalar> evaluate_objective(const TaskValues<Scalar>& outputs, const TaskTargets& targets,
                                           const LossWeights& weights, bool with_gradient = true) {
  weights.validate();
  const Eigen::Index batch = outputs.batch_size();
  if (targets.batch_size() != batch) throw ObjectiveError("outputs and targets differ in batch size");
  ObjectiveResult<Scalar> result;
  if (with_gradient) result.gradient = TaskValues<Scalar>::zeros(batch);
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Matrix g;
  for (int k = 1; k <= kTaskCount; ++k) {
    const double lk = task_loss<Scalar>(k, outputs.task(k), targets.task(k), with_gradient ? &g : nullptr);
    result.breakdown.task[k - 1] = lk;
    result.breakdown.total += weights.lambda[k - 1] * lk;
    if (with_gradient) result.gradient.task(k) += Scalar(weights.lambda[k - 1]) * g;
  }
  TaskValues<Scalar> agreement_grad;
  if (with_gradient) agreement_grad = TaskValues<Scalar>::zeros(batch);
  result.breakdown.agreement = agreement_loss<Scalar>(outputs, targets, with_gradient ? &agreement_grad : nullptr);
  result.breakdown.total += weights.lambda_a * result.breakdown.agreement;
  if (with_gradient) {
    const Scalar la = Scalar(weights.lambda_a);
    result.gradient.tumor += la * agreement_grad.tumor;
    result.gradient.likelihood += la * agreement_grad.likelihood;
  }
  return result;
}

template <typename Scalar>
LossBreakdown total_loss(const TaskValues<Scalar>& outputs, const TaskTargets& targets, const LossWeights& weights) {
  return evaluate_objective<Scalar>(outputs, targets, weights, false).breakdown;
}

std::string loss_breakdown_to_json(const LossBreakdown& b);
LossBreakdown loss_breakdown_from_json(const std::string& text);

}  // namespace birads
