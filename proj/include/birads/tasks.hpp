#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <string_view>

namespace birads {

/// Number of supervised tasks. Tasks are numbered 1..11:
/// 1 shape, 2 orientation, 3 margin, 4 echo pattern, 5 posterior features,
/// 6..9 margin subtypes (indistinct, angular, microlobulated, spiculated),
/// 10 likelihood of malignancy, 11 tumor class.
inline constexpr int kTaskCount = 11;

inline constexpr std::array<int, kTaskCount> kTaskArity = {3, 2, 2, 6, 4, 1, 1, 1, 1, 1, 2};

inline constexpr std::array<std::string_view, kTaskCount> kTaskNames = {
    "shape",
    "orientation",
    "margin",
    "echo_pattern",
    "posterior",
    "margin_indistinct",
    "margin_angular",
    "margin_microlobulated",
    "margin_spiculated",
    "likelihood",
    "tumor_class",
};

/// Width of the descriptor probability vector X1..X5 that is fed to the fusion branches.
inline constexpr int kDescriptorProbabilityWidth = 3 + 2 + 2 + 6 + 4;

inline constexpr bool is_categorical_task(int k) { return (k >= 1 && k <= 5) || k == 11; }
inline constexpr bool is_subtype_task(int k) { return k >= 6 && k <= 9; }

/// Per-task values for a batch, one column per sample. Used both for model
/// outputs (X1..X11) and for targets (Y1..Y11); the layouts are identical.
template <typename Scalar>
struct TaskValues {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Block = Eigen::Block<Matrix>;
  using ConstBlock = const Eigen::Block<const Matrix>;

  Matrix shape;        // 3 x B
  Matrix orientation;  // 2 x B
  Matrix margin;       // 2 x B
  Matrix echo;         // 6 x B
  Matrix posterior;    // 4 x B
  Matrix subtypes;     // 4 x B, tasks 6..9 are its rows
  Matrix likelihood;   // 1 x B
  Matrix tumor;        // 2 x B, row 1 is the malignant class

  static TaskValues zeros(Eigen::Index batch) {
    TaskValues v;
    v.shape = Matrix::Zero(3, batch);
    v.orientation = Matrix::Zero(2, batch);
    v.margin = Matrix::Zero(2, batch);
    v.echo = Matrix::Zero(6, batch);
    v.posterior = Matrix::Zero(4, batch);
    v.subtypes = Matrix::Zero(4, batch);
    v.likelihood = Matrix::Zero(1, batch);
    v.tumor = Matrix::Zero(2, batch);
    return v;
  }

  Eigen::Index batch_size() const { return tumor.cols(); }

  Block task(int k) { return task_block(*this, k); }
  ConstBlock task(int k) const { return task_block(*this, k); }

  template <typename Fn>
  void for_each_matrix(Fn&& fn) {
    fn(shape), fn(orientation), fn(margin), fn(echo), fn(posterior), fn(subtypes), fn(likelihood), fn(tumor);
  }
  template <typename Fn>
  void for_each_matrix(Fn&& fn) const {
    fn(shape), fn(orientation), fn(margin), fn(echo), fn(posterior), fn(subtypes), fn(likelihood), fn(tumor);
  }

  /// Copies sample `src` of `other` into column `dst`.
  template <typename Other>
  void set_sample(Eigen::Index dst, const TaskValues<Other>& other, Eigen::Index src = 0) {
    shape.col(dst) = other.shape.col(src).template cast<Scalar>();
    orientation.col(dst) = other.orientation.col(src).template cast<Scalar>();
    margin.col(dst) = other.margin.col(src).template cast<Scalar>();
    echo.col(dst) = other.echo.col(src).template cast<Scalar>();
    posterior.col(dst) = other.posterior.col(src).template cast<Scalar>();
    subtypes.col(dst) = other.subtypes.col(src).template cast<Scalar>();
    likelihood.col(dst) = other.likelihood.col(src).template cast<Scalar>();
    tumor.col(dst) = other.tumor.col(src).template cast<Scalar>();
  }

  template <typename Other>
  TaskValues<Other> cast() const {
    TaskValues<Other> out;
    out.shape = shape.template cast<Other>();
    out.orientation = orientation.template cast<Other>();
    out.margin = margin.template cast<Other>();
    out.echo = echo.template cast<Other>();
    out.posterior = posterior.template cast<Other>();
    out.subtypes = subtypes.template cast<Other>();
    out.likelihood = likelihood.template cast<Other>();
    out.tumor = tumor.template cast<Other>();
    return out;
  }

 private:
  template <typename Self>
  static auto task_block(Self& self, int k) {
    switch (k) {
      case 1: return self.shape.middleRows(0, 3);
      case 2: return self.orientation.middleRows(0, 2);
      case 3: return self.margin.middleRows(0, 2);
      case 4: return self.echo.middleRows(0, 6);
      case 5: return self.posterior.middleRows(0, 4);
      case 6:
      case 7:
      case 8:
      case 9: return self.subtypes.middleRows(k - 6, 1);
      case 10: return self.likelihood.middleRows(0, 1);
      default: return self.tumor.middleRows(0, 2);
    }
  }
};

using TaskTargets = TaskValues<double>;

}  // namespace birads
