#pragma once

// Dense building blocks for the network, templated on the scalar type so the
// same code runs in float for training and in double for gradient checks.
// Feature maps are stored per sample as (channels x height*width) row-major
// matrices; fully-connected activations as (features x batch) column-major.

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <random>
#include <string>
#include <vector>

namespace birads::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct FeatureMaps {
  std::vector<RowMatrix<Scalar>> samples;
  int height = 0;
  int width = 0;

  int batch() const { return static_cast<int>(samples.size()); }
  int channels() const { return samples.empty() ? 0 : static_cast<int>(samples.front().rows()); }
};

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;

  void resize(Eigen::Index rows, Eigen::Index cols) {
    value = Matrix<Scalar>::Zero(rows, cols);
    grad = Matrix<Scalar>::Zero(rows, cols);
  }
};

/// Unfolds 3x3 neighbourhoods (zero padding 1) of a (C x H*W) map into a
/// (9C x H*W) matrix; row c*9 + ky*3 + kx holds the tap (ky, kx) of channel c.
template <typename Scalar>
RowMatrix<Scalar> im2col3x3(const RowMatrix<Scalar>& in, int height, int width) {
  const int channels = static_cast<int>(in.rows());
  RowMatrix<Scalar> cols = RowMatrix<Scalar>::Zero(channels * 9, static_cast<Eigen::Index>(height) * width);
  for (int c = 0; c < channels; ++c) {
    const Scalar* src = in.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        Scalar* dst = cols.row(c * 9 + ky * 3 + kx).data();
        const int dx = kx - 1;
        const int x_begin = std::max(0, -dx);
        const int x_end = std::min(width, width - dx);
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= height) continue;
          std::memcpy(dst + y * width + x_begin, src + sy * width + x_begin + dx, sizeof(Scalar) * (x_end - x_begin));
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col3x3: accumulates column gradients back into a (C x H*W) map.
template <typename Scalar>
RowMatrix<Scalar> col2im3x3(const RowMatrix<Scalar>& cols, int channels, int height, int width) {
  RowMatrix<Scalar> out = RowMatrix<Scalar>::Zero(channels, static_cast<Eigen::Index>(height) * width);
  for (int c = 0; c < channels; ++c) {
    Scalar* dst = out.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const Scalar* src = cols.row(c * 9 + ky * 3 + kx).data();
        const int dx = kx - 1;
        const int x_begin = std::max(0, -dx);
        const int x_end = std::min(width, width - dx);
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= height) continue;
          Scalar* d = dst + sy * width + dx;
          const Scalar* s = src + y * width;
          for (int x = x_begin; x < x_end; ++x) d[x] += s[x];
        }
      }
    }
  }
  return out;
}

/// 3x3 convolution, stride 1, zero padding 1, fused with a rectifier.
template <typename Scalar>
struct Conv3x3Relu {
  Parameter<Scalar> weight;  // out x 9*in
  Parameter<Scalar> bias;    // out x 1

  Conv3x3Relu() = default;
  Conv3x3Relu(const std::string& name, int in_channels, int out_channels) {
    weight.name = name + ".weight";
    bias.name = name + ".bias";
    weight.resize(out_channels, 9 * in_channels);
    bias.resize(out_channels, 1);
  }

  int in_channels() const { return static_cast<int>(weight.value.cols() / 9); }
  int out_channels() const { return static_cast<int>(weight.value.rows()); }

  RowMatrix<Scalar> forward(const RowMatrix<Scalar>& in, int height, int width) const {
    RowMatrix<Scalar> out = weight.value * im2col3x3<Scalar>(in, height, width);
    out.colwise() += bias.value.col(0);
    return out.cwiseMax(Scalar(0));
  }

  /// `grad_out` is the gradient w.r.t. this layer's rectified output.
  RowMatrix<Scalar> backward(const RowMatrix<Scalar>& in, const RowMatrix<Scalar>& out,
                             const RowMatrix<Scalar>& grad_out, int height, int width, bool need_input_grad) {
    const RowMatrix<Scalar> grad_pre = (out.array() > Scalar(0)).select(grad_out.array(), Scalar(0)).matrix();
    const RowMatrix<Scalar> cols = im2col3x3<Scalar>(in, height, width);
    weight.grad.noalias() += grad_pre * cols.transpose();
    bias.grad.col(0) += grad_pre.rowwise().sum();
    if (!need_input_grad) return {};
    const RowMatrix<Scalar> grad_cols = weight.value.transpose() * grad_pre;
    return col2im3x3<Scalar>(grad_cols, in_channels(), height, width);
  }
};

/// 2x2 max pooling with stride 2; `argmax` records the winning input index.
template <typename Scalar>
RowMatrix<Scalar> maxpool2x2(const RowMatrix<Scalar>& in, int height, int width, std::vector<int>* argmax) {
  const int oh = height / 2, ow = width / 2;
  RowMatrix<Scalar> out(in.rows(), static_cast<Eigen::Index>(oh) * ow);
  if (argmax) argmax->resize(static_cast<std::size_t>(in.rows()) * oh * ow);
  for (Eigen::Index c = 0; c < in.rows(); ++c) {
    const Scalar* src = in.row(c).data();
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        int best = (2 * y) * width + 2 * x;
        for (int idx : {best + 1, best + width, best + width + 1}) {
          if (src[idx] > src[best]) best = idx;
        }
        const int o = y * ow + x;
        out(c, o) = src[best];
        if (argmax) (*argmax)[static_cast<std::size_t>(c) * oh * ow + o] = best;
      }
    }
  }
  return out;
}

template <typename Scalar>
RowMatrix<Scalar> maxpool2x2_backward(const RowMatrix<Scalar>& grad_out, const std::vector<int>& argmax,
                                      int in_height, int in_width) {
  RowMatrix<Scalar> grad_in = RowMatrix<Scalar>::Zero(grad_out.rows(), static_cast<Eigen::Index>(in_height) * in_width);
  const Eigen::Index n = grad_out.cols();
  for (Eigen::Index c = 0; c < grad_out.rows(); ++c) {
    for (Eigen::Index o = 0; o < n; ++o) grad_in(c, argmax[c * n + o]) += grad_out(c, o);
  }
  return grad_in;
}

template <typename Scalar>
struct Linear {
  Parameter<Scalar> weight;  // out x in
  Parameter<Scalar> bias;    // out x 1

  Linear() = default;
  Linear(const std::string& name, int in, int out) {
    weight.name = name + ".weight";
    bias.name = name + ".bias";
    weight.resize(out, in);
    bias.resize(out, 1);
  }

  Matrix<Scalar> forward(const Matrix<Scalar>& x) const {
    Matrix<Scalar> y = weight.value * x;
    y.colwise() += bias.value.col(0);
    return y;
  }

  Matrix<Scalar> backward(const Matrix<Scalar>& x, const Matrix<Scalar>& grad_y) {
    weight.grad.noalias() += grad_y * x.transpose();
    bias.grad.col(0) += grad_y.rowwise().sum();
    return weight.value.transpose() * grad_y;
  }
};

template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& x) {
  return x.cwiseMax(typename Derived::Scalar(0));
}

/// Column-wise softmax with max subtraction.
template <typename Scalar>
Matrix<Scalar> softmax(const Matrix<Scalar>& logits) {
  Matrix<Scalar> p(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const auto e = (logits.col(j).array() - logits.col(j).maxCoeff()).exp();
    p.col(j) = e / e.sum();
  }
  return p;
}

template <typename Scalar>
Matrix<Scalar> softmax_backward(const Matrix<Scalar>& probs, const Matrix<Scalar>& grad_probs) {
  const auto inner = (probs.array() * grad_probs.array()).colwise().sum();
  return (probs.array() * (grad_probs.array().rowwise() - inner)).matrix();
}

template <typename Scalar>
Matrix<Scalar> sigmoid(const Matrix<Scalar>& x) {
  return x.unaryExpr([](Scalar v) {
    return v >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-v)) : std::exp(v) / (Scalar(1) + std::exp(v));
  });
}

template <typename Scalar>
Matrix<Scalar> sigmoid_backward(const Matrix<Scalar>& y, const Matrix<Scalar>& grad_y) {
  return (grad_y.array() * y.array() * (Scalar(1) - y.array())).matrix();
}

/// Inverted dropout mask: entries are 0 or 1 / (1 - rate).
template <typename Scalar, typename Engine>
Matrix<Scalar> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Engine& rng) {
  Matrix<Scalar> mask(rows, cols);
  std::bernoulli_distribution keep(1.0 - rate);
  const Scalar scale = Scalar(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : Scalar(0);
  return mask;
}

}  // namespace birads::nn
