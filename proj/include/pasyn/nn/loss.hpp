#pragma once

#include <algorithm>
#include <cmath>

#include "pasyn/nn/tensor.hpp"

namespace pasyn::nn {

template <typename Scalar>
struct LossResult {
  Scalar value = 0;
  Tensor4<Scalar> grad;  // dL/dpred
};

inline constexpr double kBceEps = 1e-7;

// Mean binary cross-entropy. Predictions are clamped to [eps, 1 - eps]; the
// gradient is zero where the clamp is active.
template <typename Scalar>
LossResult<Scalar> bce_loss(const Tensor4<Scalar>& pred, const Tensor4<Scalar>& target) {
  require_shape(target, pred.shape(), "bce_loss target");
  const auto n = static_cast<double>(pred.size());
  LossResult<Scalar> r{Scalar(0), Tensor4<Scalar>(pred.shape())};
  double sum = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double raw = static_cast<double>(pred.data()[i]);
    const double p = std::clamp(raw, kBceEps, 1.0 - kBceEps);
    const double t = static_cast<double>(target.data()[i]);
    sum -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    const bool clamped = raw < kBceEps || raw > 1.0 - kBceEps;
    r.grad.data()[i] = clamped ? Scalar(0) : static_cast<Scalar>((p - t) / (p * (1.0 - p)) / n);
  }
  r.value = static_cast<Scalar>(sum / n);
  return r;
}

// BCE against a constant target label.
template <typename Scalar>
LossResult<Scalar> bce_loss(const Tensor4<Scalar>& pred, Scalar target) {
  return bce_loss(pred, Tensor4<Scalar>(pred.shape(), target));
}

// Mean squared error.
template <typename Scalar>
LossResult<Scalar> mse_loss(const Tensor4<Scalar>& pred, const Tensor4<Scalar>& target) {
  require_shape(target, pred.shape(), "mse_loss target");
  const auto n = static_cast<double>(pred.size());
  LossResult<Scalar> r{Scalar(0), Tensor4<Scalar>(pred.shape())};
  const auto diff = (pred.array() - target.array()).eval();
  r.value = static_cast<Scalar>(diff.template cast<double>().square().sum() / n);
  r.grad.array() = diff * static_cast<Scalar>(2.0 / n);
  return r;
}

}  // namespace pasyn::nn
