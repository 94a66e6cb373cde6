#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "pasyn/nn/layers.hpp"
#include "pasyn/nn/loss.hpp"

namespace pasyn::nn {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
};

using GradCheckReport = std::vector<GradCheckEntry>;

// max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|, floor)
inline double max_relative_error(const Eigen::ArrayXd& analytic, const Eigen::ArrayXd& numeric, double floor = 1e-10) {
  if (analytic.size() == 0) return 0.0;
  const double scale = std::max({analytic.abs().maxCoeff(), numeric.abs().maxCoeff(), floor});
  return (analytic - numeric).abs().maxCoeff() / scale;
}

template <typename Scalar>
using LossFn = std::function<LossResult<Scalar>(const Tensor4<Scalar>&)>;

namespace detail {

template <typename Scalar>
double eval_loss(Layer<Scalar>& net, const Tensor4<Scalar>& x, const LossFn<Scalar>& loss) {
  return static_cast<double>(loss(net.forward(x, Mode::kTrain)).value);
}

template <typename Scalar>
Eigen::ArrayXd numeric_grad(Layer<Scalar>& net, const Tensor4<Scalar>& x, const LossFn<Scalar>& loss,
                            Tensor4<Scalar>& target, double h) {
  Eigen::ArrayXd out(target.size());
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    const Scalar saved = target.data()[i];
    target.data()[i] = saved + static_cast<Scalar>(h);
    const double plus = eval_loss(net, x, loss);
    target.data()[i] = saved - static_cast<Scalar>(h);
    const double minus = eval_loss(net, x, loss);
    target.data()[i] = saved;
    out[i] = (plus - minus) / (2.0 * h);
  }
  return out;
}

}  // namespace detail

// Compares backward() against central differences of the training-mode loss.
// One entry per parameter tensor (plus "input" when requested), sorted by
// descending error.
template <typename Scalar>
GradCheckReport grad_check(Layer<Scalar>& net, const Tensor4<Scalar>& input, const LossFn<Scalar>& loss,
                           double h = 1e-5, bool include_input = false) {
  net.zero_grad();
  const auto out = net.forward(input, Mode::kTrain);
  const auto dx = net.backward(loss(out).grad);

  GradCheckReport report;
  for (auto& p : net.parameters()) {
    const Eigen::ArrayXd analytic = p.grad->array().template cast<double>();
    const Eigen::ArrayXd numeric = detail::numeric_grad(net, input, loss, *p.value, h);
    report.push_back({p.name, max_relative_error(analytic, numeric)});
  }
  if (include_input) {
    Tensor4<Scalar> x = input;
    Eigen::ArrayXd numeric(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const Scalar saved = x.data()[i];
      x.data()[i] = saved + static_cast<Scalar>(h);
      const double plus = detail::eval_loss(net, x, loss);
      x.data()[i] = saved - static_cast<Scalar>(h);
      const double minus = detail::eval_loss(net, x, loss);
      x.data()[i] = saved;
      numeric[i] = (plus - minus) / (2.0 * h);
    }
    report.push_back({"input", max_relative_error(dx.array().template cast<double>(), numeric)});
  }
  std::stable_sort(report.begin(), report.end(),
                   [](const GradCheckEntry& a, const GradCheckEntry& b) { return a.max_rel_error > b.max_rel_error; });
  return report;
}

}  // namespace pasyn::nn
