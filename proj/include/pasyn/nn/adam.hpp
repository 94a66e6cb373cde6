#pragma once

#include <cmath>
#include <vector>

#include "pasyn/nn/layers.hpp"

namespace pasyn::nn {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are bound to the parameter list
// passed to the constructor, in order.
template <typename Scalar>
class Adam {
 public:
  Adam(std::vector<ParamRef<Scalar>> params, AdamOptions options) : params_(std::move(params)), opt_(options) {
    require(opt_.lr > 0.0 && opt_.beta1 >= 0.0 && opt_.beta1 < 1.0 && opt_.beta2 >= 0.0 && opt_.beta2 < 1.0 &&
                opt_.eps > 0.0,
            ErrorCode::kInvalidParams, "adam: invalid hyperparameters");
    for (const auto& p : params_) {
      require(p.value && p.grad && p.value->shape() == p.grad->shape(), ErrorCode::kShapeMismatch,
              "adam: parameter '" + p.name + "' has mismatched gradient");
      m_.emplace_back(p.value->shape());
      v_.emplace_back(p.value->shape());
    }
  }

  // Throws non-finite naming the first offending parameter; nothing is updated then.
  void step() {
    for (const auto& p : params_)
      require(p.grad->all_finite(), ErrorCode::kNonFinite, "adam: non-finite gradient in parameter '" + p.name + "'");
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<Scalar>(opt_.beta1);
    const auto b2 = static_cast<Scalar>(opt_.beta2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& g = params_[i].grad->array();
      auto& m = m_[i].array();
      auto& v = v_[i].array();
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.square();
      params_[i].value->array() -= static_cast<Scalar>(opt_.lr) * (m / static_cast<Scalar>(c1)) /
                                   ((v / static_cast<Scalar>(c2)).sqrt() + static_cast<Scalar>(opt_.eps));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.grad->set_zero();
  }

  long step_count() const { return t_; }
  const AdamOptions& options() const { return opt_; }

 private:
  std::vector<ParamRef<Scalar>> params_;
  AdamOptions opt_;
  std::vector<Tensor4<Scalar>> m_, v_;
  long t_ = 0;
};

}  // namespace pasyn::nn
