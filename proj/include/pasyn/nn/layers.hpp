#pragma once

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "pasyn/error.hpp"
#include "pasyn/nn/tensor.hpp"
#include "pasyn/rng.hpp"

namespace pasyn::nn {

enum class Mode { kTrain, kEval };

// Named view of a trainable tensor and its gradient. Buffers have grad == nullptr.
template <typename Scalar>
struct ParamRef {
  std::string name;
  Tensor4<Scalar>* value = nullptr;
  Tensor4<Scalar>* grad = nullptr;
};

template <typename Scalar>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual Shape4 output_shape(const Shape4& in) const = 0;
  virtual Tensor4<Scalar> forward(const Tensor4<Scalar>& x, Mode mode) = 0;
  // Returns dL/dx and accumulates parameter gradients.
  virtual Tensor4<Scalar> backward(const Tensor4<Scalar>& grad_out) = 0;

  virtual std::vector<ParamRef<Scalar>> parameters() { return {}; }
  virtual std::vector<ParamRef<Scalar>> buffers() { return {}; }
  virtual void init(Rng&) {}
  virtual nlohmann::json spec() const { return {{"kind", kind()}}; }

  void zero_grad() {
    for (auto& p : parameters()) p.grad->set_zero();
  }
};

template <typename Scalar>
using LayerPtr = std::unique_ptr<Layer<Scalar>>;

namespace detail {

inline void require_cached(bool cached, const std::string& kind) {
  require(cached, ErrorCode::kBackwardBeforeForward, kind + ": backward called before forward");
}

struct ConvGeometry {
  int kh = 3, kw = 3;
  int sh = 1, sw = 1;
  int ph = 0, pw = 0;

  int out_h(int h) const { return (h + 2 * ph - kh) / sh + 1; }
  int out_w(int w) const { return (w + 2 * pw - kw) / sw + 1; }
  // Spatial size of a transposed convolution output.
  int up_h(int h) const { return (h - 1) * sh - 2 * ph + kh; }
  int up_w(int w) const { return (w - 1) * sw - 2 * pw + kw; }
};

// cols is (C*kh*kw) x (Ho*Wo), row-major.
template <typename Scalar>
void im2col(const Scalar* x, int channels, int h, int w, const ConvGeometry& g, int ho, int wo, Scalar* cols) {
  const Eigen::Index plane = Eigen::Index(ho) * wo;
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < g.kh; ++i)
      for (int j = 0; j < g.kw; ++j) {
        Scalar* row = cols + ((Eigen::Index(c) * g.kh + i) * g.kw + j) * plane;
        const Scalar* src = x + Eigen::Index(c) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.sh - g.ph + i;
          Scalar* dst = row + Eigen::Index(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, Scalar(0));
            continue;
          }
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.sw - g.pw + j;
            dst[ox] = (ix >= 0 && ix < w) ? src[Eigen::Index(iy) * w + ix] : Scalar(0);
          }
        }
      }
}

// Adjoint of im2col: scatters columns back and accumulates into x.
template <typename Scalar>
void col2im(const Scalar* cols, int channels, int h, int w, const ConvGeometry& g, int ho, int wo, Scalar* x) {
  const Eigen::Index plane = Eigen::Index(ho) * wo;
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < g.kh; ++i)
      for (int j = 0; j < g.kw; ++j) {
        const Scalar* row = cols + ((Eigen::Index(c) * g.kh + i) * g.kw + j) * plane;
        Scalar* dst = x + Eigen::Index(c) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.sh - g.ph + i;
          if (iy < 0 || iy >= h) continue;
          const Scalar* src = row + Eigen::Index(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.sw - g.pw + j;
            if (ix >= 0 && ix < w) dst[Eigen::Index(iy) * w + ix] += src[ox];
          }
        }
      }
}

inline nlohmann::json pair_json(int a, int b) { return nlohmann::json::array({a, b}); }

template <typename Scalar>
void normal_fill(Tensor4<Scalar>& t, double mean, double stddev, Rng& rng) {
  std::normal_distribution<double> d(mean, stddev);
  for (auto& v : t.array()) v = static_cast<Scalar>(d(rng));
}

}  // namespace detail

// Cross-correlation with weights (Cout, Cin, kh, kw) and bias (1, Cout, 1, 1).
template <typename Scalar>
class Conv2d : public Layer<Scalar> {
 public:
  Conv2d(int in_channels, int out_channels, int kh, int kw, int stride = 1, int padding = 0, bool bias = true)
      : Conv2d(in_channels, out_channels, {kh, kw, stride, stride, padding, padding}, bias) {}

  Conv2d(int in_channels, int out_channels, detail::ConvGeometry g, bool bias = true)
      : in_(in_channels), out_(out_channels), g_(g), has_bias_(bias) {
    require(in_ > 0 && out_ > 0 && g_.kh > 0 && g_.kw > 0 && g_.sh >= 1 && g_.sw >= 1 && g_.ph >= 0 && g_.pw >= 0,
            ErrorCode::kInvalidParams, "conv2d: invalid configuration");
    weight_ = Tensor4<Scalar>(out_, in_, g_.kh, g_.kw);
    weight_grad_ = Tensor4<Scalar>(weight_.shape());
    bias_ = Tensor4<Scalar>(1, out_, 1, 1);
    bias_grad_ = Tensor4<Scalar>(bias_.shape());
  }

  std::string kind() const override { return "conv2d"; }

  Shape4 output_shape(const Shape4& in) const override {
    require(in.c == in_, ErrorCode::kShapeMismatch,
            "conv2d: expected " + std::to_string(in_) + " input channels, got " + to_string(in));
    const int ho = g_.out_h(in.h);
    const int wo = g_.out_w(in.w);
    require(ho > 0 && wo > 0, ErrorCode::kShapeMismatch, "conv2d: input " + to_string(in) + " smaller than kernel");
    return {in.n, out_, ho, wo};
  }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, Mode) override {
    const Shape4 os = output_shape(x.shape());
    input_ = x;
    cached_ = true;
    Tensor4<Scalar> y(os);
    RowMatrix<Scalar> cols(Eigen::Index(in_) * g_.kh * g_.kw, os.plane());
    const auto w = weight_matrix();
    for (int n = 0; n < x.n(); ++n) {
      detail::im2col(x.data() + x.offset(n, 0, 0, 0), in_, x.h(), x.w(), g_, os.h, os.w, cols.data());
      auto out = y.sample(n);
      out.noalias() = w * cols;
      if (has_bias_) out.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias_.data(), out_);
    }
    return y;
  }

  Tensor4<Scalar> backward(const Tensor4<Scalar>& grad_out) override {
    detail::require_cached(cached_, kind());
    const Shape4 os = output_shape(input_.shape());
    require_shape(grad_out, os, "conv2d backward");
    Tensor4<Scalar> dx(input_.shape());
    RowMatrix<Scalar> cols(Eigen::Index(in_) * g_.kh * g_.kw, os.plane());
    RowMatrix<Scalar> dcols(cols.rows(), cols.cols());
    const auto w = weight_matrix();
    auto dw = typename Tensor4<Scalar>::MatrixMap(weight_grad_.data(), out_, cols.rows());
    for (int n = 0; n < input_.n(); ++n) {
      detail::im2col(input_.data() + input_.offset(n, 0, 0, 0), in_, input_.h(), input_.w(), g_, os.h, os.w,
                     cols.data());
      const auto g = grad_out.sample(n);
      dw.noalias() += g * cols.transpose();
      if (has_bias_)
        Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias_grad_.data(), out_) += g.rowwise().sum();
      dcols.noalias() = w.transpose() * g;
      detail::col2im(dcols.data(), in_, input_.h(), input_.w(), g_, os.h, os.w, dx.data() + dx.offset(n, 0, 0, 0));
    }
    return dx;
  }

  std::vector<ParamRef<Scalar>> parameters() override {
    std::vector<ParamRef<Scalar>> p{{"weight", &weight_, &weight_grad_}};
    if (has_bias_) p.push_back({"bias", &bias_, &bias_grad_});
    return p;
  }

  void init(Rng& rng) override {
    detail::normal_fill(weight_, 0.0, 0.02, rng);
    bias_.set_zero();
  }

  nlohmann::json spec() const override {
    return {{"kind", kind()},
            {"in", in_},
            {"out", out_},
            {"kernel", detail::pair_json(g_.kh, g_.kw)},
            {"stride", detail::pair_json(g_.sh, g_.sw)},
            {"padding", detail::pair_json(g_.ph, g_.pw)},
            {"bias", has_bias_}};
  }

  Tensor4<Scalar>& weight() { return weight_; }
  Tensor4<Scalar>& bias() { return bias_; }
  const detail::ConvGeometry& geometry() const { return g_; }

 private:
  typename Tensor4<Scalar>::MatrixMap weight_matrix() {
    return typename Tensor4<Scalar>::MatrixMap(weight_.data(), out_, Eigen::Index(in_) * g_.kh * g_.kw);
  }

  int in_, out_;
  detail::ConvGeometry g_;
  bool has_bias_;
  Tensor4<Scalar> weight_, weight_grad_, bias_, bias_grad_;
  Tensor4<Scalar> input_;
  bool cached_ = false;
};

// Gradient of Conv2d with respect to its input. Weights are (Cin, Cout, kh, kw).
template <typename Scalar>
class TransposedConv2d : public Layer<Scalar> {
 public:
  TransposedConv2d(int in_channels, int out_channels, int kh, int kw, int stride = 1, int padding = 0,
                   bool bias = true)
      : TransposedConv2d(in_channels, out_channels, {kh, kw, stride, stride, padding, padding}, bias) {}

  TransposedConv2d(int in_channels, int out_channels, detail::ConvGeometry g, bool bias = true)
      : in_(in_channels), out_(out_channels), g_(g), has_bias_(bias) {
    require(in_ > 0 && out_ > 0 && g_.kh > 0 && g_.kw > 0 && g_.sh >= 1 && g_.sw >= 1 && g_.ph >= 0 && g_.pw >= 0,
            ErrorCode::kInvalidParams, "transposed-conv2d: invalid configuration");
    weight_ = Tensor4<Scalar>(in_, out_, g_.kh, g_.kw);
    weight_grad_ = Tensor4<Scalar>(weight_.shape());
    bias_ = Tensor4<Scalar>(1, out_, 1, 1);
    bias_grad_ = Tensor4<Scalar>(bias_.shape());
  }

  std::string kind() const override { return "transposed-conv2d"; }

  Shape4 output_shape(const Shape4& in) const override {
    require(in.c == in_, ErrorCode::kShapeMismatch,
            "transposed-conv2d: expected " + std::to_string(in_) + " input channels, got " + to_string(in));
    const int ho = g_.up_h(in.h);
    const int wo = g_.up_w(in.w);
    require(ho > 0 && wo > 0, ErrorCode::kShapeMismatch, "transposed-conv2d: empty output for " + to_string(in));
    return {in.n, out_, ho, wo};
  }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, Mode) override {
    const Shape4 os = output_shape(x.shape());
    input_ = x;
    cached_ = true;
    Tensor4<Scalar> y(os);
    RowMatrix<Scalar> cols(Eigen::Index(out_) * g_.kh * g_.kw, x.shape().plane());
    const auto w = weight_matrix();
    for (int n = 0; n < x.n(); ++n) {
      cols.noalias() = w.transpose() * x.sample(n);
      detail::col2im(cols.data(), out_, os.h, os.w, g_, x.h(), x.w(), y.data() + y.offset(n, 0, 0, 0));
      if (has_bias_)
        y.sample(n).colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias_.data(), out_);
    }
    return y;
  }

  Tensor4<Scalar> backward(const Tensor4<Scalar>& grad_out) override {
    detail::require_cached(cached_, kind());
    const Shape4 os = output_shape(input_.shape());
    require_shape(grad_out, os, "transposed-conv2d backward");
    Tensor4<Scalar> dx(input_.shape());
    RowMatrix<Scalar> cols(Eigen::Index(out_) * g_.kh * g_.kw, input_.shape().plane());
    const auto w = weight_matrix();
    auto dw = typename Tensor4<Scalar>::MatrixMap(weight_grad_.data(), in_, cols.rows());
    for (int n = 0; n < input_.n(); ++n) {
      detail::im2col(grad_out.data() + grad_out.offset(n, 0, 0, 0), out_, os.h, os.w, g_, input_.h(), input_.w(),
                     cols.data());
      dx.sample(n).noalias() = w * cols;
      dw.noalias() += input_.sample(n) * cols.transpose();
      if (has_bias_)
        Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias_grad_.data(), out_) +=
            grad_out.sample(n).rowwise().sum();
    }
    return dx;
  }

  std::vector<ParamRef<Scalar>> parameters() override {
    std::vector<ParamRef<Scalar>> p{{"weight", &weight_, &weight_grad_}};
    if (has_bias_) p.push_back({"bias", &bias_, &bias_grad_});
    return p;
  }

  void init(Rng& rng) override {
    detail::normal_fill(weight_, 0.0, 0.02, rng);
    bias_.set_zero();
  }

  nlohmann::json spec() const override {
    return {{"kind", kind()},
            {"in", in_},
            {"out", out_},
            {"kernel", detail::pair_json(g_.kh, g_.kw)},
            {"stride", detail::pair_json(g_.sh, g_.sw)},
            {"padding", detail::pair_json(g_.ph, g_.pw)},
            {"bias", has_bias_}};
  }

  Tensor4<Scalar>& weight() { return weight_; }
  Tensor4<Scalar>& bias() { return bias_; }

 private:
  typename Tensor4<Scalar>::MatrixMap weight_matrix() {
    return typename Tensor4<Scalar>::MatrixMap(weight_.data(), in_, Eigen::Index(out_) * g_.kh * g_.kw);
  }

  int in_, out_;
  detail::ConvGeometry g_;
  bool has_bias_;
  Tensor4<Scalar> weight_, weight_grad_, bias_, bias_grad_;
  Tensor4<Scalar> input_;
  bool cached_ = false;
};

// Per-channel normalization. Training mode uses batch statistics and updates
// running estimates (unbiased variance); eval mode uses the running estimates.
template <typename Scalar>
class BatchNorm2d : public Layer<Scalar> {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5)
      : c_(channels), momentum_(momentum), eps_(eps) {
    require(c_ > 0 && momentum_ >= 0.0 && momentum_ <= 1.0 && eps_ > 0.0, ErrorCode::kInvalidParams,
            "batchnorm2d: invalid configuration");
    gamma_ = Tensor4<Scalar>(1, c_, 1, 1, Scalar(1));
    beta_ = Tensor4<Scalar>(1, c_, 1, 1);
    gamma_grad_ = Tensor4<Scalar>(gamma_.shape());
    beta_grad_ = Tensor4<Scalar>(beta_.shape());
    running_mean_ = Tensor4<Scalar>(1, c_, 1, 1);
    running_var_ = Tensor4<Scalar>(1, c_, 1, 1, Scalar(1));
  }

  std::string kind() const override { return "batchnorm2d"; }

  Shape4 output_shape(const Shape4& in) const override {
    require(in.c == c_, ErrorCode::kShapeMismatch,
            "batchnorm2d: expected " + std::to_string(c_) + " channels, got " + to_string(in));
    return in;
  }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, Mode mode) override {
    output_shape(x.shape());
    const Eigen::Index plane = x.shape().plane();
    const double count = static_cast<double>(x.n()) * static_cast<double>(plane);
    mode_ = mode;
    mean_.assign(c_, 0.0);
    inv_std_.assign(c_, 0.0);
    if (mode == Mode::kTrain) {
      require(count > 1.0, ErrorCode::kShapeMismatch, "batchnorm2d: training needs more than one value per channel");
      for (int c = 0; c < c_; ++c) {
        double sum = 0.0;
        for (int n = 0; n < x.n(); ++n) sum += x.sample(n).row(c).template cast<double>().sum();
        const double mean = sum / count;
        double sq = 0.0;
        for (int n = 0; n < x.n(); ++n) sq += (x.sample(n).row(c).template cast<double>().array() - mean).square().sum();
        const double var = sq / count;
        mean_[c] = mean;
        inv_std_[c] = 1.0 / std::sqrt(var + eps_);
        running_mean_.data()[c] = static_cast<Scalar>((1.0 - momentum_) * running_mean_.data()[c] + momentum_ * mean);
        running_var_.data()[c] =
            static_cast<Scalar>((1.0 - momentum_) * running_var_.data()[c] + momentum_ * sq / (count - 1.0));
      }
    } else {
      for (int c = 0; c < c_; ++c) {
        mean_[c] = running_mean_.data()[c];
        inv_std_[c] = 1.0 / std::sqrt(static_cast<double>(running_var_.data()[c]) + eps_);
      }
    }
    xhat_ = Tensor4<Scalar>(x.shape());
    Tensor4<Scalar> y(x.shape());
    for (int n = 0; n < x.n(); ++n)
      for (int c = 0; c < c_; ++c) {
        auto xh = xhat_.sample(n).row(c);
        xh = (x.sample(n).row(c).array() - static_cast<Scalar>(mean_[c])) * static_cast<Scalar>(inv_std_[c]);
        y.sample(n).row(c) = xh.array() * gamma_.data()[c] + beta_.data()[c];
      }
    cached_ = true;
    return y;
  }

  Tensor4<Scalar> backward(const Tensor4<Scalar>& grad_out) override {
    detail::require_cached(cached_, kind());
    require_shape(grad_out, xhat_.shape(), "batchnorm2d backward");
    const double count = static_cast<double>(xhat_.n()) * static_cast<double>(xhat_.shape().plane());
    Tensor4<Scalar> dx(xhat_.shape());
    for (int c = 0; c < c_; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (int n = 0; n < xhat_.n(); ++n) {
        const auto g = grad_out.sample(n).row(c).template cast<double>();
        sum_g += g.sum();
        sum_gx += (g.array() * xhat_.sample(n).row(c).template cast<double>().array()).sum();
      }
      gamma_grad_.data()[c] += static_cast<Scalar>(sum_gx);
      beta_grad_.data()[c] += static_cast<Scalar>(sum_g);
      const double scale = static_cast<double>(gamma_.data()[c]) * inv_std_[c];
      for (int n = 0; n < xhat_.n(); ++n) {
        auto d = dx.sample(n).row(c);
        const auto g = grad_out.sample(n).row(c);
        if (mode_ == Mode::kTrain) {
          d = (g.array() - static_cast<Scalar>(sum_g / count) -
               xhat_.sample(n).row(c).array() * static_cast<Scalar>(sum_gx / count)) *
              static_cast<Scalar>(scale);
        } else {
          d = g.array() * static_cast<Scalar>(scale);
        }
      }
    }
    return dx;
  }

  std::vector<ParamRef<Scalar>> parameters() override {
    return {{"gamma", &gamma_, &gamma_grad_}, {"beta", &beta_, &beta_grad_}};
  }
  std::vector<ParamRef<Scalar>> buffers() override {
    return {{"running_mean", &running_mean_, nullptr}, {"running_var", &running_var_, nullptr}};
  }

  void init(Rng& rng) override {
    detail::normal_fill(gamma_, 1.0, 0.02, rng);
    beta_.set_zero();
  }

  nlohmann::json spec() const override {
    return {{"kind", kind()}, {"channels", c_}, {"momentum", momentum_}, {"eps", eps_}};
  }

  Tensor4<Scalar>& gamma() { return gamma_; }
  Tensor4<Scalar>& beta() { return beta_; }
  Tensor4<Scalar>& running_mean() { return running_mean_; }
  Tensor4<Scalar>& running_var() { return running_var_; }

 private:
  int c_;
  double momentum_, eps_;
  Tensor4<Scalar> gamma_, beta_, gamma_grad_, beta_grad_, running_mean_, running_var_;
  Tensor4<Scalar> xhat_;
  std::vector<double> mean_, inv_std_;
  Mode mode_ = Mode::kTrain;
  bool cached_ = false;
};

// Shared plumbing for shape-preserving elementwise layers.
template <typename Scalar>
class Elementwise : public Layer<Scalar> {
 public:
  Shape4 output_shape(const Shape4& in) const override { return in; }

 protected:
  Tensor4<Scalar> cache_;
  bool cached_ = false;
};

template <typename Scalar>
class LeakyReLU : public Elementwise<Scalar> {
 public:
  explicit LeakyReLU(double alpha = 0.2) : alpha_(static_cast<Scalar>(alpha)) {}
  std::string kind() const override { return "leaky-relu"; }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, Mode) override {
    this->cache_ = x;
    this->cached_ = true;
    Tensor4<Scalar> y(x.shape());
    y.array() = (x.array() > Scalar(0)).select(x.array(), alpha_ * x.array());
    return y;
  }
  Tensor4<Scalar> backward(const Tensor4<Scalar>& g) override {
    detail::require_cached(this->cached_, kind());
    require_shape(g, this->cache_.shape(), "leaky-relu backward");
    Tensor4<Scalar> dx(g.shape());
    dx.array() = (this->cache_.array() > Scalar(0)).select(g.array(), alpha_ * g.array());
    return dx;
  }
  nlohmann::json spec() const override { return {{"kind", kind()}, {"alpha", static_cast<double>(alpha_)}}; }

 private:
  Scalar alpha_;
};

template <typename Scalar>
class ReLU : public Elementwise<Scalar> {
 public:
  std::string kind() const override { return "relu"; }
  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, Mode) override {
    this->cache_ = x;
    this->cached_ = true;
    Tensor4<Scalar> y(x.shape());
    y.array() = x.array().max(Scalar(0));
    return y;
  }
  Tensor4<Scalar> backward(const Tensor4<Scalar>& g) override {
    detail::require_cached(this->cached_, kind());
    require_shape(g, this->cache_.shape(), "relu backward");
    Tensor4<Scalar> dx(g.shape());
    dx.array() = (this->cache_.array() > Scalar(0)).select(g.array(), Scalar(0));
    return dx;
  }
};

template <typename Scalar>
class Tanh : public Elementwise<Scalar> {
 public:
  std::string kind() const override { return "tanh"; }
  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, Mode) override {
    Tensor4<Scalar> y(x.shape());
    y.array() = x.array().tanh();
    this->cache_ = y;
    this->cached_ = true;
    return y;
  }
  Tensor4<Scalar> backward(const Tensor4<Scalar>& g) override {
    detail::require_cached(this->cached_, kind());
    require_shape(g, this->cache_.shape(), "tanh backward");
    Tensor4<Scalar> dx(g.shape());
    dx.array() = g.array() * (Scalar(1) - this->cache_.array().square());
    return dx;
  }
};

template <typename Scalar>
class Sigmoid : public Elementwise<Scalar> {
 public:
  std::string kind() const override { return "sigmoid"; }
  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, Mode) override {
    Tensor4<Scalar> y(x.shape());
    y.array() = Scalar(1) / (Scalar(1) + (-x.array()).exp());
    this->cache_ = y;
    this->cached_ = true;
    return y;
  }
  Tensor4<Scalar> backward(const Tensor4<Scalar>& g) override {
    detail::require_cached(this->cached_, kind());
    require_shape(g, this->cache_.shape(), "sigmoid backward");
    Tensor4<Scalar> dx(g.shape());
    dx.array() = g.array() * this->cache_.array() * (Scalar(1) - this->cache_.array());
    return dx;
  }
};

// Softmax across channels at every pixel.
template <typename Scalar>
class ChannelSoftmax : public Elementwise<Scalar> {
 public:
  std::string kind() const override { return "channel-softmax"; }
  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, Mode) override {
    Tensor4<Scalar> y(x.shape());
    for (int n = 0; n < x.n(); ++n) {
      const auto in = x.sample(n);
      auto out = y.sample(n);
      out = (in.rowwise() - in.colwise().maxCoeff()).array().exp();
      out.array().rowwise() /= out.colwise().sum().array();
    }
    this->cache_ = y;
    this->cached_ = true;
    return y;
  }
  Tensor4<Scalar> backward(const Tensor4<Scalar>& g) override {
    detail::require_cached(this->cached_, kind());
    require_shape(g, this->cache_.shape(), "channel-softmax backward");
    Tensor4<Scalar> dx(g.shape());
    for (int n = 0; n < g.n(); ++n) {
      const auto y = this->cache_.sample(n);
      const auto gn = g.sample(n);
      const auto inner = (gn.array() * y.array()).colwise().sum().eval();
      dx.sample(n) = y.array() * (gn.array().rowwise() - inner);
    }
    return dx;
  }
};

// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
template <typename Scalar>
class MaxPool2x2 : public Layer<Scalar> {
 public:
  std::string kind() const override { return "maxpool2x2"; }
  Shape4 output_shape(const Shape4& in) const override {
    require(in.h >= 2 && in.w >= 2, ErrorCode::kShapeMismatch, "maxpool2x2: input " + to_string(in) + " too small");
    return {in.n, in.c, in.h / 2, in.w / 2};
  }
  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, Mode) override {
    const Shape4 os = output_shape(x.shape());
    in_shape_ = x.shape();
    argmax_.assign(static_cast<std::size_t>(os.size()), 0);
    Tensor4<Scalar> y(os);
    std::size_t k = 0;
    for (int n = 0; n < os.n; ++n)
      for (int c = 0; c < os.c; ++c)
        for (int i = 0; i < os.h; ++i)
          for (int j = 0; j < os.w; ++j, ++k) {
            Eigen::Index best = x.offset(n, c, 2 * i, 2 * j);
            for (int di = 0; di < 2; ++di)
              for (int dj = 0; dj < 2; ++dj) {
                const Eigen::Index o = x.offset(n, c, 2 * i + di, 2 * j + dj);
                if (x.data()[o] > x.data()[best]) best = o;
              }
            argmax_[k] = best;
            y.data()[k] = x.data()[best];
          }
    cached_ = true;
    return y;
  }
  Tensor4<Scalar> backward(const Tensor4<Scalar>& g) override {
    detail::require_cached(cached_, kind());
    require(static_cast<std::size_t>(g.size()) == argmax_.size(), ErrorCode::kShapeMismatch,
            "maxpool2x2 backward: gradient shape " + to_string(g.shape()));
    Tensor4<Scalar> dx(in_shape_);
    for (std::size_t k = 0; k < argmax_.size(); ++k) dx.data()[argmax_[k]] += g.data()[k];
    return dx;
  }

 private:
  Shape4 in_shape_;
  std::vector<Eigen::Index> argmax_;
  bool cached_ = false;
};

template <typename Scalar>
class UpsampleNearest2x : public Layer<Scalar> {
 public:
  std::string kind() const override { return "upsample-nearest2x"; }
  Shape4 output_shape(const Shape4& in) const override { return {in.n, in.c, 2 * in.h, 2 * in.w}; }
  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, Mode) override {
    in_shape_ = x.shape();
    cached_ = true;
    Tensor4<Scalar> y(output_shape(x.shape()));
    for (int n = 0; n < x.n(); ++n)
      for (int c = 0; c < x.c(); ++c)
        for (int i = 0; i < y.h(); ++i)
          for (int j = 0; j < y.w(); ++j) y(n, c, i, j) = x(n, c, i / 2, j / 2);
    return y;
  }
  Tensor4<Scalar> backward(const Tensor4<Scalar>& g) override {
    detail::require_cached(cached_, kind());
    require_shape(g, output_shape(in_shape_), "upsample-nearest2x backward");
    Tensor4<Scalar> dx(in_shape_);
    for (int n = 0; n < g.n(); ++n)
      for (int c = 0; c < g.c(); ++c)
        for (int i = 0; i < g.h(); ++i)
          for (int j = 0; j < g.w(); ++j) dx(n, c, i / 2, j / 2) += g(n, c, i, j);
    return dx;
  }

 private:
  Shape4 in_shape_;
  bool cached_ = false;
};

// Skip connection by channel concatenation: [a; b] along C.
template <typename Scalar>
Tensor4<Scalar> concat_channels(const Tensor4<Scalar>& a, const Tensor4<Scalar>& b) {
  require(a.n() == b.n() && a.h() == b.h() && a.w() == b.w(), ErrorCode::kShapeMismatch,
          "concat-skip: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  Tensor4<Scalar> out(a.n(), a.c() + b.c(), a.h(), a.w());
  for (int n = 0; n < a.n(); ++n) {
    out.sample(n).topRows(a.c()) = a.sample(n);
    out.sample(n).bottomRows(b.c()) = b.sample(n);
  }
  return out;
}

// Backward of concat_channels: splits the gradient after `first_channels`.
template <typename Scalar>
std::pair<Tensor4<Scalar>, Tensor4<Scalar>> split_channels(const Tensor4<Scalar>& g, int first_channels) {
  require(first_channels > 0 && first_channels < g.c(), ErrorCode::kShapeMismatch, "concat-skip backward: bad split");
  Tensor4<Scalar> a(g.n(), first_channels, g.h(), g.w());
  Tensor4<Scalar> b(g.n(), g.c() - first_channels, g.h(), g.w());
  for (int n = 0; n < g.n(); ++n) {
    a.sample(n) = g.sample(n).topRows(first_channels);
    b.sample(n) = g.sample(n).bottomRows(b.c());
  }
  return {std::move(a), std::move(b)};
}

// Chain of layers; parameters are named "<index>.<name>".
template <typename Scalar>
class Sequential : public Layer<Scalar> {
 public:
  Sequential() = default;

  Sequential& add(LayerPtr<Scalar> layer) {
    layers_.push_back(std::move(layer));
    return *this;
  }
  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto p = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *p;
    layers_.push_back(std::move(p));
    return ref;
  }

  std::size_t size() const { return layers_.size(); }
  Layer<Scalar>& operator[](std::size_t i) { return *layers_[i]; }

  std::string kind() const override { return "sequential"; }

  Shape4 output_shape(const Shape4& in) const override {
    Shape4 s = in;
    for (const auto& l : layers_) s = l->output_shape(s);
    return s;
  }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, Mode mode) override {
    Tensor4<Scalar> h = x;
    for (auto& l : layers_) h = l->forward(h, mode);
    return h;
  }

  Tensor4<Scalar> backward(const Tensor4<Scalar>& grad_out) override {
    Tensor4<Scalar> g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  std::vector<ParamRef<Scalar>> parameters() override { return collect(&Layer<Scalar>::parameters); }
  std::vector<ParamRef<Scalar>> buffers() override { return collect(&Layer<Scalar>::buffers); }

  void init(Rng& rng) override {
    for (auto& l : layers_) l->init(rng);
  }

  nlohmann::json spec() const override {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : layers_) layers.push_back(l->spec());
    return {{"kind", kind()}, {"layers", layers}};
  }

 private:
  std::vector<ParamRef<Scalar>> collect(std::vector<ParamRef<Scalar>> (Layer<Scalar>::*get)()) {
    std::vector<ParamRef<Scalar>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      for (auto& p : ((*layers_[i]).*get)()) {
        p.name = std::to_string(i) + "." + p.name;
        out.push_back(p);
      }
    return out;
  }

  std::vector<LayerPtr<Scalar>> layers_;
};

// Rebuilds a layer (recursively for sequential) from its spec().
template <typename Scalar>
LayerPtr<Scalar> make_layer(const nlohmann::json& spec) {
  try {
    const std::string kind = spec.at("kind").get<std::string>();
    auto geometry = [&]() {
      detail::ConvGeometry g;
      g.kh = spec.at("kernel")[0];
      g.kw = spec.at("kernel")[1];
      g.sh = spec.at("stride")[0];
      g.sw = spec.at("stride")[1];
      g.ph = spec.at("padding")[0];
      g.pw = spec.at("padding")[1];
      return g;
    };
    if (kind == "conv2d")
      return std::make_unique<Conv2d<Scalar>>(spec.at("in").get<int>(), spec.at("out").get<int>(), geometry(),
                                              spec.at("bias").get<bool>());
    if (kind == "transposed-conv2d")
      return std::make_unique<TransposedConv2d<Scalar>>(spec.at("in").get<int>(), spec.at("out").get<int>(),
                                                        geometry(), spec.at("bias").get<bool>());
    if (kind == "batchnorm2d")
      return std::make_unique<BatchNorm2d<Scalar>>(spec.at("channels").get<int>(), spec.at("momentum").get<double>(),
                                                   spec.at("eps").get<double>());
    if (kind == "leaky-relu") return std::make_unique<LeakyReLU<Scalar>>(spec.at("alpha").get<double>());
    if (kind == "relu") return std::make_unique<ReLU<Scalar>>();
    if (kind == "tanh") return std::make_unique<Tanh<Scalar>>();
    if (kind == "sigmoid") return std::make_unique<Sigmoid<Scalar>>();
    if (kind == "channel-softmax") return std::make_unique<ChannelSoftmax<Scalar>>();
    if (kind == "maxpool2x2") return std::make_unique<MaxPool2x2<Scalar>>();
    if (kind == "upsample-nearest2x") return std::make_unique<UpsampleNearest2x<Scalar>>();
    if (kind == "sequential") {
      auto seq = std::make_unique<Sequential<Scalar>>();
      for (const auto& l : spec.at("layers")) seq->add(make_layer<Scalar>(l));
      return seq;
    }
    fail(ErrorCode::kCorruptCheckpoint, "unknown layer kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorruptCheckpoint, std::string("malformed layer spec: ") + e.what());
  }
}

}  // namespace pasyn::nn
