#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pasyn/nn/layers.hpp"
#include "pasyn/synth_pipeline.hpp"

namespace pasyn {

struct UnetSpec {
  int channels = 16;       // input and output channels (wavelengths)
  Shape2 image{128, 64};   // (X, Z)
  int depth = 4;
  int base_channels = 32;
  bool batch_norm = true;

  void validate() const;
  nlohmann::json to_json() const;
  static UnetSpec from_json(const nlohmann::json& j);
};

// Encoder-decoder with skip concatenation. Inputs are standardized per channel
// and outputs de-standardized with statistics stored as buffers, so the
// network maps raw log-domain images to raw log-domain images.
template <typename Scalar>
class UNet : public nn::Layer<Scalar> {
 public:
  explicit UNet(const UnetSpec& spec) : spec_(spec) {
    spec_.validate();
    int in = spec_.channels;
    for (int level = 0; level < spec_.depth; ++level) {
      const int c = spec_.base_channels << level;
      encoders_.push_back(block(in, c));
      in = c;
    }
    const int bottom = spec_.base_channels << spec_.depth;
    bottleneck_ = block(in, bottom);
    int below = bottom;
    for (int level = spec_.depth - 1; level >= 0; --level) {
      const int c = spec_.base_channels << level;
      ups_.push_back(std::make_unique<nn::TransposedConv2d<Scalar>>(below, c, 2, 2, 2, 0, true));
      decoders_.push_back(block(2 * c, c));
      below = c;
    }
    head_ = std::make_unique<nn::Conv2d<Scalar>>(spec_.base_channels, spec_.channels, 1, 1, 1, 0, true);
    pools_.resize(static_cast<std::size_t>(spec_.depth));
    for (auto* t : {&in_mean_, &out_mean_}) *t = nn::Tensor4<Scalar>(1, spec_.channels, 1, 1, Scalar(0));
    for (auto* t : {&in_std_, &out_std_}) *t = nn::Tensor4<Scalar>(1, spec_.channels, 1, 1, Scalar(1));
  }

  const UnetSpec& unet_spec() const { return spec_; }
  std::string kind() const override { return "unet"; }

  nn::Shape4 output_shape(const nn::Shape4& in) const override {
    require(in.c == spec_.channels, ErrorCode::kShapeMismatch,
            "unet: expected " + std::to_string(spec_.channels) + " channels, got " + nn::to_string(in));
    const int f = 1 << spec_.depth;
    require(in.h % f == 0 && in.w % f == 0 && in.h >= f && in.w >= f, ErrorCode::kShapeMismatch,
            "unet: spatial size " + nn::to_string(in) + " not divisible by " + std::to_string(f));
    return in;
  }

  nn::Tensor4<Scalar> forward(const nn::Tensor4<Scalar>& x, nn::Mode mode) override {
    output_shape(x.shape());
    nn::Tensor4<Scalar> h = affine(x, in_mean_, in_std_, true);
    skip_channels_.clear();
    std::vector<nn::Tensor4<Scalar>> skips;
    for (int level = 0; level < spec_.depth; ++level) {
      h = encoders_[level]->forward(h, mode);
      skips.push_back(h);
      skip_channels_.push_back(h.c());
      h = pools_[level].forward(h, mode);
    }
    h = bottleneck_->forward(h, mode);
    for (int i = 0; i < spec_.depth; ++i) {
      h = ups_[i]->forward(h, mode);
      h = decoders_[i]->forward(nn::concat_channels(skips[spec_.depth - 1 - i], h), mode);
    }
    h = head_->forward(h, mode);
    cached_ = true;
    return affine(h, out_mean_, out_std_, false);
  }

  nn::Tensor4<Scalar> backward(const nn::Tensor4<Scalar>& grad_out) override {
    require(cached_, ErrorCode::kBackwardBeforeForward, "unet: backward called before forward");
    nn::Tensor4<Scalar> g = scale(grad_out, out_std_, false);
    g = head_->backward(g);
    std::vector<nn::Tensor4<Scalar>> skip_grads(static_cast<std::size_t>(spec_.depth));
    for (int i = spec_.depth - 1; i >= 0; --i) {
      const int level = spec_.depth - 1 - i;
      auto [gs, gu] = nn::split_channels(decoders_[i]->backward(g), skip_channels_[level]);
      skip_grads[level] = std::move(gs);
      g = ups_[i]->backward(gu);
    }
    g = bottleneck_->backward(g);
    for (int level = spec_.depth - 1; level >= 0; --level) {
      g = pools_[level].backward(g);
      g.array() += skip_grads[level].array();
      g = encoders_[level]->backward(g);
    }
    return scale(g, in_std_, true);
  }

  std::vector<nn::ParamRef<Scalar>> parameters() override { return collect(false); }
  std::vector<nn::ParamRef<Scalar>> buffers() override {
    auto out = collect(true);
    out.push_back({"in_mean", &in_mean_, nullptr});
    out.push_back({"in_std", &in_std_, nullptr});
    out.push_back({"out_mean", &out_mean_, nullptr});
    out.push_back({"out_std", &out_std_, nullptr});
    return out;
  }

  // BatchNorm layers keep their default init; convolutions use He scaling.
  void init(Rng& rng) override {
    for (auto* seq : all_blocks()) {
      seq->init(rng);
      for (std::size_t k = 0; k < seq->size(); ++k) he_init((*seq)[k], rng);
    }
    for (auto& up : ups_) he_init(*up, rng);
    he_init(*head_, rng);
  }

  nlohmann::json spec() const override { return {{"kind", kind()}, {"unet", spec_.to_json()}}; }

  // Sets the standardization statistics (per channel).
  void set_normalization(const std::vector<double>& in_mean, const std::vector<double>& in_std,
                         const std::vector<double>& out_mean, const std::vector<double>& out_std) {
    for (int c = 0; c < spec_.channels; ++c) {
      in_mean_.data()[c] = static_cast<Scalar>(in_mean[c]);
      in_std_.data()[c] = static_cast<Scalar>(in_std[c]);
      out_mean_.data()[c] = static_cast<Scalar>(out_mean[c]);
      out_std_.data()[c] = static_cast<Scalar>(out_std[c]);
    }
  }

 private:
  std::unique_ptr<nn::Sequential<Scalar>> block(int in, int out) const {
    auto b = std::make_unique<nn::Sequential<Scalar>>();
    for (int k = 0; k < 2; ++k) {
      b->template emplace<nn::Conv2d<Scalar>>(k == 0 ? in : out, out, 3, 3, 1, 1, !spec_.batch_norm);
      if (spec_.batch_norm) b->template emplace<nn::BatchNorm2d<Scalar>>(out);
      b->template emplace<nn::ReLU<Scalar>>();
    }
    return b;
  }

  std::vector<nn::Sequential<Scalar>*> all_blocks() {
    std::vector<nn::Sequential<Scalar>*> out;
    for (auto& e : encoders_) out.push_back(e.get());
    out.push_back(bottleneck_.get());
    for (auto& d : decoders_) out.push_back(d.get());
    return out;
  }

  static void he_init(nn::Layer<Scalar>& layer, Rng& rng) {
    auto params = layer.parameters();
    if (params.empty() || params[0].name != "weight") return;
    auto& w = *params[0].value;
    // Transposed weights are (Cin, Cout, k, k); with k == stride each output
    // pixel sees Cin inputs.
    const double fan_in = layer.kind() == "transposed-conv2d" ? double(w.n()) : double(w.c()) * w.h() * w.w();
    std::normal_distribution<double> d(0.0, std::sqrt(2.0 / fan_in));
    for (auto& v : w.array()) v = static_cast<Scalar>(d(rng));
    if (params.size() > 1) params[1].value->set_zero();
  }

  std::vector<nn::ParamRef<Scalar>> collect(bool want_buffers) {
    std::vector<nn::ParamRef<Scalar>> out;
    auto add = [&](const std::string& prefix, nn::Layer<Scalar>& l) {
      for (auto& p : want_buffers ? l.buffers() : l.parameters()) {
        p.name = prefix + "." + p.name;
        out.push_back(p);
      }
    };
    for (std::size_t i = 0; i < encoders_.size(); ++i) add("enc" + std::to_string(i), *encoders_[i]);
    add("bottleneck", *bottleneck_);
    for (std::size_t i = 0; i < ups_.size(); ++i) {
      add("up" + std::to_string(i), *ups_[i]);
      add("dec" + std::to_string(i), *decoders_[i]);
    }
    add("head", *head_);
    return out;
  }

  // Per channel y = x * a + b.
  static nn::Tensor4<Scalar> channel_affine(const nn::Tensor4<Scalar>& x, const Eigen::Array<Scalar, Eigen::Dynamic, 1>& a,
                                            const Eigen::Array<Scalar, Eigen::Dynamic, 1>& b) {
    nn::Tensor4<Scalar> y(x.shape());
    for (int n = 0; n < x.n(); ++n)
      for (int c = 0; c < x.c(); ++c) y.sample(n).row(c) = ((x.sample(n).row(c).array() * a[c]) + b[c]).matrix();
    return y;
  }

  // Standardization (x - m) / s, or de-standardization x * s + m.
  static nn::Tensor4<Scalar> affine(const nn::Tensor4<Scalar>& x, const nn::Tensor4<Scalar>& m,
                                    const nn::Tensor4<Scalar>& s, bool standardize) {
    if (standardize) return channel_affine(x, s.array().inverse(), -m.array() / s.array());
    return channel_affine(x, s.array(), m.array());
  }

  static nn::Tensor4<Scalar> scale(const nn::Tensor4<Scalar>& g, const nn::Tensor4<Scalar>& s, bool divide) {
    const Eigen::Array<Scalar, Eigen::Dynamic, 1> a = divide ? s.array().inverse().eval() : s.array();
    return channel_affine(g, a, Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(a.size()));
  }

  UnetSpec spec_;
  std::vector<std::unique_ptr<nn::Sequential<Scalar>>> encoders_, decoders_;
  std::vector<std::unique_ptr<nn::TransposedConv2d<Scalar>>> ups_;
  std::unique_ptr<nn::Sequential<Scalar>> bottleneck_;
  std::unique_ptr<nn::Conv2d<Scalar>> head_;
  std::vector<nn::MaxPool2x2<Scalar>> pools_;
  std::vector<int> skip_channels_;
  nn::Tensor4<Scalar> in_mean_, in_std_, out_mean_, out_std_;
  bool cached_ = false;
};

// (X, Z, channel) image <-> (1, channel, Z, X) tensor; same memory order.
nn::Tensor4<float> image_to_tensor(const MultispectralImage& img);
MultispectralImage tensor_to_image(const nn::Tensor4<float>& t, int n, const MultispectralImage& like,
                                   const std::string& kind);

struct UnetSample {
  std::string id;
  nn::Tensor4<float> input;   // (1, C, Z, X) log p0 (noisy)
  nn::Tensor4<float> target;  // (1, C, Z, X) log mua
};

UnetSample make_unet_sample(const MultispectralImage& input, const MultispectralImage& gt, std::string id = {});

// Reads every sample_* directory of a split (input.vol16 + gt_mua.vol16).
std::vector<UnetSample> load_unet_split(const std::filesystem::path& split_dir);

struct UnetEpochRecord {
  int epoch = 0;
  double train_mse = 0.0;  // mean training-mode batch loss
  double val_mse = 0.0;    // eval-mode loss on the validation set
};

struct UnetTrainOptions {
  int epochs = 30;
  int batch_size = 4;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int val_every = 1;          // epochs between validation passes
  double stop_val_mse = 0.0;  // stop once validation MSE drops below this
  long max_steps = -1;
  std::filesystem::path out_dir;  // empty: no files written
  std::function<void(const UnetEpochRecord&)> on_epoch;
};

struct UnetTrainResult {
  std::unique_ptr<UNet<float>> model;  // best validation checkpoint
  std::vector<UnetEpochRecord> history;
  int best_epoch = -1;
  double best_val_mse = 0.0;
  long steps = 0;
};

// Throws shape-mismatch for inconsistent samples and non-finite on divergence.
UnetTrainResult train_unet(const std::vector<UnetSample>& train, const std::vector<UnetSample>& val,
                           const UnetSpec& spec, std::uint64_t seed, const UnetTrainOptions& options = {});

double evaluate_mse(UNet<float>& model, const std::vector<UnetSample>& samples);

void save_unet(const std::filesystem::path& path, UNet<float>& model);
std::unique_ptr<UNet<float>> load_unet(const std::filesystem::path& path);

// Estimated log-mua image with the input's shape and channel labels.
MultispectralImage predict_mua(UNet<float>& model, const MultispectralImage& input);

void write_unet_history_csv(const std::filesystem::path& path, const std::vector<UnetEpochRecord>& history);

}  // namespace pasyn
