#include "pasyn/models/unet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "pasyn/dataset.hpp"
#include "pasyn/nn/adam.hpp"
#include "pasyn/nn/checkpoint.hpp"
#include "pasyn/nn/loss.hpp"

namespace pasyn {

namespace fs = std::filesystem;

void UnetSpec::validate() const {
  require(channels >= 1 && depth >= 1 && base_channels >= 1, ErrorCode::kInvalidParams,
          "unet spec: channels, depth and base_channels must be >= 1");
  const int f = 1 << depth;
  require(image.x >= f && image.z >= f && image.x % f == 0 && image.z % f == 0, ErrorCode::kShapeMismatch,
          "unet spec: image " + std::to_string(image.x) + "x" + std::to_string(image.z) + " not divisible by " +
              std::to_string(f));
}

nlohmann::json UnetSpec::to_json() const {
  return {{"channels", channels},
          {"image", {image.x, image.z}},
          {"depth", depth},
          {"base_channels", base_channels},
          {"batch_norm", batch_norm}};
}

UnetSpec UnetSpec::from_json(const nlohmann::json& j) {
  UnetSpec s;
  s.channels = j.value("channels", s.channels);
  if (j.contains("image")) s.image = {j["image"].at(0).get<int>(), j["image"].at(1).get<int>()};
  s.depth = j.value("depth", s.depth);
  s.base_channels = j.value("base_channels", s.base_channels);
  s.batch_norm = j.value("batch_norm", s.batch_norm);
  return s;
}

nn::Tensor4<float> image_to_tensor(const MultispectralImage& img) {
  nn::Tensor4<float> t(1, img.channels(), img.shape.z, img.shape.x);
  t.array() = img.data;
  return t;
}

MultispectralImage tensor_to_image(const nn::Tensor4<float>& t, int n, const MultispectralImage& like,
                                   const std::string& kind) {
  require(t.c() == like.channels() && t.h() == like.shape.z && t.w() == like.shape.x && n >= 0 && n < t.n(),
          ErrorCode::kShapeMismatch, "tensor_to_image: tensor " + nn::to_string(t.shape()) + " does not match image");
  MultispectralImage out(like.shape, like.wavelengths_nm, like.spacing_mm, kind);
  out.provenance = like.provenance;
  out.data = Eigen::Map<const Eigen::ArrayXf>(t.data() + t.offset(n, 0, 0, 0), out.data.size());
  return out;
}

UnetSample make_unet_sample(const MultispectralImage& input, const MultispectralImage& gt, std::string id) {
  require(input.shape.x == gt.shape.x && input.shape.z == gt.shape.z && input.channels() == gt.channels(),
          ErrorCode::kShapeMismatch, "unet sample: input and ground truth shapes differ");
  return {std::move(id), image_to_tensor(input), image_to_tensor(gt)};
}

std::vector<UnetSample> load_unet_split(const fs::path& split_dir) {
  std::vector<UnetSample> out;
  for (const auto& dir : list_samples(split_dir))
    out.push_back(make_unet_sample(read_vol16(dir / "input.vol16"), read_vol16(dir / "gt_mua.vol16"),
                                   dir.filename().string()));
  return out;
}

namespace {

void check_samples(const std::vector<UnetSample>& samples, const UnetSpec& spec, const char* what) {
  const nn::Shape4 want{1, spec.channels, spec.image.z, spec.image.x};
  for (const auto& s : samples) {
    nn::require_shape(s.input, want, what);
    nn::require_shape(s.target, want, what);
  }
}

nn::Tensor4<float> stack(const std::vector<UnetSample>& samples, const std::vector<std::size_t>& idx,
                         bool target) {
  const nn::Shape4 one = samples[idx[0]].input.shape();
  nn::Tensor4<float> out(static_cast<int>(idx.size()), one.c, one.h, one.w);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& src = target ? samples[idx[i]].target : samples[idx[i]].input;
    out.array().segment(static_cast<Eigen::Index>(i) * one.size(), one.size()) = src.array();
  }
  return out;
}

// Per-channel mean and standard deviation over all samples and pixels.
void channel_stats(const std::vector<UnetSample>& samples, bool target, std::vector<double>& mean,
                   std::vector<double>& sd) {
  const int c = samples.front().input.c();
  mean.assign(c, 0.0);
  sd.assign(c, 0.0);
  double count = 0.0;
  for (const auto& s : samples) {
    const auto& t = target ? s.target : s.input;
    for (int k = 0; k < c; ++k) mean[k] += t.sample(0).row(k).template cast<double>().sum();
    count += static_cast<double>(t.shape().plane());
  }
  for (auto& m : mean) m /= count;
  for (const auto& s : samples) {
    const auto& t = target ? s.target : s.input;
    for (int k = 0; k < c; ++k)
      sd[k] += (t.sample(0).row(k).template cast<double>().array() - mean[k]).square().sum();
  }
  for (auto& v : sd) v = std::max(std::sqrt(v / count), 1e-6);
}

using Snapshot = std::vector<nn::Tensor4<float>>;

Snapshot snapshot(UNet<float>& net) {
  Snapshot s;
  for (auto& p : net.parameters()) s.push_back(*p.value);
  for (auto& b : net.buffers()) s.push_back(*b.value);
  return s;
}

void restore(UNet<float>& net, const Snapshot& s) {
  std::size_t k = 0;
  for (auto& p : net.parameters()) *p.value = s[k++];
  for (auto& b : net.buffers()) *b.value = s[k++];
}

}  // namespace

double evaluate_mse(UNet<float>& model, const std::vector<UnetSample>& samples) {
  require(!samples.empty(), ErrorCode::kInvalidParams, "evaluate_mse: no samples");
  double total = 0.0;
  for (const auto& s : samples) {
    const auto pred = model.forward(s.input, nn::Mode::kEval);
    total += (pred.array() - s.target.array()).template cast<double>().square().mean();
  }
  return total / static_cast<double>(samples.size());
}

UnetTrainResult train_unet(const std::vector<UnetSample>& train, const std::vector<UnetSample>& val,
                           const UnetSpec& spec, std::uint64_t seed, const UnetTrainOptions& options) {
  spec.validate();
  require(!train.empty(), ErrorCode::kInvalidParams, "train_unet: empty training set");
  require(options.epochs >= 1 && options.batch_size >= 1 && options.val_every >= 1, ErrorCode::kInvalidParams,
          "train_unet: epochs, batch_size and val_every must be >= 1");
  check_samples(train, spec, "train_unet train sample");
  check_samples(val, spec, "train_unet val sample");
  const std::vector<UnetSample>& val_set = val.empty() ? train : val;

  UnetTrainResult result;
  result.model = std::make_unique<UNet<float>>(spec);
  UNet<float>& net = *result.model;
  Rng init_rng(derive_seed(seed, 0));
  net.init(init_rng);
  std::vector<double> im, is, om, os;
  channel_stats(train, false, im, is);
  channel_stats(train, true, om, os);
  net.set_normalization(im, is, om, os);

  nn::Adam<float> adam(net.parameters(), {options.lr, options.beta1, options.beta2, 1e-8});
  Rng shuffle_rng(derive_seed(seed, 1));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Snapshot best;
  if (!options.out_dir.empty()) fs::create_directories(options.out_dir);

  bool stop = false;
  for (int epoch = 0; epoch < options.epochs && !stop; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size() && !stop; start += options.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(
                                                             std::min(order.size(), start + options.batch_size)));
      const auto x = stack(train, idx, false);
      const auto y = stack(train, idx, true);
      adam.zero_grad();
      const auto pred = net.forward(x, nn::Mode::kTrain);
      const auto loss = nn::mse_loss(pred, y);
      require(std::isfinite(loss.value), ErrorCode::kNonFinite,
              "train_unet: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                  std::to_string(result.steps));
      net.backward(loss.grad);
      adam.step();
      loss_sum += loss.value;
      ++batches;
      ++result.steps;
      if (options.max_steps >= 0 && result.steps >= options.max_steps) stop = true;
    }

    const bool last = stop || epoch + 1 == options.epochs;
    if ((epoch + 1) % options.val_every != 0 && !last) continue;
    UnetEpochRecord rec{epoch, loss_sum / batches, evaluate_mse(net, val_set)};
    require(std::isfinite(rec.val_mse), ErrorCode::kNonFinite,
            "train_unet: non-finite validation loss at epoch " + std::to_string(epoch));
    result.history.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
    if (result.best_epoch < 0 || rec.val_mse < result.best_val_mse) {
      result.best_epoch = epoch;
      result.best_val_mse = rec.val_mse;
      best = snapshot(net);
      if (!options.out_dir.empty()) save_unet(options.out_dir / "unet_best.ckpt", net);
    }
    if (options.stop_val_mse > 0.0 && rec.val_mse < options.stop_val_mse) stop = true;
  }

  if (!options.out_dir.empty()) {
    save_unet(options.out_dir / "unet_last.ckpt", net);
    write_unet_history_csv(options.out_dir / "unet_loss.csv", result.history);
  }
  restore(net, best);
  return result;
}

void save_unet(const fs::path& path, UNet<float>& model) {
  nn::save_checkpoint(path, model.spec(), nn::state_of(model));
}

std::unique_ptr<UNet<float>> load_unet(const fs::path& path) {
  const nn::Checkpoint ckpt = nn::load_checkpoint(path);
  UnetSpec spec;
  try {
    require(ckpt.arch.at("kind").get<std::string>() == "unet", ErrorCode::kCorruptCheckpoint,
            path.string() + ": not a unet checkpoint");
    spec = UnetSpec::from_json(ckpt.arch.at("unet"));
    spec.validate();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorruptCheckpoint, path.string() + ": " + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kCorruptCheckpoint) throw;
    fail(ErrorCode::kCorruptCheckpoint, path.string() + ": " + e.what());
  }
  auto net = std::make_unique<UNet<float>>(spec);
  nn::restore_state(*net, ckpt);
  return net;
}

MultispectralImage predict_mua(UNet<float>& model, const MultispectralImage& input) {
  const UnetSpec& spec = model.unet_spec();
  require(input.channels() == spec.channels && input.shape.x == spec.image.x && input.shape.z == spec.image.z,
          ErrorCode::kShapeMismatch,
          "predict_mua: input " + std::to_string(input.shape.x) + "x" + std::to_string(input.shape.z) + "x" +
              std::to_string(input.channels()) + " does not match the network");
  const auto pred = model.forward(image_to_tensor(input), nn::Mode::kEval);
  require(pred.all_finite(), ErrorCode::kNonFinite, "predict_mua: non-finite prediction");
  return tensor_to_image(pred, 0, input, "pred_log_mua");
}

void write_unet_history_csv(const fs::path& path, const std::vector<UnetEpochRecord>& history) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out << "epoch,train_mse,val_mse\n";
  out.precision(9);
  for (const auto& r : history) out << r.epoch << ',' << r.train_mse << ',' << r.val_mse << '\n';
}

}  // namespace pasyn
