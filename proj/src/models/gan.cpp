#include "pasyn/models/gan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "pasyn/nn/adam.hpp"
#include "pasyn/nn/checkpoint.hpp"
#include "pasyn/nn/loss.hpp"

namespace pasyn {

namespace fs = std::filesystem;
using nn::Mode;
using nn::Tensor4;

void GanHyperparams::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  require(max_epochs >= 1 && batch_size >= 1, ErrorCode::kInvalidParams, "gan: max_epochs and batch_size must be >= 1");
  require(lr_generator > 0.0 && lr_discriminator > 0.0, ErrorCode::kInvalidParams, "gan: learning rates must be > 0");
  require(latent_dim >= 1 && disc_base_channels >= 1 && gen_base_channels >= 1, ErrorCode::kInvalidParams,
          "gan: channel counts must be >= 1");
  require(smooth_lo <= smooth_hi && 1.0 + smooth_lo >= 0.0 && 1.0 + smooth_hi <= 1.0, ErrorCode::kInvalidParams,
          "gan: smoothed real labels must stay in [0, 1]");
  require(prob(flip_intercept) && prob(augment.p_apply), ErrorCode::kInvalidParams,
          "gan: probabilities must lie in [0, 1]");
}

nlohmann::json GanHyperparams::to_json() const {
  return {{"max_epochs", max_epochs},
          {"batch_size", batch_size},
          {"lr_generator", lr_generator},
          {"lr_discriminator", lr_discriminator},
          {"beta1", beta1},
          {"beta2", beta2},
          {"latent_dim", latent_dim},
          {"disc_base_channels", disc_base_channels},
          {"gen_base_channels", gen_base_channels},
          {"disc_batch_norm", disc_batch_norm},
          {"smooth_lo", smooth_lo},
          {"smooth_hi", smooth_hi},
          {"flip_intercept", flip_intercept},
          {"flip_slope", flip_slope},
          {"augment",
           {{"p_apply", augment.p_apply},
            {"rotation_deg", {augment.rotation_min_deg, augment.rotation_max_deg}},
            {"shift_x_px", {augment.shift_x_min_px, augment.shift_x_max_px}},
            {"shift_z_px", {augment.shift_z_min_px, augment.shift_z_max_px}}}}};
}

GanHyperparams GanHyperparams::from_json(const nlohmann::json& j) {
  GanHyperparams hp;
  hp.max_epochs = j.at("max_epochs");
  hp.batch_size = j.at("batch_size");
  hp.lr_generator = j.at("lr_generator");
  hp.lr_discriminator = j.at("lr_discriminator");
  hp.beta1 = j.at("beta1");
  hp.beta2 = j.at("beta2");
  hp.latent_dim = j.at("latent_dim");
  hp.disc_base_channels = j.at("disc_base_channels");
  hp.gen_base_channels = j.at("gen_base_channels");
  hp.disc_batch_norm = j.at("disc_batch_norm");
  hp.smooth_lo = j.at("smooth_lo");
  hp.smooth_hi = j.at("smooth_hi");
  hp.flip_intercept = j.at("flip_intercept");
  hp.flip_slope = j.at("flip_slope");
  const auto& a = j.at("augment");
  hp.augment.p_apply = a.at("p_apply");
  hp.augment.rotation_min_deg = a.at("rotation_deg")[0];
  hp.augment.rotation_max_deg = a.at("rotation_deg")[1];
  hp.augment.shift_x_min_px = a.at("shift_x_px")[0];
  hp.augment.shift_x_max_px = a.at("shift_x_px")[1];
  hp.augment.shift_z_min_px = a.at("shift_z_px")[0];
  hp.augment.shift_z_max_px = a.at("shift_z_px")[1];
  return hp;
}

double p_flip(const GanHyperparams& hp, int epoch) {
  return std::clamp(hp.flip_intercept + hp.flip_slope * static_cast<double>(epoch), 0.0, 1.0);
}

namespace {

// Number of stride-2 stages: halve while both sides stay even and >= 4.
int upsampling_stages(Shape2 s) {
  int stages = 0;
  int h = s.z, w = s.x;
  while (h % 2 == 0 && w % 2 == 0 && h / 2 >= 4 && w / 2 >= 4) {
    h /= 2;
    w /= 2;
    ++stages;
  }
  return stages;
}

}  // namespace

Dcgan build_dcgan(const GanHyperparams& hp, Shape2 mask_shape, double spacing_mm) {
  hp.validate();
  const int stages = upsampling_stages(mask_shape);
  require(stages >= 1, ErrorCode::kInvalidParams,
          "build_dcgan: mask shape " + std::to_string(mask_shape.x) + "x" + std::to_string(mask_shape.z) +
              " must be divisible by 2 with sides >= 8");
  Dcgan m;
  m.hp = hp;
  m.mask_shape = mask_shape;
  m.spacing_mm = spacing_mm;
  m.base_h = mask_shape.z >> stages;
  m.base_w = mask_shape.x >> stages;

  auto g = std::make_unique<nn::Sequential<float>>();
  int ch = hp.gen_base_channels << (stages - 1);
  g->emplace<nn::TransposedConv2d<float>>(hp.latent_dim, ch, m.base_h, m.base_w, 1, 0, false);
  g->emplace<nn::BatchNorm2d<float>>(ch);
  g->emplace<nn::ReLU<float>>();
  for (int i = 1; i < stages; ++i) {
    g->emplace<nn::TransposedConv2d<float>>(ch, ch / 2, 4, 4, 2, 1, false);
    g->emplace<nn::BatchNorm2d<float>>(ch / 2);
    g->emplace<nn::ReLU<float>>();
    ch /= 2;
  }
  g->emplace<nn::TransposedConv2d<float>>(ch, kNumClasses, 4, 4, 2, 1, true);
  g->emplace<nn::ChannelSoftmax<float>>();

  auto d = std::make_unique<nn::Sequential<float>>();
  int dc = hp.disc_base_channels;
  d->emplace<nn::Conv2d<float>>(kNumClasses, dc, 4, 4, 2, 1, true);
  d->emplace<nn::LeakyReLU<float>>(0.2);
  for (int i = 1; i < stages; ++i) {
    d->emplace<nn::Conv2d<float>>(dc, dc * 2, 4, 4, 2, 1, !hp.disc_batch_norm);
    if (hp.disc_batch_norm) d->emplace<nn::BatchNorm2d<float>>(dc * 2);
    d->emplace<nn::LeakyReLU<float>>(0.2);
    dc *= 2;
  }
  d->emplace<nn::Conv2d<float>>(dc, 1, m.base_h, m.base_w, 1, 0, true);
  d->emplace<nn::Sigmoid<float>>();

  m.generator = std::move(g);
  m.discriminator = std::move(d);
  return m;
}

nlohmann::json Dcgan::arch() const {
  return {{"type", "dcgan"},
          {"hyperparams", hp.to_json()},
          {"mask_shape", {mask_shape.x, mask_shape.z}},
          {"spacing_mm", spacing_mm},
          {"generator", generator->spec()},
          {"discriminator", discriminator->spec()}};
}

void Dcgan::save(const fs::path& path) const {
  std::vector<nn::NamedTensor> tensors;
  for (auto [prefix, net] : {std::pair{"generator/", generator.get()}, std::pair{"discriminator/", discriminator.get()}})
    for (auto& t : nn::state_of(*net)) tensors.push_back({prefix + t.name, t.value});
  nn::save_checkpoint(path, arch(), tensors);
}

Dcgan Dcgan::load(const fs::path& path) {
  const nn::Checkpoint ckpt = nn::load_checkpoint(path);
  Dcgan m;
  try {
    require(ckpt.arch.at("type") == "dcgan", ErrorCode::kCorruptCheckpoint, path.string() + ": not a GAN checkpoint");
    const auto shape = ckpt.arch.at("mask_shape");
    m = build_dcgan(GanHyperparams::from_json(ckpt.arch.at("hyperparams")), Shape2{shape[0], shape[1]},
                    ckpt.arch.at("spacing_mm"));
    require(m.generator->spec() == ckpt.arch.at("generator") &&
                m.discriminator->spec() == ckpt.arch.at("discriminator"),
            ErrorCode::kCorruptCheckpoint, path.string() + ": architecture mismatch");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorruptCheckpoint, path.string() + ": " + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kCorruptCheckpoint) throw;
    fail(ErrorCode::kCorruptCheckpoint, path.string() + ": " + e.what());
  }
  nn::restore_state(*m.generator, ckpt, "generator/");
  nn::restore_state(*m.discriminator, ckpt, "discriminator/");
  return m;
}

namespace {

Tensor4<float> latent_batch(int n, int dim, Rng& rng) {
  Tensor4<float> z(n, dim, 1, 1);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  for (auto& v : z.array()) v = nd(rng);
  return z;
}

struct Augmented {
  Tensor4<float> images;
  std::vector<AffineWarp> warps;
};

Augmented augment_batch(const Tensor4<float>& x, const AffineAugmentParams& params, Rng& rng) {
  Augmented a{Tensor4<float>(x.shape()), {}};
  for (int n = 0; n < x.n(); ++n) {
    a.warps.push_back(sample_affine_warp(x.h(), x.w(), params, rng));
    apply_warp(a.warps.back(), x, a.images, n);
  }
  return a;
}

Tensor4<float> augment_adjoint(const Augmented& a, const Tensor4<float>& grad) {
  Tensor4<float> out(grad.shape());
  for (int n = 0; n < grad.n(); ++n) apply_warp_adjoint(a.warps[static_cast<std::size_t>(n)], grad, out, n);
  return out;
}

Tensor4<float> label_tensor(const std::vector<float>& labels) {
  Tensor4<float> t(static_cast<int>(labels.size()), 1, 1, 1);
  std::copy(labels.begin(), labels.end(), t.data());
  return t;
}

void check_finite(double loss, const char* which, int epoch, long step) {
  require(std::isfinite(loss), ErrorCode::kNonFinite,
          std::string("train_gan: non-finite ") + which + " loss at epoch " + std::to_string(epoch) + ", step " +
              std::to_string(step));
}

}  // namespace

GanTrainResult train_gan(const std::vector<LabelMap2>& masks, const GanHyperparams& hp, std::uint64_t seed,
                         const GanTrainOptions& options) {
  require(!masks.empty(), ErrorCode::kInvalidParams, "train_gan: empty mask dataset");
  const Shape2 shape = masks.front().shape();
  for (const auto& m : masks)
    require(m.shape() == shape, ErrorCode::kShapeMismatch, "train_gan: masks must share one shape");

  GanTrainResult result{build_dcgan(hp, shape, masks.front().spacing_mm), {}, 0};
  Dcgan& model = result.model;
  Rng rng(seed);
  model.generator->init(rng);
  model.discriminator->init(rng);
  nn::Adam<float> opt_g(model.generator->parameters(), {hp.lr_generator, hp.beta1, hp.beta2, 1e-8});
  nn::Adam<float> opt_d(model.discriminator->parameters(), {hp.lr_discriminator, hp.beta1, hp.beta2, 1e-8});

  if (!options.out_dir.empty()) fs::create_directories(options.out_dir);
  std::vector<std::size_t> order(masks.size());
  std::iota(order.begin(), order.end(), 0);
  const int batches = static_cast<int>((masks.size() + static_cast<std::size_t>(hp.batch_size) - 1) /
                                       static_cast<std::size_t>(hp.batch_size));

  for (int epoch = 0; epoch < hp.max_epochs; ++epoch) {
    if (options.max_steps >= 0 && result.steps >= options.max_steps) break;
    std::shuffle(order.begin(), order.end(), rng);
    const double flip_p = p_flip(hp, epoch);
    double d_sum = 0.0, g_sum = 0.0, correct = 0.0, seen = 0.0;
    int done = 0;
    for (int b = 0; b < batches; ++b) {
      if (options.max_steps >= 0 && result.steps >= options.max_steps) break;
      const std::size_t begin = static_cast<std::size_t>(b) * static_cast<std::size_t>(hp.batch_size);
      const int n = static_cast<int>(std::min(masks.size(), begin + static_cast<std::size_t>(hp.batch_size)) - begin);

      Tensor4<float> real(n, kNumClasses, shape.z, shape.x);
      for (int i = 0; i < n; ++i) one_hot_into(masks[order[begin + static_cast<std::size_t>(i)]], real, i);
      const Tensor4<float> z = latent_batch(n, hp.latent_dim, rng);
      const Tensor4<float> fake = model.generator->forward(z, Mode::kTrain);
      const Augmented real_aug = augment_batch(real, hp.augment, rng);
      const Augmented fake_aug = augment_batch(fake, hp.augment, rng);

      // Discriminator update; with probability p_flip the targets swap.
      std::vector<float> smooth(static_cast<std::size_t>(n));
      for (auto& s : smooth) s = static_cast<float>(smooth_real_label(rng, hp));
      const bool flip = uniform(rng, 0.0, 1.0) < flip_p;
      const std::vector<float> zeros(static_cast<std::size_t>(n), 0.0f);
      const Tensor4<float> real_target = label_tensor(flip ? zeros : smooth);
      const Tensor4<float> fake_target = label_tensor(flip ? smooth : zeros);

      opt_d.zero_grad();
      const Tensor4<float> d_real = model.discriminator->forward(real_aug.images, Mode::kTrain);
      const auto loss_real = nn::bce_loss(d_real, real_target);
      model.discriminator->backward(loss_real.grad);
      const Tensor4<float> d_fake = model.discriminator->forward(fake_aug.images, Mode::kTrain);
      const auto loss_fake = nn::bce_loss(d_fake, fake_target);
      model.discriminator->backward(loss_fake.grad);
      const double d_loss = static_cast<double>(loss_real.value) + static_cast<double>(loss_fake.value);
      check_finite(d_loss, "discriminator", epoch, result.steps);
      opt_d.step();
      for (int i = 0; i < n; ++i) {
        correct += (d_real.data()[i] > 0.5f) + (d_fake.data()[i] < 0.5f);
        seen += 2.0;
      }

      // Generator update, non-saturating: fakes should be judged real.
      opt_g.zero_grad();
      const Tensor4<float> d_gen = model.discriminator->forward(fake_aug.images, Mode::kTrain);
      const auto loss_g = nn::bce_loss(d_gen, 1.0f);
      check_finite(loss_g.value, "generator", epoch, result.steps);
      const Tensor4<float> grad_aug = model.discriminator->backward(loss_g.grad);
      model.generator->backward(augment_adjoint(fake_aug, grad_aug));
      opt_g.step();

      d_sum += d_loss;
      g_sum += loss_g.value;
      ++done;
      ++result.steps;
    }
    if (done == 0) break;
    const GanEpochRecord rec{epoch, d_sum / done, g_sum / done, correct / seen, flip_p};
    result.history.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
    if (!options.out_dir.empty() && options.checkpoint_every > 0 && (epoch + 1) % options.checkpoint_every == 0) {
      char name[48];
      std::snprintf(name, sizeof name, "gan_epoch_%04d.ckpt", epoch + 1);
      model.save(options.out_dir / name);
    }
  }
  if (!options.out_dir.empty()) {
    model.save(options.out_dir / "gan.ckpt");
    write_gan_history_csv(options.out_dir / "gan_loss.csv", result.history);
  }
  return result;
}

void write_gan_history_csv(const fs::path& path, const std::vector<GanEpochRecord>& history) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out << "epoch,d_loss,g_loss,d_accuracy,p_flip\n";
  out.precision(9);
  for (const auto& r : history)
    out << r.epoch << ',' << r.d_loss << ',' << r.g_loss << ',' << r.d_accuracy << ',' << r.p_flip << '\n';
}

std::vector<LabelMap2> sample_masks(Dcgan& model, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LabelMap2> out;
  out.reserve(n);
  constexpr std::size_t chunk = 16;
  for (std::size_t start = 0; start < n; start += chunk) {
    const int count = static_cast<int>(std::min(chunk, n - start));
    const Tensor4<float> probs =
        model.generator->forward(latent_batch(count, model.hp.latent_dim, rng), Mode::kEval);
    for (int i = 0; i < count; ++i) out.push_back(argmax_decode(probs, i, model.spacing_mm));
  }
  return out;
}

std::vector<LabelMap2> toy_disk_masks(std::size_t n, int size, double min_radius, double max_radius,
                                      std::uint64_t seed) {
  require(size >= 8 && min_radius > 0.0 && min_radius <= max_radius && 2.0 * max_radius + 2.0 < size,
          ErrorCode::kInvalidParams, "toy_disk_masks: disks do not fit the image");
  Rng rng(seed);
  std::vector<LabelMap2> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = uniform(rng, min_radius, max_radius);
    const double cx = uniform(rng, r, size - r);
    const double cz = uniform(rng, r, size - r);
    LabelMap2 m(Shape2{size, size}, 0.16, TissueClass::kMuscle);
    for (int z = 0; z < size; ++z)
      for (int x = 0; x < size; ++x) {
        const double dx = x + 0.5 - cx, dz = z + 0.5 - cz;
        if (dx * dx + dz * dz <= r * r) m(x, z) = id(TissueClass::kArtery);
      }
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<float> discriminate(Dcgan& model, const std::vector<LabelMap2>& masks) {
  std::vector<float> out;
  for (const auto& m : masks) {
    const Tensor4<float> d = model.discriminator->forward(one_hot<float>(m), Mode::kEval);
    out.push_back(d.data()[0]);
  }
  return out;
}

}  // namespace pasyn
