#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "pasyn/geometry.hpp"
#include "pasyn/nn/layers.hpp"

namespace pasyn {

struct GanHyperparams {
  int max_epochs = 700;
  int batch_size = 3;
  double lr_generator = 2e-4;
  double lr_discriminator = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int latent_dim = 100;
  int disc_base_channels = 56;
  int gen_base_channels = 32;
  bool disc_batch_norm = true;  // after every discriminator conv but the first
  // Real labels are 1 + U(smooth_lo, smooth_hi).
  double smooth_lo = -0.3;
  double smooth_hi = 0.0;
  double flip_intercept = 0.2;
  double flip_slope = -2.9e-4;  // per epoch
  AffineAugmentParams augment;

  void validate() const;
  nlohmann::json to_json() const;
  static GanHyperparams from_json(const nlohmann::json& j);
};

// clamp(intercept + slope * epoch, 0, 1)
double p_flip(const GanHyperparams& hp, int epoch);

template <typename Engine>
double smooth_real_label(Engine& rng, const GanHyperparams& hp = {}) {
  return 1.0 + (hp.smooth_lo == hp.smooth_hi ? hp.smooth_lo : uniform(rng, hp.smooth_lo, hp.smooth_hi));
}

// Generator: (N, latent, 1, 1) -> (N, 7, Z, X) class probabilities.
// Discriminator: (N, 7, Z, X) -> (N, 1, 1, 1) probability of "real".
struct Dcgan {
  GanHyperparams hp;
  Shape2 mask_shape;
  double spacing_mm = 0.16;
  int base_h = 0;  // spatial size after the projection layer
  int base_w = 0;
  std::unique_ptr<nn::Sequential<float>> generator;
  std::unique_ptr<nn::Sequential<float>> discriminator;

  nlohmann::json arch() const;
  void save(const std::filesystem::path& path) const;
  static Dcgan load(const std::filesystem::path& path);
};

// Throws invalid-params when the mask shape cannot be reached by doubling.
Dcgan build_dcgan(const GanHyperparams& hp, Shape2 mask_shape, double spacing_mm = 0.16);

struct GanEpochRecord {
  int epoch = 0;
  double d_loss = 0.0;
  double g_loss = 0.0;
  double d_accuracy = 0.0;  // against the true (unflipped) labels
  double p_flip = 0.0;
};

struct GanTrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  int checkpoint_every = 50;      // epochs; 0 disables periodic checkpoints
  long max_steps = -1;            // optional cap on optimizer steps
  std::function<void(const GanEpochRecord&)> on_epoch;
};

struct GanTrainResult {
  Dcgan model;
  std::vector<GanEpochRecord> history;
  long steps = 0;
};

// Throws non-finite (with epoch and step) when a loss diverges.
GanTrainResult train_gan(const std::vector<LabelMap2>& masks, const GanHyperparams& hp, std::uint64_t seed,
                         const GanTrainOptions& options = {});

void write_gan_history_csv(const std::filesystem::path& path, const std::vector<GanEpochRecord>& history);

// Generator in eval mode on N(0, 1) latents, argmax-decoded.
std::vector<LabelMap2> sample_masks(Dcgan& model, std::size_t n, std::uint64_t seed);

// Toy dataset: one artery disk on muscle background per mask, radius drawn
// uniformly from [min_radius, max_radius] px, fully inside the image.
std::vector<LabelMap2> toy_disk_masks(std::size_t n, int size, double min_radius, double max_radius,
                                      std::uint64_t seed);

// Discriminator outputs (eval mode) for a batch of masks.
std::vector<float> discriminate(Dcgan& model, const std::vector<LabelMap2>& masks);

}  // namespace pasyn
