#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pasyn/grid.hpp"
#include "pasyn/nn/tensor.hpp"
#include "pasyn/rng.hpp"

namespace pasyn {

// Semantic tissue classes of an anatomical parameter image.
enum class TissueClass : std::uint8_t {
  kArtery = 1,
  kSkin = 2,
  kMuscle = 3,
  kGel = 4,
  kMembrane = 5,
  kHeavyWater = 6,
  kVein = 7,
};

inline constexpr int kNumClasses = 7;

constexpr bool is_valid_class_id(int id) { return id >= 1 && id <= kNumClasses; }
constexpr std::uint8_t id(TissueClass c) { return static_cast<std::uint8_t>(c); }

std::string_view class_name(TissueClass c);
std::optional<TissueClass> class_from_name(std::string_view name);

struct LabelMap2 {
  Grid2<std::uint8_t> grid;
  double spacing_mm = 0.16;

  LabelMap2() = default;
  LabelMap2(Shape2 shape, double spacing, TissueClass fill = TissueClass::kMuscle)
      : grid(shape, id(fill)), spacing_mm(spacing) {}

  const Shape2& shape() const { return grid.shape; }
  std::uint8_t& operator()(int x, int z) { return grid(x, z); }
  std::uint8_t operator()(int x, int z) const { return grid(x, z); }
  friend bool operator==(const LabelMap2& a, const LabelMap2& b) {
    return a.grid.shape == b.grid.shape && a.spacing_mm == b.spacing_mm && (a.grid.data == b.grid.data).all();
  }
};

struct LabelMap3 {
  Grid3<std::uint8_t> grid;
  double spacing_mm = 0.16;

  LabelMap3() = default;
  LabelMap3(Shape3 shape, double spacing, TissueClass fill = TissueClass::kMuscle)
      : grid(shape, id(fill)), spacing_mm(spacing) {}

  const Shape3& shape() const { return grid.shape; }
  std::uint8_t& operator()(int x, int y, int z) { return grid(x, y, z); }
  std::uint8_t operator()(int x, int y, int z) const { return grid(x, y, z); }
  friend bool operator==(const LabelMap3& a, const LabelMap3& b) {
    return a.grid.shape == b.grid.shape && a.spacing_mm == b.spacing_mm && (a.grid.data == b.grid.data).all();
  }
};

// Per-class voxel counts, index 0 unused (or counts invalid IDs when asked).
std::vector<std::size_t> class_histogram(const LabelMap2& m);
std::vector<std::size_t> class_histogram(const LabelMap3& m);

// Closed interval sampled uniformly; lo == hi is a point mass.
struct UniformRange {
  double lo = 0.0;
  double hi = 0.0;

  template <typename Engine>
  double sample(Engine& rng) const {
    return lo == hi ? lo : uniform(rng, lo, hi);
  }
  bool contains(double v) const { return v >= lo && v <= hi; }
};

struct IntRange {
  int lo = 0;
  int hi = 0;
};

// Layered forearm cross-section model. All lengths in mm.
struct ForearmModelParams {
  Shape2 image_shape{128, 64};
  double spacing_mm = 0.32;
  UniformRange water_thickness_mm{0.5, 1.5};
  double membrane_thickness_mm = 0.3;
  UniformRange gel_thickness_mm{1.0, 4.0};
  // Extra gel thickness at the lateral image edges (convex arm surface).
  UniformRange surface_curvature_mm{0.0, 1.5};
  UniformRange skin_thickness_mm{0.4, 1.2};
  IntRange vessel_count{1, 6};
  double artery_fraction = 1.0 / 3.0;
  UniformRange vessel_radius_mm{0.5, 3.0};
  // Depth of the vessel center below the deepest skin voxel over its span.
  UniformRange vessel_depth_mm{1.0, 12.0};
  // Ratio of the depth semi-axis to the lateral semi-axis.
  UniformRange vessel_aspect{0.7, 1.0};

  // Throws invalid-params.
  void validate() const;
};

LabelMap2 generate_forearm_labelmap(const ForearmModelParams& params, std::uint64_t seed);

// True when every column reads heavy-water, membrane, gel, skin, then the
// muscle region (muscle with embedded vessels) from top to bottom, each
// band present.
bool has_forearm_layer_order(const LabelMap2& m);

LabelMap2 hflip(const LabelMap2& m);

// Originals followed by mirrored copies. Throws shape-mismatch.
std::vector<LabelMap2> hflip_copy_augment(const std::vector<LabelMap2>& masks);

// ---- one-hot class tensors -------------------------------------------------

// (1, 7, Z, X) tensor with a one in channel id-1. Throws invalid-id.
template <typename Scalar = float>
nn::Tensor4<Scalar> one_hot(const LabelMap2& m);

// Writes one_hot(m) into sample `n` of an existing (N, 7, Z, X) tensor.
template <typename Scalar>
void one_hot_into(const LabelMap2& m, nn::Tensor4<Scalar>& out, int n);

// Per-pixel argmax over channels of sample `n`; ties go to the lowest class.
template <typename Scalar>
LabelMap2 argmax_decode(const nn::Tensor4<Scalar>& t, int n = 0, double spacing_mm = 0.16);

// ---- affine augmentation ---------------------------------------------------

struct AffineAugmentParams {
  double p_apply = 0.6;
  double rotation_min_deg = -45.0;
  double rotation_max_deg = 45.0;
  double shift_x_min_px = -5.0;
  double shift_x_max_px = 5.0;
  double shift_z_min_px = -5.0;
  double shift_z_max_px = 5.0;
};

// Nearest-neighbour resampling map: output pixel p reads input pixel
// source[p], or the fill class when source[p] < 0.
struct AffineWarp {
  int height = 0;
  int width = 0;
  std::vector<int> source;
  double rotation_deg = 0.0;
  double shift_x_px = 0.0;
  double shift_z_px = 0.0;

  bool is_identity() const;
};

template <typename Engine>
AffineWarp sample_affine_warp(int height, int width, const AffineAugmentParams& params, Engine& rng);

AffineWarp make_affine_warp(int height, int width, double rotation_deg, double shift_x_px, double shift_z_px);

// Applies the warp to sample `n` of `in`, writing sample `n` of `out`.
// Exposed pixels become the heavy-water channel.
template <typename Scalar>
void apply_warp(const AffineWarp& warp, const nn::Tensor4<Scalar>& in, nn::Tensor4<Scalar>& out, int n);

// Adjoint of apply_warp with respect to its input (fill pixels get no gradient).
template <typename Scalar>
void apply_warp_adjoint(const AffineWarp& warp, const nn::Tensor4<Scalar>& grad_out, nn::Tensor4<Scalar>& grad_in,
                        int n);

// Rotation, x-shift and z-shift are each applied independently with
// probability p_apply. Every sample of the batch gets its own draw.
template <typename Scalar, typename Engine>
nn::Tensor4<Scalar> affine_augment(const nn::Tensor4<Scalar>& one_hot_image, Engine& rng,
                                   const AffineAugmentParams& params = {});

// ---- validation ------------------------------------------------------------

struct Violation {
  enum class Kind { kUnknownId, kEmptyTissue, kBadSpacing };
  Kind kind;
  std::string message;
};

std::vector<Violation> validate_labelmap(const LabelMap2& m);
std::vector<Violation> validate_labelmap(const LabelMap3& m);

// ---------------------------------------------------------------------------
// template implementations

template <typename Scalar>
void one_hot_into(const LabelMap2& m, nn::Tensor4<Scalar>& out, int n) {
  const Shape2 s = m.shape();
  nn::require_shape(out, nn::Shape4{out.n(), kNumClasses, s.z, s.x}, "one_hot_into");
  for (int c = 0; c < kNumClasses; ++c)
    for (int z = 0; z < s.z; ++z)
      for (int x = 0; x < s.x; ++x) out(n, c, z, x) = Scalar(0);
  for (int z = 0; z < s.z; ++z) {
    for (int x = 0; x < s.x; ++x) {
      const int cls = m(x, z);
      require(is_valid_class_id(cls), ErrorCode::kInvalidId,
              "one_hot: class id " + std::to_string(cls) + " at (" + std::to_string(x) + "," + std::to_string(z) + ")");
      out(n, cls - 1, z, x) = Scalar(1);
    }
  }
}

template <typename Scalar>
nn::Tensor4<Scalar> one_hot(const LabelMap2& m) {
  nn::Tensor4<Scalar> out(1, kNumClasses, m.shape().z, m.shape().x);
  one_hot_into(m, out, 0);
  return out;
}

template <typename Scalar>
LabelMap2 argmax_decode(const nn::Tensor4<Scalar>& t, int n, double spacing_mm) {
  require(t.c() == kNumClasses, ErrorCode::kShapeMismatch, "argmax_decode: expected 7 channels");
  LabelMap2 m(Shape2{t.w(), t.h()}, spacing_mm);
  for (int z = 0; z < t.h(); ++z) {
    for (int x = 0; x < t.w(); ++x) {
      int best = 0;
      for (int c = 1; c < kNumClasses; ++c)
        if (t(n, c, z, x) > t(n, best, z, x)) best = c;
      m(x, z) = static_cast<std::uint8_t>(best + 1);
    }
  }
  return m;
}

template <typename Engine>
AffineWarp sample_affine_warp(int height, int width, const AffineAugmentParams& params, Engine& rng) {
  auto draw = [&](double lo, double hi) {
    const bool apply = uniform(rng, 0.0, 1.0) < params.p_apply;
    const double value = lo == hi ? lo : uniform(rng, lo, hi);
    return apply ? value : 0.0;
  };
  const double rot = draw(params.rotation_min_deg, params.rotation_max_deg);
  const double sx = draw(params.shift_x_min_px, params.shift_x_max_px);
  const double sz = draw(params.shift_z_min_px, params.shift_z_max_px);
  return make_affine_warp(height, width, rot, sx, sz);
}

template <typename Scalar>
void apply_warp(const AffineWarp& warp, const nn::Tensor4<Scalar>& in, nn::Tensor4<Scalar>& out, int n) {
  require(in.h() == warp.height && in.w() == warp.width && in.c() == kNumClasses, ErrorCode::kShapeMismatch,
          "apply_warp: tensor does not match warp");
  const int fill = id(TissueClass::kHeavyWater) - 1;
  const Eigen::Index plane = in.shape().plane();
  for (int c = 0; c < in.c(); ++c) {
    const Scalar* src = in.data() + in.offset(n, c, 0, 0);
    Scalar* dst = out.data() + out.offset(n, c, 0, 0);
    const Scalar fill_value = c == fill ? Scalar(1) : Scalar(0);
    for (Eigen::Index p = 0; p < plane; ++p) {
      const int s = warp.source[static_cast<std::size_t>(p)];
      dst[p] = s >= 0 ? src[s] : fill_value;
    }
  }
}

template <typename Scalar>
void apply_warp_adjoint(const AffineWarp& warp, const nn::Tensor4<Scalar>& grad_out, nn::Tensor4<Scalar>& grad_in,
                        int n) {
  const Eigen::Index plane = grad_out.shape().plane();
  for (int c = 0; c < grad_out.c(); ++c) {
    const Scalar* g = grad_out.data() + grad_out.offset(n, c, 0, 0);
    Scalar* dst = grad_in.data() + grad_in.offset(n, c, 0, 0);
    for (Eigen::Index p = 0; p < plane; ++p) dst[p] = Scalar(0);
    for (Eigen::Index p = 0; p < plane; ++p) {
      const int s = warp.source[static_cast<std::size_t>(p)];
      if (s >= 0) dst[s] += g[p];
    }
  }
}

template <typename Scalar, typename Engine>
nn::Tensor4<Scalar> affine_augment(const nn::Tensor4<Scalar>& one_hot_image, Engine& rng,
                                   const AffineAugmentParams& params) {
  nn::Tensor4<Scalar> out(one_hot_image.shape());
  for (int n = 0; n < one_hot_image.n(); ++n) {
    const AffineWarp warp = sample_affine_warp(one_hot_image.h(), one_hot_image.w(), params, rng);
    apply_warp(warp, one_hot_image, out, n);
  }
  return out;
}

}  // namespace pasyn
