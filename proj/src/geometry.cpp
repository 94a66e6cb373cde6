#include "pasyn/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace pasyn {

namespace {

constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "artery", "skin", "muscle-background", "us-gel", "transducer-membrane", "heavy-water", "vein"};

int to_voxels(double mm, double spacing) { return static_cast<int>(std::lround(mm / spacing)); }

void check_range(const UniformRange& r, const char* name, bool allow_zero = false) {
  const bool ok = allow_zero ? (r.lo >= 0.0 && r.hi >= r.lo) : (r.lo > 0.0 && r.hi >= r.lo);
  require(ok, ErrorCode::kInvalidParams,
          std::string("forearm params: ") + name + " must satisfy " + (allow_zero ? "0 <= lo <= hi" : "0 < lo <= hi"));
}

// Rank of a class along +z in a forearm column; vessels belong to the muscle region.
int layer_rank(std::uint8_t cls) {
  switch (static_cast<TissueClass>(cls)) {
    case TissueClass::kHeavyWater: return 0;
    case TissueClass::kMembrane: return 1;
    case TissueClass::kGel: return 2;
    case TissueClass::kSkin: return 3;
    case TissueClass::kMuscle:
    case TissueClass::kArtery:
    case TissueClass::kVein: return 4;
  }
  return -1;
}

}  // namespace

std::string_view class_name(TissueClass c) { return kClassNames[id(c) - 1]; }

std::optional<TissueClass> class_from_name(std::string_view name) {
  for (int i = 0; i < kNumClasses; ++i)
    if (kClassNames[static_cast<std::size_t>(i)] == name) return static_cast<TissueClass>(i + 1);
  return std::nullopt;
}

std::vector<std::size_t> class_histogram(const LabelMap2& m) {
  std::vector<std::size_t> h(256, 0);
  for (Eigen::Index i = 0; i < m.grid.data.size(); ++i) ++h[m.grid.data[i]];
  h.resize(kNumClasses + 1);
  return h;
}

std::vector<std::size_t> class_histogram(const LabelMap3& m) {
  std::vector<std::size_t> h(256, 0);
  for (Eigen::Index i = 0; i < m.grid.data.size(); ++i) ++h[m.grid.data[i]];
  h.resize(kNumClasses + 1);
  return h;
}

void ForearmModelParams::validate() const {
  require(image_shape.x > 0 && image_shape.z > 0, ErrorCode::kInvalidParams, "forearm params: empty image shape");
  require(spacing_mm > 0.0, ErrorCode::kInvalidParams, "forearm params: spacing_mm must be positive");
  check_range(water_thickness_mm, "water_thickness_mm");
  require(membrane_thickness_mm > 0.0, ErrorCode::kInvalidParams, "forearm params: membrane_thickness_mm must be positive");
  check_range(gel_thickness_mm, "gel_thickness_mm");
  check_range(surface_curvature_mm, "surface_curvature_mm", true);
  check_range(skin_thickness_mm, "skin_thickness_mm");
  require(vessel_count.lo >= 0 && vessel_count.hi >= vessel_count.lo, ErrorCode::kInvalidParams,
          "forearm params: vessel_count must satisfy 0 <= lo <= hi");
  require(artery_fraction >= 0.0 && artery_fraction <= 1.0, ErrorCode::kInvalidParams,
          "forearm params: artery_fraction outside [0, 1]");
  check_range(vessel_radius_mm, "vessel_radius_mm");
  check_range(vessel_depth_mm, "vessel_depth_mm");
  check_range(vessel_aspect, "vessel_aspect");

  // Worst-case layered stack must leave room for the smallest vessel.
  const double height_mm = image_shape.z * spacing_mm;
  const double width_mm = image_shape.x * spacing_mm;
  const double stack_mm = water_thickness_mm.hi + membrane_thickness_mm + gel_thickness_mm.hi +
                          surface_curvature_mm.hi + skin_thickness_mm.hi;
  require(stack_mm + spacing_mm < height_mm, ErrorCode::kInvalidParams,
          "forearm params: layer stack does not fit in the image height");
  if (vessel_count.hi > 0) {
    const double rz = vessel_radius_mm.lo * vessel_aspect.lo;
    const double depth_lo = std::max(vessel_depth_mm.lo, rz + spacing_mm);
    const double depth_hi = std::min(vessel_depth_mm.hi, height_mm - stack_mm - rz);
    require(depth_lo <= depth_hi, ErrorCode::kInvalidParams,
            "forearm params: smallest vessel cannot fit below the skin");
    require(2.0 * vessel_radius_mm.lo < width_mm, ErrorCode::kInvalidParams,
            "forearm params: smallest vessel wider than the image");
  }
}

LabelMap2 generate_forearm_labelmap(const ForearmModelParams& params, std::uint64_t seed) {
  params.validate();
  Rng rng(seed);
  const Shape2 shape = params.image_shape;
  const double h = params.spacing_mm;
  LabelMap2 m(shape, h, TissueClass::kMuscle);

  const double water = params.water_thickness_mm.sample(rng);
  const double gel = params.gel_thickness_mm.sample(rng);
  const double curvature = params.surface_curvature_mm.sample(rng);
  const double skin = params.skin_thickness_mm.sample(rng);

  const int water_end = std::max(1, to_voxels(water, h));
  const int membrane_end = water_end + std::max(1, to_voxels(params.membrane_thickness_mm, h));
  std::vector<int> skin_bottom(static_cast<std::size_t>(shape.x));
  for (int x = 0; x < shape.x; ++x) {
    const double u = (x + 0.5) / shape.x * 2.0 - 1.0;
    const int gel_end = membrane_end + std::max(1, to_voxels(gel + curvature * u * u, h));
    const int skin_end = gel_end + std::max(1, to_voxels(skin, h));
    skin_bottom[static_cast<std::size_t>(x)] = skin_end;
    for (int z = 0; z < std::min(skin_end, shape.z); ++z) {
      TissueClass c = TissueClass::kSkin;
      if (z < water_end) c = TissueClass::kHeavyWater;
      else if (z < membrane_end) c = TissueClass::kMembrane;
      else if (z < gel_end) c = TissueClass::kGel;
      m(x, z) = id(c);
    }
  }

  const int count = params.vessel_count.lo == params.vessel_count.hi
                        ? params.vessel_count.lo
                        : std::uniform_int_distribution<int>(params.vessel_count.lo, params.vessel_count.hi)(rng);
  const double width_mm = shape.x * h;
  const double height_mm = shape.z * h;
  for (int v = 0; v < count; ++v) {
    const bool artery = uniform(rng, 0.0, 1.0) < params.artery_fraction;
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const double rx = params.vessel_radius_mm.sample(rng);
      const double rz = rx * params.vessel_aspect.sample(rng);
      if (2.0 * rx >= width_mm) continue;
      const double cx = uniform(rng, rx, width_mm - rx);
      // Reference depth: deepest skin boundary under the vessel's lateral span.
      const int x0 = std::clamp(static_cast<int>(std::floor((cx - rx) / h)), 0, shape.x - 1);
      const int x1 = std::clamp(static_cast<int>(std::ceil((cx + rx) / h)), 0, shape.x - 1);
      int deepest = 0;
      for (int x = x0; x <= x1; ++x) deepest = std::max(deepest, skin_bottom[static_cast<std::size_t>(x)]);
      const double skin_mm = deepest * h;
      const double lo = std::max(params.vessel_depth_mm.lo, rz + h);
      const double hi = std::min(params.vessel_depth_mm.hi, height_mm - skin_mm - rz);
      if (lo > hi) continue;
      const double cz = skin_mm + (lo == hi ? lo : uniform(rng, lo, hi));
      const auto cls = artery ? TissueClass::kArtery : TissueClass::kVein;
      for (int z = 0; z < shape.z; ++z) {
        for (int x = 0; x < shape.x; ++x) {
          const double dx = ((x + 0.5) * h - cx) / rx;
          const double dz = ((z + 0.5) * h - cz) / rz;
          if (dx * dx + dz * dz > 1.0) continue;
          const int rank = layer_rank(m(x, z));
          if (rank == 4) m(x, z) = id(cls);
        }
      }
      placed = true;
    }
    require(placed, ErrorCode::kInvalidParams, "forearm params: vessel geometry cannot fit");
  }
  return m;
}

bool has_forearm_layer_order(const LabelMap2& m) {
  const Shape2 s = m.shape();
  for (int x = 0; x < s.x; ++x) {
    int previous = 0;
    std::array<bool, 5> seen{};
    bool muscle_seen = false;
    for (int z = 0; z < s.z; ++z) {
      const int rank = layer_rank(m(x, z));
      if (rank < 0 || rank < previous || rank > previous + 1) return false;
      seen[static_cast<std::size_t>(rank)] = true;
      muscle_seen = muscle_seen || m(x, z) == id(TissueClass::kMuscle);
      previous = rank;
    }
    if (!std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }) || !muscle_seen) return false;
  }
  return true;
}

LabelMap2 hflip(const LabelMap2& m) {
  LabelMap2 out = m;
  const Shape2 s = m.shape();
  for (int z = 0; z < s.z; ++z)
    for (int x = 0; x < s.x; ++x) out(x, z) = m(s.x - 1 - x, z);
  return out;
}

std::vector<LabelMap2> hflip_copy_augment(const std::vector<LabelMap2>& masks) {
  require(!masks.empty(), ErrorCode::kInvalidParams, "hflip_copy_augment: empty mask list");
  const Shape2 shape = masks.front().shape();
  std::vector<LabelMap2> out;
  out.reserve(masks.size() * 2);
  for (const auto& m : masks) {
    require(m.shape() == shape, ErrorCode::kShapeMismatch, "hflip_copy_augment: masks differ in shape");
    out.push_back(m);
  }
  for (const auto& m : masks) out.push_back(hflip(m));
  return out;
}

bool AffineWarp::is_identity() const {
  for (std::size_t p = 0; p < source.size(); ++p)
    if (source[p] != static_cast<int>(p)) return false;
  return true;
}

AffineWarp make_affine_warp(int height, int width, double rotation_deg, double shift_x_px, double shift_z_px) {
  AffineWarp warp;
  warp.height = height;
  warp.width = width;
  warp.rotation_deg = rotation_deg;
  warp.shift_x_px = shift_x_px;
  warp.shift_z_px = shift_z_px;
  warp.source.resize(static_cast<std::size_t>(height) * static_cast<std::size_t>(width));

  const double theta = rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double cx = 0.5 * (width - 1);
  const double cz = 0.5 * (height - 1);
  const double tx = std::round(shift_x_px);
  const double tz = std::round(shift_z_px);
  for (int z = 0; z < height; ++z) {
    for (int x = 0; x < width; ++x) {
      // Inverse map: undo the shift, then rotate back about the center.
      const double ux = x - tx - cx;
      const double uz = z - tz - cz;
      const double srcx = c * ux + s * uz + cx;
      const double srcz = -s * ux + c * uz + cz;
      const long ix = std::lround(srcx);
      const long iz = std::lround(srcz);
      const bool inside = ix >= 0 && iz >= 0 && ix < width && iz < height;
      warp.source[static_cast<std::size_t>(z) * width + x] = inside ? static_cast<int>(iz * width + ix) : -1;
    }
  }
  return warp;
}

std::vector<Violation> validate_labelmap(const LabelMap2& m) {
  std::vector<Violation> report;
  if (!(m.spacing_mm > 0.0)) report.push_back({Violation::Kind::kBadSpacing, "spacing_mm must be positive"});
  std::size_t unknown = 0;
  std::size_t tissue = 0;
  for (Eigen::Index i = 0; i < m.grid.data.size(); ++i) {
    const int c = m.grid.data[i];
    if (!is_valid_class_id(c)) ++unknown;
    else if (c == id(TissueClass::kArtery) || c == id(TissueClass::kSkin) || c == id(TissueClass::kMuscle) ||
             c == id(TissueClass::kVein))
      ++tissue;
  }
  if (unknown > 0)
    report.push_back({Violation::Kind::kUnknownId, std::to_string(unknown) + " voxel(s) with unknown class id"});
  if (tissue == 0) report.push_back({Violation::Kind::kEmptyTissue, "map contains no tissue voxels"});
  return report;
}

std::vector<Violation> validate_labelmap(const LabelMap3& m) {
  LabelMap2 flat(Shape2{static_cast<int>(m.grid.data.size()), 1}, m.spacing_mm);
  flat.grid.data = m.grid.data;
  return validate_labelmap(flat);
}

}  // namespace pasyn
