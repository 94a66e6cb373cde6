#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pasyn/geometry.hpp"
#include "pasyn/synth_pipeline.hpp"

namespace pasyn {

enum class Metric { kAE, kRE, kSSIM };

std::string to_string(Metric m);
Metric metric_from_string(const std::string& name);  // "AE" | "RE" | "SSIM"
bool lower_is_better(Metric m);

inline constexpr int kOverallClass = 0;
inline constexpr double kMuaGuard = 1e-12;

struct MetricRecord {
  std::string algorithm;
  int case_index = 0;
  double wavelength_nm = 0.0;
  int tissue_class = kOverallClass;  // 0 = mean over the per-class means
  Metric metric = Metric::kAE;
  double value = 0.0;
  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

// Per-pixel errors of one channel in linear mua, computed from log-domain
// images: AE = |exp(est) - exp(gt)|, RE = AE / max(exp(gt), guard).
struct PixelErrors {
  Eigen::ArrayXd ae;
  Eigen::ArrayXd re;
};

PixelErrors pixel_errors(const MultispectralImage& est, const MultispectralImage& gt, int channel);

// Mean of `values` over the pixels of each class present in the mask; entry 0
// is the mean over the present classes' means.
struct ClassMeans {
  std::array<double, kNumClasses + 1> mean{};
  std::array<bool, kNumClasses + 1> present{};
};

ClassMeans class_means(const Eigen::ArrayXd& values, const LabelMap2& mask);

// Gaussian-window SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03) averaged over
// all fully contained windows. Images are (rows, cols); throws
// image-too-small below 11x11.
double ssim(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b, double data_range);

// Data range taken from the ground truth (max - min).
double ssim(const Eigen::ArrayXXd& est, const Eigen::ArrayXXd& gt);

// AE and RE for every present class and class 0, plus whole-image SSIM
// (class 0) of the linear mua, for every wavelength of one test case.
std::vector<MetricRecord> evaluate_case(const std::string& algorithm, int case_index, const MultispectralImage& est,
                                        const MultispectralImage& gt, const LabelMap2& mask);

// CSV columns: algorithm,case,wavelength_nm,class,metric,value
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& records);
std::vector<MetricRecord> read_metrics_csv(const std::filesystem::path& path);

}  // namespace pasyn
