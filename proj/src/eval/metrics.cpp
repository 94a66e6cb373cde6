#include "pasyn/eval/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "pasyn/error.hpp"

namespace pasyn {

namespace fs = std::filesystem;

std::string to_string(Metric m) {
  switch (m) {
    case Metric::kAE: return "AE";
    case Metric::kRE: return "RE";
    case Metric::kSSIM: return "SSIM";
  }
  return "unknown";
}

Metric metric_from_string(const std::string& name) {
  for (auto m : {Metric::kAE, Metric::kRE, Metric::kSSIM})
    if (to_string(m) == name) return m;
  fail(ErrorCode::kInvalidConfig, "unknown metric '" + name + "' (expected AE, RE or SSIM)");
}

bool lower_is_better(Metric m) { return m != Metric::kSSIM; }

namespace {

void require_same_shape(const MultispectralImage& est, const MultispectralImage& gt) {
  require(est.shape == gt.shape && est.channels() == gt.channels(), ErrorCode::kShapeMismatch,
          "metrics: estimate " + std::to_string(est.shape.x) + "x" + std::to_string(est.shape.z) + "x" +
              std::to_string(est.channels()) + " vs ground truth " + std::to_string(gt.shape.x) + "x" +
              std::to_string(gt.shape.z) + "x" + std::to_string(gt.channels()));
}

// Linear mua of one channel as a (z, x) array.
Eigen::ArrayXXd linear_plane(const MultispectralImage& img, int channel) {
  Eigen::ArrayXXd out(img.shape.z, img.shape.x);
  for (int z = 0; z < img.shape.z; ++z)
    for (int x = 0; x < img.shape.x; ++x) out(z, x) = std::exp(static_cast<double>(img(x, z, channel)));
  return out;
}

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

Eigen::ArrayXd gaussian_window() {
  Eigen::ArrayXd w(kWindow);
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    w[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
  }
  return w / w.sum();
}

// Separable weighted sum over every fully contained window.
Eigen::ArrayXXd filter_valid(const Eigen::ArrayXXd& img, const Eigen::ArrayXd& w) {
  const Eigen::Index rows = img.rows() - kWindow + 1, cols = img.cols() - kWindow + 1;
  Eigen::ArrayXXd tmp = Eigen::ArrayXXd::Zero(img.rows(), cols);
  for (int k = 0; k < kWindow; ++k) tmp += w[k] * img.middleCols(k, cols);
  Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(rows, cols);
  for (int k = 0; k < kWindow; ++k) out += w[k] * tmp.middleRows(k, rows);
  return out;
}

}  // namespace

PixelErrors pixel_errors(const MultispectralImage& est, const MultispectralImage& gt, int channel) {
  require_same_shape(est, gt);
  require(channel >= 0 && channel < gt.channels(), ErrorCode::kShapeMismatch,
          "pixel_errors: channel " + std::to_string(channel) + " out of range");
  // Scalar exp keeps results identical to linear_plane.
  const auto lin = [](double v) { return std::exp(v); };
  const Eigen::ArrayXd e = est.channel(channel).cast<double>().unaryExpr(lin);
  const Eigen::ArrayXd g = gt.channel(channel).cast<double>().unaryExpr(lin);
  PixelErrors out;
  out.ae = (e - g).abs();
  out.re = out.ae / g.max(kMuaGuard);
  return out;
}

ClassMeans class_means(const Eigen::ArrayXd& values, const LabelMap2& mask) {
  require(values.size() == static_cast<Eigen::Index>(mask.shape().size()), ErrorCode::kShapeMismatch,
          "class_means: value count does not match the mask");
  std::array<double, kNumClasses + 1> sum{};
  std::array<std::size_t, kNumClasses + 1> count{};
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const int c = mask.grid.data[static_cast<std::size_t>(i)];
    require(is_valid_class_id(c), ErrorCode::kInvalidId, "class_means: mask holds class id " + std::to_string(c));
    sum[c] += values[i];
    ++count[c];
  }
  ClassMeans out;
  double overall = 0.0;
  int present = 0;
  for (int c = 1; c <= kNumClasses; ++c) {
    if (count[c] == 0) continue;
    out.present[c] = true;
    out.mean[c] = sum[c] / static_cast<double>(count[c]);
    overall += out.mean[c];
    ++present;
  }
  out.present[kOverallClass] = present > 0;
  out.mean[kOverallClass] = present > 0 ? overall / present : 0.0;
  return out;
}

double ssim(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b, double data_range) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::kShapeMismatch, "ssim: image shapes differ");
  require(a.rows() >= kWindow && a.cols() >= kWindow, ErrorCode::kImageTooSmall,
          "ssim: images must be at least 11x11, got " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  require(data_range >= 0.0 && std::isfinite(data_range), ErrorCode::kInvalidParams, "ssim: invalid data range");
  const double c1 = std::pow(0.01 * data_range, 2), c2 = std::pow(0.03 * data_range, 2);
  const Eigen::ArrayXd w = gaussian_window();
  const Eigen::ArrayXXd mx = filter_valid(a, w), my = filter_valid(b, w);
  const Eigen::ArrayXXd sxx = filter_valid(a * a, w) - mx * mx;
  const Eigen::ArrayXXd syy = filter_valid(b * b, w) - my * my;
  const Eigen::ArrayXXd sxy = filter_valid(a * b, w) - mx * my;
  const Eigen::ArrayXXd num = (2.0 * mx * my + c1) * (2.0 * sxy + c2);
  const Eigen::ArrayXXd den = (mx.square() + my.square() + c1) * (sxx + syy + c2);
  // Windows where both images are zero-valued constants are identical.
  const Eigen::ArrayXXd s = (den > 0.0).select(num / den, 1.0);
  return s.mean();
}

double ssim(const Eigen::ArrayXXd& est, const Eigen::ArrayXXd& gt) {
  return ssim(est, gt, gt.size() > 0 ? gt.maxCoeff() - gt.minCoeff() : 0.0);
}

std::vector<MetricRecord> evaluate_case(const std::string& algorithm, int case_index, const MultispectralImage& est,
                                        const MultispectralImage& gt, const LabelMap2& mask) {
  require_same_shape(est, gt);
  require(mask.shape() == gt.shape, ErrorCode::kShapeMismatch, "evaluate_case: mask shape differs from the image");
  std::vector<MetricRecord> out;
  for (int c = 0; c < gt.channels(); ++c) {
    const double nm = gt.wavelengths_nm[static_cast<std::size_t>(c)];
    const PixelErrors err = pixel_errors(est, gt, c);
    const ClassMeans ae = class_means(err.ae, mask), re = class_means(err.re, mask);
    for (int k = 0; k <= kNumClasses; ++k) {
      if (!ae.present[k]) continue;
      out.push_back({algorithm, case_index, nm, k, Metric::kAE, ae.mean[k]});
      out.push_back({algorithm, case_index, nm, k, Metric::kRE, re.mean[k]});
    }
    out.push_back({algorithm, case_index, nm, kOverallClass, Metric::kSSIM,
                   ssim(linear_plane(est, c), linear_plane(gt, c))});
  }
  return out;
}

void write_metrics_csv(const fs::path& path, const std::vector<MetricRecord>& records) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out << "algorithm,case,wavelength_nm,class,metric,value\n";
  out.precision(17);
  for (const auto& r : records) {
    require(r.algorithm.find_first_of(",\n") == std::string::npos, ErrorCode::kInvalidParams,
            "metrics csv: algorithm name '" + r.algorithm + "' contains a separator");
    out << r.algorithm << ',' << r.case_index << ',' << r.wavelength_nm << ',' << r.tissue_class << ','
        << to_string(r.metric) << ',' << r.value << '\n';
  }
}

std::vector<MetricRecord> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  require(line == "algorithm,case,wavelength_nm,class,metric,value", ErrorCode::kIo,
          path.string() + ": unexpected header '" + line + "'");
  std::vector<MetricRecord> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    require(f.size() == 6, ErrorCode::kIo, path.string() + ":" + std::to_string(line_no) + ": expected 6 fields");
    try {
      out.push_back({f[0], std::stoi(f[1]), std::stod(f[2]), std::stoi(f[3]), metric_from_string(f[4]),
                     std::stod(f[5])});
    } catch (const std::logic_error&) {
      fail(ErrorCode::kIo, path.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
  }
  return out;
}

}  // namespace pasyn
