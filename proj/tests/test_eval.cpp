#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>

#include "pasyn/eval/metrics.hpp"
#include "pasyn/eval/ranking.hpp"

using namespace pasyn;
namespace fs = std::filesystem;

namespace {

MultispectralImage log_image(Shape2 s, const std::vector<double>& linear_values) {
  MultispectralImage img(s, {800.0}, 0.32, "log_mua");
  for (std::size_t i = 0; i < linear_values.size(); ++i) img.data[static_cast<Eigen::Index>(i)] = std::log(linear_values[i]);
  return img;
}

// Direct windowed SSIM: every 11x11 window, explicit Gaussian weights.
double ssim_oracle(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b, double range) {
  double w[11][11], total = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2.0 * 1.5 * 1.5));
      total += w[i][j];
    }
  const double c1 = (0.01 * range) * (0.01 * range), c2 = (0.03 * range) * (0.03 * range);
  double sum = 0.0;
  int windows = 0;
  for (int r = 0; r + 11 <= a.rows(); ++r)
    for (int c = 0; c + 11 <= a.cols(); ++c) {
      double mx = 0, my = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          mx += w[i][j] / total * a(r + i, c + j);
          my += w[i][j] / total * b(r + i, c + j);
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double k = w[i][j] / total;
          vx += k * (a(r + i, c + j) - mx) * (a(r + i, c + j) - mx);
          vy += k * (b(r + i, c + j) - my) * (b(r + i, c + j) - my);
          cxy += k * (a(r + i, c + j) - mx) * (b(r + i, c + j) - my);
        }
      sum += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++windows;
    }
  return sum / windows;
}

// Rank by counting: 1 + #strictly better + 0.5 * #tied others.
std::vector<double> count_ranks(const std::vector<double>& v, bool lower) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double better = 0, tied = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (j == i) continue;
      if (v[j] == v[i]) tied += 1;
      else if (lower ? v[j] < v[i] : v[j] > v[i]) better += 1;
    }
    r[i] = 1.0 + better + 0.5 * tied;
  }
  return r;
}

std::vector<double> consensus_oracle(const RankInput& in) {
  const std::size_t na = in.algorithms.size();
  std::vector<double> mean_rank(na, 0.0);
  for (std::size_t t = 0; t < in.tasks.size(); ++t) {
    std::vector<double> m(na, 0.0);
    for (std::size_t a = 0; a < na; ++a) {
      for (double v : in.values[a][t]) m[a] += v;
      m[a] /= static_cast<double>(in.values[a][t].size());
    }
    const auto r = count_ranks(m, in.lower_is_better);
    for (std::size_t a = 0; a < na; ++a) mean_rank[a] += r[a];
  }
  return count_ranks(mean_rank, true);
}

RankInput random_input(std::size_t na, std::size_t nt, std::size_t nc, Rng& rng) {
  RankInput in;
  std::uniform_real_distribution<double> d(0.0, 1.0);
  for (std::size_t a = 0; a < na; ++a) in.algorithms.push_back("alg" + std::to_string(a));
  for (std::size_t t = 0; t < nt; ++t) in.tasks.push_back("t" + std::to_string(t));
  in.values.assign(na, std::vector<std::vector<double>>(nt, std::vector<double>(nc)));
  for (auto& a : in.values)
    for (auto& t : a)
      for (auto& v : t) v = d(rng);
  return in;
}

RankInput separated_input(std::size_t na, std::size_t nt, std::size_t nc, Rng& rng) {
  RankInput in = random_input(na, nt, nc, rng);
  for (std::size_t a = 0; a < na; ++a)
    for (auto& t : in.values[a])
      for (auto& v : t) v = (1.0 + v) * std::pow(10.0, static_cast<double>(a));
  return in;
}

struct Blob {
  std::string algorithm;
  int rank;
  double frequency;
  double r;
};

std::vector<Blob> parse_blobs(const fs::path& svg) {
  std::ifstream in(svg);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  const std::regex circle(
      "<circle class=\"blob\" data-algorithm=\"([^\"]*)\" data-rank=\"(\\d+)\" data-frequency=\"([^\"]+)\"[^>]* "
      "r=\"([^\"]+)\"");
  std::vector<Blob> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), circle); it != std::sregex_iterator(); ++it)
    out.push_back({(*it)[1], std::stoi((*it)[2]), std::stod((*it)[3]), std::stod((*it)[4])});
  return out;
}

}  // namespace

TEST_CASE("pixel errors in linear absorption") {
  const auto est = log_image({1, 1}, {0.2});
  const auto gt = log_image({1, 1}, {0.1});
  const PixelErrors e = pixel_errors(est, gt, 0);
  CHECK(e.ae[0] == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(e.re[0] == doctest::Approx(1.0).epsilon(1e-6));

  const auto same = pixel_errors(gt, gt, 0);
  CHECK((same.ae == 0.0).all());
  CHECK((same.re == 0.0).all());

  const auto other = log_image({2, 1}, {0.1, 0.1});
  CHECK_THROWS_AS(pixel_errors(other, gt, 0), Error);
}

TEST_CASE("per-class means on a 2x2 two-class fixture") {
  LabelMap2 mask({2, 2}, 0.32, TissueClass::kMuscle);
  mask(0, 0) = id(TissueClass::kArtery);
  mask(1, 1) = id(TissueClass::kArtery);
  const std::vector<double> gt_v = {0.2, 0.05, 0.04, 0.3};
  const std::vector<double> est_v = {0.25, 0.05, 0.06, 0.1};
  const PixelErrors e = pixel_errors(log_image({2, 2}, est_v), log_image({2, 2}, gt_v), 0);
  const ClassMeans ae = class_means(e.ae, mask), re = class_means(e.re, mask);
  // Pixels 0 and 3 are artery, 1 and 2 muscle.
  const double ae_artery = (0.05 + 0.2) / 2, ae_muscle = (0.0 + 0.02) / 2;
  const double re_artery = (0.05 / 0.2 + 0.2 / 0.3) / 2, re_muscle = (0.0 + 0.02 / 0.04) / 2;
  CHECK(ae.present[1]);
  CHECK(ae.present[3]);
  CHECK_FALSE(ae.present[2]);
  CHECK(ae.mean[1] == doctest::Approx(ae_artery).epsilon(1e-6));
  CHECK(ae.mean[3] == doctest::Approx(ae_muscle).epsilon(1e-6));
  CHECK(ae.mean[0] == doctest::Approx((ae_artery + ae_muscle) / 2).epsilon(1e-6));
  CHECK(re.mean[1] == doctest::Approx(re_artery).epsilon(1e-6));
  CHECK(re.mean[0] == doctest::Approx((re_artery + re_muscle) / 2).epsilon(1e-6));
}

TEST_CASE("overall class equals the mean of per-class means") {
  Rng rng(5);
  std::uniform_int_distribution<int> cls(1, kNumClasses);
  std::uniform_real_distribution<double> val(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    LabelMap2 mask({9, 7}, 0.32);
    for (auto& v : mask.grid.data) v = static_cast<std::uint8_t>(cls(rng));
    Eigen::ArrayXd values(63);
    for (auto& v : values) v = val(rng);
    const ClassMeans m = class_means(values, mask);
    double overall = 0.0;
    int present = 0;
    for (int c = 1; c <= kNumClasses; ++c) {
      double s = 0.0;
      int n = 0;
      for (int i = 0; i < 63; ++i)
        if (mask.grid.data[i] == c) {
          s += values[i];
          ++n;
        }
      REQUIRE(m.present[c] == (n > 0));
      if (n == 0) continue;
      REQUIRE(m.mean[c] == doctest::Approx(s / n).epsilon(1e-12));
      overall += s / n;
      ++present;
    }
    REQUIRE(m.mean[0] == doctest::Approx(overall / present).epsilon(1e-12));
  }
}

TEST_CASE("ssim identities and oracle") {
  Rng rng(2);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  Eigen::ArrayXXd a(15, 13), b(15, 13);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    a(i) = d(rng);
    b(i) = a(i) + 0.3 * d(rng);
  }
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ssim(a, b, 1.0) == doctest::Approx(ssim_oracle(a, b, 1.0)).epsilon(1e-10));
  CHECK(ssim(a, b, 2.0) == doctest::Approx(ssim(b, a, 2.0)).epsilon(1e-12));

  const double mx = 0.3, my = 0.7, range = 2.0;
  const Eigen::ArrayXXd ca = Eigen::ArrayXXd::Constant(12, 12, mx), cb = Eigen::ArrayXXd::Constant(12, 12, my);
  const double c1 = (0.01 * range) * (0.01 * range);
  CHECK(ssim(ca, cb, range) == doctest::Approx((2 * mx * my + c1) / (mx * mx + my * my + c1)).epsilon(1e-9));

  Eigen::ArrayXXd img(64, 64), noisy(64, 64);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) {
      img(r, c) = std::sin(0.2 * r) * std::cos(0.15 * c);
      noisy(r, c) = img(r, c) + nd(rng);
    }
  const double s = ssim(noisy, img);
  CHECK(s < 0.5);
  CHECK(s >= -1.0);

  try {
    ssim(Eigen::ArrayXXd::Zero(10, 20), Eigen::ArrayXXd::Zero(10, 20), 1.0);
    FAIL("expected image-too-small");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kImageTooSmall);
  }
}

TEST_CASE("fractional ranks") {
  CHECK(fractional_ranks({0.3, 0.1, 0.2}, true) == std::vector<double>{3, 1, 2});
  CHECK(fractional_ranks({0.3, 0.1, 0.2}, false) == std::vector<double>{1, 3, 2});
  CHECK(fractional_ranks({1, 2, 1, 3}, true) == std::vector<double>{1.5, 3, 1.5, 4});
  CHECK(fractional_ranks({5, 5, 5}, true) == std::vector<double>{2, 2, 2});
}

TEST_CASE("rank then aggregate") {
  Rng rng(7);
  RankInput single = random_input(1, 16, 18, rng);
  CHECK(rank_then_aggregate(single).rank == std::vector<double>{1.0});

  RankInput dom = random_input(3, 16, 18, rng);
  for (auto& t : dom.values[2])
    for (auto& v : t) v -= 2.0;
  const Consensus c = rank_then_aggregate(dom);
  CHECK(c.rank[2] == 1.0);
  CHECK(c.rank[0] + c.rank[1] == doctest::Approx(5.0));

  for (int trial = 0; trial < 200; ++trial) {
    RankInput in = random_input(3, 4, 5, rng);
    // Coarse values make ties frequent.
    for (auto& a : in.values)
      for (auto& t : a)
        for (auto& v : t) v = std::round(v * 2.0);
    in.lower_is_better = trial % 2 == 0;
    REQUIRE(rank_then_aggregate(in).rank == consensus_oracle(in));
  }
}

TEST_CASE("ranking invariances") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const RankInput in = random_input(4, 6, 1, rng);
    const auto base = rank_then_aggregate(in).rank;
    RankInput mapped = in;
    const double k = 0.5 + trial;
    for (auto& a : mapped.values)
      for (auto& t : a)
        for (auto& v : t) v = std::exp(k * v) + std::pow(v, 3);
    REQUIRE(rank_then_aggregate(mapped).rank == base);
    RankInput negated = in;
    negated.lower_is_better = false;
    for (auto& a : negated.values)
      for (auto& t : a)
        for (auto& v : t) v = -v;
    REQUIRE(rank_then_aggregate(negated).rank == base);
  }
}

TEST_CASE("ranking input errors") {
  Rng rng(9);
  RankInput in = random_input(2, 3, 4, rng);
  in.values[1][2].pop_back();
  try {
    rank_then_aggregate(in);
    FAIL("expected missing-cell");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kMissingCell);
  }
  RankInput empty;
  CHECK_THROWS_AS(rank_then_aggregate(empty), Error);
}

TEST_CASE("bootstrap ranking") {
  Rng rng(10);
  const RankInput sep = separated_input(4, 16, 18, rng);
  const RankingReport r = bootstrap_ranking(sep, 300, 1);
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t j = 0; j < 4; ++j) CHECK(r.freq[a][j] == (j == a ? 1.0 : 0.0));
    CHECK(r.ci_low[a] == r.ci_high[a]);
    CHECK(r.median_rank[a] == static_cast<double>(a + 1));
  }

  const RankInput noisy = random_input(5, 4, 6, rng);
  const RankingReport b = bootstrap_ranking(noisy, 500, 3);
  for (std::size_t a = 0; a < 5; ++a) {
    double row = 0.0;
    for (double f : b.freq[a]) row += f;
    CHECK(std::abs(row - 1.0) < 1e-12);
    CHECK(b.median_rank[a] >= b.ci_low[a]);
    CHECK(b.median_rank[a] <= b.ci_high[a]);
  }
  for (std::size_t j = 0; j < 5; ++j) {
    double col = 0.0;
    for (std::size_t a = 0; a < 5; ++a) col += b.freq[a][j];
    CHECK(col == doctest::Approx(1.0).epsilon(1e-12));
  }
  const RankingReport again = bootstrap_ranking(noisy, 500, 3);
  CHECK(again.freq == b.freq);
  CHECK(again.median_rank == b.median_rank);

  // Two identical algorithms always tie and share ranks 1 and 2.
  RankInput twins = random_input(2, 3, 4, rng);
  twins.values[1] = twins.values[0];
  const RankingReport t = bootstrap_ranking(twins, 50, 4);
  CHECK(t.freq[0] == std::vector<double>{0.5, 0.5});
  CHECK(t.median_rank[0] == 1.5);

  CHECK_THROWS_AS(bootstrap_ranking(noisy, 0, 1), Error);
  const auto j = b.to_json();
  CHECK(j["algorithms"].size() == 5);
  CHECK(j["algorithms"][0]["rank_frequency"].size() == 5);
}

TEST_CASE("blob plot rendering") {
  const fs::path dir = fs::temp_directory_path() / "pasyn_test_eval_svg";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Rng rng(11);

  const RankingReport perm = bootstrap_ranking(separated_input(3, 4, 6, rng), 100, 1);
  render_blob_svg(perm, dir / "perm.svg");
  const auto perm_blobs = parse_blobs(dir / "perm.svg");
  REQUIRE(perm_blobs.size() == 3);
  for (const auto& blob : perm_blobs) CHECK(blob.r == doctest::Approx(27.0).epsilon(1e-9));

  const RankingReport spread = bootstrap_ranking(random_input(4, 3, 5, rng), 400, 2);
  render_blob_svg(spread, dir / "spread.svg");
  const auto blobs = parse_blobs(dir / "spread.svg");
  REQUIRE(blobs.size() >= 5);
  for (std::size_t i = 1; i < blobs.size(); ++i) {
    const double r2 = (blobs[i].r * blobs[i].r) / (blobs[0].r * blobs[0].r);
    const double f = blobs[i].frequency / blobs[0].frequency;
    CHECK(std::abs(r2 / f - 1.0) < 0.01);
  }
  std::ifstream svg(dir / "spread.svg");
  std::stringstream text;
  text << svg.rdbuf();
  CHECK(text.str().find("class=\"median\"") != std::string::npos);
  CHECK(text.str().find("class=\"ci\"") != std::string::npos);
  CHECK(text.str().find(">Rank<") != std::string::npos);

  RankingReport empty;
  try {
    render_blob_svg(empty, dir / "empty.svg");
    FAIL("expected empty-report");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kEmptyReport);
  }
  CHECK_FALSE(fs::exists(dir / "empty.svg"));
  fs::remove_all(dir);
}

TEST_CASE("metric records: evaluation, csv and tables") {
  Rng rng(12);
  const Shape2 s{16, 12};
  LabelMap2 mask(s, 0.32, TissueClass::kMuscle);
  for (int x = 0; x < 16; ++x) mask(x, 0) = id(TissueClass::kSkin);
  MultispectralImage gt(s, {700.0, 710.0}, 0.32, "log_mua");
  std::uniform_real_distribution<float> d(-4.0f, -1.0f);
  for (auto& v : gt.data) v = d(rng);
  MultispectralImage est = gt;
  est.data += 0.1f;

  const auto recs = evaluate_case("A", 0, est, gt, mask);
  // Per wavelength: AE and RE for classes 0, 2, 3 plus one SSIM.
  CHECK(recs.size() == 2 * (3 * 2 + 1));
  for (const auto& r : recs)
    if (r.metric == Metric::kRE) CHECK(r.value == doctest::Approx(std::exp(0.1) - 1.0).epsilon(1e-5));

  auto more = evaluate_case("B", 0, gt, gt, mask);
  auto b1 = evaluate_case("A", 1, est, gt, mask);
  auto b2 = evaluate_case("B", 1, gt, gt, mask);
  std::vector<MetricRecord> all = recs;
  for (auto* v : {&more, &b1, &b2}) all.insert(all.end(), v->begin(), v->end());

  const fs::path csv = fs::temp_directory_path() / "pasyn_test_eval_metrics.csv";
  write_metrics_csv(csv, all);
  const auto back = read_metrics_csv(csv);
  REQUIRE(back.size() == all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    CHECK(back[i].algorithm == all[i].algorithm);
    CHECK(back[i].value == all[i].value);
    CHECK(back[i].metric == all[i].metric);
  }
  fs::remove(csv);

  const RankInput ae = rank_input_from_records(all, Metric::kAE, 0);
  CHECK(ae.algorithms == std::vector<std::string>{"A", "B"});
  CHECK(ae.tasks == std::vector<std::string>{"700", "710"});
  CHECK(ae.cases(0) == 2);
  CHECK(rank_then_aggregate(ae).rank == std::vector<double>{2.0, 1.0});
  const RankInput ss = rank_input_from_records(all, Metric::kSSIM, 0);
  CHECK(rank_then_aggregate(ss).rank == std::vector<double>{2.0, 1.0});

  // Class 2 absent from case 1 for everyone: that case is skipped.
  std::vector<MetricRecord> partial;
  for (const auto& r : all)
    if (!(r.case_index == 1 && r.tissue_class == 2)) partial.push_back(r);
  CHECK(rank_input_from_records(partial, Metric::kAE, 2).cases(0) == 1);
  // Missing for one algorithm only.
  std::vector<MetricRecord> holes;
  for (const auto& r : all)
    if (!(r.case_index == 1 && r.tissue_class == 2 && r.algorithm == "B")) holes.push_back(r);
  CHECK_THROWS_AS(rank_input_from_records(holes, Metric::kAE, 2), Error);
  CHECK_THROWS_AS(rank_input_from_records(all, Metric::kAE, 7), Error);
}
