#include "pasyn/eval/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

#include "pasyn/error.hpp"
#include "pasyn/rng.hpp"

namespace pasyn {

namespace fs = std::filesystem;

void RankInput::validate() const {
  require(!algorithms.empty(), ErrorCode::kEmptyReport, "ranking: no algorithms");
  require(!tasks.empty(), ErrorCode::kEmptyReport, "ranking: no tasks");
  require(values.size() == algorithms.size(), ErrorCode::kMissingCell, "ranking: value table misses algorithms");
  for (std::size_t a = 0; a < values.size(); ++a) {
    require(values[a].size() == tasks.size(), ErrorCode::kMissingCell,
            "ranking: algorithm '" + algorithms[a] + "' misses tasks");
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      const std::size_t n = values[0][t].size();
      require(n > 0, ErrorCode::kMissingCell, "ranking: task '" + tasks[t] + "' has no test cases");
      require(values[a][t].size() == n, ErrorCode::kMissingCell,
              "ranking: algorithm '" + algorithms[a] + "', task '" + tasks[t] + "' has " +
                  std::to_string(values[a][t].size()) + " cases, expected " + std::to_string(n));
      for (double v : values[a][t])
        require(std::isfinite(v), ErrorCode::kMissingCell,
                "ranking: non-finite value for '" + algorithms[a] + "', task '" + tasks[t] + "'");
    }
  }
}

std::vector<double> fractional_ranks(const std::vector<double>& scores, bool lower_is_better) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return lower_is_better ? scores[a] < scores[b] : scores[a] > scores[b];
  });
  std::vector<double> ranks(scores.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mean = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean;
    i = j + 1;
  }
  return ranks;
}

namespace {

// Consensus from per-task case means, means[algorithm][task].
Consensus consensus_from_means(const std::vector<std::vector<double>>& means, bool lower_is_better) {
  const std::size_t na = means.size(), nt = means[0].size();
  Consensus c;
  c.task_ranks.resize(nt);
  c.mean_rank.assign(na, 0.0);
  for (std::size_t t = 0; t < nt; ++t) {
    std::vector<double> scores(na);
    for (std::size_t a = 0; a < na; ++a) scores[a] = means[a][t];
    c.task_ranks[t] = fractional_ranks(scores, lower_is_better);
    // Ranks are multiples of 0.5, so these sums are exact and ties survive.
    for (std::size_t a = 0; a < na; ++a) c.mean_rank[a] += c.task_ranks[t][a];
  }
  for (auto& m : c.mean_rank) m /= static_cast<double>(nt);
  c.rank = fractional_ranks(c.mean_rank, true);
  return c;
}

double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

Consensus rank_then_aggregate(const RankInput& input) {
  input.validate();
  std::vector<std::vector<double>> means(input.algorithms.size(), std::vector<double>(input.tasks.size()));
  for (std::size_t a = 0; a < means.size(); ++a)
    for (std::size_t t = 0; t < input.tasks.size(); ++t) {
      const auto& v = input.values[a][t];
      means[a][t] = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    }
  return consensus_from_means(means, input.lower_is_better);
}

RankingReport bootstrap_ranking(const RankInput& input, int n_boot, std::uint64_t seed) {
  require(n_boot >= 1, ErrorCode::kInvalidParams, "bootstrap_ranking: n_boot must be >= 1");
  RankingReport r;
  r.consensus = rank_then_aggregate(input);
  r.algorithms = input.algorithms;
  r.tasks = input.tasks;
  r.n_boot = n_boot;
  r.seed = seed;

  const std::size_t na = input.algorithms.size(), nt = input.tasks.size();
  r.freq.assign(na, std::vector<double>(na, 0.0));
  std::vector<std::vector<double>> samples(na);
  Rng rng(seed);
  std::vector<std::vector<double>> means(na, std::vector<double>(nt));
  std::vector<std::size_t> idx;
  for (int b = 0; b < n_boot; ++b) {
    for (std::size_t t = 0; t < nt; ++t) {
      const std::size_t nc = input.cases(t);
      std::uniform_int_distribution<std::size_t> pick(0, nc - 1);
      idx.resize(nc);
      for (auto& i : idx) i = pick(rng);
      for (std::size_t a = 0; a < na; ++a) {
        double s = 0.0;
        for (auto i : idx) s += input.values[a][t][i];
        means[a][t] = s / static_cast<double>(nc);
      }
    }
    const std::vector<double> rank = consensus_from_means(means, input.lower_is_better).rank;
    for (std::size_t a = 0; a < na; ++a) {
      samples[a].push_back(rank[a]);
      const auto k = static_cast<double>(std::count(rank.begin(), rank.end(), rank[a]));
      const double first = rank[a] - 0.5 * (k - 1.0);
      for (int j = 0; j < static_cast<int>(k); ++j)
        r.freq[a][static_cast<std::size_t>(std::lround(first)) - 1 + static_cast<std::size_t>(j)] += 1.0 / k;
    }
  }
  for (std::size_t a = 0; a < na; ++a) {
    for (auto& f : r.freq[a]) f /= n_boot;
    r.median_rank.push_back(percentile(samples[a], 0.5));
    r.ci_low.push_back(percentile(samples[a], 0.025));
    r.ci_high.push_back(percentile(samples[a], 0.975));
  }
  return r;
}

nlohmann::json RankingReport::to_json() const {
  nlohmann::json algs = nlohmann::json::array();
  for (std::size_t a = 0; a < algorithms.size(); ++a) {
    nlohmann::json task_ranks = nlohmann::json::object();
    for (std::size_t t = 0; t < tasks.size(); ++t) task_ranks[tasks[t]] = consensus.task_ranks[t][a];
    nlohmann::json entry = {{"name", algorithms[a]},
                            {"consensus_rank", consensus.rank[a]},
                            {"mean_task_rank", consensus.mean_rank[a]},
                            {"task_ranks", task_ranks}};
    if (!freq.empty()) {
      entry["rank_frequency"] = freq[a];
      entry["median_rank"] = median_rank[a];
      entry["ci95"] = {ci_low[a], ci_high[a]};
    }
    algs.push_back(entry);
  }
  return {{"metric", metric},     {"class", tissue_class}, {"aggregation", "rank-then-aggregate (mean)"},
          {"tasks", tasks},       {"n_boot", n_boot},      {"seed", seed},
          {"algorithms", algs}};
}

RankInput rank_input_from_records(const std::vector<MetricRecord>& records, Metric metric, int tissue_class) {
  std::set<std::string> algs;
  std::set<double> nms;
  std::set<int> cases;
  std::map<std::tuple<std::string, double, int>, double> cell;
  for (const auto& r : records) {
    if (r.metric != metric || r.tissue_class != tissue_class) continue;
    algs.insert(r.algorithm);
    nms.insert(r.wavelength_nm);
    cases.insert(r.case_index);
    const bool fresh = cell.emplace(std::tuple{r.algorithm, r.wavelength_nm, r.case_index}, r.value).second;
    require(fresh, ErrorCode::kInvalidParams,
            "ranking: duplicate record for '" + r.algorithm + "', case " + std::to_string(r.case_index));
  }
  require(!algs.empty(), ErrorCode::kEmptyReport,
          "ranking: no " + to_string(metric) + " records for class " + std::to_string(tissue_class));
  RankInput in;
  in.lower_is_better = lower_is_better(metric);
  in.algorithms.assign(algs.begin(), algs.end());
  for (double nm : nms) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", nm);
    in.tasks.push_back(buf);
  }
  for (const auto& a : in.algorithms) {
    auto& per_task = in.values.emplace_back();
    for (double nm : nms) {
      auto& v = per_task.emplace_back();
      for (int c : cases) {
        const auto it = cell.find({a, nm, c});
        const bool any = std::any_of(in.algorithms.begin(), in.algorithms.end(),
                                     [&](const std::string& o) { return cell.count({o, nm, c}) > 0; });
        if (!any) continue;
        require(it != cell.end(), ErrorCode::kMissingCell,
                "ranking: missing " + to_string(metric) + " value for '" + a + "', wavelength " + std::to_string(nm) +
                    ", case " + std::to_string(c));
        v.push_back(it->second);
      }
    }
  }
  return in;
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace

void render_blob_svg(const RankingReport& report, const fs::path& path) {
  const std::size_t n = report.algorithms.size();
  require(n > 0, ErrorCode::kEmptyReport, "render_blob_svg: report has no algorithms");
  require(report.freq.size() == n && report.median_rank.size() == n, ErrorCode::kEmptyReport,
          "render_blob_svg: report has no bootstrap results");
  constexpr double cell = 60.0, left = 70.0, top = 30.0, bottom = 90.0;
  const double max_r = 0.45 * cell;
  const double width = left + cell * static_cast<double>(n) + 20.0;
  const double height = top + cell * static_cast<double>(n) + bottom;
  auto cx = [&](std::size_t a) { return left + cell * (static_cast<double>(a) + 0.5); };
  auto cy = [&](double rank) { return top + cell * (rank - 0.5); };

  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out.precision(10);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t j = 1; j <= n; ++j)
    out << "<text x=\"" << left - 10 << "\" y=\"" << cy(static_cast<double>(j)) + 4 << "\" text-anchor=\"end\">" << j
        << "</text>\n";
  out << "<text x=\"16\" y=\"" << top + cell * static_cast<double>(n) / 2
      << "\" transform=\"rotate(-90 16 " << top + cell * static_cast<double>(n) / 2
      << ")\" text-anchor=\"middle\">Rank</text>\n";
  for (std::size_t a = 0; a < n; ++a) {
    const std::string name = xml_escape(report.algorithms[a]);
    for (std::size_t j = 0; j < n; ++j) {
      const double f = report.freq[a][j];
      if (f <= 0.0) continue;
      out << "<circle class=\"blob\" data-algorithm=\"" << name << "\" data-rank=\"" << j + 1
          << "\" data-frequency=\"" << f << "\" cx=\"" << cx(a) << "\" cy=\"" << cy(static_cast<double>(j + 1))
          << "\" r=\"" << max_r * std::sqrt(f) << "\" fill=\"steelblue\" fill-opacity=\"0.6\"/>\n";
    }
    out << "<line class=\"ci\" x1=\"" << cx(a) << "\" x2=\"" << cx(a) << "\" y1=\"" << cy(report.ci_low[a])
        << "\" y2=\"" << cy(report.ci_high[a]) << "\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
    const double mx = cx(a), my = cy(report.median_rank[a]), s = 6.0;
    out << "<path class=\"median\" d=\"M" << mx - s << ' ' << my - s << " L" << mx + s << ' ' << my + s << " M"
        << mx - s << ' ' << my + s << " L" << mx + s << ' ' << my - s << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    const double ly = top + cell * static_cast<double>(n) + 12;
    out << "<text x=\"" << cx(a) << "\" y=\"" << ly << "\" transform=\"rotate(45 " << cx(a) << ' ' << ly
        << ")\">" << name << "</text>\n";
  }
  out << "<text x=\"" << left + cell * static_cast<double>(n) / 2 << "\" y=\"" << height - 8
      << "\" text-anchor=\"middle\">Algorithm (" << xml_escape(report.metric) << ")</text>\n";
  out << "</svg>\n";
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed: " + path.string());
}

}  // namespace pasyn
