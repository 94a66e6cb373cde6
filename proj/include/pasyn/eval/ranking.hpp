#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pasyn/eval/metrics.hpp"

namespace pasyn {

// values[algorithm][task][case]. Within a task every algorithm holds the same
// cases; tasks may differ in their case count.
struct RankInput {
  std::vector<std::string> algorithms;
  std::vector<std::string> tasks;
  std::vector<std::vector<std::vector<double>>> values;
  bool lower_is_better = true;

  void validate() const;  // throws missing-cell or empty-report
  std::size_t cases(std::size_t task) const { return values[0][task].size(); }
};

// Ranks 1..n of `scores` (best first), ties sharing their mean rank.
std::vector<double> fractional_ranks(const std::vector<double>& scores, bool lower_is_better);

struct Consensus {
  std::vector<std::vector<double>> task_ranks;  // [task][algorithm]
  std::vector<double> mean_rank;                // per algorithm
  std::vector<double> rank;                     // fractional rank of mean_rank
};

// Per task: mean over cases, then rank; consensus ranks the mean task rank.
Consensus rank_then_aggregate(const RankInput& input);

struct RankingReport {
  std::string metric;
  int tissue_class = kOverallClass;
  std::vector<std::string> algorithms;
  std::vector<std::string> tasks;
  Consensus consensus;
  int n_boot = 0;
  std::uint64_t seed = 0;
  // freq[i][j]: fraction of bootstrap samples in which algorithm i held rank
  // j + 1. A tie over k positions spreads 1/k to each of them.
  std::vector<std::vector<double>> freq;
  std::vector<double> median_rank;
  std::vector<double> ci_low;   // 2.5th percentile
  std::vector<double> ci_high;  // 97.5th percentile

  nlohmann::json to_json() const;
};

// Each replicate resamples the cases of every task with replacement and
// recomputes the consensus. Percentiles use linear interpolation.
RankingReport bootstrap_ranking(const RankInput& input, int n_boot, std::uint64_t seed);

// Builds the table for one metric and class: tasks are wavelengths, cases are
// the case indices. A case without records for any algorithm is skipped for
// that task (class absent); one missing for some algorithms throws missing-cell.
RankInput rank_input_from_records(const std::vector<MetricRecord>& records, Metric metric, int tissue_class);

// Blob plot: circle area proportional to freq, a cross at the median rank and
// a vertical line over the 95% interval. Throws empty-report without writing.
void render_blob_svg(const RankingReport& report, const std::filesystem::path& path);

}  // namespace pasyn
