#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ebt/experiment/records.hpp"

namespace ebt {

/// Thrown by the report when the records table has no rows.
class NoDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

double mean(const std::vector<double>& v);
/// Sample standard deviation over sqrt(n); 0 for fewer than two values.
double standard_error(const std::vector<double>& v);
/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct SummaryRow {
  std::string target, pretrain;
  std::size_t n = 0;
  Variant variant = Variant::oracle;
  std::size_t count = 0;
  double excess_mean = 0.0, excess_se = 0.0, excess_min = 0.0, excess_max = 0.0;
  double mse_mean = 0.0, mse_se = 0.0;
};

/// Seed-aggregated cells, sorted by target, pretrain, n, variant.
std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records);

/// Distance-sweep statistics for one (target, N) group, computed on
/// seed-averaged values per pretrain prior.
struct DistanceTrends {
  std::size_t priors = 0;
  double spearman_l2 = 0.0;         ///< NaN without l2 distances
  double spearman_hellinger = 0.0;  ///< NaN without Hellinger distances
  double pretrained_spread = 0.0;   ///< max - min of pretrained excess risk
  double finetuned_spread = 0.0;
  double pretrained_mean = 0.0;
  double finetuned_mean = 0.0;
  double scratch_mean = 0.0;  ///< NaN without scratch rows
};

DistanceTrends distance_trends(const std::vector<RunRecord>& records, const std::string& target, std::size_t n);

enum class PlotKind { distance, n };

/// distance when every record shares one N, else n.
PlotKind infer_plot_kind(const std::vector<RunRecord>& records);

/// Line chart: mean excess risk with min/max whiskers across seeds, one series
/// per variant present. Distance plots use the l2 distance when every
/// pretrained row has one, else the Hellinger distance; variants without a
/// pretrained model are drawn as horizontal reference lines. N plots get one
/// panel per (target, pretrain) pair.
std::string render_svg(const std::vector<RunRecord>& records, PlotKind kind);

std::string summary_csv(const std::vector<SummaryRow>& rows);
/// Markdown table plus trend statistics (rank correlation, spreads).
std::string summary_markdown(const std::vector<RunRecord>& records, const std::vector<SummaryRow>& rows);

/// Writes report_<kind>.svg, summary.csv and summary.md into out_dir; returns
/// the written paths. Throws NoDataError on an empty table.
std::vector<std::filesystem::path> write_report(const std::vector<RunRecord>& records,
                                                const std::filesystem::path& out_dir);

}  // namespace ebt
