#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ebt/experiment/config.hpp"

namespace ebt {

inline constexpr std::string_view kRecordHeader =
    "run_id,seed,target,pretrain,l2_distance,hellinger,n,variant,mse_vs_oracle,excess_risk,wall_seconds";

/// One evaluated (variant, N, seed, pretrain prior) cell.
struct RunRecord {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string target;
  std::string pretrain;               ///< empty for variants without a pretrained model
  std::optional<double> l2_distance;  ///< mixture pretrain vs mixture target only
  std::optional<double> hellinger;
  std::size_t n = 0;
  Variant variant = Variant::oracle;
  double mse_vs_oracle = 0.0;
  double excess_risk = 0.0;
  double wall_seconds = 0.0;
};

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

/// Quotes a CSV field when it holds ',', '"' or a line break.
std::string csv_field(const std::string& field);

/// CSV row without the trailing newline; fields holding ',', '"' or a line
/// break are quoted.
std::string format_record(const RunRecord& record);
void write_records(std::ostream& out, const std::vector<RunRecord>& records);

/// Parses a records CSV (header required). Throws FormatError with the line
/// number on malformed input.
std::vector<RunRecord> read_records(std::istream& in);

}  // namespace ebt
