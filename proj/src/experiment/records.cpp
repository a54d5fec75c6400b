#include "ebt/experiment/records.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>

#include "ebt/errors.hpp"

namespace ebt {

namespace {


std::vector<std::string> split_row(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"' && fields.back().empty()) {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  if (quoted) throw FormatError("records line " + std::to_string(line_no) + ": unterminated quote");
  return fields;
}

double parse_double(const std::string& s, const char* column, std::size_t line_no) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw FormatError("records line " + std::to_string(line_no) + ": bad " + column + " '" + s + "'");
  }
  return v;
}

std::uint64_t parse_uint(const std::string& s, const char* column, std::size_t line_no) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw FormatError("records line " + std::to_string(line_no) + ": bad " + column + " '" + s + "'");
  }
  return v;
}

}  // namespace

std::string csv_field(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string format_record(const RunRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  std::string out;
  out += csv_field(r.run_id) + ',';
  out += std::to_string(r.seed) + ',';
  out += csv_field(r.target) + ',';
  out += csv_field(r.pretrain) + ',';
  out += opt(r.l2_distance) + ',';
  out += opt(r.hellinger) + ',';
  out += std::to_string(r.n) + ',';
  out += std::string(variant_name(r.variant)) + ',';
  out += format_double(r.mse_vs_oracle) + ',';
  out += format_double(r.excess_risk) + ',';
  out += format_double(r.wall_seconds);
  return out;
}

void write_records(std::ostream& out, const std::vector<RunRecord>& records) {
  out << kRecordHeader << '\n';
  for (const auto& r : records) out << format_record(r) << '\n';
}

std::vector<RunRecord> read_records(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw FormatError("records: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kRecordHeader) throw FormatError("records: unexpected header '" + line + "'");
  std::vector<RunRecord> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t first_line = line_no;
    // A quoted field may span lines; an odd quote count means it is still open.
    std::string next;
    while (std::count(line.begin(), line.end(), '"') % 2 == 1 && std::getline(in, next)) {
      ++line_no;
      if (!next.empty() && next.back() == '\r') next.pop_back();
      line += '\n' + next;
    }
    const auto f = split_row(line, first_line);
    if (f.size() != 11) {
      throw FormatError("records line " + std::to_string(line_no) + ": expected 11 fields, got " +
                        std::to_string(f.size()));
    }
    RunRecord r;
    r.run_id = f[0];
    r.seed = parse_uint(f[1], "seed", line_no);
    r.target = f[2];
    r.pretrain = f[3];
    if (!f[4].empty()) r.l2_distance = parse_double(f[4], "l2_distance", line_no);
    if (!f[5].empty()) r.hellinger = parse_double(f[5], "hellinger", line_no);
    r.n = parse_uint(f[6], "n", line_no);
    try {
      r.variant = parse_variant(f[7]);
    } catch (const ConfigError& e) {
      throw FormatError("records line " + std::to_string(line_no) + ": " + e.what());
    }
    r.mse_vs_oracle = parse_double(f[8], "mse_vs_oracle", line_no);
    r.excess_risk = parse_double(f[9], "excess_risk", line_no);
    r.wall_seconds = parse_double(f[10], "wall_seconds", line_no);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace ebt
