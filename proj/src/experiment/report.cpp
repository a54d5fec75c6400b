#include "ebt/experiment/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "ebt/errors.hpp"

namespace ebt {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const Variant kVariantOrder[] = {Variant::oracle, Variant::pretrained, Variant::finetuned, Variant::scratch,
                                 Variant::plugin};

const char* variant_color(Variant v) {
  switch (v) {
    case Variant::oracle: return "#444444";
    case Variant::pretrained: return "#1f77b4";
    case Variant::finetuned: return "#d62728";
    case Variant::scratch: return "#2ca02c";
    case Variant::plugin: return "#9467bd";
  }
  return "#000000";
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

double nice_step(double range) {
  const double raw = range / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double f = raw / mag;
  return (f < 1.5 ? 1.0 : f < 3.0 ? 2.0 : f < 7.0 ? 5.0 : 10.0) * mag;
}

struct Point {
  double x, mean, lo, hi;
};

struct Series {
  Variant variant;
  std::vector<Point> points;
  bool reference = false;  ///< horizontal line at points[0].mean
};

struct Panel {
  std::string title, xlabel;
  std::vector<Series> series;
};

Point aggregate(double x, const std::vector<double>& ys) {
  return {x, mean(ys), *std::min_element(ys.begin(), ys.end()), *std::max_element(ys.begin(), ys.end())};
}

constexpr double kPanelW = 560, kPanelH = 380, kLeft = 72, kRight = 20, kTop = 40, kBottom = 52;

void draw_panel(std::ostringstream& svg, const Panel& p, double ox, double oy) {
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : p.series) {
    for (const auto& pt : s.points) {
      if (!s.reference) {
        xmin = std::min(xmin, pt.x);
        xmax = std::max(xmax, pt.x);
      }
      ymin = std::min(ymin, pt.lo);
      ymax = std::max(ymax, pt.hi);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0.0, xmax = 1.0;
  if (xmax - xmin < 1e-12) xmin -= 0.5, xmax += 0.5;
  if (ymax - ymin < 1e-12) ymin -= 0.5, ymax += 0.5;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;
  const double xpad = 0.03 * (xmax - xmin);
  xmin -= xpad;
  xmax += xpad;

  const double pw = kPanelW - kLeft - kRight, ph = kPanelH - kTop - kBottom;
  auto X = [&](double x) { return ox + kLeft + (x - xmin) / (xmax - xmin) * pw; };
  auto Y = [&](double y) { return oy + kTop + (ymax - y) / (ymax - ymin) * ph; };

  svg << "<text x=\"" << fmt("%.2f", ox + kPanelW / 2) << "\" y=\"" << fmt("%.2f", oy + 22)
      << "\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(p.title) << "</text>\n";
  svg << "<rect x=\"" << fmt("%.2f", ox + kLeft) << "\" y=\"" << fmt("%.2f", oy + kTop) << "\" width=\""
      << fmt("%.2f", pw) << "\" height=\"" << fmt("%.2f", ph) << "\" fill=\"none\" stroke=\"#000\"/>\n";

  const double xs = nice_step(xmax - xmin), ys = nice_step(ymax - ymin);
  for (double t = std::ceil(xmin / xs) * xs; t <= xmax + 1e-9 * xs; t += xs) {
    const double tx = X(t);
    svg << "<line x1=\"" << fmt("%.2f", tx) << "\" y1=\"" << fmt("%.2f", oy + kTop + ph) << "\" x2=\""
        << fmt("%.2f", tx) << "\" y2=\"" << fmt("%.2f", oy + kTop + ph + 5) << "\" stroke=\"#000\"/>\n";
    svg << "<text x=\"" << fmt("%.2f", tx) << "\" y=\"" << fmt("%.2f", oy + kTop + ph + 19)
        << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt("%.4g", std::abs(t) < 1e-12 * xs ? 0.0 : t)
        << "</text>\n";
  }
  for (double t = std::ceil(ymin / ys) * ys; t <= ymax + 1e-9 * ys; t += ys) {
    const double ty = Y(t);
    svg << "<line x1=\"" << fmt("%.2f", ox + kLeft - 5) << "\" y1=\"" << fmt("%.2f", ty) << "\" x2=\""
        << fmt("%.2f", ox + kLeft + pw) << "\" y2=\"" << fmt("%.2f", ty) << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << fmt("%.2f", ox + kLeft - 8) << "\" y=\"" << fmt("%.2f", ty + 4)
        << "\" text-anchor=\"end\" font-size=\"11\">" << fmt("%.4g", std::abs(t) < 1e-12 * ys ? 0.0 : t)
        << "</text>\n";
  }
  svg << "<text x=\"" << fmt("%.2f", ox + kLeft + pw / 2) << "\" y=\"" << fmt("%.2f", oy + kPanelH - 10)
      << "\" text-anchor=\"middle\" font-size=\"12\">" << xml_escape(p.xlabel) << "</text>\n";
  svg << "<text transform=\"translate(" << fmt("%.2f", ox + 16) << "," << fmt("%.2f", oy + kTop + ph / 2)
      << ") rotate(-90)\" text-anchor=\"middle\" font-size=\"12\">excess risk</text>\n";

  for (const auto& s : p.series) {
    const char* color = variant_color(s.variant);
    if (s.reference) {
      svg << "<line class=\"series-" << variant_name(s.variant) << "\" x1=\"" << fmt("%.2f", ox + kLeft) << "\" y1=\""
          << fmt("%.2f", Y(s.points[0].mean)) << "\" x2=\"" << fmt("%.2f", ox + kLeft + pw) << "\" y2=\""
          << fmt("%.2f", Y(s.points[0].mean)) << "\" stroke=\"" << color << "\" stroke-dasharray=\"6,4\"/>\n";
      continue;
    }
    svg << "<g class=\"series-" << variant_name(s.variant) << "\" stroke=\"" << color << "\" fill=\"" << color
        << "\">\n";
    if (s.points.size() > 1) {
      svg << "<polyline fill=\"none\" points=\"";
      for (std::size_t i = 0; i < s.points.size(); ++i) {
        svg << (i ? " " : "") << fmt("%.2f", X(s.points[i].x)) << "," << fmt("%.2f", Y(s.points[i].mean));
      }
      svg << "\"/>\n";
    }
    for (const auto& pt : s.points) {
      const double px = X(pt.x);
      if (pt.hi > pt.lo) {
        svg << "<line x1=\"" << fmt("%.2f", px) << "\" y1=\"" << fmt("%.2f", Y(pt.lo)) << "\" x2=\"" << fmt("%.2f", px)
            << "\" y2=\"" << fmt("%.2f", Y(pt.hi)) << "\"/>\n";
      }
      svg << "<circle cx=\"" << fmt("%.2f", px) << "\" cy=\"" << fmt("%.2f", Y(pt.mean)) << "\" r=\"3\"/>\n";
    }
    svg << "</g>\n";
  }
}

std::vector<Panel> distance_panels(const std::vector<RunRecord>& records) {
  bool all_l2 = true;
  for (const auto& r : records)
    if (!r.pretrain.empty() && !r.l2_distance) all_l2 = false;
  std::map<std::pair<std::string, std::size_t>, Panel> panels;
  // (target, n) -> variant -> pretrain -> (xs, ys)
  std::map<std::pair<std::string, std::size_t>,
           std::map<Variant, std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>>>
      groups;
  for (const auto& r : records) {
    const auto key = std::make_pair(r.target, r.n);
    auto& cell = groups[key][r.variant][r.pretrain];
    const std::optional<double> x = all_l2 ? r.l2_distance : r.hellinger;
    cell.first.push_back(x.value_or(0.0));
    cell.second.push_back(r.excess_risk);
  }
  std::vector<Panel> out;
  for (const auto& [key, by_variant] : groups) {
    Panel p;
    p.title = key.first + ", N = " + std::to_string(key.second);
    p.xlabel = all_l2 ? "l2 distance of component means" : "Hellinger distance";
    for (Variant v : kVariantOrder) {
      auto it = by_variant.find(v);
      if (it == by_variant.end()) continue;
      Series s{v, {}, false};
      const bool has_pretrain = !(it->second.size() == 1 && it->second.count(""));
      if (!has_pretrain) {
        const auto& ys = it->second.at("").second;
        s.points.push_back(aggregate(0.0, ys));
        s.reference = true;
      } else {
        for (const auto& [label, xy] : it->second) s.points.push_back(aggregate(mean(xy.first), xy.second));
        std::sort(s.points.begin(), s.points.end(), [](const Point& a, const Point& b) { return a.x < b.x; });
      }
      p.series.push_back(std::move(s));
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Panel> n_panels(const std::vector<RunRecord>& records) {
  // target -> pretrain labels with rows
  std::map<std::string, std::set<std::string>> pretrains;
  for (const auto& r : records)
    if (!r.pretrain.empty()) pretrains[r.target].insert(r.pretrain);
  std::set<std::string> targets;
  for (const auto& r : records) targets.insert(r.target);
  std::vector<Panel> out;
  for (const auto& target : targets) {
    std::vector<std::string> labels(pretrains[target].begin(), pretrains[target].end());
    if (labels.empty()) labels.push_back("");
    for (const auto& label : labels) {
      Panel p;
      p.title = label.empty() ? target : target + " | pretrain " + label;
      p.xlabel = "N";
      for (Variant v : kVariantOrder) {
        std::map<std::size_t, std::vector<double>> by_n;
        for (const auto& r : records) {
          if (r.target != target || r.variant != v) continue;
          if (!r.pretrain.empty() && r.pretrain != label) continue;
          by_n[r.n].push_back(r.excess_risk);
        }
        if (by_n.empty()) continue;
        Series s{v, {}, false};
        for (const auto& [n, ys] : by_n) s.points.push_back(aggregate(double(n), ys));
        p.series.push_back(std::move(s));
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace

double mean(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

double standard_error(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / double(v.size() - 1) / double(v.size()));
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ContractError("spearman: length mismatch");
  if (x.size() < 2) return kNaN;
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = mean(rx), my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return kNaN;
  return sxy / std::sqrt(sxx * syy);
}

std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records) {
  std::map<std::tuple<std::string, std::string, std::size_t, int>, std::pair<std::vector<double>, std::vector<double>>>
      groups;
  for (const auto& r : records) {
    auto& g = groups[{r.target, r.pretrain, r.n, static_cast<int>(r.variant)}];
    g.first.push_back(r.excess_risk);
    g.second.push_back(r.mse_vs_oracle);
  }
  std::vector<SummaryRow> out;
  for (const auto& [key, v] : groups) {
    SummaryRow row;
    row.target = std::get<0>(key);
    row.pretrain = std::get<1>(key);
    row.n = std::get<2>(key);
    row.variant = static_cast<Variant>(std::get<3>(key));
    row.count = v.first.size();
    row.excess_mean = mean(v.first);
    row.excess_se = standard_error(v.first);
    row.excess_min = *std::min_element(v.first.begin(), v.first.end());
    row.excess_max = *std::max_element(v.first.begin(), v.first.end());
    row.mse_mean = mean(v.second);
    row.mse_se = standard_error(v.second);
    out.push_back(row);
  }
  return out;
}

DistanceTrends distance_trends(const std::vector<RunRecord>& records, const std::string& target, std::size_t n) {
  struct Acc {
    std::vector<double> l2, hel, pre, fine;
  };
  std::map<std::string, Acc> by_prior;
  std::vector<double> scratch;
  for (const auto& r : records) {
    if (r.target != target || r.n != n) continue;
    if (r.variant == Variant::scratch) scratch.push_back(r.excess_risk);
    if (r.pretrain.empty()) continue;
    Acc& a = by_prior[r.pretrain];
    if (r.variant == Variant::pretrained) {
      a.pre.push_back(r.excess_risk);
      if (r.l2_distance) a.l2.push_back(*r.l2_distance);
      if (r.hellinger) a.hel.push_back(*r.hellinger);
    } else if (r.variant == Variant::finetuned) {
      a.fine.push_back(r.excess_risk);
    }
  }
  DistanceTrends t;
  std::vector<double> l2, hel, pre, fine, pre_l2, pre_hel;
  for (const auto& [label, a] : by_prior) {
    if (!a.pre.empty()) {
      pre.push_back(mean(a.pre));
      if (a.l2.size() == a.pre.size()) {
        l2.push_back(mean(a.l2));
        pre_l2.push_back(pre.back());
      }
      if (a.hel.size() == a.pre.size()) {
        hel.push_back(mean(a.hel));
        pre_hel.push_back(pre.back());
      }
    }
    if (!a.fine.empty()) fine.push_back(mean(a.fine));
  }
  t.priors = by_prior.size();
  t.spearman_l2 = l2.size() >= 2 ? spearman(l2, pre_l2) : kNaN;
  t.spearman_hellinger = hel.size() >= 2 ? spearman(hel, pre_hel) : kNaN;
  auto spread = [](const std::vector<double>& v) {
    return v.empty() ? kNaN : *std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end());
  };
  t.pretrained_spread = spread(pre);
  t.finetuned_spread = spread(fine);
  t.pretrained_mean = mean(pre);
  t.finetuned_mean = mean(fine);
  t.scratch_mean = mean(scratch);
  return t;
}

PlotKind infer_plot_kind(const std::vector<RunRecord>& records) {
  std::set<std::size_t> ns;
  for (const auto& r : records) ns.insert(r.n);
  return ns.size() > 1 ? PlotKind::n : PlotKind::distance;
}

std::string render_svg(const std::vector<RunRecord>& records, PlotKind kind) {
  if (records.empty()) throw NoDataError("no data");
  const std::vector<Panel> panels = kind == PlotKind::distance ? distance_panels(records) : n_panels(records);
  const std::size_t cols = std::min<std::size_t>(2, panels.size());
  const std::size_t rows = (panels.size() + cols - 1) / cols;
  const double legend_h = 34;
  const double width = kPanelW * double(cols), height = legend_h + kPanelH * double(rows);

  std::set<Variant> present;
  for (const auto& r : records) present.insert(r.variant);

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt("%.0f", width) << "\" height=\""
      << fmt("%.0f", height) << "\" viewBox=\"0 0 " << fmt("%.0f", width) << " " << fmt("%.0f", height)
      << "\" font-family=\"sans-serif\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n";
  svg << "<g class=\"legend\">\n";
  double lx = 16;
  for (Variant v : kVariantOrder) {
    if (!present.count(v)) continue;
    svg << "<line x1=\"" << fmt("%.2f", lx) << "\" y1=\"17\" x2=\"" << fmt("%.2f", lx + 24) << "\" y2=\"17\" stroke=\""
        << variant_color(v) << "\" stroke-width=\"2\"/>\n";
    svg << "<text class=\"legend-item\" x=\"" << fmt("%.2f", lx + 30) << "\" y=\"21\" font-size=\"12\">"
        << variant_name(v) << "</text>\n";
    lx += 104;
  }
  svg << "</g>\n";
  for (std::size_t i = 0; i < panels.size(); ++i) {
    draw_panel(svg, panels[i], kPanelW * double(i % cols), legend_h + kPanelH * double(i / cols));
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  out << "target,pretrain,n,variant,count,excess_mean,excess_se,excess_min,excess_max,mse_mean,mse_se\n";
  for (const auto& r : rows) {
    out << csv_field(r.target) << ',' << csv_field(r.pretrain) << ',' << r.n << ',' << variant_name(r.variant) << ',' << r.count << ','
        << format_double(r.excess_mean) << ',' << format_double(r.excess_se) << ',' << format_double(r.excess_min)
        << ',' << format_double(r.excess_max) << ',' << format_double(r.mse_mean) << ',' << format_double(r.mse_se)
        << '\n';
  }
  return out.str();
}

std::string summary_markdown(const std::vector<RunRecord>& records, const std::vector<SummaryRow>& rows) {
  std::ostringstream md;
  md << "| target | pretrain | N | variant | seeds | excess risk (mean ± se) | mse vs oracle (mean ± se) |\n";
  md << "|---|---|---:|---|---:|---:|---:|\n";
  for (const auto& r : rows) {
    md << "| " << r.target << " | " << (r.pretrain.empty() ? "-" : r.pretrain) << " | " << r.n << " | "
       << variant_name(r.variant) << " | " << r.count << " | " << fmt("%.4g", r.excess_mean) << " ± "
       << fmt("%.2g", r.excess_se) << " | " << fmt("%.4g", r.mse_mean) << " ± " << fmt("%.2g", r.mse_se) << " |\n";
  }
  std::set<std::pair<std::string, std::size_t>> groups;
  for (const auto& r : records)
    if (r.variant == Variant::pretrained) groups.insert({r.target, r.n});
  bool header = false;
  for (const auto& [target, n] : groups) {
    const DistanceTrends t = distance_trends(records, target, n);
    if (t.priors < 2) continue;
    if (!header) {
      md << "\n| target | N | priors | spearman(l2, pretrained) | spearman(hellinger, pretrained) | pretrained "
            "spread | finetuned spread | pretrained mean | finetuned mean | scratch mean |\n";
      md << "|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n";
      header = true;
    }
    md << "| " << target << " | " << n << " | " << t.priors << " | " << fmt("%.3f", t.spearman_l2) << " | "
       << fmt("%.3f", t.spearman_hellinger) << " | " << fmt("%.4g", t.pretrained_spread) << " | "
       << fmt("%.4g", t.finetuned_spread) << " | " << fmt("%.4g", t.pretrained_mean) << " | "
       << fmt("%.4g", t.finetuned_mean) << " | " << fmt("%.4g", t.scratch_mean) << " |\n";
  }
  return md.str();
}

std::vector<std::filesystem::path> write_report(const std::vector<RunRecord>& records,
                                                const std::filesystem::path& out_dir) {
  if (records.empty()) throw NoDataError("no data: the records table has no rows");
  std::filesystem::create_directories(out_dir);
  const PlotKind kind = infer_plot_kind(records);
  const auto rows = summarize(records);
  std::vector<std::filesystem::path> written;
  auto put = [&](const std::string& name, const std::string& text) {
    const auto path = out_dir / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    written.push_back(path);
  };
  put(std::string("report_") + (kind == PlotKind::distance ? "distance" : "n") + ".svg", render_svg(records, kind));
  put("summary.csv", summary_csv(rows));
  put("summary.md", summary_markdown(records, rows));
  return written;
}

}  // namespace ebt
