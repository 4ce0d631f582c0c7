// Copyright 2026 The cwhawq Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cwhawq/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "cwhawq/error.hpp"
#include "cwhawq/pipeline.hpp"

namespace cwhawq {

namespace {

constexpr double kWidth = 640, kHeight = 400, kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string exact(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class Svg {
 public:
  explicit Svg(const std::string& title) {
    os_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kWidth) << "\" height=\"" << num(kHeight)
        << "\" viewBox=\"0 0 " << num(kWidth) << ' ' << num(kHeight) << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    text(kWidth / 2, 24, title, "middle", 15);
  }
  void line(double x1, double y1, double x2, double y2, const std::string& stroke = "black") {
    os_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
        << "\" stroke=\"" << stroke << "\"/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill) {
    os_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\"" << num(h)
        << "\" fill=\"" << fill << "\"/>\n";
  }
  void text(double x, double y, const std::string& s, const char* anchor = "middle", int size = 11) {
    os_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-family=\"sans-serif\" font-size=\"" << size
        << "\" text-anchor=\"" << anchor << "\">" << s << "</text>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts) {
    os_ << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) os_ << (i ? " " : "") << num(pts[i].first) << ',' << num(pts[i].second);
    os_ << "\"/>\n";
  }
  void axes(const std::string& xlabel, const std::string& ylabel) {
    line(kLeft, kHeight - kBottom, kWidth - kRight, kHeight - kBottom);
    line(kLeft, kTop, kLeft, kHeight - kBottom);
    text((kLeft + kWidth - kRight) / 2, kHeight - 12, xlabel);
    os_ << "<text x=\"16\" y=\"" << num((kTop + kHeight - kBottom) / 2)
        << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
        << num((kTop + kHeight - kBottom) / 2) << ")\">" << ylabel << "</text>\n";
  }
  std::string finish() {
    os_ << "</svg>\n";
    return os_.str();
  }

 private:
  std::ostringstream os_;
};

double px(double t) { return kLeft + t * (kWidth - kLeft - kRight); }
double py(double t) { return kHeight - kBottom - t * (kHeight - kTop - kBottom); }

}  // namespace

Figure sorted_trace_figure(const TraceReport& report, const std::string& name) {
  const SortedChannelList sorted = sort_channels(report);
  std::ostringstream csv;
  csv << "rank,layer,channel,average_trace,elements\n";
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const auto& e = sorted.entries[i];
    csv << i << ',' << e.layer << ',' << e.channel << ',' << exact(e.average) << ',' << e.elements << '\n';
    if (e.average > 0) {
      lo = std::min(lo, e.average);
      hi = std::max(hi, e.average);
    }
  }
  Svg svg("Sorted average Hessian trace (" + to_string(report.target) + ")");
  svg.axes("channel rank", "average trace (log10)");
  if (std::isfinite(lo)) {
    const double l0 = std::floor(std::log10(lo)), l1 = std::max(l0 + 1, std::ceil(std::log10(hi)));
    for (double d = l0; d <= l1; d += 1) {
      const double y = py((d - l0) / (l1 - l0));
      svg.line(kLeft - 4, y, kLeft, y);
      svg.text(kLeft - 6, y + 4, "1e" + num(d), "end");
    }
    std::vector<std::pair<double, double>> pts;
    const double n = static_cast<double>(std::max<std::size_t>(1, sorted.size() - 1));
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      // Non-positive traces sit on the floor of the log axis.
      const double v = std::max(sorted.entries[i].average, std::pow(10.0, l0));
      pts.emplace_back(px(static_cast<double>(i) / n), py((std::log10(v) - l0) / (l1 - l0)));
    }
    svg.polyline(pts);
  }
  svg.text(kWidth - kRight, kTop - 4, std::to_string(sorted.size()) + " channels", "end");
  return {name, svg.finish(), csv.str()};
}

Figure layer_qbn_figure(const QuantPolicy& policy, const std::string& name) {
  const auto avg = policy.layer_average_bits();
  std::ostringstream csv;
  csv << "layer,avg_bits\n";
  for (const auto& [l, b] : avg) csv << l << ',' << exact(b) << '\n';
  Svg svg("Average QBN per layer (" + to_string(policy.target) + ")");
  svg.axes("layer", "average bits");
  for (int b = 0; b <= 8; b += 2) {
    const double y = py(b / 8.0);
    svg.line(kLeft - 4, y, kLeft, y);
    svg.text(kLeft - 6, y + 4, std::to_string(b), "end");
  }
  const double slot = (kWidth - kLeft - kRight) / static_cast<double>(std::max<std::size_t>(1, avg.size()));
  std::size_t i = 0;
  for (const auto& [l, b] : avg) {
    const double x = kLeft + slot * (static_cast<double>(i) + 0.15);
    svg.rect(x, py(b / 8.0), slot * 0.7, py(0) - py(b / 8.0), "steelblue");
    svg.text(x + slot * 0.35, py(0) + 14, std::to_string(l));
    svg.text(x + slot * 0.35, py(b / 8.0) - 4, num(b));
    ++i;
  }
  return {name, svg.finish(), csv.str()};
}

Figure landscape_figure(const std::string& csv, const std::string& name) {
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  require(line == "x,y,loss", "landscape CSV has an unexpected header", ErrorCode::kDataFormat);
  std::vector<double> xs, ys, ls;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    double x = 0, y = 0, l = 0;
    require(std::sscanf(line.c_str(), "%lf,%lf,%lf", &x, &y, &l) == 3, "bad landscape CSV row: " + line,
            ErrorCode::kDataFormat);
    xs.push_back(x);
    ys.push_back(y);
    ls.push_back(l);
  }
  const auto n = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(ls.size()))));
  require(n > 0 && n * n == ls.size(), "landscape CSV is not a square grid", ErrorCode::kDataFormat);
  const double lo = *std::min_element(ls.begin(), ls.end()), hi = *std::max_element(ls.begin(), ls.end());
  Svg svg("Loss landscape (" + name + ")");
  svg.axes("direction 1", "direction 2");
  const double cw = (kWidth - kLeft - kRight) / static_cast<double>(n), ch = (kHeight - kTop - kBottom) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double t = hi > lo ? (ls[i * n + j] - lo) / (hi - lo) : 0.0;
      const int r = static_cast<int>(std::lround(255 * t)), b = 255 - r;
      char fill[16];
      std::snprintf(fill, sizeof fill, "#%02x40%02x", r, b);
      svg.rect(kLeft + cw * static_cast<double>(i), kTop + ch * static_cast<double>(n - 1 - j), cw, ch, fill);
    }
  svg.text(kWidth - kRight, kTop - 4, "loss " + num(lo) + " .. " + num(hi), "end");
  return {name, svg.finish(), csv};
}

std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& run_dir) {
  const std::vector<std::string> needed = {"traces_weights.json", "traces_activations.json", "policy_weights.json",
                                           "policy_activations.json"};
  std::string missing;
  for (const auto& f : needed)
    if (!std::filesystem::exists(run_dir / f)) missing += " " + f;
  if (!missing.empty()) fail(ErrorCode::kDataFormat, "missing run artifacts in " + run_dir.string() + ":" + missing);

  std::vector<Figure> figs;
  for (const std::string t : {"weights", "activations"}) {
    figs.push_back(sorted_trace_figure(trace_report_from_json(read_text(run_dir / ("traces_" + t + ".json"))),
                                       "sorted_trace_" + t));
    figs.push_back(layer_qbn_figure(policy_from_json(read_text(run_dir / ("policy_" + t + ".json"))), "qbn_" + t));
  }
  for (const std::string sel : {"min", "max"}) {
    const auto p = run_dir / ("landscape_" + sel + ".csv");
    if (std::filesystem::exists(p)) figs.push_back(landscape_figure(read_text(p), "landscape_" + sel));
  }
  std::vector<std::filesystem::path> out;
  for (const auto& f : figs) {
    const auto svg = run_dir / "plots" / (f.name + ".svg");
    const auto csv = run_dir / "plots" / (f.name + ".csv");
    write_text(svg, f.svg);
    write_text(csv, f.csv);
    out.push_back(svg);
    out.push_back(csv);
  }
  return out;
}

}  // namespace cwhawq
