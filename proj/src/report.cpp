/* Copyright 2026 The embfuse Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "embfuse/report.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "embfuse/error.hpp"

namespace embfuse {
namespace {

constexpr double kWidth = 760;
constexpr double kHeight = 460;
constexpr double kLeft = 80;
constexpr double kRight = 190;
constexpr double kTop = 60;
constexpr double kBottom = 60;

constexpr std::string_view kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                         "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string escape(std::string_view s) {
  std::string out;
  for (const char c : s) {
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
  const double nice = f < 1.5 ? 1.0 : f < 3.0 ? 2.0 : f < 7.0 ? 5.0 : 10.0;
  return nice * mag;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  bool valid() const { return lo <= hi; }
  void widen() {
    if (!valid()) {
      lo = 0.0;
      hi = 1.0;
    } else if (lo == hi) {
      const double pad = lo == 0.0 ? 1.0 : 0.5 * std::abs(lo);
      lo -= pad;
      hi += pad;
    }
  }
};

std::string fmt_tick(double v) {
  if (v == 0.0) return "0";
  const double a = std::abs(v);
  if (a >= 1e4 || a < 1e-3) return fmt::format("{:.0e}", v);
  return fmt::format("{:g}", v);
}

}  // namespace

std::string emit_svg_linechart(std::span<const Series> series, const ChartAxes& axes) {
  if (series.empty()) throw Error(ErrorCode::kEmptySeries, "chart needs at least one series");
  Range xr;
  Range yr;
  for (const auto& s : series) {
    if (s.points.size() < 2) {
      throw Error(ErrorCode::kEmptySeries,
                  fmt::format("series '{}' has {} point(s), need at least 2", s.name,
                              s.points.size()));
    }
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      if (axes.log_x && x <= 0.0) {
        throw Error(ErrorCode::kInvalidArgument,
                    fmt::format("series '{}': x={} cannot go on a log axis", s.name, x));
      }
      xr.add(axes.log_x ? std::log10(x) : x);
      yr.add(y);
    }
  }
  xr.widen();
  yr.widen();

  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  const auto px = [&](double x) {
    const double v = axes.log_x ? std::log10(x) : x;
    return kLeft + (v - xr.lo) / (xr.hi - xr.lo) * pw;
  };
  const auto py = [&](double y) { return kTop + (yr.hi - y) / (yr.hi - yr.lo) * ph; };

  std::string svg;
  auto out = std::back_inserter(svg);
  fmt::format_to(out,
                 "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" "
                 "viewBox=\"0 0 {0} {1}\" font-family=\"sans-serif\" font-size=\"12\">\n",
                 kWidth, kHeight);
  fmt::format_to(out, "<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", kWidth, kHeight);
  fmt::format_to(out, "<text x=\"{:.2f}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
                 kLeft + pw / 2, escape(axes.title));
  if (!axes.subtitle.empty()) {
    fmt::format_to(out, "<text x=\"{:.2f}\" y=\"42\" text-anchor=\"middle\" fill=\"#555\">{}</text>\n",
                   kLeft + pw / 2, escape(axes.subtitle));
  }

  // Grid and ticks.
  fmt::format_to(out, "<g stroke=\"#ddd\" stroke-width=\"1\">\n");
  std::string labels;
  auto lab = std::back_inserter(labels);
  const double ystep = nice_step(yr.hi - yr.lo);
  for (double t = std::ceil(yr.lo / ystep) * ystep; t <= yr.hi + 1e-9 * ystep; t += ystep) {
    const double y = py(t);
    fmt::format_to(out, "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\"/>\n", kLeft,
                   y, kLeft + pw, y);
    fmt::format_to(lab, "<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\">{}</text>\n",
                   kLeft - 6, y + 4, fmt_tick(std::abs(t) < 1e-12 * ystep ? 0.0 : t));
  }
  if (axes.log_x) {
    for (double e = std::ceil(xr.lo - 1e-9); e <= xr.hi + 1e-9; e += 1.0) {
      const double x = kLeft + (e - xr.lo) / (xr.hi - xr.lo) * pw;
      fmt::format_to(out, "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\"/>\n", x,
                     kTop, x, kTop + ph);
      fmt::format_to(lab, "<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">1e{}</text>\n", x,
                     kTop + ph + 18, static_cast<long>(e));
    }
  } else {
    const double xstep = nice_step(xr.hi - xr.lo);
    for (double t = std::ceil(xr.lo / xstep) * xstep; t <= xr.hi + 1e-9 * xstep; t += xstep) {
      const double x = px(t);
      fmt::format_to(out, "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\"/>\n", x,
                     kTop, x, kTop + ph);
      fmt::format_to(lab, "<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n", x,
                     kTop + ph + 18, fmt_tick(std::abs(t) < 1e-12 * xstep ? 0.0 : t));
    }
  }
  svg += "</g>\n";
  svg += labels;
  fmt::format_to(out,
                 "<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"none\" "
                 "stroke=\"#333\"/>\n",
                 kLeft, kTop, pw, ph);
  fmt::format_to(out, "<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n",
                 kLeft + pw / 2, kHeight - 16, escape(axes.x_label));
  fmt::format_to(out,
                 "<text x=\"18\" y=\"{:.2f}\" text-anchor=\"middle\" "
                 "transform=\"rotate(-90 18 {:.2f})\">{}</text>\n",
                 kTop + ph / 2, kTop + ph / 2, escape(axes.y_label));

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto color = kPalette[i % std::size(kPalette)];
    std::string pts;
    for (const auto& [x, y] : series[i].points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      if (!pts.empty()) pts += ' ';
      fmt::format_to(std::back_inserter(pts), "{:.2f},{:.2f}", px(x), py(y));
    }
    fmt::format_to(out,
                   "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n",
                   color, pts);
  }

  svg += "<g class=\"legend\">\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto color = kPalette[i % std::size(kPalette)];
    const double y = kTop + 10 + 20 * static_cast<double>(i);
    const double x = kLeft + pw + 16;
    fmt::format_to(out, "<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"18\" height=\"4\" fill=\"{}\"/>\n",
                   x, y - 2, color);
    fmt::format_to(out, "<text x=\"{:.2f}\" y=\"{:.2f}\">{}</text>\n", x + 24, y + 4,
                   escape(series[i].name));
  }
  svg += "</g>\n</svg>\n";
  return svg;
}

std::vector<std::string> history_pairs(std::span<const TrainingHistory> histories) {
  std::vector<std::string> names;
  for (const auto& h : histories) {
    if (std::find(names.begin(), names.end(), h.key.pair) == names.end()) {
      names.push_back(h.key.pair);
    }
  }
  return names;
}

std::vector<Series> loss_series(std::span<const TrainingHistory> histories, std::string_view pair,
                                LossMetric metric) {
  std::vector<Series> out;
  for (const auto& h : histories) {
    if (h.key.pair != pair) continue;
    Series s;
    s.name = std::string(optimizer_kind_name(h.key.optimizer));
    if (h.diverged) s.name += " (diverged)";
    for (const auto& e : h.epochs) {
      s.points.emplace_back(static_cast<double>(e.epoch),
                            metric == LossMetric::kTrain ? e.train_loss : e.test_loss);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string sweep_chart(std::span<const TrainingHistory> histories, std::string_view pair,
                        LossMetric metric) {
  std::vector<Series> drawn;
  std::vector<std::string> skipped;
  for (auto& s : loss_series(histories, pair, metric)) {
    if (s.points.size() < 2) {
      skipped.push_back(s.name);
    } else {
      drawn.push_back(std::move(s));
    }
  }
  ChartAxes axes;
  axes.title = fmt::format("Optimizers on {}", pair);
  if (!skipped.empty()) {
    axes.subtitle = "not drawn (under two epochs): ";
    for (std::size_t i = 0; i < skipped.size(); ++i) {
      axes.subtitle += (i ? ", " : "") + skipped[i];
    }
  }
  axes.x_label = "epoch";
  axes.y_label = metric == LossMetric::kTrain ? "train loss" : "test loss";
  return emit_svg_linechart(drawn, axes);
}

std::string lr_chart(std::span<const LrSearchRow> table, std::string_view title) {
  Series s{"final train loss", {}};
  for (const auto& row : table) s.points.emplace_back(row.learning_rate, row.final_loss);
  ChartAxes axes;
  axes.title = std::string(title);
  axes.x_label = "learning rate";
  axes.y_label = "loss after last epoch";
  axes.log_x = true;
  return emit_svg_linechart(std::span(&s, 1), axes);
}

std::string slugify(std::string_view name) {
  std::string out;
  for (const char c : name) {
    const auto u = static_cast<unsigned char>(c);
    if ((u >= 'a' && u <= 'z') || (u >= 'A' && u <= 'Z') || (u >= '0' && u <= '9') || c == '-' ||
        c == '_' || c == '.') {
      out += c;
    } else {
      out += '_';
    }
  }
  return out.empty() ? "pair" : out;
}

}  // namespace embfuse
