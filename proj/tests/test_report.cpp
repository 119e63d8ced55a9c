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

#include <doctest.h>

#include <cmath>
#include <functional>
#include <string>

#include "embfuse/error.hpp"
#include "embfuse/report.hpp"

using namespace embfuse;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::kInvalidArgument;
}

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

TrainingHistory history(std::string pair, OptimizerKind kind, std::vector<double> losses) {
  TrainingHistory h;
  h.key = {std::move(pair), kind, 0.01, 7};
  for (std::size_t i = 0; i < losses.size(); ++i) {
    EpochRecord e;
    e.epoch = i + 1;
    e.train_loss = losses[i];
    e.test_loss = losses[i] + 0.1;
    h.epochs.push_back(e);
  }
  return h;
}

}  // namespace

TEST_CASE("one polyline per series") {
  const std::vector<Series> series{{"sgd", {{1, 1.1}, {2, 0.9}, {3, 0.7}}},
                                   {"adam", {{1, 1.0}, {2, 1.2}, {3, 0.95}}}};
  ChartAxes axes{"Loss", "", "epoch", "loss", false};
  const auto svg = emit_svg_linechart(series, axes);
  CHECK(svg.rfind("<svg ", 0) == 0);
  CHECK(svg.ends_with("</svg>\n"));
  CHECK(count(svg, "<polyline") == 2);
  CHECK(count(svg, ",") >= 6);
  CHECK(svg.find(">sgd</text>") != std::string::npos);
  CHECK(svg.find(">adam</text>") != std::string::npos);
  CHECK(emit_svg_linechart(series, axes) == svg);
}

TEST_CASE("labels are escaped") {
  const std::vector<Series> series{{"a<b & \"c\"", {{1, 1}, {2, 2}}}};
  const auto svg = emit_svg_linechart(series, ChartAxes{"x & y", "", "", "", false});
  CHECK(svg.find("a&lt;b &amp; &quot;c&quot;") != std::string::npos);
  CHECK(svg.find("x &amp; y") != std::string::npos);
}

TEST_CASE("non-finite points are left out of the line") {
  const std::vector<Series> series{{"s", {{1, 1.0}, {2, std::nan("")}, {3, 0.5}}}};
  const auto svg = emit_svg_linechart(series, ChartAxes{});
  const auto start = svg.find("points=\"");
  REQUIRE(start != std::string::npos);
  const auto points = svg.substr(start + 8, svg.find('"', start + 8) - start - 8);
  CHECK(count(points, ",") == 2);
  CHECK(svg.find("nan") == std::string::npos);
}

TEST_CASE("chart errors") {
  CHECK(code_of([] { emit_svg_linechart({}, ChartAxes{}); }) == ErrorCode::kEmptySeries);
  const std::vector<Series> short_series{{"s", {{1, 1.0}}}};
  CHECK(code_of([&] { emit_svg_linechart(short_series, ChartAxes{}); }) ==
        ErrorCode::kEmptySeries);
  const std::vector<Series> zero_x{{"s", {{0.0, 1.0}, {1.0, 2.0}}}};
  ChartAxes log_axes;
  log_axes.log_x = true;
  CHECK(code_of([&] { emit_svg_linechart(zero_x, log_axes); }) == ErrorCode::kInvalidArgument);
  CHECK_NOTHROW(emit_svg_linechart(zero_x, ChartAxes{}));
}

TEST_CASE("learning rate chart uses decade ticks") {
  const std::vector<LrSearchRow> table{{1e-6, 1.1, false}, {1e-4, 1.0, false}, {1e-2, 0.6, false}};
  const auto svg = lr_chart(table, "adam");
  CHECK(count(svg, "<polyline") == 1);
  CHECK(svg.find(">1e-6</text>") != std::string::npos);
  CHECK(svg.find(">1e-2</text>") != std::string::npos);
}

TEST_CASE("sweep chart draws one line per optimizer of the pair") {
  const std::vector<TrainingHistory> runs{
      history("glove+wiki", OptimizerKind::kSgd, {1.1, 1.0, 0.9}),
      history("glove+news", OptimizerKind::kSgd, {1.1, 1.05, 1.0}),
      history("glove+wiki", OptimizerKind::kAdam, {1.1, 1.3, 1.2}),
      history("glove+wiki", OptimizerKind::kAdagrad, {1.1})};
  CHECK(history_pairs(runs) == std::vector<std::string>{"glove+wiki", "glove+news"});

  const auto series = loss_series(runs, "glove+wiki", LossMetric::kTest);
  REQUIRE(series.size() == 3);
  CHECK(series[0].name == "sgd");
  CHECK(series[0].points[2] == std::pair<double, double>{3.0, 0.9 + 0.1});

  const auto svg = sweep_chart(runs, "glove+wiki");
  CHECK(count(svg, "<polyline") == 2);
  CHECK(svg.find("not drawn (under two epochs): adagrad") != std::string::npos);
  CHECK(count(sweep_chart(runs, "glove+news"), "<polyline") == 1);
}

TEST_CASE("diverged runs stay in the chart") {
  auto run = history("p", OptimizerKind::kAdam, {1.1, 2.0, std::nan("")});
  run.diverged = true;
  const std::vector<TrainingHistory> runs{run};
  const auto svg = sweep_chart(runs, "p");
  CHECK(count(svg, "<polyline") == 1);
  CHECK(svg.find("adam (diverged)") != std::string::npos);
}

TEST_CASE("slugs") {
  CHECK(slugify("glove+wiki-news") == "glove_wiki-news");
  CHECK(slugify("a b/c") == "a_b_c");
  CHECK(slugify("") == "pair");
}
