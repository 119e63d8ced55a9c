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

#ifndef EMBFUSE_REPORT_HPP_
#define EMBFUSE_REPORT_HPP_

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "embfuse/optim.hpp"

namespace embfuse {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (x, y)
};

struct ChartAxes {
  std::string title;
  std::string subtitle;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
};

/// Standalone SVG line chart: one polyline per series plus a legend.
/// Non-finite points are left out of the drawn line. Output depends only on
/// the arguments. Throws kEmptySeries when there is no series or a series
/// has fewer than two points, kInvalidArgument for non-positive x on a log
/// axis.
std::string emit_svg_linechart(std::span<const Series> series, const ChartAxes& axes);

enum class LossMetric { kTrain, kTest };

/// Pair names in order of first appearance.
std::vector<std::string> history_pairs(std::span<const TrainingHistory> histories);

/// Loss against epoch, one series per optimizer run of `pair`.
std::vector<Series> loss_series(std::span<const TrainingHistory> histories, std::string_view pair,
                                LossMetric metric = LossMetric::kTrain);

/// Chart for one pair of a sweep. Runs with fewer than two epochs are
/// listed in the subtitle instead of drawn.
std::string sweep_chart(std::span<const TrainingHistory> histories, std::string_view pair,
                        LossMetric metric = LossMetric::kTrain);

/// Final loss against learning rate on a log axis.
std::string lr_chart(std::span<const LrSearchRow> table, std::string_view title);

/// File-name friendly form of a pair name.
std::string slugify(std::string_view name);

}  // namespace embfuse

#endif  // EMBFUSE_REPORT_HPP_
