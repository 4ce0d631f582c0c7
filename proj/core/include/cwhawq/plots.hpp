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

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cwhawq/bit_alloc.hpp"
#include "cwhawq/hessian_trace.hpp"

namespace cwhawq {

struct Figure {
  std::string name;  ///< file stem
  std::string svg;
  std::string csv;
};

/// Channels in sorted order; ordinate on a log scale.
Figure sorted_trace_figure(const TraceReport& report, const std::string& name);
/// Element-weighted average bits per layer.
Figure layer_qbn_figure(const QuantPolicy& policy, const std::string& name);
/// Heatmap of a landscape CSV (x,y,loss rows).
Figure landscape_figure(const std::string& csv, const std::string& name);

/// Reads the run artifacts in `run_dir` and writes SVG + CSV pairs into
/// run_dir/plots. Returns the written file names.
std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& run_dir);

}  // namespace cwhawq
