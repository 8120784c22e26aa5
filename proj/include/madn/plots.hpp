#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "madn/eval.hpp"

// Raster figure rendering: side-by-side method-comparison panels over test
// samples and per-ROI CT-noise bar charts annotated with significance stars.
// All figures are written as PNG files; nothing is displayed interactively.

namespace madn {

// Methods whose paired t-test against the report's reference method is
// significant (p < 0.05 and non-degenerate) on this metric. Empty when the
// report has no reference; order follows report.methods.
std::vector<std::string> starred_methods(const EvaluationReport& report,
                                         const std::string& metric);

// One bar chart per sigma_ct_roi_* metric in the report: per-method mean
// with a ±1 std whisker, the reference bar shaded darker, and a star above
// every significant method. Returns the written files.
std::vector<std::filesystem::path> plot_sigma_bars(const EvaluationReport& report,
                                                   const std::filesystem::path& out_dir);

// One panel per requested test sample index: CT row on top, MR row below;
// ground truth first, then each method's corrected output (methods without
// a checkpoint show the uncorrected input). Returns the written files.
std::vector<std::filesystem::path> plot_method_panels(const std::vector<EvalMethod>& methods,
                                                      const std::filesystem::path& dataset_dir,
                                                      const std::vector<int>& sample_indices,
                                                      const std::filesystem::path& out_dir);

}  // namespace madn
