#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "madn/image.hpp"

// Evaluation metrics: ROI intensity spread, ground-truth fidelity, void
// signal recovery, and paired significance testing.

namespace madn {

// Population standard deviation of img values inside roi (>= 2 pixels).
double sigma_ct(const TensorF& img, const ByteImage& roi);

// Peak signal-to-noise ratio in dB with dynamic range 2.0. Pixels where
// `exclude` is set are left out; identical inputs yield +infinity.
double psnr(const TensorF& a, const TensorF& b, const ByteImage* exclude = nullptr);

// Mean structural similarity, 11-pixel Gaussian window (sigma 1.5), valid
// windows only, dynamic range 2.0. Windows touching an excluded pixel are
// skipped; excluding everything is an error.
double ssim(const TensorF& a, const TensorF& b, const ByteImage* exclude = nullptr);

// Dice overlap of two boolean masks.
double dice(const ByteImage& a, const ByteImage& b);

// Classify each void pixel of corrected_mr to the nearest tissue intensity
// and report per-class Dice against the ground-truth labels, restricted to
// void_mask. Classes absent from both prediction and truth are omitted.
std::map<int, double> void_label_dice(const TensorF& corrected_mr, const ByteImage& labels,
                                      const ByteImage& void_mask, const std::vector<double>& tissue_intensity_mr);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    int df = 0;
    bool degenerate = false;  // zero-variance differences
};

// Classical two-tailed paired t-test on per-sample score pairs.
TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b);

// A correction method to evaluate: a trained checkpoint, or the uncorrected
// baseline when the checkpoint path is empty.
struct EvalMethod {
    std::string name;
    std::filesystem::path checkpoint;
};

struct EvaluationReport {
    std::vector<std::string> methods;
    std::vector<std::string> metrics;  // column order of the CSV
    // method -> metric -> one value per test sample (NaN = not applicable).
    std::map<std::string, std::map<std::string, std::vector<double>>> values;
    // Paired t-tests of every other method against the reference method.
    std::string reference;  // empty when no reference method was present
    std::map<std::string, std::map<std::string, TTestResult>> vs_reference;
    std::filesystem::path csv_path, summary_path;
};

// Runs every method over the paired test split of dataset_dir, computes the
// full metric table (CT metrics exclude the implant pixels), tests each
// method against the "madn" method when present, and writes report.csv plus
// summary.json into out_dir.
EvaluationReport evaluate(const std::vector<EvalMethod>& methods,
                          const std::filesystem::path& dataset_dir,
                          const std::filesystem::path& out_dir);

// Reads a report previously written by evaluate back from its directory
// (report.csv for the value table, summary.json for reference and t-tests).
EvaluationReport load_report(const std::filesystem::path& report_dir);

}  // namespace madn
