#include "madn/eval.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "madn/phantom.hpp"
#include "madn/training.hpp"

namespace madn {

namespace {

void check_same_2d(const TensorF& a, const TensorF& b, const char* op) {
    MADN_CHECK(a.shape() == b.shape(), op, ": shape mismatch ", a.shape().str(), " vs ", b.shape().str());
    MADN_CHECK(a.shape().n == 1 && a.shape().c == 1, op, ": expected a (1,1,H,W) grid, got ", a.shape().str());
}

}  // namespace

double sigma_ct(const TensorF& img, const ByteImage& roi) {
    const Shape s = img.shape();
    MADN_CHECK(s.n == 1 && s.c == 1 && s.h == roi.h && s.w == roi.w, "sigma_ct: image ", s.str(),
               " does not match ROI ", roi.h, "x", roi.w);
    const int64_t n = roi.count_nonzero();
    MADN_CHECK(n >= 2, "sigma_ct: ROI has ", n, " pixels, need at least 2");
    double mean = 0.0;
    for (int y = 0; y < roi.h; ++y)
        for (int x = 0; x < roi.w; ++x)
            if (roi.at(y, x)) mean += img.at(0, 0, y, x);
    mean /= double(n);
    double var = 0.0;
    for (int y = 0; y < roi.h; ++y)
        for (int x = 0; x < roi.w; ++x)
            if (roi.at(y, x)) {
                const double d = img.at(0, 0, y, x) - mean;
                var += d * d;
            }
    return std::sqrt(var / double(n));
}

double psnr(const TensorF& a, const TensorF& b, const ByteImage* exclude) {
    MADN_CHECK(a.shape() == b.shape(), "psnr: shape mismatch ", a.shape().str(), " vs ", b.shape().str());
    const Shape s = a.shape();
    if (exclude)
        MADN_CHECK(exclude->h == s.h && exclude->w == s.w, "psnr: exclusion mask ", exclude->h, "x",
                   exclude->w, " does not match image ", s.str());
    double mse = 0.0;
    int64_t n = 0;
    for (int nn = 0; nn < s.n; ++nn)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < s.w; ++x) {
                    if (exclude && exclude->at(y, x)) continue;
                    const double d = double(a.at(nn, c, y, x)) - double(b.at(nn, c, y, x));
                    mse += d * d;
                    ++n;
                }
    MADN_CHECK(n > 0, "psnr: exclusion mask covers the whole image");
    mse /= double(n);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(4.0 / mse);
}

double ssim(const TensorF& a, const TensorF& b, const ByteImage* exclude) {
    check_same_2d(a, b, "ssim");
    const int h = a.shape().h, w = a.shape().w;
    constexpr int kWin = 11, kR = 5;
    constexpr double kSigma = 1.5;
    MADN_CHECK(h >= kWin && w >= kWin, "ssim: image ", h, "x", w, " smaller than the 11-pixel window");
    if (exclude)
        MADN_CHECK(exclude->h == h && exclude->w == w, "ssim: exclusion mask is ", exclude->h, "x",
                   exclude->w, ", image is ", h, "x", w);
    double k[kWin];
    double z = 0.0;
    for (int t = -kR; t <= kR; ++t) {
        k[t + kR] = std::exp(-double(t) * t / (2.0 * kSigma * kSigma));
        z += k[t + kR];
    }
    for (double& v : k) v /= z;
    constexpr double c1 = (0.01 * 2.0) * (0.01 * 2.0);
    constexpr double c2 = (0.03 * 2.0) * (0.03 * 2.0);
    double acc = 0.0;
    int64_t count = 0;
    for (int y = 0; y + kWin <= h; ++y)
        for (int x = 0; x + kWin <= w; ++x) {
            if (exclude) {
                bool touched = false;
                for (int dy = 0; dy < kWin && !touched; ++dy)
                    for (int dx = 0; dx < kWin && !touched; ++dx)
                        touched = exclude->at(y + dy, x + dx) != 0;
                if (touched) continue;
            }
            double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
            for (int dy = 0; dy < kWin; ++dy)
                for (int dx = 0; dx < kWin; ++dx) {
                    const double wgt = k[dy] * k[dx];
                    const double va = a.at(0, 0, y + dy, x + dx);
                    const double vb = b.at(0, 0, y + dy, x + dx);
                    ma += wgt * va;
                    mb += wgt * vb;
                    saa += wgt * va * va;
                    sbb += wgt * vb * vb;
                    sab += wgt * va * vb;
                }
            const double var_a = saa - ma * ma;
            const double var_b = sbb - mb * mb;
            const double cov = sab - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            ++count;
        }
    MADN_CHECK(count > 0, "ssim: exclusion mask leaves no usable windows");
    return acc / double(count);
}

double dice(const ByteImage& a, const ByteImage& b) {
    MADN_CHECK(a.h == b.h && a.w == b.w, "dice: mask size mismatch");
    int64_t inter = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.v.size(); ++i) {
        const bool pa = a.v[i] != 0, pb = b.v[i] != 0;
        inter += (pa && pb);
        na += pa;
        nb += pb;
    }
    MADN_CHECK(na + nb > 0, "dice: both masks empty");
    return 2.0 * double(inter) / double(na + nb);
}

std::map<int, double> void_label_dice(const TensorF& corrected_mr, const ByteImage& labels,
                                      const ByteImage& void_mask,
                                      const std::vector<double>& tissue_intensity_mr) {
    check_same_2d(corrected_mr, corrected_mr, "void_label_dice");
    const Shape s = corrected_mr.shape();
    MADN_CHECK(labels.h == s.h && labels.w == s.w && void_mask.h == s.h && void_mask.w == s.w,
               "void_label_dice: grid size mismatch");
    MADN_CHECK(!void_mask.empty_mask(), "void_label_dice: empty void mask");
    MADN_CHECK(!tissue_intensity_mr.empty(), "void_label_dice: no tissue intensities");
    const int n_classes = int(tissue_intensity_mr.size());
    std::vector<int64_t> inter(n_classes, 0), npred(n_classes, 0), ntrue(n_classes, 0);
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
            if (!void_mask.at(y, x)) continue;
            const double v = corrected_mr.at(0, 0, y, x);
            int best = 0;
            double best_d = std::abs(v - tissue_intensity_mr[0]);
            for (int c = 1; c < n_classes; ++c) {
                const double d = std::abs(v - tissue_intensity_mr[c]);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            const int gt = labels.at(y, x);
            MADN_CHECK(gt < n_classes, "void_label_dice: label ", gt, " has no entry in the ",
                       n_classes, "-class intensity table");
            ++npred[best];
            ++ntrue[gt];
            if (gt == best) ++inter[best];
        }
    std::map<int, double> out;
    for (int c = 0; c < n_classes; ++c)
        if (npred[c] + ntrue[c] > 0) out[c] = 2.0 * double(inter[c]) / double(npred[c] + ntrue[c]);
    return out;
}

TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
    MADN_CHECK(a.size() == b.size(), "paired_ttest: length mismatch ", a.size(), " vs ", b.size());
    const int n = int(a.size());
    MADN_CHECK(n >= 3, "paired_ttest: need at least 3 pairs, got ", n);
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = (a[i] - b[i]) - mean;
        var += d * d;
    }
    var /= double(n - 1);
    TTestResult r;
    r.df = n - 1;
    if (var == 0.0) {
        r.degenerate = true;
        r.t = std::numeric_limits<double>::quiet_NaN();
        r.p = std::numeric_limits<double>::quiet_NaN();
        return r;
    }
    r.t = mean * std::sqrt(double(n)) / std::sqrt(var);
    const boost::math::students_t dist(double(r.df));
    r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
    return r;
}

namespace {

namespace fs = std::filesystem;

struct TestSample {
    MultimodalSlice clean, corrupted;
    ByteImage metal, labels, void_mask;
    std::vector<ByteImage> rois;
};

TestSample load_test_sample(const fs::path& dataset_dir, int index, double void_factor) {
    char name[64];
    std::snprintf(name, sizeof(name), "sample_%05d", index);
    const fs::path base = dataset_dir / "test" / name;

    TestSample ts;
    ts.clean = read_slice(fs::path(base).concat("_clean"));
    ts.corrupted = read_slice(fs::path(base).concat("_corrupted"));
    ts.metal = read_byte_image(fs::path(base).concat("_metal"));
    ts.labels = read_byte_image(fs::path(base).concat("_labels"));
    for (int j = 0;; ++j) {
        const fs::path roi = fs::path(base).concat("_roi_" + std::to_string(j));
        if (!fs::exists(fs::path(roi).concat(".raw"))) break;
        ts.rois.push_back(read_byte_image(roi));
    }
    MADN_CHECK(!ts.rois.empty(), "evaluate: test sample ", index, " has no ROI masks");

    ts.void_mask = mr_void_region(ts.metal, void_factor);
    for (size_t i = 0; i < ts.void_mask.v.size(); ++i)
        if (ts.metal.v[i]) ts.void_mask.v[i] = 0;  // the implant itself is not artefact
    MADN_CHECK(!ts.void_mask.empty_mask(), "evaluate: sample ", index, " has an empty MR void region");
    return ts;
}

double void_mean_abs_error(const TensorF& mr, const TensorF& gt_mr, const ByteImage& void_mask) {
    double acc = 0.0;
    int64_t cnt = 0;
    const Shape s = mr.shape();
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
            if (void_mask.at(y, x)) {
                acc += std::abs(double(mr.at(0, 0, y, x)) - double(gt_mr.at(0, 0, y, x)));
                ++cnt;
            }
    return acc / double(cnt);
}

bool all_finite_vec(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace

EvaluationReport evaluate(const std::vector<EvalMethod>& methods, const fs::path& dataset_dir,
                          const fs::path& out_dir) {
    MADN_CHECK(!methods.empty(), "evaluate: no methods given");
    for (size_t i = 0; i < methods.size(); ++i)
        for (size_t j = i + 1; j < methods.size(); ++j)
            MADN_CHECK(methods[i].name != methods[j].name, "evaluate: duplicate method name '",
                       methods[i].name, "'");

    const fs::path manifest_path = dataset_dir / "manifest.json";
    MADN_CHECK_IO(fs::exists(manifest_path), "evaluate: no dataset manifest at ",
                  manifest_path.string());
    const nlohmann::json manifest = read_json_file(manifest_path);
    const PhantomSpec spec = manifest.at("spec").get<PhantomSpec>();
    const int n_test = manifest.at("splits").at("test").at("count").get<int>();
    MADN_CHECK(n_test >= 1, "evaluate: dataset has no test samples");
    const std::vector<double> intensities = spec.intensities_mr();
    const int n_classes = int(intensities.size());

    std::map<std::string, ModelBundle> bundles;
    for (const auto& m : methods)
        if (!m.checkpoint.empty()) bundles.emplace(m.name, load_bundle(m.checkpoint));

    EvaluationReport report;
    for (const auto& m : methods) report.methods.push_back(m.name);
    const int n_rois = int(load_test_sample(dataset_dir, 0, spec.mr_void_radius_factor).rois.size());
    for (int j = 0; j < n_rois; ++j) report.metrics.push_back("sigma_ct_roi_" + std::to_string(j));
    for (const char* base : {"psnr_ct", "psnr_mr", "ssim_ct", "ssim_mr", "void_mae", "void_label_dice"})
        report.metrics.push_back(base);
    for (int k = 0; k < n_classes; ++k) report.metrics.push_back("void_label_dice_" + std::to_string(k));

    constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
    for (int idx = 0; idx < n_test; ++idx) {
        const TestSample ts = load_test_sample(dataset_dir, idx, spec.mr_void_radius_factor);
        MADN_CHECK(int(ts.rois.size()) == n_rois, "evaluate: sample ", idx, " has ", ts.rois.size(),
                   " ROIs, sample 0 has ", n_rois);
        const TensorF gt_ct = ts.clean.channel(0), gt_mr = ts.clean.channel(1);

        // Ground-truth class presence inside the void, for the Dice average.
        std::vector<int64_t> gt_in_void(n_classes, 0);
        for (size_t i = 0; i < ts.void_mask.v.size(); ++i)
            if (ts.void_mask.v[i]) {
                MADN_CHECK(ts.labels.v[i] < n_classes, "evaluate: label ", int(ts.labels.v[i]),
                           " outside the ", n_classes, "-class intensity table");
                ++gt_in_void[ts.labels.v[i]];
            }

        for (const auto& m : methods) {
            const MultimodalSlice corrected =
                m.checkpoint.empty() ? ts.corrupted : correct_pair(bundles.at(m.name), ts.corrupted);
            const TensorF ct = corrected.channel(0), mr = corrected.channel(1);

            auto& cols = report.values[m.name];
            for (int j = 0; j < n_rois; ++j)
                cols["sigma_ct_roi_" + std::to_string(j)].push_back(sigma_ct(ct, ts.rois[j]));
            cols["psnr_ct"].push_back(psnr(ct, gt_ct, &ts.metal));
            cols["psnr_mr"].push_back(psnr(mr, gt_mr));
            cols["ssim_ct"].push_back(ssim(ct, gt_ct, &ts.metal));
            cols["ssim_mr"].push_back(ssim(mr, gt_mr));
            cols["void_mae"].push_back(void_mean_abs_error(mr, gt_mr, ts.void_mask));

            const std::map<int, double> per_class =
                void_label_dice(mr, ts.labels, ts.void_mask, intensities);
            double dice_acc = 0.0;
            int dice_n = 0;
            for (int k = 0; k < n_classes; ++k) {
                if (gt_in_void[k] > 0) {
                    dice_acc += per_class.at(k);
                    ++dice_n;
                }
                const auto it = per_class.find(k);
                cols["void_label_dice_" + std::to_string(k)].push_back(
                    it == per_class.end() ? kNaN : it->second);
            }
            cols["void_label_dice"].push_back(dice_n > 0 ? dice_acc / dice_n : kNaN);
        }
    }

    // Paired tests of every method against the madn method, where present.
    for (const auto& m : methods)
        if (m.name == "madn") report.reference = m.name;
    if (!report.reference.empty()) {
        const auto& ref_cols = report.values.at(report.reference);
        for (const auto& m : methods) {
            if (m.name == report.reference) continue;
            for (const std::string& metric : report.metrics) {
                const std::vector<double>& a = report.values.at(m.name).at(metric);
                const std::vector<double>& b = ref_cols.at(metric);
                if (int(a.size()) < 3 || !all_finite_vec(a) || !all_finite_vec(b)) continue;
                report.vs_reference[m.name][metric] = paired_ttest(a, b);
            }
        }
    }

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    MADN_CHECK_IO(fs::is_directory(out_dir), "evaluate: cannot create ", out_dir.string());

    report.csv_path = out_dir / "report.csv";
    std::ofstream csv(report.csv_path, std::ios::trunc);
    MADN_CHECK_IO(csv.good(), "evaluate: cannot open ", report.csv_path.string());
    csv << "method,sample";
    for (const std::string& metric : report.metrics) csv << ',' << metric;
    csv << '\n';
    char cell[64];
    for (const auto& m : methods)
        for (int idx = 0; idx < n_test; ++idx) {
            csv << m.name << ',' << idx;
            for (const std::string& metric : report.metrics) {
                const double v = report.values.at(m.name).at(metric)[idx];
                if (std::isnan(v)) {
                    csv << ',';
                    continue;
                }
                std::snprintf(cell, sizeof(cell), ",%.8g", v);
                csv << cell;
            }
            csv << '\n';
        }
    csv.close();
    MADN_CHECK_IO(csv.good(), "evaluate: failed writing ", report.csv_path.string());

    nlohmann::json summary;
    summary["n_test"] = n_test;
    summary["reference"] = report.reference;
    for (const auto& m : methods) {
        nlohmann::json per_metric;
        for (const std::string& metric : report.metrics) {
            const std::vector<double>& v = report.values.at(m.name).at(metric);
            double acc = 0.0;
            int n = 0;
            for (double x : v)
                if (std::isfinite(x)) {
                    acc += x;
                    ++n;
                }
            if (n == 0) continue;
            const double mean = acc / n;
            double ss = 0.0;
            for (double x : v)
                if (std::isfinite(x)) ss += (x - mean) * (x - mean);
            per_metric[metric] = {{"mean", mean}, {"std", std::sqrt(ss / n)}, {"n", n}};
        }
        summary["methods"][m.name] = std::move(per_metric);
    }
    for (const auto& [method, tests] : report.vs_reference)
        for (const auto& [metric, tt] : tests)
            summary["ttests"][method][metric] = {{"t", tt.t},
                                                 {"p", tt.p},
                                                 {"df", tt.df},
                                                 {"degenerate", tt.degenerate}};
    report.summary_path = out_dir / "summary.json";
    write_json_file(report.summary_path, summary);
    return report;
}

EvaluationReport load_report(const fs::path& report_dir) {
    EvaluationReport report;
    report.csv_path = report_dir / "report.csv";
    report.summary_path = report_dir / "summary.json";
    std::ifstream csv(report.csv_path);
    MADN_CHECK_IO(csv.good(), "load_report: cannot open ", report.csv_path.string());

    const auto split = [](const std::string& line) {
        std::vector<std::string> out;
        std::size_t pos = 0;
        while (true) {
            const std::size_t c = line.find(',', pos);
            out.push_back(line.substr(pos, c == std::string::npos ? std::string::npos : c - pos));
            if (c == std::string::npos) return out;
            pos = c + 1;
        }
    };

    std::string line;
    MADN_CHECK_IO(bool(std::getline(csv, line)), "load_report: empty ", report.csv_path.string());
    const auto header = split(line);
    MADN_CHECK(header.size() >= 3 && header[0] == "method" && header[1] == "sample",
               "load_report: unexpected header in ", report.csv_path.string());
    report.metrics.assign(header.begin() + 2, header.end());

    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        const auto fields = split(line);
        MADN_CHECK(fields.size() == header.size(), "load_report: malformed row '", line, "'");
        if (!report.values.count(fields[0])) report.methods.push_back(fields[0]);
        auto& cols = report.values[fields[0]];
        for (std::size_t i = 0; i < report.metrics.size(); ++i)
            cols[report.metrics[i]].push_back(
                fields[i + 2].empty() ? std::numeric_limits<double>::quiet_NaN()
                                      : std::stod(fields[i + 2]));
    }
    MADN_CHECK(!report.methods.empty(), "load_report: no result rows in ",
               report.csv_path.string());

    const nlohmann::json summary = read_json_file(report.summary_path);
    report.reference = summary.value("reference", std::string());
    // JSON has no NaN literal; degenerate tests round-trip through null.
    const auto as_double = [](const nlohmann::json& v) {
        return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    };
    if (summary.contains("ttests"))
        for (const auto& [method, tests] : summary.at("ttests").items())
            for (const auto& [metric, tt] : tests.items()) {
                TTestResult r;
                r.t = as_double(tt.at("t"));
                r.p = as_double(tt.at("p"));
                r.df = tt.at("df").get<int>();
                r.degenerate = tt.at("degenerate").get<bool>();
                report.vs_reference[method][metric] = r;
            }
    return report;
}

}  // namespace madn
