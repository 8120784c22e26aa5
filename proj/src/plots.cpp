#include "madn/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "madn/model.hpp"
#include "madn/training.hpp"

namespace fs = std::filesystem;

namespace madn {

namespace {

const cv::Scalar kInk(30, 30, 30);
const cv::Scalar kPaper(255, 255, 255);

cv::Mat channel_to_u8(const TensorF& t, int channel) {
    const Shape s = t.shape();
    cv::Mat m(s.h, s.w, CV_8UC3);
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
            const double v = (double(t.at(0, channel, y, x)) + 1.0) * 0.5 * 255.0;
            const auto g = uchar(std::lround(std::clamp(v, 0.0, 255.0)));
            m.at<cv::Vec3b>(y, x) = {g, g, g};
        }
    return m;
}

void put_centered(cv::Mat& canvas, const std::string& text, int cx, int baseline_y,
                  double scale = 0.35) {
    int base = 0;
    const cv::Size sz = cv::getTextSize(text, cv::FONT_HERSHEY_SIMPLEX, scale, 1, &base);
    cv::putText(canvas, text, {cx - sz.width / 2, baseline_y}, cv::FONT_HERSHEY_SIMPLEX, scale,
                kInk, 1, cv::LINE_AA);
}

void write_png(const cv::Mat& canvas, const fs::path& file) {
    MADN_CHECK_IO(cv::imwrite(file.string(), canvas), "plots: cannot write ", file.string());
}

struct ColumnStats {
    double mean = 0.0;
    double std_dev = 0.0;
};

ColumnStats finite_stats(const std::vector<double>& v) {
    ColumnStats cs;
    int n = 0;
    for (double x : v)
        if (std::isfinite(x)) {
            cs.mean += x;
            ++n;
        }
    MADN_CHECK(n > 0, "plot_sigma_bars: a metric column has no finite values");
    cs.mean /= n;
    for (double x : v)
        if (std::isfinite(x)) cs.std_dev += (x - cs.mean) * (x - cs.mean);
    cs.std_dev = std::sqrt(cs.std_dev / n);
    return cs;
}

}  // namespace

std::vector<std::string> starred_methods(const EvaluationReport& report,
                                         const std::string& metric) {
    std::vector<std::string> starred;
    if (report.reference.empty()) return starred;
    for (const std::string& method : report.methods) {
        if (method == report.reference) continue;
        const auto tests = report.vs_reference.find(method);
        if (tests == report.vs_reference.end()) continue;
        const auto tt = tests->second.find(metric);
        if (tt == tests->second.end() || tt->second.degenerate) continue;
        if (tt->second.p < 0.05) starred.push_back(method);
    }
    return starred;
}

std::vector<fs::path> plot_sigma_bars(const EvaluationReport& report, const fs::path& out_dir) {
    MADN_CHECK(!report.methods.empty(), "plot_sigma_bars: empty report");
    std::vector<std::string> bar_metrics;
    for (const std::string& m : report.metrics)
        if (m.rfind("sigma_ct_roi_", 0) == 0) bar_metrics.push_back(m);
    MADN_CHECK(!bar_metrics.empty(), "plot_sigma_bars: report has no sigma_ct_roi_* metrics");
    fs::create_directories(out_dir);

    const int n = int(report.methods.size());
    constexpr int kBarW = 56, kGap = 34, kLeft = 70, kRight = 20, kTop = 44, kBottom = 56;
    const int plot_w = n * kBarW + (n + 1) * kGap;
    const int width = kLeft + plot_w + kRight, height = 360;
    const int floor_y = height - kBottom, ceil_y = kTop;

    std::vector<fs::path> written;
    for (const std::string& metric : bar_metrics) {
        std::vector<ColumnStats> stats;
        double y_max = 0.0;
        for (const std::string& method : report.methods) {
            stats.push_back(finite_stats(report.values.at(method).at(metric)));
            y_max = std::max(y_max, stats.back().mean + stats.back().std_dev);
        }
        if (y_max <= 0.0) y_max = 1.0;
        y_max *= 1.2;  // headroom for stars
        const auto to_y = [&](double v) {
            return int(std::lround(floor_y - (v / y_max) * (floor_y - ceil_y)));
        };

        cv::Mat canvas(height, width, CV_8UC3, kPaper);
        cv::line(canvas, {kLeft, floor_y}, {kLeft + plot_w, floor_y}, kInk, 1, cv::LINE_AA);
        cv::line(canvas, {kLeft, floor_y}, {kLeft, ceil_y}, kInk, 1, cv::LINE_AA);
        char label[32];
        for (int tick = 0; tick <= 4; ++tick) {
            const double v = y_max * tick / 4.0;
            const int y = to_y(v);
            cv::line(canvas, {kLeft - 4, y}, {kLeft, y}, kInk, 1, cv::LINE_AA);
            std::snprintf(label, sizeof(label), "%.3g", v);
            cv::putText(canvas, label, {6, y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.35, kInk, 1,
                        cv::LINE_AA);
        }

        const auto star = starred_methods(report, metric);
        for (int i = 0; i < n; ++i) {
            const std::string& method = report.methods[size_t(i)];
            const int x0 = kLeft + kGap + i * (kBarW + kGap);
            const int cx = x0 + kBarW / 2;
            const bool is_ref = method == report.reference;
            const cv::Scalar fill = is_ref ? cv::Scalar(150, 150, 150) : cv::Scalar(210, 210, 210);
            cv::rectangle(canvas, {x0, to_y(stats[size_t(i)].mean)}, {x0 + kBarW, floor_y}, fill,
                          cv::FILLED);
            cv::rectangle(canvas, {x0, to_y(stats[size_t(i)].mean)}, {x0 + kBarW, floor_y}, kInk, 1);
            const int lo = to_y(std::max(0.0, stats[size_t(i)].mean - stats[size_t(i)].std_dev));
            const int hi = to_y(stats[size_t(i)].mean + stats[size_t(i)].std_dev);
            cv::line(canvas, {cx, lo}, {cx, hi}, kInk, 1, cv::LINE_AA);
            cv::line(canvas, {cx - 6, hi}, {cx + 6, hi}, kInk, 1, cv::LINE_AA);
            cv::line(canvas, {cx - 6, lo}, {cx + 6, lo}, kInk, 1, cv::LINE_AA);
            if (std::count(star.begin(), star.end(), method))
                put_centered(canvas, "*", cx, hi - 8, 0.7);
            put_centered(canvas, method, cx, floor_y + 20);
        }
        put_centered(canvas, metric, width / 2, 24, 0.5);
        if (!report.reference.empty())
            put_centered(canvas, "* p < 0.05 vs " + report.reference, width / 2, height - 12);

        const fs::path file = out_dir / ("bars_" + metric + ".png");
        write_png(canvas, file);
        written.push_back(file);
    }
    return written;
}

std::vector<fs::path> plot_method_panels(const std::vector<EvalMethod>& methods,
                                         const fs::path& dataset_dir,
                                         const std::vector<int>& sample_indices,
                                         const fs::path& out_dir) {
    MADN_CHECK(!methods.empty(), "plot_method_panels: empty method list");
    MADN_CHECK(!sample_indices.empty(), "plot_method_panels: no samples requested");
    std::vector<std::optional<ModelBundle>> bundles;
    for (const EvalMethod& m : methods)
        bundles.push_back(m.checkpoint.empty() ? std::nullopt
                                               : std::optional<ModelBundle>(load_bundle(m.checkpoint)));
    fs::create_directories(out_dir);

    constexpr int kMargin = 8, kHeader = 18, kGutter = 30;
    std::vector<fs::path> written;
    char name[64];
    for (int idx : sample_indices) {
        MADN_CHECK(idx >= 0, "plot_method_panels: negative sample index ", idx);
        std::snprintf(name, sizeof(name), "sample_%05d", idx);
        const fs::path base = dataset_dir / "test" / name;
        const MultimodalSlice clean = read_slice(fs::path(base).concat("_clean"));
        const MultimodalSlice corrupted = read_slice(fs::path(base).concat("_corrupted"));

        std::vector<std::pair<std::string, TensorF>> columns;
        columns.emplace_back("ground truth", clean.data);
        for (std::size_t i = 0; i < methods.size(); ++i)
            columns.emplace_back(methods[i].name, bundles[i] ? correct_pair(*bundles[i], corrupted).data
                                                             : corrupted.data);

        const int tile_h = clean.height(), tile_w = clean.width();
        const int n_cols = int(columns.size());
        const int width = kGutter + n_cols * (tile_w + kMargin) + kMargin;
        const int height = kHeader + 2 * (tile_h + kMargin) + kMargin;
        cv::Mat canvas(height, width, CV_8UC3, kPaper);
        cv::putText(canvas, "CT", {4, kHeader + kMargin + tile_h / 2}, cv::FONT_HERSHEY_SIMPLEX,
                    0.35, kInk, 1, cv::LINE_AA);
        cv::putText(canvas, "MR", {4, kHeader + 2 * kMargin + tile_h + tile_h / 2},
                    cv::FONT_HERSHEY_SIMPLEX, 0.35, kInk, 1, cv::LINE_AA);
        for (int col = 0; col < n_cols; ++col) {
            const int x0 = kGutter + kMargin + col * (tile_w + kMargin);
            put_centered(canvas, columns[size_t(col)].first, x0 + tile_w / 2, kHeader - 4);
            for (int row = 0; row < 2; ++row) {
                const int y0 = kHeader + kMargin + row * (tile_h + kMargin);
                channel_to_u8(columns[size_t(col)].second, row)
                    .copyTo(canvas(cv::Rect(x0, y0, tile_w, tile_h)));
            }
        }

        std::snprintf(name, sizeof(name), "panel_sample_%03d.png", idx);
        const fs::path file = out_dir / name;
        write_png(canvas, file);
        written.push_back(file);
    }
    return written;
}

}  // namespace madn
