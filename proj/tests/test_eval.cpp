#include <gtest/gtest.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "madn/eval.hpp"
#include "madn/model.hpp"
#include "madn/phantom.hpp"
#include "madn/rng.hpp"

namespace fs = std::filesystem;

using madn::ByteImage;
using madn::Shape;
using madn::TensorF;

namespace {

TensorF image_of(std::initializer_list<float> vals, int h, int w) {
    TensorF t(Shape{1, 1, h, w});
    int64_t i = 0;
    for (float v : vals) t[i++] = v;
    return t;
}

TEST(SigmaCtTest, TwoPixelOracle) {
    const TensorF img = image_of({0.0f, 1.0f, 5.0f, 5.0f}, 2, 2);
    ByteImage roi(2, 2, 0);
    roi.at(0, 0) = 1;
    roi.at(0, 1) = 1;
    EXPECT_DOUBLE_EQ(madn::sigma_ct(img, roi), 0.5);  // population std of {0, 1}
}

TEST(SigmaCtTest, MatchesBruteForce) {
    madn::Rng rng(12);
    TensorF img(Shape{1, 1, 16, 16});
    ByteImage roi(16, 16, 0);
    for (int64_t i = 0; i < img.numel(); ++i) img[i] = float(rng.uniform(-1.0, 1.0));
    for (int y = 4; y < 12; ++y)
        for (int x = 2; x < 9; ++x) roi.at(y, x) = 1;
    double s = 0.0;
    int64_t n = 0;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            if (roi.at(y, x)) s += img.at(0, 0, y, x), ++n;
    const double mean = s / double(n);
    double var = 0.0;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            if (roi.at(y, x)) var += (img.at(0, 0, y, x) - mean) * (img.at(0, 0, y, x) - mean);
    EXPECT_NEAR(madn::sigma_ct(img, roi), std::sqrt(var / double(n)), 1e-10);
}

TEST(SigmaCtTest, RejectsTinyRoi) {
    const TensorF img(Shape{1, 1, 4, 4}, 0.0f);
    ByteImage roi(4, 4, 0);
    EXPECT_THROW(madn::sigma_ct(img, roi), madn::ValueError);
    roi.at(1, 1) = 1;
    EXPECT_THROW(madn::sigma_ct(img, roi), madn::ValueError);
    roi.at(2, 2) = 1;
    EXPECT_NO_THROW(madn::sigma_ct(img, roi));
    EXPECT_THROW(madn::sigma_ct(img, ByteImage(3, 3, 1)), madn::ValueError);  // geometry mismatch
}

TEST(PsnrTest, KnownMse) {
    TensorF a(Shape{1, 1, 8, 8}, 0.0f), b(Shape{1, 1, 8, 8}, 0.1f);
    // MSE = 0.01, range 2 -> 10*log10(4/0.01)
    EXPECT_NEAR(madn::psnr(a, b), 10.0 * std::log10(400.0), 1e-4);
}

TEST(PsnrTest, IdenticalIsInfinite) {
    const TensorF a(Shape{1, 1, 8, 8}, 0.25f);
    EXPECT_TRUE(std::isinf(madn::psnr(a, a)));
    EXPECT_GT(madn::psnr(a, a), 0.0);
}

TEST(PsnrTest, ExclusionMaskHonored) {
    TensorF a(Shape{1, 1, 8, 8}, 0.0f), b(Shape{1, 1, 8, 8}, 0.0f);
    b.at(0, 0, 3, 3) = 1.0f;  // single corrupted pixel
    ByteImage excl(8, 8, 0);
    excl.at(3, 3) = 1;
    EXPECT_TRUE(std::isinf(madn::psnr(a, b, &excl)));
    EXPECT_FALSE(std::isinf(madn::psnr(a, b)));
    // Excluding everything leaves no pixels to compare.
    const ByteImage all(8, 8, 1);
    EXPECT_THROW(madn::psnr(a, b, &all), madn::ValueError);
    EXPECT_THROW(madn::psnr(a, TensorF(Shape{1, 1, 4, 4}, 0.0f)), madn::ValueError);
}

TEST(SsimTest, SelfSimilarityIsExactlyOne) {
    madn::Rng rng(3);
    TensorF a(Shape{1, 1, 32, 32});
    for (int64_t i = 0; i < a.numel(); ++i) a[i] = float(rng.uniform(-1.0, 1.0));
    EXPECT_DOUBLE_EQ(madn::ssim(a, a), 1.0);
}

TEST(SsimTest, DegradationLowersScore) {
    madn::Rng rng(4);
    TensorF a(Shape{1, 1, 32, 32});
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) a.at(0, 0, y, x) = float(0.8 * std::sin(x * 0.4) * std::cos(y * 0.3));
    TensorF light = a.clone(), heavy = a.clone();
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double n = rng.normal();
        light[i] += float(0.05 * n);
        heavy[i] += float(0.4 * n);
    }
    const double s_light = madn::ssim(a, light), s_heavy = madn::ssim(a, heavy);
    EXPECT_LT(s_light, 1.0);
    EXPECT_LT(s_heavy, s_light);
    EXPECT_GT(s_light, 0.5);
}

TEST(SsimTest, RejectsSmallOrMismatched) {
    EXPECT_THROW(madn::ssim(TensorF(Shape{1, 1, 8, 8}, 0.0f), TensorF(Shape{1, 1, 8, 8}, 0.0f)),
                 madn::ValueError);
    EXPECT_THROW(madn::ssim(TensorF(Shape{1, 1, 16, 16}, 0.0f), TensorF(Shape{1, 1, 16, 32}, 0.0f)),
                 madn::ValueError);
}

TEST(DiceTest, Basics) {
    ByteImage a(4, 4, 0), b(4, 4, 0);
    for (int x = 0; x < 4; ++x) a.at(1, x) = 1;
    for (int x = 2; x < 4; ++x) b.at(1, x) = 1;
    // |a|=4, |b|=2, overlap 2 -> 2*2/(4+2)
    EXPECT_DOUBLE_EQ(madn::dice(a, b), 2.0 * 2.0 / 6.0);
    EXPECT_DOUBLE_EQ(madn::dice(b, a), madn::dice(a, b));
    EXPECT_DOUBLE_EQ(madn::dice(a, a), 1.0);
    EXPECT_THROW(madn::dice(ByteImage(4, 4, 0), ByteImage(4, 4, 0)), madn::ValueError);  // both empty
    EXPECT_DOUBLE_EQ(madn::dice(a, ByteImage(4, 4, 0)), 0.0);
    EXPECT_THROW(madn::dice(a, ByteImage(3, 3, 0)), madn::ValueError);
}

class VoidLabelDiceTest : public ::testing::Test {
   protected:
    const std::vector<double> intensities_{-1.0, 0.55, 0.15, -0.25};
    ByteImage labels_{8, 8, 0};
    ByteImage void_mask_{8, 8, 0};

    void SetUp() override {
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) labels_.at(y, x) = uint8_t((y / 2) % 4);
        for (int y = 2; y < 6; ++y)
            for (int x = 2; x < 6; ++x) void_mask_.at(y, x) = 1;
    }

    TensorF render(double noise_std, uint64_t seed) const {
        TensorF img(Shape{1, 1, 8, 8});
        madn::Rng rng(seed);
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                img.at(0, 0, y, x) = float(intensities_[labels_.at(y, x)] + noise_std * rng.normal());
        return img;
    }
};

TEST_F(VoidLabelDiceTest, PerfectRecoveryScoresOne) {
    const auto scores = madn::void_label_dice(render(0.0, 0), labels_, void_mask_, intensities_);
    ASSERT_FALSE(scores.empty());
    for (const auto& [cls, d] : scores) EXPECT_DOUBLE_EQ(d, 1.0) << "class " << cls;
}

TEST_F(VoidLabelDiceTest, FlatVoidScoresZeroOnTissues) {
    TensorF img = render(0.0, 0);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            if (void_mask_.at(y, x)) img.at(0, 0, y, x) = -1.0f;  // voided to background level
    const auto scores = madn::void_label_dice(img, labels_, void_mask_, intensities_);
    for (const auto& [cls, d] : scores)
        if (cls != 0) {
            EXPECT_DOUBLE_EQ(d, 0.0) << "class " << cls;
        }
}

TEST_F(VoidLabelDiceTest, MatchesBruteForceUnderNoise) {
    const TensorF img = render(0.05, 7);
    const auto scores = madn::void_label_dice(img, labels_, void_mask_, intensities_);

    // Direct recomputation: nearest intensity wins, ties to the lower class.
    ByteImage pred(8, 8, 0);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            double best = 1e300;
            int arg = 0;
            for (size_t k = 0; k < intensities_.size(); ++k) {
                const double d = std::abs(double(img.at(0, 0, y, x)) - intensities_[k]);
                if (d < best) best = d, arg = int(k);
            }
            pred.at(y, x) = uint8_t(arg);
        }
    for (const auto& [cls, d] : scores) {
        int64_t np = 0, nt = 0, both = 0;
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                if (!void_mask_.at(y, x)) continue;
                const bool p = pred.at(y, x) == cls, t = labels_.at(y, x) == cls;
                np += p;
                nt += t;
                both += p && t;
            }
        ASSERT_GT(np + nt, 0);
        EXPECT_DOUBLE_EQ(d, 2.0 * double(both) / double(np + nt)) << "class " << cls;
    }
}

TEST_F(VoidLabelDiceTest, ErrorCases) {
    EXPECT_THROW(madn::void_label_dice(render(0.0, 0), labels_, ByteImage(8, 8, 0), intensities_),
                 madn::ValueError);  // empty void
    EXPECT_THROW(madn::void_label_dice(render(0.0, 0), labels_, void_mask_, {}), madn::ValueError);
    EXPECT_THROW(madn::void_label_dice(render(0.0, 0), labels_, void_mask_, {-1.0}),
                 madn::ValueError);  // label 1..3 out of table range
}

TEST(PairedTTestTest, HandWorkedExample) {
    // diffs {1,2,3}: mean 2, sample sd 1, t = 2*sqrt(3)
    const auto r = madn::paired_ttest({2.0, 4.0, 6.0}, {1.0, 2.0, 3.0});
    EXPECT_FALSE(r.degenerate);
    EXPECT_EQ(r.df, 2);
    EXPECT_NEAR(r.t, 2.0 * std::sqrt(3.0), 1e-12);
    EXPECT_NEAR(r.p, 0.074180, 1e-5);
}

TEST(PairedTTestTest, NegationFlipsTKeepsP) {
    const auto r1 = madn::paired_ttest({2.0, 4.0, 6.0}, {1.0, 2.0, 3.0});
    const auto r2 = madn::paired_ttest({1.0, 2.0, 3.0}, {2.0, 4.0, 6.0});
    EXPECT_NEAR(r2.t, -r1.t, 1e-12);
    EXPECT_NEAR(r2.p, r1.p, 1e-12);
}

TEST(PairedTTestTest, ZeroVarianceIsDegenerate) {
    const auto r = madn::paired_ttest({1.0, 2.0, 3.0, 4.0}, {0.5, 1.5, 2.5, 3.5});
    EXPECT_TRUE(r.degenerate);
    EXPECT_TRUE(std::isnan(r.t));
    EXPECT_TRUE(std::isnan(r.p));
    const auto same = madn::paired_ttest({1.0, 1.0, 1.0}, {1.0, 1.0, 1.0});
    EXPECT_TRUE(same.degenerate);
}

TEST(PairedTTestTest, PMonotoneInEffectSize) {
    const std::vector<double> base{0.0, 0.1, -0.1, 0.05, -0.05, 0.02, 0.07, -0.03};
    const std::vector<double> jitter{0.02, -0.01, 0.03, -0.02, 0.01, -0.03, 0.0, 0.02};
    double prev_p = 1.1;
    for (double shift : {0.01, 0.05, 0.15, 0.4}) {
        std::vector<double> shifted = base;
        for (size_t i = 0; i < shifted.size(); ++i) shifted[i] += shift + jitter[i];
        const auto r = madn::paired_ttest(shifted, base);
        EXPECT_FALSE(r.degenerate);
        EXPECT_LT(r.p, prev_p) << "shift " << shift;
        prev_p = r.p;
    }
}

TEST(SsimTest, ExclusionSkipsDamagedWindows) {
    madn::Rng rng(31);
    TensorF a(Shape{1, 1, 48, 48});
    for (int64_t i = 0; i < a.numel(); ++i) a[i] = float(0.2 * rng.normal());
    TensorF b = a.clone();
    ByteImage damage(48, 48, 0);
    for (int y = 4; y < 10; ++y)
        for (int x = 4; x < 10; ++x) {
            b.at(0, 0, y, x) = 0.9f;
            damage.at(y, x) = 1;
        }

    const double with_damage = madn::ssim(a, b);
    EXPECT_LT(with_damage, 1.0);
    // Every window touching the damaged corner block is skipped; the rest agree exactly.
    EXPECT_DOUBLE_EQ(madn::ssim(a, b, &damage), 1.0);

    const ByteImage everything(48, 48, 1);
    EXPECT_THROW(madn::ssim(a, b, &everything), madn::ValueError);
    const ByteImage wrong_size(12, 12, 0);
    EXPECT_THROW(madn::ssim(a, b, &wrong_size), madn::ValueError);
}

TEST(PairedTTestTest, ErrorCases) {
    EXPECT_THROW(madn::paired_ttest({1.0, 2.0}, {1.0}), madn::ValueError);
    EXPECT_THROW(madn::paired_ttest({1.0, 2.0}, {1.0, 2.0}), madn::ValueError);  // n < 3
}

class EvaluateTest : public ::testing::Test {
   protected:
    static fs::path root() {
        static const fs::path p =
            fs::temp_directory_path() / ("madn_eval_test_" + std::to_string(getpid()));
        return p;
    }

    // 2+2 unpaired training pairs (unused here) and 4 paired test samples.
    static fs::path dataset() {
        static const fs::path d = [] {
            madn::PhantomSpec spec;
            spec.image_size = 32;
            spec.implant_radius_min = 2.0;
            spec.implant_radius_max = 4.0;
            spec.seed = 17;
            const fs::path dir = root() / "ds";
            madn::build_dataset(spec, 2, 2, 4, dir);
            return dir;
        }();
        return d;
    }

    static fs::path checkpoint_for(madn::Mode mode, const std::string& name) {
        fs::create_directories(root());
        const fs::path p = root() / (name + ".ckpt");
        if (!fs::exists(p)) madn::save_checkpoint(p, madn::make_bundle(mode, 42), 0);
        return p;
    }

    static std::string read_bytes(const fs::path& p) {
        std::ifstream f(p, std::ios::binary);
        return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
    }
};

TEST_F(EvaluateTest, NoMarOnlyReport) {
    const auto report = madn::evaluate({{"no_mar", {}}}, dataset(), root() / "no_mar_only");

    EXPECT_TRUE(report.reference.empty());
    EXPECT_TRUE(report.vs_reference.empty());
    ASSERT_EQ(report.methods, std::vector<std::string>{"no_mar"});
    for (const char* metric : {"sigma_ct_roi_0", "sigma_ct_roi_1", "psnr_ct", "psnr_mr", "ssim_ct",
                               "ssim_mr", "void_mae", "void_label_dice"})
        EXPECT_TRUE(std::count(report.metrics.begin(), report.metrics.end(), metric)) << metric;

    const auto& cols = report.values.at("no_mar");
    for (const std::string& metric : report.metrics) ASSERT_EQ(cols.at(metric).size(), 4u) << metric;
    for (double v : cols.at("psnr_ct")) EXPECT_TRUE(std::isfinite(v));
    for (double v : cols.at("ssim_ct")) {
        EXPECT_GT(v, -1.0);
        EXPECT_LE(v, 1.0);
    }
    for (double v : cols.at("void_label_dice")) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    for (double v : cols.at("void_mae")) EXPECT_GE(v, 0.0);

    EXPECT_TRUE(fs::exists(report.csv_path));
    EXPECT_TRUE(fs::exists(report.summary_path));
    const nlohmann::json summary = madn::read_json_file(report.summary_path);
    EXPECT_EQ(summary.at("n_test").get<int>(), 4);
    EXPECT_TRUE(summary.at("methods").contains("no_mar"));
    EXPECT_FALSE(summary.contains("ttests"));
}

TEST_F(EvaluateTest, DeterministicRegeneration) {
    const std::vector<madn::EvalMethod> methods{
        {"no_mar", {}}, {"madn", checkpoint_for(madn::Mode::madn, "madn_seed42")}};
    const auto r1 = madn::evaluate(methods, dataset(), root() / "regen_a");
    const auto r2 = madn::evaluate(methods, dataset(), root() / "regen_b");
    const std::string csv1 = read_bytes(r1.csv_path), csv2 = read_bytes(r2.csv_path);
    ASSERT_FALSE(csv1.empty());
    EXPECT_EQ(csv1, csv2);
    EXPECT_EQ(read_bytes(r1.summary_path), read_bytes(r2.summary_path));
}

TEST_F(EvaluateTest, PairedTestsAgainstMadn) {
    const std::vector<madn::EvalMethod> methods{
        {"no_mar", {}},
        {"adn_ct", checkpoint_for(madn::Mode::adn_ct, "adn_ct_seed42")},
        {"madn", checkpoint_for(madn::Mode::madn, "madn_seed42")}};
    const auto report = madn::evaluate(methods, dataset(), root() / "with_ref");

    EXPECT_EQ(report.reference, "madn");
    ASSERT_TRUE(report.vs_reference.count("no_mar"));
    ASSERT_TRUE(report.vs_reference.count("adn_ct"));
    EXPECT_FALSE(report.vs_reference.count("madn"));
    for (const auto& [method, tests] : report.vs_reference) {
        EXPECT_TRUE(tests.count("psnr_ct")) << method;
        for (const auto& [metric, tt] : tests) {
            if (tt.degenerate) continue;
            EXPECT_GE(tt.p, 0.0) << method << "/" << metric;
            EXPECT_LE(tt.p, 1.0) << method << "/" << metric;
            EXPECT_EQ(tt.df, 3);
        }
    }
    const nlohmann::json summary = madn::read_json_file(report.summary_path);
    EXPECT_TRUE(summary.at("ttests").contains("no_mar"));
}

TEST_F(EvaluateTest, LoadReportRoundTrip) {
    const std::vector<madn::EvalMethod> methods{
        {"no_mar", {}}, {"madn", checkpoint_for(madn::Mode::madn, "madn_seed42")}};
    const auto written = madn::evaluate(methods, dataset(), root() / "roundtrip");
    const auto loaded = madn::load_report(root() / "roundtrip");

    EXPECT_EQ(loaded.methods, written.methods);
    EXPECT_EQ(loaded.metrics, written.metrics);
    EXPECT_EQ(loaded.reference, written.reference);
    for (const std::string& method : written.methods)
        for (const std::string& metric : written.metrics) {
            const auto& w = written.values.at(method).at(metric);
            const auto& l = loaded.values.at(method).at(metric);
            ASSERT_EQ(l.size(), w.size()) << method << "/" << metric;
            for (std::size_t i = 0; i < w.size(); ++i) {
                if (std::isnan(w[i])) {
                    EXPECT_TRUE(std::isnan(l[i])) << method << "/" << metric;
                    continue;
                }
                // CSV cells carry 8 significant digits.
                EXPECT_NEAR(l[i], w[i], 1e-6 * std::max(1.0, std::abs(w[i])))
                    << method << "/" << metric;
            }
        }
    ASSERT_EQ(loaded.vs_reference.size(), written.vs_reference.size());
    for (const auto& [method, tests] : written.vs_reference)
        for (const auto& [metric, tt] : tests) {
            const auto& lt = loaded.vs_reference.at(method).at(metric);
            if (std::isnan(tt.t)) {
                EXPECT_TRUE(std::isnan(lt.t));
            } else {
                EXPECT_DOUBLE_EQ(lt.t, tt.t);
                EXPECT_DOUBLE_EQ(lt.p, tt.p);
            }
            EXPECT_EQ(lt.df, tt.df);
            EXPECT_EQ(lt.degenerate, tt.degenerate);
        }

    EXPECT_THROW(madn::load_report(root() / "nowhere"), madn::IoError);
}

TEST_F(EvaluateTest, Errors) {
    EXPECT_THROW(madn::evaluate({}, dataset(), root() / "err"), madn::ValueError);
    EXPECT_THROW(madn::evaluate({{"a", {}}, {"a", {}}}, dataset(), root() / "err"), madn::ValueError);
    EXPECT_THROW(madn::evaluate({{"m", root() / "missing.ckpt"}}, dataset(), root() / "err"),
                 madn::IoError);
    EXPECT_THROW(madn::evaluate({{"no_mar", {}}}, root() / "no_dataset", root() / "err"),
                 madn::IoError);
}

}  // namespace
