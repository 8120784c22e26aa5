#include "madn/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "madn/eval.hpp"
#include "madn/rng.hpp"

namespace madn {

namespace fs = std::filesystem;

void PhantomSpec::validate() const {
    MADN_CHECK(image_size >= 32 && is_power_of_two(image_size), "PhantomSpec: image_size must be a power of two >= 32, got ",
               image_size);
    MADN_CHECK(n_tissues >= 1, "PhantomSpec: n_tissues must be >= 1, got ", n_tissues);
    for (const auto* v : {&tissue_intensity_ct, &tissue_intensity_mr}) {
        if (v->empty()) continue;
        MADN_CHECK(int(v->size()) == n_tissues, "PhantomSpec: intensity list size ", v->size(),
                   " != n_tissues ", n_tissues);
        for (double t : *v)
            MADN_CHECK(t >= -1.0 && t <= 1.0, "PhantomSpec: tissue intensity ", t, " outside [-1,1]");
    }
    MADN_CHECK(implant_radius_min >= 2.0, "PhantomSpec: implant_radius_min must be >= 2 px");
    MADN_CHECK(implant_radius_max >= implant_radius_min, "PhantomSpec: implant radius range inverted");
    MADN_CHECK(implant_radius_max < image_size / 4.0, "PhantomSpec: implant_radius_max ", implant_radius_max,
               " must be < image_size/4 = ", image_size / 4.0);
    MADN_CHECK(ct_severity >= 0.0, "PhantomSpec: ct_severity must be >= 0");
    MADN_CHECK(mr_void_radius_factor > 1.0, "PhantomSpec: mr_void_radius_factor must be > 1");
    MADN_CHECK(noise_std_ct >= 0.0 && noise_std_mr >= 0.0, "PhantomSpec: noise std must be >= 0");
}

std::vector<double> PhantomSpec::intensities_ct() const {
    if (!tissue_intensity_ct.empty()) return tissue_intensity_ct;
    std::vector<double> v(n_tissues, -1.0);
    for (int k = 1; k < n_tissues; ++k) {
        const double t = n_tissues > 2 ? double(k - 1) / double(n_tissues - 2) : 0.0;
        v[k] = -0.3 + 0.85 * t;
    }
    return v;
}

std::vector<double> PhantomSpec::intensities_mr() const {
    if (!tissue_intensity_mr.empty()) return tissue_intensity_mr;
    std::vector<double> v(n_tissues, -1.0);
    for (int k = 1; k < n_tissues; ++k) {
        const double t = n_tissues > 2 ? double(k - 1) / double(n_tissues - 2) : 0.0;
        v[k] = 0.55 - 0.8 * t;
    }
    return v;
}

void to_json(nlohmann::json& j, const PhantomSpec& s) {
    j = nlohmann::json{{"image_size", s.image_size},
                       {"n_tissues", s.n_tissues},
                       {"tissue_intensity_ct", s.tissue_intensity_ct},
                       {"tissue_intensity_mr", s.tissue_intensity_mr},
                       {"implant_radius_min", s.implant_radius_min},
                       {"implant_radius_max", s.implant_radius_max},
                       {"ct_severity", s.ct_severity},
                       {"mr_void_radius_factor", s.mr_void_radius_factor},
                       {"noise_std_ct", s.noise_std_ct},
                       {"noise_std_mr", s.noise_std_mr},
                       {"mr_pileup_ring", s.mr_pileup_ring},
                       {"fbp_hann", s.fbp_hann},
                       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
    s.image_size = j.value("image_size", s.image_size);
    s.n_tissues = j.value("n_tissues", s.n_tissues);
    s.tissue_intensity_ct = j.value("tissue_intensity_ct", s.tissue_intensity_ct);
    s.tissue_intensity_mr = j.value("tissue_intensity_mr", s.tissue_intensity_mr);
    s.implant_radius_min = j.value("implant_radius_min", s.implant_radius_min);
    s.implant_radius_max = j.value("implant_radius_max", s.implant_radius_max);
    s.ct_severity = j.value("ct_severity", s.ct_severity);
    s.mr_void_radius_factor = j.value("mr_void_radius_factor", s.mr_void_radius_factor);
    s.noise_std_ct = j.value("noise_std_ct", s.noise_std_ct);
    s.noise_std_mr = j.value("noise_std_mr", s.noise_std_mr);
    s.mr_pileup_ring = j.value("mr_pileup_ring", s.mr_pileup_ring);
    s.fbp_hann = j.value("fbp_hann", s.fbp_hann);
    s.seed = j.value("seed", s.seed);
}

namespace {

constexpr int kNAngles = 180;

struct Ellipse {
    double cx, cy, ax, ay, phi;

    bool inside(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double c = std::cos(phi), s = std::sin(phi);
        const double u = (dx * c + dy * s) / ax;
        const double v = (-dx * s + dy * c) / ay;
        return u * u + v * v <= 1.0;
    }

    // Point at fractional radius f and parameter angle t, in image coords.
    std::pair<double, double> point(double f, double t) const {
        const double u = f * ax * std::cos(t), v = f * ay * std::sin(t);
        const double c = std::cos(phi), s = std::sin(phi);
        return {cx + u * c - v * s, cy + u * s + v * c};
    }
};

struct MetalGeom {
    double cx, cy, r;
};

// Body ellipse = the first draws of the anatomy stream, replayable so metal
// placement agrees with make_anatomy without sharing state.
Ellipse body_of(const PhantomSpec& spec, Rng& anatomy_rng) {
    const double n = spec.image_size;
    Ellipse e;
    e.cx = n / 2.0 + anatomy_rng.uniform(-0.03, 0.03) * n;
    e.cy = n / 2.0 + anatomy_rng.uniform(-0.03, 0.03) * n;
    // The pixel floor keeps small bodies big enough to host two 50-px ROIs
    // clear of the implant; inactive at the default 64+ sizes.
    const double floor_px = std::min(12.0, 0.45 * n);
    e.ax = std::max(anatomy_rng.uniform(0.32, 0.42) * n, floor_px);
    e.ay = std::max(anatomy_rng.uniform(0.32, 0.42) * n, floor_px);
    e.phi = anatomy_rng.uniform(0.0, std::numbers::pi);
    return e;
}

MetalGeom metal_geometry(const PhantomSpec& spec, uint64_t sample_seed) {
    Rng anatomy_rng(stream_seed(spec.seed, sample_seed, "anatomy"));
    const Ellipse body = body_of(spec, anatomy_rng);
    Rng rng(stream_seed(spec.seed, sample_seed, "metal"));
    const double n = spec.image_size;
    MetalGeom g;
    const double jx = rng.uniform(-0.04, 0.04) * n;
    const double jy = rng.uniform(-0.04, 0.04) * n;
    g.r = rng.uniform(spec.implant_radius_min, spec.implant_radius_max);
    if (spec.n_tissues >= 2) {
        g.cx = body.cx + jx;
        g.cy = body.cy + jy;
    } else {
        g.cx = n / 2.0 + jx;
        g.cy = n / 2.0 + jy;
    }
    return g;
}

void fill_ellipse(ByteImage& labels, const Ellipse& e, uint8_t cls, const ByteImage* within) {
    for (int y = 0; y < labels.h; ++y)
        for (int x = 0; x < labels.w; ++x) {
            if (within && !within->at(y, x)) continue;
            if (e.inside(x, y)) labels.at(y, x) = cls;
        }
}

ByteImage disc_mask(int n, double cx, double cy, double r) {
    ByteImage m(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m.at(y, x) = 1;
    return m;
}

TensorD clamp_unit(TensorD t) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = std::clamp(t[i], -1.0, 1.0);
    return t;
}

}  // namespace

ByteImage make_metal_mask(const PhantomSpec& spec, uint64_t sample_seed) {
    spec.validate();
    const MetalGeom g = metal_geometry(spec, sample_seed);
    ByteImage m = disc_mask(spec.image_size, g.cx, g.cy, g.r);
    MADN_CHECK(!m.empty_mask(), "make_metal_mask: implant disc left no pixels");
    return m;
}

Anatomy make_anatomy(const PhantomSpec& spec, uint64_t sample_seed) {
    spec.validate();
    const int n = spec.image_size;
    Rng rng(stream_seed(spec.seed, sample_seed, "anatomy"));
    const Ellipse body = body_of(spec, rng);

    Anatomy a;
    a.labels = ByteImage(n, n, 0);
    ByteImage body_mask(n, n, 0);
    if (spec.n_tissues >= 2) {
        fill_ellipse(a.labels, body, 1, nullptr);
        fill_ellipse(body_mask, body, 1, nullptr);
    }
    for (int cls = 2; cls < spec.n_tissues; ++cls) {
        const int blobs = 1 + int(rng.uniform_int(2));
        for (int b = 0; b < blobs; ++b) {
            const auto [px, py] = body.point(rng.uniform(0.0, 0.72), rng.uniform(0.0, 2.0 * std::numbers::pi));
            Ellipse e{px, py, rng.uniform(0.08, 0.2) * n, rng.uniform(0.08, 0.2) * n,
                      rng.uniform(0.0, std::numbers::pi)};
            fill_ellipse(a.labels, e, uint8_t(cls), &body_mask);
        }
    }

    // ROI placement avoids the implant site this anatomy would receive.
    const MetalGeom metal = metal_geometry(spec, sample_seed);
    const ByteImage metal_zone = disc_mask(n, metal.cx, metal.cy, metal.r + 2.0);
    std::vector<ByteImage> rois;
    for (int j = 0; j < 2; ++j) {
        bool placed = false;
        for (int attempt = 0; attempt < 400 && !placed; ++attempt) {
            // Pixel-space radius floor and a wider placement band keep the
            // 50-px ROI area reachable on images smaller than 64.
            const double rr = std::max(rng.uniform(0.085, 0.11) * n, 4.5);
            const double band_lo = n < 64 ? 0.25 : 0.45, band_hi = n < 64 ? 0.85 : 0.7;
            const auto [px, py] =
                body.point(rng.uniform(band_lo, band_hi), rng.uniform(0.0, 2.0 * std::numbers::pi));
            ByteImage m = disc_mask(n, spec.n_tissues >= 2 ? px : rng.uniform(rr, n - rr),
                                    spec.n_tissues >= 2 ? py : rng.uniform(rr, n - rr), rr);
            int64_t kept = 0;
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x) {
                    if (!m.at(y, x)) continue;
                    const bool in_region = spec.n_tissues < 2 || body_mask.at(y, x);
                    const bool clear = !metal_zone.at(y, x) && (rois.empty() || !rois[0].at(y, x));
                    if (in_region && clear)
                        ++kept;
                    else
                        m.at(y, x) = 0;
                }
            if (kept >= 50) {
                rois.push_back(std::move(m));
                placed = true;
            }
        }
        MADN_CHECK(placed, "make_anatomy: could not place ROI ", j, " for sample seed ", sample_seed);
    }
    a.roi_masks.emplace_back("roi_0", std::move(rois[0]));
    a.roi_masks.emplace_back("roi_1", std::move(rois[1]));

    const auto ict = spec.intensities_ct();
    const auto imr = spec.intensities_mr();
    TensorD ct(Shape{1, 1, n, n}), mr(Shape{1, 1, n, n});
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            ct.at(0, 0, y, x) = ict[a.labels.at(y, x)];
            mr.at(0, 0, y, x) = imr[a.labels.at(y, x)];
        }
    if (spec.noise_std_ct > 0.0) {
        Rng nrng(stream_seed(spec.seed, sample_seed, "noise_ct"));
        for (int64_t i = 0; i < ct.numel(); ++i) ct[i] += spec.noise_std_ct * nrng.normal();
    }
    if (spec.noise_std_mr > 0.0) {
        Rng nrng(stream_seed(spec.seed, sample_seed, "noise_mr"));
        for (int64_t i = 0; i < mr.numel(); ++i) mr[i] += spec.noise_std_mr * nrng.normal();
    }
    ct = clamp_unit(std::move(ct));
    mr = clamp_unit(std::move(mr));

    a.slice.domain = Domain::clean;
    a.slice.seed = sample_seed;
    a.slice.data = TensorF(Shape{1, 2, n, n});
    for (int64_t i = 0; i < ct.numel(); ++i) {
        a.slice.data[i] = float(ct[i]);
        a.slice.data[ct.numel() + i] = float(mr[i]);
    }
    return a;
}

TensorD corrupt_ct(const TensorD& clean_ct, const ByteImage& metal_mask, const PhantomSpec& spec) {
    spec.validate();
    MADN_CHECK(!metal_mask.empty_mask(), "corrupt_ct: empty metal mask");
    const Shape s = clean_ct.shape();
    const int n = s.h;
    MADN_CHECK(s.n == 1 && s.c == 1 && s.h == s.w && metal_mask.h == n && metal_mask.w == n,
               "corrupt_ct: image/mask geometry mismatch");

    TensorD with_metal = clean_ct.clone();
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            if (metal_mask.at(y, x)) with_metal.at(0, 0, y, x) = 1.0;

    const int nd = default_detector_count(n);
    Sinogram sino = radon(with_metal, kNAngles, nd);
    if (spec.ct_severity > 0.0) {
        TensorD metal_img(Shape{1, 1, n, n}, 0.0);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x)
                if (metal_mask.at(y, x)) metal_img.at(0, 0, y, x) = 1.0;
        const Sinogram trace = radon(metal_img, kNAngles, nd);
        std::vector<double> on_trace;
        for (size_t i = 0; i < sino.values.size(); ++i)
            if (trace.values[i] > 1e-9) on_trace.push_back(sino.values[i]);
        MADN_CHECK(!on_trace.empty(), "corrupt_ct: metal trace hit no sinogram bins");
        const size_t q = size_t(0.99 * double(on_trace.size() - 1));
        std::nth_element(on_trace.begin(), on_trace.begin() + q, on_trace.end());
        const double p99 = on_trace[q];
        // The noise realization depends on the mask, not on the severity, so
        // raising ct_severity scales the same corruption field.
        Rng nrng(stream_seed(spec.seed, fnv1a(metal_mask.v.data(), metal_mask.v.size()), "ct_trace_noise"));
        for (size_t i = 0; i < sino.values.size(); ++i) {
            if (trace.values[i] <= 1e-9) continue;
            double v = std::min(sino.values[i], p99);
            v *= 1.0 + 0.3 * spec.ct_severity * nrng.normal();
            sino.values[i] = v;
        }
    }
    return clamp_unit(fbp(sino, n, spec.fbp_hann));
}

namespace {

// Centroid of the implant pixels and the void radius R = factor * r_eq.
struct VoidGeom {
    double cx, cy, R;
};

VoidGeom void_geometry(const ByteImage& metal_mask, double factor, const char* caller) {
    MADN_CHECK(!metal_mask.empty_mask(), caller, ": empty metal mask");
    double cx = 0, cy = 0, cnt = 0;
    for (int y = 0; y < metal_mask.h; ++y)
        for (int x = 0; x < metal_mask.w; ++x)
            if (metal_mask.at(y, x)) {
                cx += x;
                cy += y;
                cnt += 1;
            }
    cx /= cnt;
    cy /= cnt;
    return {cx, cy, factor * std::sqrt(cnt / std::numbers::pi)};
}

}  // namespace

ByteImage mr_void_region(const ByteImage& metal_mask, double mr_void_radius_factor) {
    MADN_CHECK(mr_void_radius_factor > 0.0, "mr_void_region: factor must be > 0");
    MADN_CHECK(metal_mask.h == metal_mask.w, "mr_void_region: mask must be square");
    const VoidGeom g = void_geometry(metal_mask, mr_void_radius_factor, "mr_void_region");
    return disc_mask(metal_mask.h, g.cx, g.cy, g.R);
}

TensorD corrupt_mr(const TensorD& clean_mr, const ByteImage& metal_mask, const PhantomSpec& spec) {
    spec.validate();
    const Shape s = clean_mr.shape();
    const int n = s.h;
    MADN_CHECK(s.n == 1 && s.c == 1 && s.h == s.w && metal_mask.h == n && metal_mask.w == n,
               "corrupt_mr: image/mask geometry mismatch");

    const VoidGeom g = void_geometry(metal_mask, spec.mr_void_radius_factor, "corrupt_mr");
    const double cx = g.cx, cy = g.cy, R = g.R;
    const double w = 0.25 * R;

    TensorD out(s);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double d = std::hypot(x - cx, y - cy);
            double att;
            if (d <= R)
                att = 0.0;
            else if (d >= R + w)
                att = 1.0;
            else
                att = 0.5 * (1.0 - std::cos(std::numbers::pi * (d - R) / w));
            double v = (clean_mr.at(0, 0, y, x) + 1.0) * att - 1.0;
            if (spec.mr_pileup_ring) {
                const double dr = (d - (R + w / 2.0)) / (w / 3.0);
                v += 0.35 * std::exp(-dr * dr);
            }
            out.at(0, 0, y, x) = v;
        }
    return clamp_unit(std::move(out));
}

PhantomSample make_sample(const PhantomSpec& spec, uint64_t sample_seed, bool corrupted) {
    Anatomy a = make_anatomy(spec, sample_seed);
    PhantomSample ps;
    ps.clean = a.slice;
    ps.labels = std::move(a.labels);
    ps.roi_masks = std::move(a.roi_masks);
    if (corrupted) {
        ps.metal_mask = make_metal_mask(spec, sample_seed);
        const int n = spec.image_size;
        TensorD ct(Shape{1, 1, n, n}), mr(Shape{1, 1, n, n});
        const int64_t plane = int64_t(n) * n;
        for (int64_t i = 0; i < plane; ++i) {
            ct[i] = ps.clean.data[i];
            mr[i] = ps.clean.data[plane + i];
        }
        const TensorD cct = corrupt_ct(ct, ps.metal_mask, spec);
        const TensorD cmr = corrupt_mr(mr, ps.metal_mask, spec);
        ps.corrupted.domain = Domain::corrupted;
        ps.corrupted.seed = sample_seed;
        ps.corrupted.data = TensorF(Shape{1, 2, n, n});
        for (int64_t i = 0; i < plane; ++i) {
            ps.corrupted.data[i] = float(cct[i]);
            ps.corrupted.data[plane + i] = float(cmr[i]);
        }
        for (auto& [name, roi] : ps.roi_masks) {
            for (size_t i = 0; i < roi.v.size(); ++i)
                if (ps.metal_mask.v[i]) roi.v[i] = 0;
            MADN_CHECK(roi.count_nonzero() >= 50, "make_sample: ROI ", name, " shrank below 50 px");
        }
    }
    return ps;
}

uint64_t split_seed(const std::string& split, int index) {
    if (split == "clean_train") return uint64_t(index);
    if (split == "corrupted_train") return 1000000ull + uint64_t(index);
    if (split == "test") return 2000000ull + uint64_t(index);
    throw ValueError("unknown split '" + split + "'");
}

nlohmann::json build_dataset(const PhantomSpec& spec, int n_clean, int n_corrupted, int n_test,
                             const fs::path& out_dir) {
    spec.validate();
    MADN_CHECK(n_clean >= 1 && n_corrupted >= 1 && n_test >= 1, "build_dataset: all split counts must be >= 1");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    for (const char* split : {"clean_train", "corrupted_train", "test"}) fs::create_directories(out_dir / split, ec);
    MADN_CHECK_IO(fs::is_directory(out_dir), "build_dataset: cannot create ", out_dir.string());

    nlohmann::json manifest;
    manifest["format_version"] = 1;
    manifest["spec"] = spec;
    auto file_list = nlohmann::json::array();

    char name[64];
    for (int i = 0; i < n_clean; ++i) {
        const uint64_t seed = split_seed("clean_train", i);
        const PhantomSample ps = make_sample(spec, seed, false);
        std::snprintf(name, sizeof(name), "sample_%05d", i);
        write_slice(out_dir / "clean_train" / name, ps.clean);
        file_list.push_back(std::string("clean_train/") + name + ".raw");
    }
    for (int j = 0; j < n_corrupted; ++j) {
        const uint64_t seed = split_seed("corrupted_train", j);
        const PhantomSample ps = make_sample(spec, seed, true);
        std::snprintf(name, sizeof(name), "sample_%05d", j);
        write_slice(out_dir / "corrupted_train" / name, ps.corrupted);
        file_list.push_back(std::string("corrupted_train/") + name + ".raw");
    }
    double psnr_ct_acc = 0.0, psnr_mr_acc = 0.0;
    for (int k = 0; k < n_test; ++k) {
        const uint64_t seed = split_seed("test", k);
        const PhantomSample ps = make_sample(spec, seed, true);
        std::snprintf(name, sizeof(name), "sample_%05d", k);
        const fs::path base = out_dir / "test" / name;
        write_slice(fs::path(base).concat("_clean"), ps.clean);
        write_slice(fs::path(base).concat("_corrupted"), ps.corrupted);
        write_byte_image(fs::path(base).concat("_metal"), ps.metal_mask, Domain::corrupted, seed, "metal_mask");
        write_byte_image(fs::path(base).concat("_labels"), ps.labels, Domain::clean, seed, "labels");
        for (const auto& [rname, roi] : ps.roi_masks)
            write_byte_image(fs::path(base).concat("_" + rname), roi, Domain::clean, seed, "roi",
                             nlohmann::json{{"name", rname}});
        for (const char* suffix : {"_clean.raw", "_corrupted.raw", "_metal.raw", "_labels.raw", "_roi_0.raw", "_roi_1.raw"})
            file_list.push_back(std::string("test/") + name + suffix);
        psnr_ct_acc += psnr(ps.corrupted.channel(0), ps.clean.channel(0), &ps.metal_mask);
        psnr_mr_acc += psnr(ps.corrupted.channel(1), ps.clean.channel(1));
    }

    manifest["splits"] = {
        {"clean_train", {{"count", n_clean}, {"first_seed", split_seed("clean_train", 0)}}},
        {"corrupted_train", {{"count", n_corrupted}, {"first_seed", split_seed("corrupted_train", 0)}}},
        {"test", {{"count", n_test}, {"first_seed", split_seed("test", 0)}}},
    };
    manifest["stats"] = {{"mean_psnr_ct_corrupted_metal_excluded", psnr_ct_acc / n_test},
                         {"mean_psnr_mr_corrupted", psnr_mr_acc / n_test}};
    manifest["files"] = std::move(file_list);
    write_json_file(out_dir / "manifest.json", manifest);
    return manifest;
}

}  // namespace madn
