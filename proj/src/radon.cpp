#include "madn/radon.hpp"

#include <fftw3.h>

#include <cmath>
#include <numbers>

namespace madn {

namespace {

constexpr double kRayStep = 0.5;

double bilinear(const TensorD& img, double px, double py) {
    const int n = img.shape().h;
    const int x0 = int(std::floor(px)), y0 = int(std::floor(py));
    if (x0 < -1 || x0 >= n || y0 < -1 || y0 >= n) return 0.0;
    const double fx = px - x0, fy = py - y0;
    auto pix = [&](int y, int x) {
        return (x < 0 || x >= n || y < 0 || y >= n) ? 0.0 : img.at(0, 0, y, x);
    };
    return (1 - fy) * ((1 - fx) * pix(y0, x0) + fx * pix(y0, x0 + 1)) +
           fy * ((1 - fx) * pix(y0 + 1, x0) + fx * pix(y0 + 1, x0 + 1));
}

int next_pow2(int v) {
    int p = 1;
    while (p < v) p <<= 1;
    return p;
}

}  // namespace

int default_detector_count(int image_size) {
    return int(std::ceil(image_size * std::numbers::sqrt2)) + 2;
}

Sinogram radon(const TensorD& image, int n_angles, int n_detectors) {
    const Shape s = image.shape();
    MADN_CHECK(s.n == 1 && s.c == 1 && s.h == s.w, "radon: image must be a square (1,1,N,N) grid, got ",
               s.str());
    MADN_CHECK(all_finite(image.data(), image.numel()), "radon: non-finite image");
    const int n = s.h;
    Sinogram sg;
    sg.n_angles = n_angles;
    sg.n_detectors = n_detectors;
    sg.detector_spacing = 1.0;
    sg.values.assign(size_t(n_angles) * n_detectors, 0.0);
    sg.angles.resize(n_angles);
    const double center = (n - 1) / 2.0;
    const double det_center = (n_detectors - 1) / 2.0;
    const double half_len = n * std::numbers::sqrt2 / 2.0;
    const int n_steps = int(std::ceil(2.0 * half_len / kRayStep));
    for (int a = 0; a < n_angles; ++a) {
        const double theta = std::numbers::pi * a / n_angles;
        sg.angles[a] = theta;
        const double ux = std::cos(theta), uy = std::sin(theta);   // detector axis
        const double vx = -std::sin(theta), vy = std::cos(theta);  // ray direction
        for (int d = 0; d < n_detectors; ++d) {
            const double off = (d - det_center) * sg.detector_spacing;
            const double bx = center + off * ux, by = center + off * uy;
            double acc = 0.0;
            for (int i = 0; i < n_steps; ++i) {
                const double t = -half_len + (i + 0.5) * kRayStep;
                acc += bilinear(image, bx + t * vx, by + t * vy);
            }
            sg.at(a, d) = acc * kRayStep;
        }
    }
    sg.validate(int(std::ceil(n * std::numbers::sqrt2)));
    return sg;
}

TensorD fbp(const Sinogram& s, int image_size, bool hann) {
    MADN_CHECK(s.n_angles >= 1 && s.n_detectors >= 1 && !s.values.empty(), "fbp: empty sinogram");
    s.validate(1);
    const int nd = s.n_detectors;
    const int pad = std::max(64, next_pow2(2 * nd));
    const int nbins = pad / 2 + 1;

    // Band-limited Ram-Lak filter: DFT of its exact real-space sampling.
    std::vector<double> f(pad, 0.0);
    f[0] = 0.25;
    for (int i = 1; i < pad; i += 2) {
        const int m = i <= pad / 2 ? i : pad - i;
        f[i] = -1.0 / (std::numbers::pi * m * std::numbers::pi * m);
    }
    double* buf = fftw_alloc_real(pad);
    fftw_complex* spec = fftw_alloc_complex(nbins);
    fftw_plan fwd = fftw_plan_dft_r2c_1d(pad, buf, spec, FFTW_ESTIMATE);
    fftw_plan inv = fftw_plan_dft_c2r_1d(pad, spec, buf, FFTW_ESTIMATE);
    std::copy(f.begin(), f.end(), buf);
    fftw_execute(fwd);
    std::vector<double> filter(nbins);
    for (int k = 0; k < nbins; ++k) {
        filter[k] = 2.0 * spec[k][0];
        if (hann) {
            const double c = std::cos(std::numbers::pi * k / pad);
            filter[k] *= c * c;
        }
    }

    std::vector<double> filtered(size_t(s.n_angles) * nd);
    for (int a = 0; a < s.n_angles; ++a) {
        std::fill(buf, buf + pad, 0.0);
        std::copy(s.values.begin() + size_t(a) * nd, s.values.begin() + size_t(a) * nd + nd, buf);
        fftw_execute(fwd);
        for (int k = 0; k < nbins; ++k) {
            spec[k][0] *= filter[k] / pad;
            spec[k][1] *= filter[k] / pad;
        }
        fftw_execute(inv);
        std::copy(buf, buf + nd, filtered.begin() + size_t(a) * nd);
    }
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
    fftw_free(buf);
    fftw_free(spec);

    TensorD out(Shape{1, 1, image_size, image_size}, 0.0);
    const double center = (image_size - 1) / 2.0;
    const double det_center = (nd - 1) / 2.0;
    for (int a = 0; a < s.n_angles; ++a) {
        const double ct = std::cos(s.angles[a]), st = std::sin(s.angles[a]);
        const double* row = filtered.data() + size_t(a) * nd;
        for (int y = 0; y < image_size; ++y) {
            const double yr = y - center;
            for (int x = 0; x < image_size; ++x) {
                const double xr = x - center;
                const double col = (xr * ct + yr * st) / s.detector_spacing + det_center;
                const int c0 = int(std::floor(col));
                if (c0 < 0 || c0 + 1 >= nd) continue;
                const double fc = col - c0;
                out.at(0, 0, y, x) += (1 - fc) * row[c0] + fc * row[c0 + 1];
            }
        }
    }
    const double scale = std::numbers::pi / (2.0 * s.n_angles);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= scale;
    MADN_CHECK(all_finite(out.data(), out.numel()), "fbp: non-finite reconstruction");
    return out;
}

}  // namespace madn
