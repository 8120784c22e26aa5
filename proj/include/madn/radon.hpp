#pragma once

#include <vector>

#include "madn/tensor.hpp"

// Parallel-beam Radon transform and filtered back-projection, the projection-
// domain substrate for simulating metal traces.

namespace madn {

struct Sinogram {
    int n_angles = 0;
    int n_detectors = 0;
    double detector_spacing = 1.0;
    std::vector<double> values;  // n_angles x n_detectors, row-major
    std::vector<double> angles;  // radians, uniformly spaced over [0, pi)

    double& at(int a, int d) { return values[size_t(a) * n_detectors + d]; }
    double at(int a, int d) const { return values[size_t(a) * n_detectors + d]; }

    void validate(int image_diag_px) const {
        MADN_CHECK(n_angles >= 1, "Sinogram: need at least one angle");
        MADN_CHECK(n_detectors >= image_diag_px, "Sinogram: ", n_detectors,
                   " detectors cover less than the image diagonal ", image_diag_px);
        MADN_CHECK(values.size() == size_t(n_angles) * n_detectors, "Sinogram: value count mismatch");
        MADN_CHECK(all_finite(values.data(), int64_t(values.size())), "Sinogram: non-finite values");
    }
};

// Line integrals by bilinear ray sampling at 0.5 px steps; image must be a
// square (1,1,N,N) grid.
Sinogram radon(const TensorD& image, int n_angles, int n_detectors);

// Ram-Lak filtered back-projection (optional Hann apodization) onto an
// image_size^2 grid.
TensorD fbp(const Sinogram& s, int image_size, bool hann = false);

// Detector count used throughout: covers the diagonal with a small margin.
int default_detector_count(int image_size);

}  // namespace madn
