#pragma once

#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "madn/image.hpp"
#include "madn/radon.hpp"

// Synthetic anatomy generator: nested random ellipses rendered with per-class
// CT/MR intensities, metal implant placement, projection-domain CT streak
// corruption and MR susceptibility voids, and dataset assembly on disk.

namespace madn {

struct PhantomSpec {
    int image_size = 64;
    int n_tissues = 4;
    std::vector<double> tissue_intensity_ct;  // per class incl. background; defaults applied when empty
    std::vector<double> tissue_intensity_mr;
    double implant_radius_min = 3.0;
    double implant_radius_max = 7.0;
    double ct_severity = 1.0;
    double mr_void_radius_factor = 2.0;
    double noise_std_ct = 0.01;
    double noise_std_mr = 0.01;
    bool mr_pileup_ring = false;
    bool fbp_hann = false;
    uint64_t seed = 0;

    void validate() const;
    std::vector<double> intensities_ct() const;
    std::vector<double> intensities_mr() const;
};

void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

struct Anatomy {
    MultimodalSlice slice;  // clean, CT channel 0 / MR channel 1
    ByteImage labels;
    std::vector<std::pair<std::string, ByteImage>> roi_masks;
};

// Deterministic in (spec, sample_seed). ROI placement already avoids the
// implant site this sample would receive if corrupted.
Anatomy make_anatomy(const PhantomSpec& spec, uint64_t sample_seed);

// The implant disc this sample receives; deterministic in (spec, sample_seed).
ByteImage make_metal_mask(const PhantomSpec& spec, uint64_t sample_seed);

// Metal inpainting + projection-domain trace saturation and multiplicative
// noise (amplitude ct_severity) + filtered back-projection; clamped [-1,1].
TensorD corrupt_ct(const TensorD& clean_ct, const ByteImage& metal_mask, const PhantomSpec& spec);

// Smooth raised-cosine signal void around the implant; clamped [-1,1].
TensorD corrupt_mr(const TensorD& clean_mr, const ByteImage& metal_mask, const PhantomSpec& spec);

// The fully suppressed MR region corrupt_mr produces for this mask: the disc
// of radius factor * equivalent-implant-radius around the implant centroid.
ByteImage mr_void_region(const ByteImage& metal_mask, double mr_void_radius_factor);

// Full sample; when corrupted is false the metal mask stays empty and only
// the clean slice is populated.
PhantomSample make_sample(const PhantomSpec& spec, uint64_t sample_seed, bool corrupted);

// Seed layout for the three splits: clean i, corrupted 1000000+j, test 2000000+k.
uint64_t split_seed(const std::string& split, int index);

// Writes clean_train/, corrupted_train/ and test/ plus manifest.json; returns
// the manifest.
nlohmann::json build_dataset(const PhantomSpec& spec, int n_clean, int n_corrupted, int n_test,
                             const std::filesystem::path& out_dir);

}  // namespace madn
