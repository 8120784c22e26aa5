#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "madn/tensor.hpp"

// On-disk sample format: raw little-endian scalars plus a JSON sidecar
// describing shape, domain and provenance.

namespace madn {

enum class Domain { clean, corrupted };

inline const char* to_string(Domain d) { return d == Domain::clean ? "clean" : "corrupted"; }

inline Domain parse_domain(const std::string& s) {
    if (s == "clean") return Domain::clean;
    if (s == "corrupted") return Domain::corrupted;
    throw ValueError("unknown domain '" + s + "'");
}

// Aligned CT (channel 0) + MR (channel 1) slice, stored as (1, 2, H, W).
struct MultimodalSlice {
    TensorF data;
    Domain domain = Domain::clean;
    uint64_t seed = 0;

    int height() const { return data.shape().h; }
    int width() const { return data.shape().w; }

    TensorF channel(int c) const {
        const Shape s = data.shape();
        MADN_CHECK(c >= 0 && c < s.c, "channel ", c, " out of range for ", s.str());
        TensorF out(Shape{1, 1, s.h, s.w});
        const int64_t plane = int64_t(s.h) * s.w;
        std::copy_n(data.data() + c * plane, plane, out.data());
        return out;
    }
};

// Byte-valued grid used for boolean masks (nonzero = set) and label maps.
struct ByteImage {
    int h = 0, w = 0;
    std::vector<uint8_t> v;

    ByteImage() = default;
    ByteImage(int h_, int w_, uint8_t fill = 0) : h(h_), w(w_), v(size_t(h_) * w_, fill) {}

    uint8_t& at(int y, int x) { return v[size_t(y) * w + x]; }
    uint8_t at(int y, int x) const { return v[size_t(y) * w + x]; }
    bool empty_mask() const {
        for (uint8_t b : v)
            if (b) return false;
        return true;
    }
    int64_t count_nonzero() const {
        int64_t n = 0;
        for (uint8_t b : v) n += (b != 0);
        return n;
    }
};

// A fully materialized phantom sample. roi_masks pair names with masks.
struct PhantomSample {
    MultimodalSlice clean;
    MultimodalSlice corrupted;
    ByteImage metal_mask;
    ByteImage labels;
    std::vector<std::pair<std::string, ByteImage>> roi_masks;
};

nlohmann::json read_json_file(const std::filesystem::path& p);
void write_json_file(const std::filesystem::path& p, const nlohmann::json& j);

// stem -> stem.raw + stem.json; `extra` fields are merged into the sidecar.
void write_slice(const std::filesystem::path& stem, const MultimodalSlice& s,
                 const nlohmann::json& extra = {});
MultimodalSlice read_slice(const std::filesystem::path& stem);

void write_byte_image(const std::filesystem::path& stem, const ByteImage& img, Domain domain, uint64_t seed,
                      const std::string& kind, const nlohmann::json& extra = {});
ByteImage read_byte_image(const std::filesystem::path& stem);

}  // namespace madn
