#include "madn/image.hpp"

#include <bit>
#include <fstream>

static_assert(std::endian::native == std::endian::little, "raw files are little-endian");

namespace madn {

namespace fs = std::filesystem;

nlohmann::json read_json_file(const fs::path& p) {
    std::ifstream f(p);
    MADN_CHECK_IO(f.good(), "cannot open ", p.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("invalid JSON in " + p.string() + ": " + e.what());
    }
    return j;
}

void write_json_file(const fs::path& p, const nlohmann::json& j) {
    std::ofstream f(p);
    MADN_CHECK_IO(f.good(), "cannot write ", p.string());
    f << j.dump(2) << '\n';
    MADN_CHECK_IO(f.good(), "write failed for ", p.string());
}

namespace {

void write_raw(const fs::path& p, const void* data, size_t bytes) {
    std::ofstream f(p, std::ios::binary);
    MADN_CHECK_IO(f.good(), "cannot write ", p.string());
    f.write(reinterpret_cast<const char*>(data), std::streamsize(bytes));
    MADN_CHECK_IO(f.good(), "write failed for ", p.string());
}

std::vector<char> read_raw(const fs::path& p, size_t expected_bytes) {
    std::ifstream f(p, std::ios::binary | std::ios::ate);
    MADN_CHECK_IO(f.good(), "cannot open ", p.string());
    const auto size = size_t(f.tellg());
    MADN_CHECK_IO(size == expected_bytes, p.string(), ": expected ", expected_bytes, " bytes, found ", size);
    f.seekg(0);
    std::vector<char> buf(size);
    f.read(buf.data(), std::streamsize(size));
    MADN_CHECK_IO(f.good(), "read failed for ", p.string());
    return buf;
}

fs::path with_ext(fs::path stem, const char* ext) {
    stem += ext;
    return stem;
}

}  // namespace

void write_slice(const fs::path& stem, const MultimodalSlice& s, const nlohmann::json& extra) {
    const Shape sh = s.data.shape();
    MADN_CHECK(sh.n == 1, "write_slice expects a single sample, got ", sh.str());
    nlohmann::json j{{"width", sh.w},
                     {"height", sh.h},
                     {"channels", sh.c},
                     {"domain", to_string(s.domain)},
                     {"modalities", sh.c == 2 ? nlohmann::json::array({"CT", "MR"}) : nlohmann::json::array({"CT"})},
                     {"seed", s.seed},
                     {"dtype", "float32"},
                     {"layout", "CHW"}};
    if (!extra.is_null()) j.update(extra);
    write_raw(with_ext(stem, ".raw"), s.data.data(), sizeof(float) * size_t(s.data.numel()));
    write_json_file(with_ext(stem, ".json"), j);
}

MultimodalSlice read_slice(const fs::path& stem) {
    const nlohmann::json j = read_json_file(with_ext(stem, ".json"));
    MADN_CHECK_IO(j.value("dtype", "") == "float32", stem.string(), ": expected float32 sidecar");
    const int w = j.at("width").get<int>();
    const int h = j.at("height").get<int>();
    const int c = j.at("channels").get<int>();
    MADN_CHECK_IO(w > 0 && h > 0 && c > 0, stem.string(), ": bad dimensions in sidecar");
    MultimodalSlice s;
    s.domain = parse_domain(j.at("domain").get<std::string>());
    s.seed = j.at("seed").get<uint64_t>();
    s.data = TensorF(Shape{1, c, h, w});
    const auto buf = read_raw(with_ext(stem, ".raw"), sizeof(float) * size_t(s.data.numel()));
    std::memcpy(s.data.data(), buf.data(), buf.size());
    MADN_CHECK_IO(all_finite(s.data.data(), s.data.numel()), stem.string(), ": non-finite pixels");
    return s;
}

void write_byte_image(const fs::path& stem, const ByteImage& img, Domain domain, uint64_t seed,
                      const std::string& kind, const nlohmann::json& extra) {
    nlohmann::json j{{"width", img.w}, {"height", img.h}, {"channels", 1},
                     {"domain", to_string(domain)}, {"seed", seed}, {"dtype", "uint8"},
                     {"layout", "CHW"},  {"kind", kind}};
    if (!extra.is_null()) j.update(extra);
    write_raw(with_ext(stem, ".raw"), img.v.data(), img.v.size());
    write_json_file(with_ext(stem, ".json"), j);
}

ByteImage read_byte_image(const fs::path& stem) {
    const nlohmann::json j = read_json_file(with_ext(stem, ".json"));
    MADN_CHECK_IO(j.value("dtype", "") == "uint8", stem.string(), ": expected uint8 sidecar");
    ByteImage img(j.at("height").get<int>(), j.at("width").get<int>());
    const auto buf = read_raw(with_ext(stem, ".raw"), img.v.size());
    std::memcpy(img.v.data(), buf.data(), buf.size());
    return img;
}

}  // namespace madn
