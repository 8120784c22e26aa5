#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "madn/image.hpp"
#include "madn/rng.hpp"

namespace fs = std::filesystem;
using madn::ByteImage;
using madn::Domain;
using madn::MultimodalSlice;
using madn::Rng;
using madn::Shape;
using madn::TensorF;

namespace {

class ImageIoTest : public ::testing::Test {
  protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("madn_io_" + std::to_string(::getpid()));
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    fs::path dir_;
};

MultimodalSlice random_slice(int h, int w, uint64_t seed) {
    Rng rng(seed);
    MultimodalSlice s;
    s.domain = Domain::corrupted;
    s.seed = seed;
    s.data = TensorF(Shape{1, 2, h, w});
    for (int64_t i = 0; i < s.data.numel(); ++i) s.data[i] = float(rng.uniform(-1.0, 1.0));
    return s;
}

TEST_F(ImageIoTest, SliceRoundTripBitExact) {
    const MultimodalSlice s = random_slice(16, 12, 42);
    madn::write_slice(dir_ / "a", s);
    const MultimodalSlice r = madn::read_slice(dir_ / "a");
    ASSERT_EQ(r.data.shape(), s.data.shape());
    EXPECT_EQ(r.domain, Domain::corrupted);
    EXPECT_EQ(r.seed, 42u);
    EXPECT_EQ(0, std::memcmp(r.data.data(), s.data.data(), sizeof(float) * s.data.numel()));
}

TEST_F(ImageIoTest, SidecarFields) {
    madn::write_slice(dir_ / "b", random_slice(8, 8, 7));
    const auto j = madn::read_json_file(dir_ / "b.json");
    EXPECT_EQ(j.at("width").get<int>(), 8);
    EXPECT_EQ(j.at("height").get<int>(), 8);
    EXPECT_EQ(j.at("channels").get<int>(), 2);
    EXPECT_EQ(j.at("domain").get<std::string>(), "corrupted");
    EXPECT_EQ(j.at("modalities").at(0).get<std::string>(), "CT");
    EXPECT_EQ(j.at("modalities").at(1).get<std::string>(), "MR");
    EXPECT_EQ(j.at("seed").get<uint64_t>(), 7u);
    EXPECT_EQ(j.at("dtype").get<std::string>(), "float32");
    EXPECT_EQ(j.at("layout").get<std::string>(), "CHW");
}

TEST_F(ImageIoTest, ChannelExtraction) {
    const MultimodalSlice s = random_slice(6, 5, 9);
    const TensorF ct = s.channel(0), mr = s.channel(1);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 5; ++x) {
            EXPECT_EQ(ct.at(0, 0, y, x), s.data.at(0, 0, y, x));
            EXPECT_EQ(mr.at(0, 0, y, x), s.data.at(0, 1, y, x));
        }
    EXPECT_THROW(s.channel(2), madn::ValueError);
}

TEST_F(ImageIoTest, ByteImageRoundTrip) {
    ByteImage m(9, 11);
    Rng rng(5);
    for (auto& b : m.v) b = uint8_t(rng.uniform_int(4));
    madn::write_byte_image(dir_ / "m", m, Domain::clean, 3, "labels");
    const ByteImage r = madn::read_byte_image(dir_ / "m");
    ASSERT_EQ(r.h, 9);
    ASSERT_EQ(r.w, 11);
    EXPECT_EQ(r.v, m.v);
    const auto j = madn::read_json_file(dir_ / "m.json");
    EXPECT_EQ(j.at("kind").get<std::string>(), "labels");
    EXPECT_EQ(j.at("dtype").get<std::string>(), "uint8");
}

TEST_F(ImageIoTest, MissingFileThrows) {
    EXPECT_THROW(madn::read_slice(dir_ / "nope"), madn::IoError);
    EXPECT_THROW(madn::read_json_file(dir_ / "nope.json"), madn::IoError);
}

TEST_F(ImageIoTest, TruncatedRawThrows) {
    madn::write_slice(dir_ / "c", random_slice(8, 8, 1));
    std::ofstream f(dir_ / "c.raw", std::ios::binary | std::ios::trunc);
    f << "short";
    f.close();
    EXPECT_THROW(madn::read_slice(dir_ / "c"), madn::IoError);
}

TEST_F(ImageIoTest, CorruptJsonThrows) {
    madn::write_slice(dir_ / "d", random_slice(8, 8, 1));
    std::ofstream f(dir_ / "d.json", std::ios::trunc);
    f << "{not json";
    f.close();
    EXPECT_THROW(madn::read_slice(dir_ / "d"), madn::IoError);
}

TEST_F(ImageIoTest, NonFinitePixelsRejectedOnRead) {
    MultimodalSlice s = random_slice(4, 4, 2);
    s.data[5] = std::numeric_limits<float>::quiet_NaN();
    madn::write_slice(dir_ / "e", s);
    EXPECT_THROW(madn::read_slice(dir_ / "e"), madn::IoError);
}

TEST_F(ImageIoTest, ByteImageMaskHelpers) {
    ByteImage m(4, 4);
    EXPECT_TRUE(m.empty_mask());
    EXPECT_EQ(m.count_nonzero(), 0);
    m.at(2, 3) = 1;
    m.at(0, 0) = 7;
    EXPECT_FALSE(m.empty_mask());
    EXPECT_EQ(m.count_nonzero(), 2);
}

}  // namespace
