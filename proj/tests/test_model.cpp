#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include "madn/model.hpp"
#include "madn/rng.hpp"

using madn::LatentCode;
using madn::Mode;
using madn::ModelBundle;
using madn::MultimodalSlice;
using madn::Shape;
using madn::TensorF;

namespace fs = std::filesystem;

namespace {

MultimodalSlice random_slice(int channels, int h, int w, uint64_t seed, madn::Domain domain) {
    MultimodalSlice s;
    s.domain = domain;
    s.seed = seed;
    s.data = TensorF(Shape{1, channels, h, w});
    madn::Rng rng(seed);
    for (int64_t i = 0; i < s.data.numel(); ++i) s.data[i] = float(rng.uniform(-1.0, 1.0));
    return s;
}

double tensor_std(const TensorF& t) {
    double m = 0;
    for (int64_t i = 0; i < t.numel(); ++i) m += t[i];
    m /= double(t.numel());
    double v = 0;
    for (int64_t i = 0; i < t.numel(); ++i) v += (t[i] - m) * (t[i] - m);
    return std::sqrt(v / double(t.numel()));
}

TEST(ModelTest, BundleChannelsFollowMode) {
    EXPECT_EQ(madn::make_bundle(Mode::adn_ct, 0).n_channels, 1);
    EXPECT_EQ(madn::make_bundle(Mode::adn_mr, 0).n_channels, 1);
    EXPECT_EQ(madn::make_bundle(Mode::multichannel_adn, 0).n_channels, 2);
    EXPECT_EQ(madn::make_bundle(Mode::madn, 0).n_channels, 2);
}

TEST(ModelTest, EncoderShapeContract) {
    const ModelBundle m = madn::make_bundle(Mode::madn, 1);
    for (int size : {32, 64}) {
        const MultimodalSlice y = random_slice(2, size, size, 5, madn::Domain::clean);
        const LatentCode c = madn::encode_clean(m, y);
        EXPECT_EQ(c.kind, LatentCode::Kind::content);
        EXPECT_EQ(c.values.shape(), (Shape{1, madn::kContentChannels, size / 4, size / 4}));
        const LatentCode a = madn::encode_artefact(m, y);
        EXPECT_EQ(a.kind, LatentCode::Kind::artefact);
        EXPECT_EQ(a.values.shape(), (Shape{1, madn::kArtefactChannels, size / 4, size / 4}));
    }
    // Non-square but divisible by 4 works too.
    const MultimodalSlice r = random_slice(2, 32, 64, 6, madn::Domain::clean);
    EXPECT_EQ(madn::encode_clean(m, r).values.shape(), (Shape{1, 64, 8, 16}));
}

TEST(ModelTest, ChannelMismatchThrows) {
    const ModelBundle m1 = madn::make_bundle(Mode::adn_ct, 2);
    const MultimodalSlice two = random_slice(2, 32, 32, 7, madn::Domain::clean);
    EXPECT_THROW(madn::encode_clean(m1, two), madn::ValueError);
    EXPECT_THROW(madn::encode_corrupted(m1, two), madn::ValueError);
    EXPECT_THROW(madn::encode_artefact(m1, two), madn::ValueError);
    EXPECT_THROW(madn::discriminate(m1, madn::Domain::clean, two), madn::ValueError);
    const ModelBundle m2 = madn::make_bundle(Mode::madn, 2);
    const MultimodalSlice one = random_slice(1, 32, 32, 7, madn::Domain::clean);
    EXPECT_THROW(madn::encode_clean(m2, one), madn::ValueError);
}

TEST(ModelTest, DecodeRoundShape) {
    for (Mode mode : {Mode::adn_ct, Mode::madn}) {
        const ModelBundle m = madn::make_bundle(mode, 3);
        const MultimodalSlice y = random_slice(m.n_channels, 64, 64, 11, madn::Domain::clean);
        const LatentCode c = madn::encode_clean(m, y);
        const MultimodalSlice out = madn::decode_clean(m, c);
        EXPECT_EQ(out.data.shape(), y.data.shape());
        EXPECT_EQ(out.domain, madn::Domain::clean);

        const MultimodalSlice x = random_slice(m.n_channels, 64, 64, 12, madn::Domain::corrupted);
        const LatentCode ca = madn::encode_corrupted(m, x);
        const LatentCode a = madn::encode_artefact(m, x);
        const MultimodalSlice rec = madn::decode_corrupted(m, ca, a);
        EXPECT_EQ(rec.data.shape(), x.data.shape());
        EXPECT_EQ(rec.domain, madn::Domain::corrupted);
    }
}

TEST(ModelTest, DecodeKindAndShapeErrors) {
    const ModelBundle m = madn::make_bundle(Mode::madn, 3);
    const MultimodalSlice y = random_slice(2, 32, 32, 13, madn::Domain::clean);
    const LatentCode c = madn::encode_clean(m, y);
    const LatentCode a = madn::encode_artefact(m, y);
    EXPECT_THROW(madn::decode_clean(m, a), madn::ValueError);
    EXPECT_THROW(madn::decode_corrupted(m, a, a), madn::ValueError);
    EXPECT_THROW(madn::decode_corrupted(m, c, c), madn::ValueError);
}

TEST(ModelTest, OutputsBoundedUnderSaturation) {
    const ModelBundle m = madn::make_bundle(Mode::madn, 4);
    madn::Rng rng(21);
    LatentCode c;
    c.kind = LatentCode::Kind::content;
    c.values = TensorF(Shape{1, madn::kContentChannels, 16, 16});
    for (int64_t i = 0; i < c.values.numel(); ++i) c.values[i] = float(rng.uniform(-100.0, 100.0));
    LatentCode a;
    a.kind = LatentCode::Kind::artefact;
    a.values = TensorF(Shape{1, madn::kArtefactChannels, 16, 16});
    for (int64_t i = 0; i < a.values.numel(); ++i) a.values[i] = float(rng.uniform(-100.0, 100.0));
    for (const MultimodalSlice& out : {madn::decode_clean(m, c), madn::decode_corrupted(m, c, a)})
        for (int64_t i = 0; i < out.data.numel(); ++i) {
            ASSERT_GE(out.data[i], -1.0f);
            ASSERT_LE(out.data[i], 1.0f);
        }
}

TEST(ModelTest, DeterministicForward) {
    const ModelBundle m = madn::make_bundle(Mode::madn, 5);
    const MultimodalSlice y = random_slice(2, 64, 64, 31, madn::Domain::clean);
    const LatentCode c1 = madn::encode_clean(m, y);
    const LatentCode c2 = madn::encode_clean(m, y);
    EXPECT_EQ(std::memcmp(c1.values.data(), c2.values.data(), sizeof(float) * c1.values.numel()), 0);
    const TensorF d1 = madn::discriminate(m, madn::Domain::clean, y);
    const TensorF d2 = madn::discriminate(m, madn::Domain::clean, y);
    EXPECT_EQ(std::memcmp(d1.data(), d2.data(), sizeof(float) * d1.numel()), 0);

    // Same seed, same params; different seed, different params.
    const ModelBundle m2 = madn::make_bundle(Mode::madn, 5);
    const ModelBundle m3 = madn::make_bundle(Mode::madn, 6);
    const auto p1 = madn::named_params(m), p2 = madn::named_params(m2), p3 = madn::named_params(m3);
    ASSERT_EQ(p1.size(), p2.size());
    bool any_diff = false;
    for (size_t i = 0; i < p1.size(); ++i) {
        const TensorF &a = p1[i].param->value, &b = p2[i].param->value;
        EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(float) * a.numel()), 0) << p1[i].name;
        if (std::memcmp(a.data(), p3[i].param->value.data(), sizeof(float) * a.numel()) != 0)
            any_diff = true;
    }
    EXPECT_TRUE(any_diff);
}

TEST(ModelTest, InitializationScaleSane) {
    const ModelBundle m = madn::make_bundle(Mode::madn, 7);
    const MultimodalSlice y = random_slice(2, 64, 64, 41, madn::Domain::clean);
    const double enc_std = tensor_std(madn::encode_clean(m, y).values);
    EXPECT_GT(enc_std, 0.1);
    EXPECT_LT(enc_std, 10.0);
    const double art_std = tensor_std(madn::encode_artefact(m, y).values);
    EXPECT_GT(art_std, 0.1);
    EXPECT_LT(art_std, 10.0);
    const double disc_std = tensor_std(madn::discriminate(m, madn::Domain::clean, y));
    EXPECT_GT(disc_std, 1e-4);
    EXPECT_LT(disc_std, 100.0);
}

TEST(ModelTest, DiscriminatorPatchGrid) {
    const ModelBundle m = madn::make_bundle(Mode::madn, 8);
    for (int size : {32, 64}) {
        const MultimodalSlice y = random_slice(2, size, size, 51, madn::Domain::clean);
        const TensorF scores = madn::discriminate(m, madn::Domain::corrupted, y);
        const int expected = (size + 7) / 8;
        EXPECT_EQ(scores.shape(), (Shape{1, 1, expected, expected}));
    }
    // ceil semantics on sizes that do not divide by 8
    const MultimodalSlice y = random_slice(2, 20, 36, 52, madn::Domain::clean);
    const TensorF scores = madn::discriminate(m, madn::Domain::clean, y);
    EXPECT_EQ(scores.shape(), (Shape{1, 1, 3, 5}));
}

TEST(ModelTest, SharedGeneratorAcceptsBothContentCodes) {
    const ModelBundle m = madn::make_bundle(Mode::madn, 9);
    const MultimodalSlice y = random_slice(2, 64, 64, 61, madn::Domain::clean);
    const MultimodalSlice x = random_slice(2, 64, 64, 62, madn::Domain::corrupted);
    const LatentCode c = madn::encode_clean(m, y);
    const LatentCode ca = madn::encode_corrupted(m, x);
    EXPECT_EQ(c.values.shape(), ca.values.shape());
    const MultimodalSlice from_clean = madn::decode_clean(m, c);
    const MultimodalSlice from_corrupted = madn::decode_clean(m, ca);
    EXPECT_EQ(from_clean.data.shape(), from_corrupted.data.shape());
}

TEST(ModelTest, NamedParamsStableAndPartitioned) {
    const ModelBundle m = madn::make_bundle(Mode::madn, 10);
    const auto all = madn::named_params(m);
    const auto gen = madn::generator_params(m);
    const auto disc = madn::discriminator_params(m);
    EXPECT_EQ(all.size(), gen.size() + disc.size());
    std::set<std::string> names;
    for (const auto& np : all) names.insert(np.name);
    EXPECT_EQ(names.size(), all.size());  // unique
    for (const auto& np : gen) EXPECT_TRUE(np.name.rfind("disc_", 0) != 0) << np.name;
    for (const auto& np : disc) EXPECT_TRUE(np.name.rfind("disc_", 0) == 0) << np.name;
    // Identical architecture across same-mode bundles regardless of seed.
    EXPECT_EQ(madn::architecture_hash(m), madn::architecture_hash(madn::make_bundle(Mode::madn, 99)));
    EXPECT_NE(madn::architecture_hash(m), madn::architecture_hash(madn::make_bundle(Mode::adn_ct, 10)));
}

class CheckpointTest : public ::testing::Test {
   protected:
    fs::path dir_;
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("madn_ckpt_test_" + std::to_string(getpid()));
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
};

TEST_F(CheckpointTest, RoundTripBitExact) {
    const ModelBundle src = madn::make_bundle(Mode::madn, 11);
    madn::save_checkpoint(dir_ / "a.ckpt", src, 123);
    ModelBundle dst = madn::make_bundle(Mode::madn, 77);  // different init
    const madn::CheckpointInfo info = madn::load_checkpoint(dir_ / "a.ckpt", dst);
    EXPECT_EQ(info.step, 123);
    EXPECT_FALSE(info.has_optimizer);
    const auto ps = madn::named_params(src);
    const auto pd = madn::named_params(dst);
    for (size_t i = 0; i < ps.size(); ++i)
        EXPECT_EQ(std::memcmp(ps[i].param->value.data(), pd[i].param->value.data(),
                              sizeof(float) * ps[i].param->value.numel()),
                  0)
            << ps[i].name;
}

TEST_F(CheckpointTest, OptimizerStateRoundTrip) {
    const ModelBundle src = madn::make_bundle(Mode::multichannel_adn, 12);
    const auto params = madn::named_params(src);
    std::vector<madn::AdamSlot> opt;
    madn::Rng rng(91);
    for (const auto& np : params) {
        madn::AdamSlot slot;
        slot.m = TensorF(np.param->value.shape());
        slot.v = TensorF(np.param->value.shape());
        for (int64_t i = 0; i < slot.m.numel(); ++i) {
            slot.m[i] = float(rng.uniform(-1.0, 1.0));
            slot.v[i] = float(rng.uniform(0.0, 1.0));
        }
        opt.push_back(std::move(slot));
    }
    madn::save_checkpoint(dir_ / "b.ckpt", src, 7, &opt);
    ModelBundle dst = madn::make_bundle(Mode::multichannel_adn, 13);
    const madn::CheckpointInfo info = madn::load_checkpoint(dir_ / "b.ckpt", dst);
    EXPECT_EQ(info.step, 7);
    ASSERT_TRUE(info.has_optimizer);
    ASSERT_EQ(info.optimizer.size(), opt.size());
    for (size_t i = 0; i < opt.size(); ++i) {
        EXPECT_EQ(std::memcmp(info.optimizer[i].m.data(), opt[i].m.data(),
                              sizeof(float) * opt[i].m.numel()),
                  0);
        EXPECT_EQ(std::memcmp(info.optimizer[i].v.data(), opt[i].v.data(),
                              sizeof(float) * opt[i].v.numel()),
                  0);
    }
}

TEST_F(CheckpointTest, RejectsMismatchedArchitecture) {
    const ModelBundle src = madn::make_bundle(Mode::madn, 14);
    madn::save_checkpoint(dir_ / "c.ckpt", src, 0);
    ModelBundle wrong_mode = madn::make_bundle(Mode::adn_ct, 14);
    EXPECT_THROW(madn::load_checkpoint(dir_ / "c.ckpt", wrong_mode), madn::ValueError);
}

TEST_F(CheckpointTest, RejectsCorruptFiles) {
    ModelBundle m = madn::make_bundle(Mode::adn_ct, 15);
    EXPECT_THROW(madn::load_checkpoint(dir_ / "missing.ckpt", m), madn::IoError);

    madn::save_checkpoint(dir_ / "full.ckpt", m, 1);
    const auto size = fs::file_size(dir_ / "full.ckpt");
    std::ifstream in(dir_ / "full.ckpt", std::ios::binary);
    std::string bytes(size, '\0');
    in.read(bytes.data(), std::streamsize(size));
    std::ofstream out(dir_ / "trunc.ckpt", std::ios::binary);
    out.write(bytes.data(), std::streamsize(size / 2));
    out.close();
    EXPECT_THROW(madn::load_checkpoint(dir_ / "trunc.ckpt", m), madn::IoError);

    std::ofstream bad(dir_ / "bad.ckpt", std::ios::binary);
    bad << "definitely not a checkpoint";
    bad.close();
    EXPECT_THROW(madn::load_checkpoint(dir_ / "bad.ckpt", m), madn::IoError);
}

}  // namespace
