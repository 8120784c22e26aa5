#include "madn/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "madn/rng.hpp"

namespace madn {

namespace fs = std::filesystem;

using ad::add;
using ad::concat_c;
using ad::constant;
using ad::conv2d;
using ad::conv_transpose2d;
using ad::instance_norm;
using ad::leaky_relu;
using ad::make_leaf;
using ad::Pad4;
using ad::relu;
using ad::same_pad;
using ad::tanh_act;

namespace {

TensorF he_weights(Shape s, int fan_in, Rng& rng) {
    TensorF w(s);
    const float std_dev = std::sqrt(2.0f / float(fan_in));
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = float(rng.normal()) * std_dev;
    return w;
}

ConvBlock conv_block(int in_ch, int out_ch, int k, int stride, bool norm, Activation act, Rng& rng) {
    ConvBlock b;
    b.w = make_leaf(he_weights(Shape{out_ch, in_ch, k, k}, in_ch * k * k, rng));
    b.b = make_leaf(TensorF(Shape{1, out_ch, 1, 1}, 0.0f));
    if (norm) {
        b.gamma = make_leaf(TensorF(Shape{1, out_ch, 1, 1}, 1.0f));
        b.beta = make_leaf(TensorF(Shape{1, out_ch, 1, 1}, 0.0f));
    }
    b.stride = stride;
    b.act = act;
    return b;
}

DeconvBlock deconv_block(int in_ch, int out_ch, bool norm, Activation act, Rng& rng) {
    DeconvBlock b;
    b.w = make_leaf(he_weights(Shape{in_ch, out_ch, 4, 4}, in_ch * 16, rng));
    b.b = make_leaf(TensorF(Shape{1, out_ch, 1, 1}, 0.0f));
    if (norm) {
        b.gamma = make_leaf(TensorF(Shape{1, out_ch, 1, 1}, 1.0f));
        b.beta = make_leaf(TensorF(Shape{1, out_ch, 1, 1}, 0.0f));
    }
    b.act = act;
    return b;
}

ResBlock res_block(int in_ch, int out_ch, Rng& rng) {
    ResBlock r;
    r.conv1 = conv_block(in_ch, out_ch, 3, 1, true, Activation::relu, rng);
    r.conv2 = conv_block(out_ch, out_ch, 3, 1, true, Activation::none, rng);
    if (in_ch != out_ch) r.skip_w = make_leaf(he_weights(Shape{out_ch, in_ch, 1, 1}, in_ch, rng));
    return r;
}

Encoder make_encoder(int in_ch, int mid_ch, int out_ch, Rng& rng) {
    Encoder e;
    e.down1 = conv_block(in_ch, mid_ch, 4, 2, true, Activation::relu, rng);
    e.down2 = conv_block(mid_ch, out_ch, 4, 2, true, Activation::relu, rng);
    e.res1 = res_block(out_ch, out_ch, rng);
    e.res2 = res_block(out_ch, out_ch, rng);
    return e;
}

Generator make_generator(int code_ch, int out_ch, Rng& rng) {
    Generator g;
    g.res1 = res_block(code_ch, kContentChannels, rng);
    g.res2 = res_block(kContentChannels, kContentChannels, rng);
    g.up1 = deconv_block(kContentChannels, 32, true, Activation::relu, rng);
    g.up2 = deconv_block(32, out_ch, false, Activation::tanh, rng);
    return g;
}

Discriminator make_discriminator(int in_ch, Rng& rng) {
    Discriminator d;
    d.layer1 = conv_block(in_ch, 32, 4, 2, false, Activation::lrelu, rng);
    d.layer2 = conv_block(32, 64, 4, 2, true, Activation::lrelu, rng);
    d.layer3 = conv_block(64, 128, 4, 2, true, Activation::lrelu, rng);
    d.head = conv_block(128, 1, 7, 1, false, Activation::none, rng);
    return d;
}

VarF activate(VarF x, Activation act) {
    switch (act) {
        case Activation::relu:
            return relu(x);
        case Activation::lrelu:
            return leaky_relu(x, 0.2f);
        case Activation::tanh:
            return tanh_act(x);
        case Activation::none:
            return x;
    }
    throw ValueError("unknown activation");
}

VarF apply_block(const ConvBlock& blk, VarF x) {
    const Shape s = x->value.shape();
    const int k = blk.w->value.shape().h;
    x = conv2d(x, blk.w, blk.b, blk.stride, same_pad(s.h, s.w, k, blk.stride));
    if (blk.gamma) x = instance_norm(x, blk.gamma, blk.beta);
    return activate(std::move(x), blk.act);
}

VarF apply_block(const DeconvBlock& blk, VarF x) {
    x = conv_transpose2d(x, blk.w, blk.b, 2, 1);
    if (blk.gamma) x = instance_norm(x, blk.gamma, blk.beta);
    return activate(std::move(x), blk.act);
}

VarF apply_block(const ResBlock& blk, const VarF& x) {
    VarF h = apply_block(blk.conv1, x);
    h = apply_block(blk.conv2, h);
    const VarF skip = blk.skip_w ? conv2d(x, blk.skip_w, VarF(), 1, Pad4{0, 0, 0, 0}) : x;
    return add(skip, h);
}

}  // namespace

VarF Encoder::forward(const VarF& x) const {
    const Shape s = x->value.shape();
    MADN_CHECK(s.h % 4 == 0 && s.w % 4 == 0, "Encoder: spatial size ", s.h, "x", s.w,
               " must be divisible by 4");
    VarF h = apply_block(down1, x);
    h = apply_block(down2, h);
    h = apply_block(res1, h);
    return apply_block(res2, h);
}

VarF Generator::forward(const VarF& code) const {
    VarF h = apply_block(res1, code);
    h = apply_block(res2, h);
    h = apply_block(up1, h);
    return apply_block(up2, h);
}

VarF Discriminator::forward(const VarF& x) const {
    VarF h = apply_block(layer1, x);
    h = apply_block(layer2, h);
    h = apply_block(layer3, h);
    return apply_block(head, h);
}

ModelBundle make_bundle(Mode mode, uint64_t seed) {
    ModelBundle m;
    m.mode = mode;
    m.n_channels = mode_channels(mode);
    m.init_seed = seed;
    {
        Rng r(stream_seed(seed, 0, "enc_clean"));
        m.enc_clean = make_encoder(m.n_channels, 32, kContentChannels, r);
    }
    {
        Rng r(stream_seed(seed, 0, "enc_corrupted"));
        m.enc_corrupted = make_encoder(m.n_channels, 32, kContentChannels, r);
    }
    {
        Rng r(stream_seed(seed, 0, "enc_artefact"));
        m.enc_artefact = make_encoder(m.n_channels, 8, kArtefactChannels, r);
    }
    {
        Rng r(stream_seed(seed, 0, "gen_clean"));
        m.gen_clean = make_generator(kContentChannels, m.n_channels, r);
    }
    {
        Rng r(stream_seed(seed, 0, "gen_corrupted"));
        m.gen_corrupted = make_generator(kContentChannels + kArtefactChannels, m.n_channels, r);
    }
    {
        Rng r(stream_seed(seed, 0, "disc_clean"));
        m.disc_clean = make_discriminator(m.n_channels, r);
    }
    {
        Rng r(stream_seed(seed, 0, "disc_corrupted"));
        m.disc_corrupted = make_discriminator(m.n_channels, r);
    }
    return m;
}

namespace {

void collect(const std::string& prefix, const ConvBlock& b, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".w", b.w});
    out.push_back({prefix + ".b", b.b});
    if (b.gamma) {
        out.push_back({prefix + ".gamma", b.gamma});
        out.push_back({prefix + ".beta", b.beta});
    }
}

void collect(const std::string& prefix, const DeconvBlock& b, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".w", b.w});
    out.push_back({prefix + ".b", b.b});
    if (b.gamma) {
        out.push_back({prefix + ".gamma", b.gamma});
        out.push_back({prefix + ".beta", b.beta});
    }
}

void collect(const std::string& prefix, const ResBlock& b, std::vector<NamedParam>& out) {
    collect(prefix + ".conv1", b.conv1, out);
    collect(prefix + ".conv2", b.conv2, out);
    if (b.skip_w) out.push_back({prefix + ".skip_w", b.skip_w});
}

void collect(const std::string& prefix, const Encoder& e, std::vector<NamedParam>& out) {
    collect(prefix + ".down1", e.down1, out);
    collect(prefix + ".down2", e.down2, out);
    collect(prefix + ".res1", e.res1, out);
    collect(prefix + ".res2", e.res2, out);
}

void collect(const std::string& prefix, const Generator& g, std::vector<NamedParam>& out) {
    collect(prefix + ".res1", g.res1, out);
    collect(prefix + ".res2", g.res2, out);
    collect(prefix + ".up1", g.up1, out);
    collect(prefix + ".up2", g.up2, out);
}

void collect(const std::string& prefix, const Discriminator& d, std::vector<NamedParam>& out) {
    collect(prefix + ".layer1", d.layer1, out);
    collect(prefix + ".layer2", d.layer2, out);
    collect(prefix + ".layer3", d.layer3, out);
    collect(prefix + ".head", d.head, out);
}

}  // namespace

std::vector<NamedParam> generator_params(const ModelBundle& m) {
    std::vector<NamedParam> out;
    collect("enc_clean", m.enc_clean, out);
    collect("enc_corrupted", m.enc_corrupted, out);
    collect("enc_artefact", m.enc_artefact, out);
    collect("gen_clean", m.gen_clean, out);
    collect("gen_corrupted", m.gen_corrupted, out);
    return out;
}

std::vector<NamedParam> discriminator_params(const ModelBundle& m) {
    std::vector<NamedParam> out;
    collect("disc_clean", m.disc_clean, out);
    collect("disc_corrupted", m.disc_corrupted, out);
    return out;
}

std::vector<NamedParam> named_params(const ModelBundle& m) {
    std::vector<NamedParam> out = generator_params(m);
    std::vector<NamedParam> d = discriminator_params(m);
    out.insert(out.end(), std::make_move_iterator(d.begin()), std::make_move_iterator(d.end()));
    return out;
}

uint64_t architecture_hash(const ModelBundle& m) {
    std::string desc = std::string(to_string(m.mode)) + "|" + std::to_string(m.n_channels);
    for (const NamedParam& np : named_params(m)) {
        const Shape s = np.param->value.shape();
        desc += "|" + np.name + ":" + s.str();
    }
    return fnv1a_str(desc);
}

namespace {

VarF as_input(const ModelBundle& m, const MultimodalSlice& s, const char* op) {
    const Shape sh = s.data.shape();
    MADN_CHECK(sh.c == m.n_channels, op, ": slice has ", sh.c, " channels but the ",
               to_string(m.mode), " bundle expects ", m.n_channels);
    return constant(s.data.clone());
}

LatentCode code_of(VarF out, LatentCode::Kind kind, const char* op) {
    MADN_CHECK(all_finite(out->value.data(), out->value.numel()), op, ": non-finite latent code");
    return LatentCode{kind, out->value.clone()};
}

}  // namespace

LatentCode encode_clean(const ModelBundle& m, const MultimodalSlice& y) {
    return code_of(m.enc_clean.forward(as_input(m, y, "encode_clean")), LatentCode::Kind::content,
                   "encode_clean");
}

LatentCode encode_corrupted(const ModelBundle& m, const MultimodalSlice& x_a) {
    return code_of(m.enc_corrupted.forward(as_input(m, x_a, "encode_corrupted")),
                   LatentCode::Kind::content, "encode_corrupted");
}

LatentCode encode_artefact(const ModelBundle& m, const MultimodalSlice& x_a) {
    return code_of(m.enc_artefact.forward(as_input(m, x_a, "encode_artefact")),
                   LatentCode::Kind::artefact, "encode_artefact");
}

VarF fuse_codes(const VarF& content, const VarF& artefact) { return concat_c(content, artefact); }

MultimodalSlice decode_clean(const ModelBundle& m, const LatentCode& content) {
    MADN_CHECK(content.kind == LatentCode::Kind::content, "decode_clean: expected a content code");
    MADN_CHECK(content.values.shape().c == kContentChannels, "decode_clean: code has ",
               content.values.shape().c, " channels, expected ", kContentChannels);
    const VarF out = m.gen_clean.forward(constant(content.values.clone()));
    MultimodalSlice s;
    s.domain = Domain::clean;
    s.data = out->value.clone();
    return s;
}

MultimodalSlice decode_corrupted(const ModelBundle& m, const LatentCode& content,
                                 const LatentCode& artefact) {
    MADN_CHECK(content.kind == LatentCode::Kind::content && artefact.kind == LatentCode::Kind::artefact,
               "decode_corrupted: expected (content, artefact) codes");
    MADN_CHECK(content.values.shape().c == kContentChannels &&
                   artefact.values.shape().c == kArtefactChannels,
               "decode_corrupted: code channels (", content.values.shape().c, ", ",
               artefact.values.shape().c, ") do not match (", kContentChannels, ", ",
               kArtefactChannels, ")");
    const VarF fused = fuse_codes(constant(content.values.clone()), constant(artefact.values.clone()));
    const VarF out = m.gen_corrupted.forward(fused);
    MultimodalSlice s;
    s.domain = Domain::corrupted;
    s.data = out->value.clone();
    return s;
}

TensorF discriminate(const ModelBundle& m, Domain which, const MultimodalSlice& img) {
    const VarF in = as_input(m, img, "discriminate");
    const VarF out = which == Domain::clean ? m.disc_clean.forward(in) : m.disc_corrupted.forward(in);
    MADN_CHECK(all_finite(out->value.data(), out->value.numel()), "discriminate: non-finite scores");
    return out->value.clone();
}

namespace {

constexpr char kMagic[8] = {'M', 'A', 'D', 'N', 'C', 'K', 'P', '1'};

}  // namespace

void save_checkpoint(const fs::path& path, const ModelBundle& bundle, int64_t step,
                     const std::vector<AdamSlot>* optimizer) {
    const auto params = named_params(bundle);
    if (optimizer) {
        MADN_CHECK(optimizer->size() == params.size(), "save_checkpoint: ", optimizer->size(),
                   " optimizer slots for ", params.size(), " parameters");
        for (size_t i = 0; i < params.size(); ++i)
            MADN_CHECK((*optimizer)[i].m.shape() == params[i].param->value.shape() &&
                           (*optimizer)[i].v.shape() == params[i].param->value.shape(),
                       "save_checkpoint: optimizer slot shape mismatch at ", params[i].name);
    }
    nlohmann::json header;
    header["format"] = "madn_checkpoint_v1";
    header["mode"] = to_string(bundle.mode);
    header["n_channels"] = bundle.n_channels;
    header["arch_hash"] = architecture_hash(bundle);
    header["step"] = step;
    header["has_optimizer"] = optimizer != nullptr;
    auto plist = nlohmann::json::array();
    for (const NamedParam& np : params) {
        const Shape s = np.param->value.shape();
        plist.push_back({{"name", np.name}, {"shape", {s.n, s.c, s.h, s.w}}});
    }
    header["params"] = std::move(plist);
    const std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    MADN_CHECK_IO(f.good(), "cannot open ", path.string(), " for writing");
    f.write(kMagic, sizeof(kMagic));
    const uint64_t hlen = hs.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(hs.data(), std::streamsize(hs.size()));
    for (const NamedParam& np : params)
        f.write(reinterpret_cast<const char*>(np.param->value.data()),
                std::streamsize(sizeof(float) * np.param->value.numel()));
    if (optimizer)
        for (const AdamSlot& slot : *optimizer) {
            f.write(reinterpret_cast<const char*>(slot.m.data()),
                    std::streamsize(sizeof(float) * slot.m.numel()));
            f.write(reinterpret_cast<const char*>(slot.v.data()),
                    std::streamsize(sizeof(float) * slot.v.numel()));
        }
    f.flush();
    MADN_CHECK_IO(f.good(), "short write to ", path.string());
}

namespace {

// Validates magic bytes and format tag, returns the parsed JSON header with
// the stream positioned at the first parameter blob.
nlohmann::json read_checkpoint_header(std::ifstream& f, const fs::path& path) {
    MADN_CHECK_IO(f.good(), "cannot open checkpoint ", path.string());
    char magic[sizeof(kMagic)];
    f.read(magic, sizeof(magic));
    MADN_CHECK_IO(f.good() && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0, path.string(),
                  ": not a checkpoint file");
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    MADN_CHECK_IO(f.good() && hlen > 0 && hlen < (16ull << 20), path.string(), ": bad header length");
    std::string hs(hlen, '\0');
    f.read(hs.data(), std::streamsize(hlen));
    MADN_CHECK_IO(f.good(), path.string(), ": truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": corrupt checkpoint header: " + e.what());
    }
    MADN_CHECK_IO(header.value("format", "") == "madn_checkpoint_v1", path.string(),
                  ": unknown checkpoint format");
    return header;
}

}  // namespace

ModelBundle load_bundle(const fs::path& path) {
    Mode mode;
    {
        std::ifstream f(path, std::ios::binary);
        mode = parse_mode(read_checkpoint_header(f, path).at("mode").get<std::string>());
    }
    ModelBundle bundle = make_bundle(mode, 0);
    load_checkpoint(path, bundle);
    return bundle;
}

CheckpointInfo load_checkpoint(const fs::path& path, ModelBundle& bundle) {
    std::ifstream f(path, std::ios::binary);
    const nlohmann::json header = read_checkpoint_header(f, path);
    MADN_CHECK(header.at("mode").get<std::string>() == to_string(bundle.mode), path.string(),
               ": checkpoint mode ", header.at("mode").get<std::string>(),
               " does not match bundle mode ", to_string(bundle.mode));
    MADN_CHECK(header.at("arch_hash").get<uint64_t>() == architecture_hash(bundle), path.string(),
               ": architecture mismatch");

    const auto params = named_params(bundle);
    const auto& plist = header.at("params");
    MADN_CHECK(plist.size() == params.size(), path.string(), ": checkpoint has ", plist.size(),
               " parameters, bundle has ", params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        MADN_CHECK(plist[i].at("name").get<std::string>() == params[i].name, path.string(),
                   ": parameter order mismatch at index ", i);
        const auto sh = plist[i].at("shape");
        const Shape s = params[i].param->value.shape();
        MADN_CHECK(sh[0].get<int>() == s.n && sh[1].get<int>() == s.c && sh[2].get<int>() == s.h &&
                       sh[3].get<int>() == s.w,
                   path.string(), ": shape mismatch at ", params[i].name);
    }
    for (const NamedParam& np : params) {
        TensorF t(np.param->value.shape());
        f.read(reinterpret_cast<char*>(t.data()), std::streamsize(sizeof(float) * t.numel()));
        MADN_CHECK_IO(f.good(), path.string(), ": truncated at ", np.name);
        MADN_CHECK_IO(all_finite(t.data(), t.numel()), path.string(), ": non-finite values in ", np.name);
        np.param->value = std::move(t);
    }
    CheckpointInfo info;
    info.step = header.at("step").get<int64_t>();
    info.has_optimizer = header.at("has_optimizer").get<bool>();
    if (info.has_optimizer) {
        info.optimizer.reserve(params.size());
        for (const NamedParam& np : params) {
            AdamSlot slot;
            slot.m = TensorF(np.param->value.shape());
            slot.v = TensorF(np.param->value.shape());
            f.read(reinterpret_cast<char*>(slot.m.data()), std::streamsize(sizeof(float) * slot.m.numel()));
            f.read(reinterpret_cast<char*>(slot.v.data()), std::streamsize(sizeof(float) * slot.v.numel()));
            MADN_CHECK_IO(f.good(), path.string(), ": truncated optimizer state at ", np.name);
            info.optimizer.push_back(std::move(slot));
        }
    }
    f.peek();
    MADN_CHECK_IO(f.eof(), path.string(), ": trailing bytes after checkpoint payload");
    return info;
}

}  // namespace madn
