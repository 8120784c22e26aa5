#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "madn/ad.hpp"
#include "madn/image.hpp"
#include "madn/losses.hpp"
#include "madn/nn_ops.hpp"

// The seven trainable networks: three encoders, two generators, two patch
// discriminators, parameterized over channel count so the same code serves
// single-modality and multimodal modes. Parameters are autodiff leaves held
// by the bundle and reused across training steps.

namespace madn {

using ad::VarF;

constexpr int kContentChannels = 64;
constexpr int kArtefactChannels = 16;

enum class Activation { none, relu, lrelu, tanh };

// conv (stride s, SAME padding) -> optional instance norm -> activation
struct ConvBlock {
    VarF w, b;         // w (Cout,Cin,k,k), b (1,Cout,1,1)
    VarF gamma, beta;  // null when the block has no normalization
    int stride = 1;
    Activation act = Activation::none;
};

// transposed conv k4 s2 p1 (doubles H and W) -> optional IN -> activation
struct DeconvBlock {
    VarF w, b;  // w (Cin,Cout,k,k)
    VarF gamma, beta;
    Activation act = Activation::none;
};

// conv3-IN-ReLU-conv3-IN plus skip; 1x1 projection when channel counts differ
struct ResBlock {
    ConvBlock conv1, conv2;
    VarF skip_w;
};

struct LatentCode {
    enum class Kind { content, artefact };
    Kind kind = Kind::content;
    TensorF values;  // (1, channels, H/4, W/4)
};

struct Encoder {
    ConvBlock down1, down2;
    ResBlock res1, res2;

    // x: (N, C, H, W) with H, W divisible by 4; output at H/4 x W/4.
    VarF forward(const VarF& x) const;
};

struct Generator {
    ResBlock res1, res2;
    DeconvBlock up1, up2;  // up2 ends in tanh

    VarF forward(const VarF& code) const;
};

struct Discriminator {
    ConvBlock layer1, layer2, layer3, head;

    // Patch realness logits, ceil(H/8) x ceil(W/8), receptive field 70 px.
    VarF forward(const VarF& x) const;
};

struct ModelBundle {
    Mode mode = Mode::madn;
    int n_channels = 2;
    uint64_t init_seed = 0;
    Encoder enc_clean, enc_corrupted, enc_artefact;
    Generator gen_clean, gen_corrupted;
    Discriminator disc_clean, disc_corrupted;
};

// He-initialized bundle; channel count follows the mode.
ModelBundle make_bundle(Mode mode, uint64_t seed);

struct NamedParam {
    std::string name;
    VarF param;
};

// Stable enumeration order; names are unique and double as checkpoint keys.
std::vector<NamedParam> named_params(const ModelBundle& m);
std::vector<NamedParam> generator_params(const ModelBundle& m);      // encoders + generators
std::vector<NamedParam> discriminator_params(const ModelBundle& m);  // both discriminators

// Hash over mode, channel count and every parameter's name and shape.
uint64_t architecture_hash(const ModelBundle& m);

// Slice-level inference surface. All are deterministic in (params, input).
LatentCode encode_clean(const ModelBundle& m, const MultimodalSlice& y);
LatentCode encode_corrupted(const ModelBundle& m, const MultimodalSlice& x_a);
LatentCode encode_artefact(const ModelBundle& m, const MultimodalSlice& x_a);
MultimodalSlice decode_clean(const ModelBundle& m, const LatentCode& content);
MultimodalSlice decode_corrupted(const ModelBundle& m, const LatentCode& content, const LatentCode& artefact);
TensorF discriminate(const ModelBundle& m, Domain which, const MultimodalSlice& img);

// Fuse content and artefact codes for the corrupted-domain generator.
VarF fuse_codes(const VarF& content, const VarF& artefact);

// Checkpointing. Optimizer slots (first/second moment per parameter, in
// named_params order) ride along so training can resume bit-exactly.
struct AdamSlot {
    TensorF m, v;
};

void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle, int64_t step,
                     const std::vector<AdamSlot>* optimizer = nullptr);

struct CheckpointInfo {
    int64_t step = 0;
    bool has_optimizer = false;
    std::vector<AdamSlot> optimizer;
};

// Loads parameter values into an existing bundle of the same architecture.
CheckpointInfo load_checkpoint(const std::filesystem::path& path, ModelBundle& bundle);

// Constructs a bundle of the mode recorded in the checkpoint and loads it.
ModelBundle load_bundle(const std::filesystem::path& path);

}  // namespace madn
