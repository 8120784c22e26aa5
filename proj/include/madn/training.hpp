#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "madn/model.hpp"

// Unpaired adversarial training loop: alternating discriminator/generator
// updates with Adam, deterministic epoch shuffling, CSV metrics logging and
// resumable checkpoints. Also hosts the inference-time correction operation.

namespace madn {

struct TrainConfig {
    Mode mode = Mode::madn;
    double learning_rate = 1e-5;
    int batch_size = 4;
    int64_t max_steps = 1;
    LossWeights weights;
    LnccConfig lncc;
    uint64_t seed = 0;
    int64_t checkpoint_every = 500;
    int64_t val_every = 50;  // validation-similarity cadence (madn only)
    std::filesystem::path dataset_dir;
    std::filesystem::path out_dir;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Both unpaired training splits held in memory, restricted to the channels
// the mode consumes. Tensors are (1, C, H, W).
struct TrainDataset {
    std::vector<TensorF> clean;
    std::vector<TensorF> corrupted;
    int image_size = 0;
    int n_channels = 0;
};

TrainDataset load_train_dataset(const std::filesystem::path& dataset_dir, Mode mode);

// Adam with decoupled slots per parameter; step() applies whatever gradients
// the last backward() left on the parameters and verifies they stay finite.
class Adam {
   public:
    Adam(std::vector<NamedParam> params, double lr, double beta1 = 0.5, double beta2 = 0.999,
         double eps = 1e-8);

    void step();
    void clear_grads();
    int64_t t() const { return t_; }
    void restore(const std::vector<AdamSlot>& slots, int64_t t);
    const std::vector<AdamSlot>& slots() const { return slots_; }
    const std::vector<NamedParam>& params() const { return params_; }
    double learning_rate = 0.0;

   private:
    std::vector<NamedParam> params_;
    std::vector<AdamSlot> slots_;
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

// Model plus the two optimizers and the global step counter.
struct TrainState {
    ModelBundle model;
    Adam gen_opt;   // encoders + generators
    Adam disc_opt;  // both discriminators
    int64_t step = 0;
};

TrainState make_train_state(const TrainConfig& cfg);

// All encoder/generator paths for a batch pair, ready for the loss assembly.
PathOutputsT<float> build_paths(const ModelBundle& m, const TensorF& x_a_batch, const TensorF& y_batch);

struct StepMetrics {
    int64_t step = 0;
    LossBreakdown gen;
    double disc_clean = 0.0;
    double disc_corrupted = 0.0;
    double seconds = 0.0;
    std::optional<double> val_sim;
};

// One alternating update: discriminators on detached fakes first, then
// encoders+generators on the total objective against the updated
// discriminators. Parameter partitions are hash-checked around each sub-step.
StepMetrics train_step(TrainState& st, const TensorF& x_a_batch, const TensorF& y_batch,
                       const TrainConfig& cfg);

struct TrainResult {
    std::filesystem::path final_checkpoint;
    std::filesystem::path metrics_csv;
    int64_t steps_run = 0;
    std::vector<StepMetrics> metrics;
};

// Full run: seeded epoch shuffling (one epoch = a pass over the smaller
// split), periodic checkpoints carrying optimizer state, CSV metrics log, and
// in madn mode a similarity trace on a fixed validation batch of 8 corrupted
// training samples. Resuming from a checkpoint continues the exact trace an
// uninterrupted run would have produced.
TrainResult train(const TrainConfig& cfg, const std::optional<std::filesystem::path>& resume_from = {});

// G_I(E_Ia(x_a)): the artefact-removal path. Input channels must match the
// model; output values lie in (-1, 1).
MultimodalSlice correct(const ModelBundle& m, const MultimodalSlice& x_a);

// Correction for a full CT+MR pair regardless of mode: single-modality models
// correct their own channel and pass the other through unchanged.
MultimodalSlice correct_pair(const ModelBundle& m, const MultimodalSlice& x_a_full);

// G_Ia(E_I(y), E_a(x_a)): transfers the artefact of x_a onto the anatomy of y.
MultimodalSlice synthesize_artefact(const ModelBundle& m, const MultimodalSlice& y,
                                    const MultimodalSlice& x_a);

}  // namespace madn
