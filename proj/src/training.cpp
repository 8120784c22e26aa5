#include "madn/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "madn/rng.hpp"

namespace madn {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    MADN_CHECK(learning_rate > 0.0, "TrainConfig: learning_rate must be > 0, got ", learning_rate);
    MADN_CHECK(batch_size >= 1, "TrainConfig: batch_size must be >= 1, got ", batch_size);
    MADN_CHECK(max_steps >= 1, "TrainConfig: max_steps must be >= 1, got ", max_steps);
    MADN_CHECK(checkpoint_every >= 1, "TrainConfig: checkpoint_every must be >= 1");
    MADN_CHECK(val_every >= 1, "TrainConfig: val_every must be >= 1");
    weights.validate();
    lncc.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"mode", to_string(c.mode)},
                       {"learning_rate", c.learning_rate},
                       {"batch_size", c.batch_size},
                       {"max_steps", c.max_steps},
                       {"weights",
                        {{"lambda_adv_clean", c.weights.lambda_adv_clean},
                         {"lambda_adv_corrupted", c.weights.lambda_adv_corrupted},
                         {"lambda_rec", c.weights.lambda_rec},
                         {"lambda_cycle", c.weights.lambda_cycle},
                         {"lambda_art", c.weights.lambda_art},
                         {"lambda_sim", c.weights.lambda_sim}}},
                       {"lncc",
                        {{"sigma", c.lncc.sigma},
                         {"truncation_radius", c.lncc.truncation_radius},
                         {"epsilon", c.lncc.epsilon}}},
                       {"seed", c.seed},
                       {"checkpoint_every", c.checkpoint_every},
                       {"val_every", c.val_every},
                       {"dataset_dir", c.dataset_dir.string()},
                       {"out_dir", c.out_dir.string()}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
    if (j.contains("learning_rate")) j.at("learning_rate").get_to(c.learning_rate);
    if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
    if (j.contains("max_steps")) j.at("max_steps").get_to(c.max_steps);
    if (j.contains("weights")) {
        const auto& w = j.at("weights");
        if (w.contains("lambda_adv_clean")) w.at("lambda_adv_clean").get_to(c.weights.lambda_adv_clean);
        if (w.contains("lambda_adv_corrupted"))
            w.at("lambda_adv_corrupted").get_to(c.weights.lambda_adv_corrupted);
        if (w.contains("lambda_rec")) w.at("lambda_rec").get_to(c.weights.lambda_rec);
        if (w.contains("lambda_cycle")) w.at("lambda_cycle").get_to(c.weights.lambda_cycle);
        if (w.contains("lambda_art")) w.at("lambda_art").get_to(c.weights.lambda_art);
        if (w.contains("lambda_sim")) w.at("lambda_sim").get_to(c.weights.lambda_sim);
    }
    if (j.contains("lncc")) {
        const auto& l = j.at("lncc");
        if (l.contains("sigma")) l.at("sigma").get_to(c.lncc.sigma);
        if (l.contains("truncation_radius")) l.at("truncation_radius").get_to(c.lncc.truncation_radius);
        if (l.contains("epsilon")) l.at("epsilon").get_to(c.lncc.epsilon);
    }
    if (j.contains("seed")) j.at("seed").get_to(c.seed);
    if (j.contains("checkpoint_every")) j.at("checkpoint_every").get_to(c.checkpoint_every);
    if (j.contains("val_every")) j.at("val_every").get_to(c.val_every);
    if (j.contains("dataset_dir")) c.dataset_dir = j.at("dataset_dir").get<std::string>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
}

namespace {

// Channels of the stored CT+MR pair this mode trains on.
TensorF mode_channels_of(const MultimodalSlice& s, Mode mode) {
    MADN_CHECK(s.data.shape().c == 2, "training: stored slices must have 2 channels, got ",
               s.data.shape().str());
    if (mode == Mode::adn_ct) return s.channel(0);
    if (mode == Mode::adn_mr) return s.channel(1);
    return s.data.clone();
}

std::vector<TensorF> load_split(const fs::path& dir, const std::string& split, int count, Mode mode) {
    std::vector<TensorF> out;
    out.reserve(count);
    char name[64];
    for (int i = 0; i < count; ++i) {
        std::snprintf(name, sizeof(name), "sample_%05d", i);
        out.push_back(mode_channels_of(read_slice(dir / split / name), mode));
    }
    return out;
}

TensorF stack_batch(const std::vector<TensorF>& pool, const std::vector<int>& perm, int64_t pos,
                    int batch) {
    const Shape s = pool[0].shape();
    TensorF out(Shape{batch, s.c, s.h, s.w});
    const int64_t plane = int64_t(s.c) * s.h * s.w;
    for (int t = 0; t < batch; ++t) {
        const int idx = perm[size_t(pos * batch + t) % perm.size()];
        std::copy_n(pool[idx].data(), plane, out.data() + t * plane);
    }
    return out;
}

std::vector<int> epoch_perm(uint64_t seed, int64_t epoch, std::string_view split, size_t n) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(stream_seed(seed, uint64_t(epoch), split));
    for (size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.uniform_int(int(i) + 1)]);
    return idx;
}

uint64_t params_hash(const std::vector<NamedParam>& params) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& np : params)
        h = fnv1a(np.param->value.data(), sizeof(float) * size_t(np.param->value.numel()), h);
    return h;
}

void check_batch(const TensorF& b, int n_channels, const char* what) {
    const Shape s = b.shape();
    MADN_CHECK(s.n >= 1 && s.c == n_channels, "train_step: ", what, " has shape ", s.str(),
               ", expected ", n_channels, " channels");
    MADN_CHECK(s.h % 4 == 0 && s.w % 4 == 0, "train_step: ", what,
               " height/width must be divisible by 4, got ", s.str());
    MADN_CHECK(all_finite(b.data(), b.numel()), "train_step: ", what, " contains non-finite values");
}

// Corrected images for a validation batch, forward only.
double validation_sim(const ModelBundle& m, const TensorF& batch, const LnccConfig& lncc) {
    const ad::VarF x = ad::constant(batch.clone());
    const ad::VarF x_hat = m.gen_clean.forward(m.enc_corrupted.forward(x));
    return double(sim_loss(ad::slice_c(x_hat, 0, 1), ad::slice_c(x_hat, 1, 2), lncc)->value[0]);
}

void check_term_finite(double v, const char* term, int64_t step) {
    MADN_CHECK(std::isfinite(v), "train_step: non-finite loss term '", term, "' at step ", step + 1);
}

std::string checkpoint_name(int64_t step) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "ckpt_step_%06lld.ckpt", static_cast<long long>(step));
    return buf;
}

}  // namespace

TrainDataset load_train_dataset(const fs::path& dataset_dir, Mode mode) {
    const fs::path manifest_path = dataset_dir / "manifest.json";
    MADN_CHECK_IO(fs::exists(manifest_path), "training: no dataset manifest at ",
                  manifest_path.string());
    const nlohmann::json manifest = read_json_file(manifest_path);
    const int n_clean = manifest.at("splits").at("clean_train").at("count").get<int>();
    const int n_corrupted = manifest.at("splits").at("corrupted_train").at("count").get<int>();
    MADN_CHECK(n_clean >= 1 && n_corrupted >= 1, "training: dataset needs both unpaired splits");

    TrainDataset ds;
    ds.clean = load_split(dataset_dir, "clean_train", n_clean, mode);
    ds.corrupted = load_split(dataset_dir, "corrupted_train", n_corrupted, mode);
    ds.n_channels = mode_channels(mode);
    const Shape s0 = ds.clean[0].shape();
    MADN_CHECK(s0.h == s0.w && s0.h % 4 == 0, "training: image size must be square and divisible by 4, got ",
               s0.str());
    for (const auto* split : {&ds.clean, &ds.corrupted})
        for (const TensorF& t : *split)
            MADN_CHECK(t.shape() == s0, "training: inconsistent slice shapes in dataset");
    ds.image_size = s0.h;
    return ds;
}

Adam::Adam(std::vector<NamedParam> params, double lr, double beta1, double beta2, double eps)
    : learning_rate(lr), params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    slots_.reserve(params_.size());
    for (const auto& np : params_)
        slots_.push_back({TensorF(np.param->value.shape(), 0.0f), TensorF(np.param->value.shape(), 0.0f)});
}

void Adam::step() {
    ++t_;
    const float b1 = float(beta1_), b2 = float(beta2_);
    const float corr1 = 1.0f - std::pow(b1, float(t_));
    const float corr2 = 1.0f - std::pow(b2, float(t_));
    const float lr = float(learning_rate), eps = float(eps_);
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& node = *params_[i].param;
        TensorF& m = slots_[i].m;
        TensorF& v = slots_[i].v;
        const bool has_grad = !node.grad.empty();
        float* theta = node.value.data();
        const float* g = has_grad ? node.grad.data() : nullptr;
        float* mp = m.data();
        float* vp = v.data();
        const int64_t n = node.value.numel();
        for (int64_t k = 0; k < n; ++k) {
            const float gk = has_grad ? g[k] : 0.0f;
            mp[k] = b1 * mp[k] + (1.0f - b1) * gk;
            vp[k] = b2 * vp[k] + (1.0f - b2) * gk * gk;
            theta[k] -= lr * (mp[k] / corr1) / (std::sqrt(vp[k] / corr2) + eps);
        }
        MADN_CHECK(all_finite(theta, n), "Adam: parameter '", params_[i].name,
                   "' became non-finite after update ", t_);
    }
}

void Adam::clear_grads() {
    for (const auto& np : params_) ad::clear_grad(np.param);
}

void Adam::restore(const std::vector<AdamSlot>& slots, int64_t t) {
    MADN_CHECK(slots.size() == slots_.size(), "Adam: checkpoint has ", slots.size(),
               " optimizer slots, expected ", slots_.size());
    for (size_t i = 0; i < slots.size(); ++i) {
        MADN_CHECK(slots[i].m.shape() == slots_[i].m.shape(), "Adam: slot shape mismatch for '",
                   params_[i].name, "'");
        slots_[i] = {slots[i].m.clone(), slots[i].v.clone()};
    }
    t_ = t;
}

TrainState make_train_state(const TrainConfig& cfg) {
    ModelBundle model = make_bundle(cfg.mode, cfg.seed);
    Adam gen(generator_params(model), cfg.learning_rate);
    Adam disc(discriminator_params(model), cfg.learning_rate);
    return TrainState{std::move(model), std::move(gen), std::move(disc), 0};
}

PathOutputsT<float> build_paths(const ModelBundle& m, const TensorF& x_a_batch, const TensorF& y_batch) {
    check_batch(x_a_batch, m.n_channels, "x_a batch");
    check_batch(y_batch, m.n_channels, "y batch");
    MADN_CHECK(x_a_batch.shape() == y_batch.shape(), "train_step: batch shapes differ: ",
               x_a_batch.shape().str(), " vs ", y_batch.shape().str());

    PathOutputsT<float> p;
    p.x_a = ad::constant(x_a_batch.clone());
    p.y = ad::constant(y_batch.clone());
    p.c_a = m.enc_corrupted.forward(p.x_a);
    p.a = m.enc_artefact.forward(p.x_a);
    p.c = m.enc_clean.forward(p.y);
    p.x_hat = m.gen_clean.forward(p.c_a);
    p.y_hat = m.gen_clean.forward(p.c);
    p.x_hat_a = m.gen_corrupted.forward(fuse_codes(p.c_a, p.a));
    p.y_hat_a = m.gen_corrupted.forward(fuse_codes(p.c, p.a));
    p.cycle_rec_clean = m.gen_clean.forward(m.enc_corrupted.forward(p.y_hat_a));
    p.cycle_rec_corrupted = m.gen_corrupted.forward(fuse_codes(m.enc_clean.forward(p.x_hat), p.a));
    return p;
}

StepMetrics train_step(TrainState& st, const TensorF& x_a_batch, const TensorF& y_batch,
                       const TrainConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    st.gen_opt.learning_rate = cfg.learning_rate;
    st.disc_opt.learning_rate = cfg.learning_rate;

    const PathOutputsT<float> p = build_paths(st.model, x_a_batch, y_batch);

    // Discriminator sub-step on detached fakes.
    const uint64_t gen_hash0 = params_hash(st.gen_opt.params());
    st.gen_opt.clear_grads();
    st.disc_opt.clear_grads();
    const ad::VarF d_clean = adv_losses(st.model.disc_clean.forward(p.y),
                                        st.model.disc_clean.forward(ad::detach(p.x_hat)),
                                        AdvSide::discriminator);
    const ad::VarF d_corrupted = adv_losses(st.model.disc_corrupted.forward(p.x_a),
                                            st.model.disc_corrupted.forward(ad::detach(p.y_hat_a)),
                                            AdvSide::discriminator);
    check_term_finite(d_clean->value[0], "disc_clean", st.step);
    check_term_finite(d_corrupted->value[0], "disc_corrupted", st.step);
    ad::backward(ad::add(d_clean, d_corrupted));
    st.disc_opt.step();
    MADN_CHECK(params_hash(st.gen_opt.params()) == gen_hash0,
               "train_step: discriminator sub-step modified generator parameters");

    // Generator sub-step against the updated discriminators.
    const uint64_t disc_hash0 = params_hash(st.disc_opt.params());
    st.gen_opt.clear_grads();
    st.disc_opt.clear_grads();
    const AdvScoresT<float> adv{st.model.disc_clean.forward(p.x_hat),
                                st.model.disc_corrupted.forward(p.y_hat_a)};
    const auto [total, bd] = total_loss(p, adv, cfg.weights, cfg.mode, cfg.lncc);
    check_term_finite(bd.adv_clean, "adv_clean", st.step);
    check_term_finite(bd.adv_corrupted, "adv_corrupted", st.step);
    check_term_finite(bd.rec, "rec", st.step);
    check_term_finite(bd.cycle, "cycle", st.step);
    check_term_finite(bd.art, "art", st.step);
    check_term_finite(bd.sim, "sim", st.step);
    check_term_finite(bd.total, "total", st.step);
    ad::backward(total);
    st.gen_opt.step();
    MADN_CHECK(params_hash(st.disc_opt.params()) == disc_hash0,
               "train_step: generator sub-step modified discriminator parameters");

    ++st.step;
    StepMetrics sm;
    sm.step = st.step;
    sm.gen = bd;
    sm.disc_clean = double(d_clean->value[0]);
    sm.disc_corrupted = double(d_corrupted->value[0]);
    sm.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return sm;
}

TrainResult train(const TrainConfig& cfg, const std::optional<fs::path>& resume_from) {
    cfg.validate();
    const TrainDataset ds = load_train_dataset(cfg.dataset_dir, cfg.mode);

    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    MADN_CHECK_IO(fs::is_directory(cfg.out_dir), "train: cannot create output directory ",
                  cfg.out_dir.string());

    TrainState st = make_train_state(cfg);
    if (resume_from) {
        const CheckpointInfo info = load_checkpoint(*resume_from, st.model);
        MADN_CHECK(info.has_optimizer, "train: checkpoint ", resume_from->string(),
                   " carries no optimizer state, cannot resume");
        const size_t n_gen = st.gen_opt.params().size();
        MADN_CHECK(info.optimizer.size() == n_gen + st.disc_opt.params().size(),
                   "train: optimizer slot count mismatch in ", resume_from->string());
        st.gen_opt.restore({info.optimizer.begin(), info.optimizer.begin() + n_gen}, info.step);
        st.disc_opt.restore({info.optimizer.begin() + n_gen, info.optimizer.end()}, info.step);
        st.step = info.step;
    }

    const fs::path csv_path = cfg.out_dir / "metrics.csv";
    const bool append = resume_from.has_value() && fs::exists(csv_path);
    std::ofstream csv(csv_path, append ? std::ios::app : std::ios::trunc);
    MADN_CHECK_IO(csv.good(), "train: cannot open ", csv_path.string());
    if (!append)
        csv << "step,adv_clean,adv_corrupted,rec,cycle,art,sim,total,disc_clean,disc_corrupted,"
               "val_sim,seconds\n";

    // Fixed validation batch: the first corrupted training samples, never reshuffled.
    TensorF val_batch;
    if (cfg.mode == Mode::madn) {
        const int n_val = int(std::min<size_t>(8, ds.corrupted.size()));
        std::vector<int> first(n_val);
        std::iota(first.begin(), first.end(), 0);
        val_batch = stack_batch(ds.corrupted, first, 0, n_val);
    }

    const int64_t steps_per_epoch =
        std::max<int64_t>(1, int64_t(std::min(ds.clean.size(), ds.corrupted.size())) / cfg.batch_size);

    auto save = [&](const fs::path& path) {
        std::vector<AdamSlot> slots;
        slots.reserve(st.gen_opt.slots().size() + st.disc_opt.slots().size());
        for (const auto& s : st.gen_opt.slots()) slots.push_back({s.m.clone(), s.v.clone()});
        for (const auto& s : st.disc_opt.slots()) slots.push_back({s.m.clone(), s.v.clone()});
        save_checkpoint(path, st.model, st.step, &slots);
    };

    TrainResult result;
    result.metrics_csv = csv_path;
    int64_t epoch = -1;
    std::vector<int> perm_clean, perm_corrupted;
    while (st.step < cfg.max_steps) {
        const int64_t s0 = st.step;
        if (s0 / steps_per_epoch != epoch) {
            epoch = s0 / steps_per_epoch;
            perm_clean = epoch_perm(cfg.seed, epoch, "shuffle_clean", ds.clean.size());
            perm_corrupted = epoch_perm(cfg.seed, epoch, "shuffle_corrupted", ds.corrupted.size());
        }
        const int64_t pos = s0 % steps_per_epoch;
        const TensorF x_a = stack_batch(ds.corrupted, perm_corrupted, pos, cfg.batch_size);
        const TensorF y = stack_batch(ds.clean, perm_clean, pos, cfg.batch_size);

        StepMetrics sm = train_step(st, x_a, y, cfg);
        if (cfg.mode == Mode::madn &&
            (sm.step == 1 || sm.step % cfg.val_every == 0 || sm.step == cfg.max_steps))
            sm.val_sim = validation_sim(st.model, val_batch, cfg.lncc);

        char row[512];
        std::snprintf(row, sizeof(row), "%lld,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,",
                      static_cast<long long>(sm.step), sm.gen.adv_clean, sm.gen.adv_corrupted,
                      sm.gen.rec, sm.gen.cycle, sm.gen.art, sm.gen.sim, sm.gen.total, sm.disc_clean,
                      sm.disc_corrupted);
        csv << row;
        if (sm.val_sim) csv << *sm.val_sim;
        csv << ',' << sm.seconds << '\n';
        csv.flush();

        if (sm.step % cfg.checkpoint_every == 0 && sm.step != cfg.max_steps)
            save(cfg.out_dir / checkpoint_name(sm.step));
        result.metrics.push_back(std::move(sm));
        ++result.steps_run;
    }

    result.final_checkpoint = cfg.out_dir / "ckpt_final.ckpt";
    save(result.final_checkpoint);
    return result;
}

MultimodalSlice correct(const ModelBundle& m, const MultimodalSlice& x_a) {
    MultimodalSlice out = decode_clean(m, encode_corrupted(m, x_a));
    out.seed = x_a.seed;
    return out;
}

MultimodalSlice correct_pair(const ModelBundle& m, const MultimodalSlice& x_a_full) {
    MADN_CHECK(x_a_full.data.shape().c == 2, "correct_pair: expected a 2-channel CT+MR pair, got ",
               x_a_full.data.shape().str());
    if (m.n_channels == 2) return correct(m, x_a_full);

    const int own = m.mode == Mode::adn_ct ? 0 : 1;
    MultimodalSlice single;
    single.data = x_a_full.channel(own);
    single.domain = x_a_full.domain;
    single.seed = x_a_full.seed;
    const MultimodalSlice corrected = correct(m, single);

    MultimodalSlice out;
    out.data = x_a_full.data.clone();
    out.domain = Domain::clean;
    out.seed = x_a_full.seed;
    const Shape s = out.data.shape();
    const int64_t plane = int64_t(s.h) * s.w;
    std::copy_n(corrected.data.data(), plane, out.data.data() + own * plane);
    return out;
}

MultimodalSlice synthesize_artefact(const ModelBundle& m, const MultimodalSlice& y,
                                    const MultimodalSlice& x_a) {
    MultimodalSlice out = decode_corrupted(m, encode_clean(m, y), encode_artefact(m, x_a));
    out.seed = y.seed;
    return out;
}

}  // namespace madn
