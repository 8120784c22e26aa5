#pragma once

#include <string>
#include <utility>

#include "madn/lncc.hpp"

// Loss terms of the disentanglement objective and their weighted assembly.

namespace madn {

enum class Mode { adn_ct, adn_mr, multichannel_adn, madn };

inline const char* to_string(Mode m) {
    switch (m) {
        case Mode::adn_ct: return "adn_ct";
        case Mode::adn_mr: return "adn_mr";
        case Mode::multichannel_adn: return "multichannel_adn";
        case Mode::madn: return "madn";
    }
    return "?";
}

inline Mode parse_mode(const std::string& s) {
    if (s == "adn_ct") return Mode::adn_ct;
    if (s == "adn_mr") return Mode::adn_mr;
    if (s == "multichannel_adn") return Mode::multichannel_adn;
    if (s == "madn") return Mode::madn;
    throw ValueError("unknown mode '" + s + "' (expected adn_ct|adn_mr|multichannel_adn|madn)");
}

// Image channels the networks see in each mode.
inline int mode_channels(Mode m) { return (m == Mode::adn_ct || m == Mode::adn_mr) ? 1 : 2; }

struct LossWeights {
    double lambda_adv_clean = 1.0;
    double lambda_adv_corrupted = 1.0;
    double lambda_rec = 20.0;
    double lambda_cycle = 20.0;
    double lambda_art = 20.0;
    double lambda_sim = 1.0;

    void validate() const {
        MADN_CHECK(lambda_adv_clean >= 0 && lambda_adv_corrupted >= 0 && lambda_rec >= 0 &&
                       lambda_cycle >= 0 && lambda_art >= 0 && lambda_sim >= 0,
                   "LossWeights: all weights must be non-negative");
    }
};

enum class AdvSide { discriminator, generator };

// Everything the forward passes produce that the losses consume. x_a / y are
// the corrupted and clean inputs; hats are decoded images; cycle_rec_clean is
// the clean-corrupted-clean reconstruction and cycle_rec_corrupted the
// corrupted-clean-corrupted one.
template <class T>
struct PathOutputsT {
    ad::VarT<T> x_a, y;
    ad::VarT<T> c, c_a, a;
    ad::VarT<T> x_hat, x_hat_a, y_hat, y_hat_a;
    ad::VarT<T> cycle_rec_corrupted, cycle_rec_clean;
};

// Generator-side discriminator responses on the decoded fakes.
template <class T>
struct AdvScoresT {
    ad::VarT<T> clean_fake;      // D_I(x_hat) logits
    ad::VarT<T> corrupted_fake;  // D_Ia(y_hat_a) logits
};

// Raw (unweighted) term values for logging. `cycle` holds only the
// clean-cycle term in the single-domain objective.
struct LossBreakdown {
    double adv_clean = 0.0;
    double adv_corrupted = 0.0;
    double rec = 0.0;
    double cycle = 0.0;
    double art = 0.0;
    double sim = 0.0;
    double total = 0.0;
};

namespace loss_detail {

template <class T>
ad::VarT<T> l1_mean(const ad::VarT<T>& a, const ad::VarT<T>& b) {
    return ad::mean_all(ad::abs_val(ad::sub(a, b)));
}

template <class T>
void check_finite(const ad::VarT<T>& v, const char* what) {
    MADN_CHECK(v && all_finite(v->value.data(), v->value.numel()), "adv_losses: non-finite ", what, " scores");
}

}  // namespace loss_detail

// Binary-cross-entropy adversarial objective on logit grids, via softplus for
// stability: discriminator side = E[softplus(-real)] + E[softplus(fake)],
// generator side (non-saturating) = E[softplus(-fake)].
template <class T>
ad::VarT<T> adv_losses(const ad::VarT<T>& d_scores_real, const ad::VarT<T>& d_scores_fake, AdvSide side) {
    loss_detail::check_finite(d_scores_fake, "fake");
    if (side == AdvSide::generator) return ad::mean_all(ad::softplus(ad::neg(d_scores_fake)));
    loss_detail::check_finite(d_scores_real, "real");
    return ad::add(ad::mean_all(ad::softplus(ad::neg(d_scores_real))),
                   ad::mean_all(ad::softplus(d_scores_fake)));
}

// E[|x_hat_a - x_a|] + E[|y_hat - y|]: self-reconstruction of both domains.
template <class T>
ad::VarT<T> rec_loss(const PathOutputsT<T>& p) {
    return ad::add(loss_detail::l1_mean(p.x_hat_a, p.x_a), loss_detail::l1_mean(p.y_hat, p.y));
}

// E[|(x_a - x_hat) - (y_hat_a - y)|]: removed artefact equals added artefact.
template <class T>
ad::VarT<T> art_loss(const PathOutputsT<T>& p) {
    return ad::mean_all(ad::abs_val(ad::sub(ad::sub(p.x_a, p.x_hat), ad::sub(p.y_hat_a, p.y))));
}

// Clean-corrupted-clean self-synthesis term.
template <class T>
ad::VarT<T> sr_loss(const PathOutputsT<T>& p) {
    return loss_detail::l1_mean(p.cycle_rec_clean, p.y);
}

// Both cycle terms: sr plus corrupted-clean-corrupted reconstruction.
template <class T>
ad::VarT<T> cycle_loss(const PathOutputsT<T>& p) {
    return ad::add(sr_loss(p), loss_detail::l1_mean(p.cycle_rec_corrupted, p.x_a));
}

// Similarity between the corrected CT and MR channels.
template <class T>
ad::VarT<T> sim_term(const PathOutputsT<T>& p, const LnccConfig& lncc) {
    MADN_CHECK(p.x_hat->value.shape().c == 2, "sim term needs a 2-channel corrected image, got ",
               p.x_hat->value.shape().str());
    return sim_loss(ad::slice_c(p.x_hat, 0, 1), ad::slice_c(p.x_hat, 1, 2), lncc);
}

// Weighted assembly. The full objective adds both cycle terms and the
// similarity term; the single-domain objective keeps only the clean-cycle
// term and omits similarity from the graph entirely (not zero-weighted).
template <class T>
std::pair<ad::VarT<T>, LossBreakdown> total_loss(const PathOutputsT<T>& p, const AdvScoresT<T>& adv,
                                                 const LossWeights& w, Mode mode,
                                                 const LnccConfig& lncc = LnccConfig{}) {
    w.validate();
    LossBreakdown bd;
    auto adv_c = adv_losses(ad::VarT<T>{}, adv.clean_fake, AdvSide::generator);
    auto adv_a = adv_losses(ad::VarT<T>{}, adv.corrupted_fake, AdvSide::generator);
    auto rec = rec_loss(p);
    auto cyc = mode == Mode::madn ? cycle_loss(p) : sr_loss(p);
    auto art = art_loss(p);
    bd.adv_clean = double(adv_c->value[0]);
    bd.adv_corrupted = double(adv_a->value[0]);
    bd.rec = double(rec->value[0]);
    bd.cycle = double(cyc->value[0]);
    bd.art = double(art->value[0]);
    auto total = ad::add(ad::add(ad::mul_scalar(adv_c, T(w.lambda_adv_clean)),
                                 ad::mul_scalar(adv_a, T(w.lambda_adv_corrupted))),
                         ad::add(ad::mul_scalar(rec, T(w.lambda_rec)),
                                 ad::add(ad::mul_scalar(cyc, T(w.lambda_cycle)),
                                         ad::mul_scalar(art, T(w.lambda_art)))));
    if (mode == Mode::madn) {
        auto sim = sim_term(p, lncc);
        bd.sim = double(sim->value[0]);
        total = ad::add(total, ad::mul_scalar(sim, T(w.lambda_sim)));
    }
    bd.total = double(total->value[0]);
    return {total, bd};
}

}  // namespace madn
