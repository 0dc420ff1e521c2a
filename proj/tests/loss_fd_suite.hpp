#pragma once

// Finite-difference gradients of every loss with respect to the policy
// logits feeding it. Shared by the unit tests and the acceptance suite.

#include <string>
#include <vector>

#include "oracles.hpp"
#include "testgen.hpp"
#include "rrpo/autodiff.hpp"
#include "rrpo/losses.hpp"

namespace loss_fd_suite {

using oracles::Arr;
using rrpo::ad::Tensor;
namespace L = rrpo::losses;

struct Worst {
    double err = 0.0;
    std::string where;
};

struct GraphInstance {
    rrpo::spans::PreferencePair pair;
    Arr logits_pos, logits_neg;      // policy logits (the FD variables)
    Arr ref_ld_pos, ref_ld_neg;      // reference log-dists (constants)
};

inline Arr fill_random(rrpo::rng::Rng& r, Eigen::Index rows, Eigen::Index cols) {
    Arr a(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) a(i, j) = r.uniform(-2.0, 2.0);
    }
    return a;
}

inline GraphInstance make_instance(uint64_t seed) {
    auto inst = testgen::random_instance(seed, /*vocab=*/10, /*min_len=*/5, /*max_len=*/9);
    GraphInstance g;
    g.pair = inst.pair;
    rrpo::rng::Rng r(rrpo::rng::splitmix64(seed));
    g.logits_pos = fill_random(r, inst.pol_pos.full_dist.rows(), inst.pol_pos.full_dist.cols());
    g.logits_neg = fill_random(r, inst.pol_neg.full_dist.rows(), inst.pol_neg.full_dist.cols());
    g.ref_ld_pos = inst.ref_pos.full_dist.array();
    g.ref_ld_neg = inst.ref_neg.full_dist.array();
    return g;
}

inline L::PairScores assemble(const GraphInstance& g, const Tensor& logits_pos,
                              const Tensor& logits_neg) {
    namespace ad = rrpo::ad;
    L::PairScores s;
    s.pos.pol_log_dist = ad::log_softmax(logits_pos);
    s.pos.pol_realized = ad::gather(s.pos.pol_log_dist, g.pair.preferred);
    s.pos.ref_log_dist = Tensor::leaf(g.ref_ld_pos);
    s.pos.ref_realized = ad::gather(s.pos.ref_log_dist, g.pair.preferred);
    s.neg.pol_log_dist = ad::log_softmax(logits_neg);
    s.neg.pol_realized = ad::gather(s.neg.pol_log_dist, g.pair.non_preferred);
    s.neg.ref_log_dist = Tensor::leaf(g.ref_ld_neg);
    s.neg.ref_realized = ad::gather(s.neg.ref_log_dist, g.pair.non_preferred);
    return s;
}

inline double loss_value(const GraphInstance& g, const Arr& lp, const Arr& ln,
                         const L::LossConfig& cfg) {
    L::PairScores s = assemble(g, Tensor::leaf(lp), Tensor::leaf(ln));
    return L::build(s, g.pair, cfg).total.item();
}

// The preferred-side regularizer sits behind a stop-gradient, so the function
// the library differentiates holds that term at its base value. The FD probe
// for the preferred logits must do the same.
inline double tdpo_value_pos_frozen(const GraphInstance& g, const Arr& lp,
                                    const L::LossConfig& cfg, double frozen) {
    namespace ad = rrpo::ad;
    L::PairScores s = assemble(g, Tensor::leaf(lp), Tensor::leaf(g.logits_neg));
    const double m = cfg.beta * (ad::sum(s.pos.pol_realized).item() -
                                 ad::sum(s.pos.ref_realized).item() -
                                 ad::sum(s.neg.pol_realized).item() +
                                 ad::sum(s.neg.ref_realized).item());
    const double live =
        cfg.beta * L::tkl(g.ref_ld_neg.matrix(), s.neg.pol_log_dist.value().matrix());
    return -oracles::logsigmoid(m - cfg.alpha * (live - frozen));
}

inline void check_method(Worst& w, const GraphInstance& g, const L::LossConfig& cfg) {
    Tensor lp = Tensor::leaf(g.logits_pos, true);
    Tensor ln = Tensor::leaf(g.logits_neg, true);
    L::PairScores s = assemble(g, lp, ln);
    rrpo::ad::backward(L::build(s, g.pair, cfg).total);

    Arr fd_pos;
    if (cfg.method == L::Method::TDPO && cfg.alpha != 0.0) {
        L::PairScores base = assemble(g, Tensor::leaf(g.logits_pos), Tensor::leaf(g.logits_neg));
        const double frozen =
            cfg.beta * L::tkl(g.ref_ld_pos.matrix(), base.pos.pol_log_dist.value().matrix());
        fd_pos = oracles::fd_grad(
            [&](const Arr& x) { return tdpo_value_pos_frozen(g, x, cfg, frozen); }, g.logits_pos);
    } else {
        fd_pos = oracles::fd_grad(
            [&](const Arr& x) { return loss_value(g, x, g.logits_neg, cfg); }, g.logits_pos);
    }
    const Arr fd_neg = oracles::fd_grad(
        [&](const Arr& x) { return loss_value(g, g.logits_pos, x, cfg); }, g.logits_neg);

    const double e1 = oracles::max_rel_err(Arr(lp.grad()), fd_pos, 1e-3);
    const double e2 = oracles::max_rel_err(Arr(ln.grad()), fd_neg, 1e-3);
    const double e = std::max(e1, e2);
    if (e > w.err) {
        w.err = e;
        w.where = L::to_string(cfg.method);
    }
}

inline Worst sweep(uint64_t seed, int n_instances) {
    Worst w;
    for (int i = 0; i < n_instances; ++i) {
        GraphInstance g = make_instance(rrpo::rng::subseed(seed, "lossfd-" + std::to_string(i)));
        rrpo::rng::Rng r(rrpo::rng::subseed(seed, "lossfd-coef-" + std::to_string(i)));
        const double beta = r.uniform(0.05, 1.0);
        const double alpha = r.uniform(0.01, 0.2);
        const double gamma = 1.0 + r.uniform(0.0, 2.0);
        for (L::Method m : {L::Method::DPO, L::Method::DDPO, L::Method::TDPO, L::Method::DPA,
                            L::Method::RRPO_RANK, L::Method::RRPO}) {
            L::LossConfig cfg;
            cfg.method = m;
            cfg.alpha = alpha;
            cfg.beta = beta;
            cfg.gamma = gamma;
            check_method(w, g, cfg);
        }
    }
    return w;
}

}  // namespace loss_fd_suite
