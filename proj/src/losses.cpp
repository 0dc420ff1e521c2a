#include "rrpo/losses.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace rrpo::losses {

namespace {

using ad::Arr;
using ad::Tensor;

Tensor kl_graph(const Tensor& ref_log_dist, const Tensor& pol_log_dist) {
    // sum_t sum_a pi_ref(a|.) * (log pi_ref(a|.) - log pi_theta(a|.))
    Tensor ref_probs = ad::exp(ref_log_dist);  // constant branch
    return ad::sum(ad::mul(ref_probs, ad::sub(ref_log_dist, pol_log_dist)));
}

Arr span_mask(spans::SpanRange r, Eigen::Index len) {
    if (r.start < 1 || r.end < r.start || r.end > len) {
        throw IndexError("span [" + std::to_string(r.start) + "," + std::to_string(r.end) +
                         "] out of bounds for length " + std::to_string(len));
    }
    Arr m = Arr::Zero(len, 1);
    for (int i = r.start - 1; i <= r.end - 1; ++i) m(i, 0) = 1.0;
    return m;
}

// beta * [(sum pol - sum ref) over y+  minus  the same over y-]
Tensor full_margin(const PairScores& s, double beta) {
    Tensor pos = ad::sub(ad::sum(s.pos.pol_realized), ad::sum(s.pos.ref_realized));
    Tensor neg = ad::sub(ad::sum(s.neg.pol_realized), ad::sum(s.neg.ref_realized));
    return ad::mul(ad::sub(pos, neg), beta);
}

void require_scores_match(const PairScores& s, const spans::PreferencePair& pair) {
    if (s.pos.pol_realized.rows() != static_cast<Eigen::Index>(pair.preferred.size()) ||
        s.neg.pol_realized.rows() != static_cast<Eigen::Index>(pair.non_preferred.size())) {
        throw ShapeError("loss: scored lengths do not match pair '" + pair.id + "'");
    }
}

void require_valid(const spans::PreferencePair& pair, Method m) {
    auto violations = spans::validate(pair, span_need(m));
    if (!violations.empty()) {
        std::string msg = "pair '" + pair.id + "' rejected for " + to_string(m) + ":";
        for (const auto& v : violations) msg += "\n  - " + v;
        throw ValidationError(msg);
    }
}

ResponseScores constant_scores(const lm::TokenLogProbs& pol, const lm::TokenLogProbs& ref) {
    ResponseScores out;
    out.pol_log_dist = Tensor::leaf(pol.full_dist.array());
    out.pol_realized = Tensor::leaf(pol.realized.array());
    out.ref_log_dist = Tensor::leaf(ref.full_dist.array());
    out.ref_realized = Tensor::leaf(ref.realized.array());
    return out;
}

LossBreakdown eval_constants(const spans::PreferencePair& pair, const lm::TokenLogProbs& pol_pos,
                             const lm::TokenLogProbs& pol_neg, const lm::TokenLogProbs& ref_pos,
                             const lm::TokenLogProbs& ref_neg, const LossConfig& cfg) {
    PairScores s = from_logprobs(pol_pos, pol_neg, ref_pos, ref_neg);
    return build(s, pair, cfg).breakdown;
}

}  // namespace

Method method_from_string(const std::string& s) {
    std::string k;
    for (char c : s) k.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (k == "dpo") return Method::DPO;
    if (k == "ddpo") return Method::DDPO;
    if (k == "tdpo") return Method::TDPO;
    if (k == "dpa") return Method::DPA;
    if (k == "rrpo_rank" || k == "rrpo-rank") return Method::RRPO_RANK;
    if (k == "rrpo") return Method::RRPO;
    throw UsageError("unknown loss method '" + s + "'");
}

std::string to_string(Method m) {
    switch (m) {
        case Method::DPO: return "dpo";
        case Method::DDPO: return "ddpo";
        case Method::TDPO: return "tdpo";
        case Method::DPA: return "dpa";
        case Method::RRPO_RANK: return "rrpo_rank";
        case Method::RRPO: return "rrpo";
    }
    throw UsageError("bad method enum");
}

spans::SpanNeed span_need(Method m) {
    switch (m) {
        case Method::DPO:
        case Method::TDPO: return spans::SpanNeed::coarse;
        default: return spans::SpanNeed::refined;
    }
}

void LossConfig::validate() const {
    if (alpha < 0.0) throw ShapeError("loss config: alpha must be >= 0");
    if (beta <= 0.0) throw ShapeError("loss config: beta must be > 0");
    if (gamma < 1.0) throw ShapeError("loss config: gamma must be >= 1");
}

PairScores score_pair(const lm::ToyModel& policy, const lm::ToyModel& reference,
                      const spans::PreferencePair& pair) {
    PairScores out;
    auto fill = [&](ResponseScores& dst, const std::vector<int>& response) {
        lm::ScoredResponse pol = policy.score(pair.prompt, response);
        lm::ScoredResponse ref = reference.score(pair.prompt, response);
        dst.pol_log_dist = pol.log_dist;
        dst.pol_realized = pol.realized;
        // Reference models are snapshots with requires_grad off; detach keeps
        // the contract even when callers pass a live model.
        dst.ref_log_dist = ad::detach(ref.log_dist);
        dst.ref_realized = ad::detach(ref.realized);
    };
    fill(out.pos, pair.preferred);
    fill(out.neg, pair.non_preferred);
    return out;
}

PairScores from_logprobs(const lm::TokenLogProbs& pol_pos, const lm::TokenLogProbs& pol_neg,
                         const lm::TokenLogProbs& ref_pos, const lm::TokenLogProbs& ref_neg) {
    PairScores out;
    out.pos = constant_scores(pol_pos, ref_pos);
    out.neg = constant_scores(pol_neg, ref_neg);
    return out;
}

ad::Tensor margin_graph(const PairScores& s, const spans::PreferencePair& pair, double beta,
                        std::vector<double>* out_per_span) {
    const Eigen::Index len_pos = s.pos.pol_realized.rows();
    const Eigen::Index len_neg = s.neg.pol_realized.rows();
    Tensor raw_sum;
    if (out_per_span) out_per_span->clear();
    for (const auto& e : pair.spans.entries) {
        Tensor mask_pos = Tensor::leaf(span_mask(e.pref, len_pos));
        Tensor mask_neg = Tensor::leaf(span_mask(e.nonpref, len_neg));
        Tensor pos = ad::sub(ad::sum(ad::mul(s.pos.pol_realized, mask_pos)),
                             ad::sum(ad::mul(s.pos.ref_realized, mask_pos)));
        Tensor neg = ad::sub(ad::sum(ad::mul(s.neg.pol_realized, mask_neg)),
                             ad::sum(ad::mul(s.neg.ref_realized, mask_neg)));
        Tensor raw = ad::sub(pos, neg);
        raw_sum = raw_sum.defined() ? ad::add(raw_sum, raw) : raw;
        if (out_per_span) out_per_span->push_back(beta * raw.item());
    }
    if (!raw_sum.defined()) {
        throw ValidationError("pair '" + pair.id + "' has no spans; margin undefined");
    }
    return ad::mul(raw_sum, beta);
}

LossGraph build(const PairScores& scores, const spans::PreferencePair& pair,
                const LossConfig& cfg) {
    cfg.validate();
    require_valid(pair, cfg.method);
    require_scores_match(scores, pair);

    LossGraph out;
    LossBreakdown& bd = out.breakdown;

    // TKL(y+) is always reported in the breakdown; it joins the graph only
    // when the method uses it with a nonzero coefficient.
    auto tkl_pos_value = [&]() {
        return tkl(scores.pos.ref_log_dist.value().matrix(),
                   scores.pos.pol_log_dist.value().matrix());
    };

    switch (cfg.method) {
        case Method::DPO: {
            Tensor m = full_margin(scores, cfg.beta);
            out.total = ad::neg(ad::log_sigmoid(m));
            bd.total_margin = m.item();
            bd.rank_term = out.total.item();
            bd.tkl_term = tkl_pos_value();
            break;
        }
        case Method::RRPO_RANK: {
            Tensor u = margin_graph(scores, pair, cfg.beta, &bd.per_span_margins);
            out.total = ad::neg(ad::log_sigmoid(u));
            bd.total_margin = 0.0;
            for (double v : bd.per_span_margins) bd.total_margin += v;
            bd.rank_term = out.total.item();
            bd.tkl_term = tkl_pos_value();
            break;
        }
        case Method::RRPO: {
            Tensor u = margin_graph(scores, pair, cfg.beta, &bd.per_span_margins);
            Tensor rank = ad::neg(ad::log_sigmoid(u));
            bd.total_margin = 0.0;
            for (double v : bd.per_span_margins) bd.total_margin += v;
            bd.rank_term = rank.item();
            if (cfg.alpha != 0.0) {
                Tensor kl = kl_graph(scores.pos.ref_log_dist, scores.pos.pol_log_dist);
                bd.tkl_term = kl.item();
                out.total = ad::add(rank, ad::mul(kl, cfg.alpha));
            } else {
                bd.tkl_term = tkl_pos_value();
                out.total = rank;
            }
            break;
        }
        case Method::TDPO: {
            Tensor m = full_margin(scores, cfg.beta);
            Tensor arg = m;
            if (cfg.alpha != 0.0) {
                const ResponseScores& live = cfg.tdpo_swap_mapping ? scores.pos : scores.neg;
                const ResponseScores& frozen = cfg.tdpo_swap_mapping ? scores.neg : scores.pos;
                Tensor kl_live = ad::mul(kl_graph(live.ref_log_dist, live.pol_log_dist), cfg.beta);
                Tensor kl_frozen = ad::detach(
                    ad::mul(kl_graph(frozen.ref_log_dist, frozen.pol_log_dist), cfg.beta));
                arg = ad::sub(m, ad::mul(ad::sub(kl_live, kl_frozen), cfg.alpha));
            }
            out.total = ad::neg(ad::log_sigmoid(arg));
            bd.total_margin = m.item();
            bd.rank_term = out.total.item();
            bd.tkl_term = tkl_pos_value();
            break;
        }
        case Method::DDPO: {
            const Eigen::Index len_pos = scores.pos.pol_realized.rows();
            const Eigen::Index len_neg = scores.neg.pol_realized.rows();
            Arr diff_pos = Arr::Zero(len_pos, 1);
            Arr diff_neg = Arr::Zero(len_neg, 1);
            for (const auto& e : pair.spans.entries) {
                diff_pos += span_mask(e.pref, len_pos);
                diff_neg += span_mask(e.nonpref, len_neg);
            }
            // (1/N)[sum_same + gamma * sum_diff] = (1/N)[sum_all + (gamma-1) * sum_diff]
            auto weighted = [&](const Tensor& realized, const Arr& diff_mask, Eigen::Index n) {
                Tensor all = ad::sum(realized);
                Tensor diff = ad::sum(ad::mul(realized, Tensor::leaf(diff_mask)));
                return ad::mul(ad::add(all, ad::mul(diff, cfg.gamma - 1.0)),
                               1.0 / static_cast<double>(n));
            };
            Tensor pos = ad::sub(weighted(scores.pos.pol_realized, diff_pos, len_pos),
                                 weighted(scores.pos.ref_realized, diff_pos, len_pos));
            Tensor neg = ad::sub(weighted(scores.neg.pol_realized, diff_neg, len_neg),
                                 weighted(scores.neg.ref_realized, diff_neg, len_neg));
            Tensor m = ad::mul(ad::sub(pos, neg), cfg.beta);
            out.total = ad::neg(ad::log_sigmoid(m));
            bd.total_margin = m.item();
            bd.rank_term = out.total.item();
            bd.tkl_term = tkl_pos_value();
            break;
        }
        case Method::DPA: {
            const Eigen::Index len_pos = scores.pos.pol_realized.rows();
            const Eigen::Index len_neg = scores.neg.pol_realized.rows();
            const size_t n = pair.spans.entries.size();
            Tensor acc;
            for (const auto& e : pair.spans.entries) {
                Tensor sp = ad::sum(ad::mul(scores.pos.pol_realized,
                                            Tensor::leaf(span_mask(e.pref, len_pos))));
                Tensor sn = ad::sum(ad::mul(scores.neg.pol_realized,
                                            Tensor::leaf(span_mask(e.nonpref, len_neg))));
                // -log(P+ / (P+ + P-)) = -log sigmoid(S+ - S-)
                Tensor gap = ad::sub(sp, sn);
                bd.per_span_margins.push_back(gap.item());
                Tensor term = ad::neg(ad::log_sigmoid(gap));
                acc = acc.defined() ? ad::add(acc, term) : term;
            }
            Tensor rank = ad::mul(acc, 1.0 / static_cast<double>(n));
            bd.rank_term = rank.item();
            bd.total_margin = 0.0;
            for (double v : bd.per_span_margins) bd.total_margin += v;
            if (cfg.alpha != 0.0) {
                Tensor kl = kl_graph(scores.pos.ref_log_dist, scores.pos.pol_log_dist);
                bd.tkl_term = kl.item();
                out.total = ad::add(rank, ad::mul(kl, cfg.alpha));
            } else {
                bd.tkl_term = tkl_pos_value();
                out.total = rank;
            }
            break;
        }
    }
    bd.total = out.total.item();
    return out;
}

double subseq_reward(const lm::TokenLogProbs& policy, const lm::TokenLogProbs& reference,
                     spans::SpanRange span, double beta) {
    const Eigen::Index len = policy.realized.size();
    if (reference.realized.size() != len) {
        throw ShapeError("subseq_reward: policy and reference lengths differ");
    }
    if (span.start < 1 || span.end < span.start || span.end > len) {
        throw IndexError("subseq_reward: span [" + std::to_string(span.start) + "," +
                         std::to_string(span.end) + "] out of bounds for length " +
                         std::to_string(len));
    }
    double acc = 0.0;
    for (int j = span.start - 1; j <= span.end - 1; ++j) {
        acc += policy.realized(j) - reference.realized(j);
    }
    return beta * acc;
}

std::pair<double, std::vector<double>> total_margin(const spans::PreferencePair& pair,
                                                    const lm::TokenLogProbs& pol_pos,
                                                    const lm::TokenLogProbs& pol_neg,
                                                    const lm::TokenLogProbs& ref_pos,
                                                    const lm::TokenLogProbs& ref_neg, double beta) {
    require_valid(pair, Method::RRPO_RANK);
    std::vector<double> per_span;
    double u = 0.0;
    for (const auto& e : pair.spans.entries) {
        const double ui = subseq_reward(pol_pos, ref_pos, e.pref, beta) -
                          subseq_reward(pol_neg, ref_neg, e.nonpref, beta);
        per_span.push_back(ui);
        u += ui;
    }
    return {u, std::move(per_span)};
}

double tkl(const Eigen::MatrixXd& ref_full_dists, const Eigen::MatrixXd& pol_full_dists) {
    if (ref_full_dists.rows() != pol_full_dists.rows() ||
        ref_full_dists.cols() != pol_full_dists.cols()) {
        throw ShapeError("tkl: distribution shapes differ");
    }
    double acc = 0.0;
    for (Eigen::Index t = 0; t < ref_full_dists.rows(); ++t) {
        for (Eigen::Index a = 0; a < ref_full_dists.cols(); ++a) {
            acc += std::exp(ref_full_dists(t, a)) * (ref_full_dists(t, a) - pol_full_dists(t, a));
        }
    }
    return acc;
}

LossBreakdown dpo_loss(const lm::TokenLogProbs& pol_pos, const lm::TokenLogProbs& pol_neg,
                       const lm::TokenLogProbs& ref_pos, const lm::TokenLogProbs& ref_neg,
                       double beta) {
    spans::PreferencePair dummy;
    dummy.id = "<dpo>";
    dummy.preferred.assign(static_cast<size_t>(pol_pos.realized.size()), 4);
    dummy.non_preferred.assign(static_cast<size_t>(pol_neg.realized.size()), 5);
    LossConfig cfg;
    cfg.method = Method::DPO;
    cfg.beta = beta;
    cfg.alpha = 0.0;
    return eval_constants(dummy, pol_pos, pol_neg, ref_pos, ref_neg, cfg);
}

LossBreakdown rrpo_rank_loss(const spans::PreferencePair& pair, const lm::TokenLogProbs& pol_pos,
                             const lm::TokenLogProbs& pol_neg, const lm::TokenLogProbs& ref_pos,
                             const lm::TokenLogProbs& ref_neg, double beta) {
    LossConfig cfg;
    cfg.method = Method::RRPO_RANK;
    cfg.beta = beta;
    cfg.alpha = 0.0;
    return eval_constants(pair, pol_pos, pol_neg, ref_pos, ref_neg, cfg);
}

LossBreakdown rrpo_loss(const spans::PreferencePair& pair, const lm::TokenLogProbs& pol_pos,
                        const lm::TokenLogProbs& pol_neg, const lm::TokenLogProbs& ref_pos,
                        const lm::TokenLogProbs& ref_neg, double alpha, double beta) {
    LossConfig cfg;
    cfg.method = Method::RRPO;
    cfg.beta = beta;
    cfg.alpha = alpha;
    return eval_constants(pair, pol_pos, pol_neg, ref_pos, ref_neg, cfg);
}

LossBreakdown ddpo_loss(const spans::PreferencePair& pair, const lm::TokenLogProbs& pol_pos,
                        const lm::TokenLogProbs& pol_neg, const lm::TokenLogProbs& ref_pos,
                        const lm::TokenLogProbs& ref_neg, double beta, double gamma) {
    LossConfig cfg;
    cfg.method = Method::DDPO;
    cfg.beta = beta;
    cfg.gamma = gamma;
    cfg.alpha = 0.0;
    return eval_constants(pair, pol_pos, pol_neg, ref_pos, ref_neg, cfg);
}

LossBreakdown tdpo_loss(const spans::PreferencePair& pair, const lm::TokenLogProbs& pol_pos,
                        const lm::TokenLogProbs& pol_neg, const lm::TokenLogProbs& ref_pos,
                        const lm::TokenLogProbs& ref_neg, double alpha, double beta,
                        bool swap_mapping) {
    LossConfig cfg;
    cfg.method = Method::TDPO;
    cfg.beta = beta;
    cfg.alpha = alpha;
    cfg.tdpo_swap_mapping = swap_mapping;
    return eval_constants(pair, pol_pos, pol_neg, ref_pos, ref_neg, cfg);
}

LossBreakdown dpa_loss(const spans::PreferencePair& pair, const lm::TokenLogProbs& pol_pos,
                       const lm::TokenLogProbs& pol_neg, const lm::TokenLogProbs& ref_pos,
                       const lm::TokenLogProbs& ref_neg, double alpha) {
    LossConfig cfg;
    cfg.method = Method::DPA;
    cfg.alpha = alpha;
    cfg.beta = 1.0;  // unused by DPA
    return eval_constants(pair, pol_pos, pol_neg, ref_pos, ref_neg, cfg);
}

LossBreakdown evaluate(const spans::PreferencePair& pair, const lm::TokenLogProbs& pol_pos,
                       const lm::TokenLogProbs& pol_neg, const lm::TokenLogProbs& ref_pos,
                       const lm::TokenLogProbs& ref_neg, const LossConfig& cfg) {
    return eval_constants(pair, pol_pos, pol_neg, ref_pos, ref_neg, cfg);
}

}  // namespace rrpo::losses
