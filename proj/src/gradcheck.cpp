#include "rrpo/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "rrpo/rng.hpp"

namespace rrpo::gradcheck {

namespace {

using ad::Arr;
using ad::Tensor;

spans::PreferencePair random_pair(rng::Rng& r, const InstanceConfig& cfg, uint64_t seed) {
    spans::PreferencePair pair;
    pair.id = "grad-" + std::to_string(seed);
    const int vocab = cfg.model.vocab_size;
    pair.prompt.resize(static_cast<size_t>(cfg.prompt_len));
    for (auto& t : pair.prompt) t = r.pick(4, vocab - 1);

    const int len = r.pick(cfg.min_resp_len, cfg.max_resp_len);
    pair.preferred.resize(static_cast<size_t>(len));
    for (auto& t : pair.preferred) t = r.pick(4, vocab - 1);
    pair.non_preferred = pair.preferred;

    if (cfg.max_coverage >= 1.0) {
        // Degenerate setting: one span covering the whole response, which
        // makes the refined and coarse losses coincide.
        pair.spans.entries.push_back({1, {1, len}, {1, len}});
        for (int j = 0; j < len; ++j) {
            int sub = r.pick(4, vocab - 1);
            if (sub == pair.preferred[static_cast<size_t>(j)]) {
                sub = 4 + (sub - 3) % (vocab - 4);
            }
            pair.non_preferred[static_cast<size_t>(j)] = sub;
        }
        pair.concept_key = {"g" + std::to_string(seed), "h"};
        return pair;
    }

    const int budget = std::max(1, static_cast<int>(cfg.max_coverage * len));
    const int n_spans = std::min(r.pick(1, cfg.max_spans), budget);
    int cursor = 1;
    int used = 0;
    int phrase = 1;
    for (int i = 0; i < n_spans && cursor <= len; ++i) {
        const int remaining = n_spans - i;
        const int max_len = std::max(1, (budget - used) / remaining);
        const int span_len = std::min(r.pick(1, max_len), len - cursor + 1);
        const int slack = len - cursor + 1 - span_len - (remaining - 1) * 2;
        const int start = cursor + (slack > 0 ? r.pick(0, std::min(slack, 4)) : 0);
        if (start + span_len - 1 > len) break;
        pair.spans.entries.push_back({phrase++, {start, start + span_len - 1},
                                      {start, start + span_len - 1}});
        for (int j = start - 1; j <= start + span_len - 2; ++j) {
            int sub = r.pick(4, vocab - 1);
            if (sub == pair.preferred[static_cast<size_t>(j)]) {
                sub = 4 + (sub - 3) % (vocab - 4);
            }
            pair.non_preferred[static_cast<size_t>(j)] = sub;
        }
        used += span_len;
        cursor = start + span_len + 1;
    }
    pair.concept_key = {"g" + std::to_string(seed), "h"};
    return pair;
}

}  // namespace

Eigen::VectorXd flat_grad(const lm::ToyModel& m) {
    Eigen::Index total = 0;
    for (const auto& p : m.params()) total += p.size();
    Eigen::VectorXd out(total);
    Eigen::Index at = 0;
    for (const auto& p : m.params()) {
        const Arr& g = p.grad();
        if (g.size() == 0) {
            out.segment(at, p.size()).setZero();
        } else {
            out.segment(at, g.size()) = Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
        }
        at += p.size();
    }
    return out;
}

std::vector<Eigen::VectorXd> per_token_grads(const lm::ToyModel& policy,
                                             const std::vector<int>& prompt,
                                             const std::vector<int>& response) {
    lm::ScoredResponse scored = policy.score(prompt, response);
    std::vector<Eigen::VectorXd> out;
    out.reserve(response.size());
    const Eigen::Index len = scored.realized.rows();
    for (Eigen::Index j = 0; j < len; ++j) {
        Arr pick = Arr::Zero(len, 1);
        pick(j, 0) = 1.0;
        Tensor root = ad::sum(ad::mul(scored.realized, Tensor::leaf(pick)));
        ad::backward(root);
        out.push_back(flat_grad(policy));
    }
    return out;
}

Instance make_instance(uint64_t seed, const InstanceConfig& cfg) {
    rng::Rng r(rng::subseed(seed, "gradcheck-pair"));
    lm::ToyModelConfig mc = cfg.model;
    mc.seed = rng::subseed(seed, "gradcheck-model");
    Instance inst{lm::ToyModel(mc), lm::ToyModel(mc), random_pair(r, cfg, seed)};
    inst.reference = inst.policy;  // value copy at the anchor point

    // Move the policy along the ranking objective so the instance looks like
    // a mid-training state.
    losses::LossConfig rank_cfg;
    rank_cfg.method = losses::Method::RRPO_RANK;
    rank_cfg.beta = cfg.beta;
    rank_cfg.alpha = 0.0;
    for (int step = 0; step < cfg.descent_steps; ++step) {
        auto scores = losses::score_pair(inst.policy, inst.reference, inst.pair);
        auto loss = losses::build(scores, inst.pair, rank_cfg);
        ad::backward(loss.total);
        for (auto& p : inst.policy.params()) {
            p.mutable_value() -= cfg.descent_lr * p.grad();
        }
    }
    return inst;
}

double verify_margin_gradient(const Instance& inst, double beta) {
    auto scores = losses::score_pair(inst.policy, inst.reference, inst.pair);
    Tensor u = losses::margin_graph(scores, inst.pair, beta);
    ad::backward(u);
    const Eigen::VectorXd autodiff = flat_grad(inst.policy);

    const auto grads_pos = per_token_grads(inst.policy, inst.pair.prompt, inst.pair.preferred);
    const auto grads_neg = per_token_grads(inst.policy, inst.pair.prompt, inst.pair.non_preferred);
    Eigen::VectorXd assembled = Eigen::VectorXd::Zero(autodiff.size());
    for (const auto& e : inst.pair.spans.entries) {
        for (int j = e.pref.start - 1; j <= e.pref.end - 1; ++j) {
            assembled += grads_pos[static_cast<size_t>(j)];
        }
        for (int j = e.nonpref.start - 1; j <= e.nonpref.end - 1; ++j) {
            assembled -= grads_neg[static_cast<size_t>(j)];
        }
    }
    assembled *= beta;

    double worst = 0.0;
    for (Eigen::Index i = 0; i < autodiff.size(); ++i) {
        const double denom = std::max({std::abs(autodiff(i)), std::abs(assembled(i)), 1e-6});
        worst = std::max(worst, std::abs(autodiff(i) - assembled(i)) / denom);
    }
    return worst;
}

double rank_bound(double beta, double max_token_grad_norm, const std::vector<int>& lens_pos,
                  const std::vector<int>& lens_neg) {
    double total = 0.0;
    for (int l : lens_pos) total += l;
    for (int l : lens_neg) total += l;
    return beta * max_token_grad_norm * total;
}

double dpo_bound(double beta, double max_token_grad_norm, int len_pos, int len_neg) {
    return beta * max_token_grad_norm * (len_pos + len_neg);
}

GradBoundReport bound_report(const Instance& inst, double beta, double alpha, uint64_t seed) {
    GradBoundReport rep;
    rep.seed = seed;
    rep.len_pos = static_cast<int>(inst.pair.preferred.size());
    rep.len_neg = static_cast<int>(inst.pair.non_preferred.size());
    for (const auto& e : inst.pair.spans.entries) {
        rep.span_lengths_pos.push_back(e.pref.length());
        rep.span_lengths_neg.push_back(e.nonpref.length());
    }

    // M: max over all response tokens (both responses, every position).
    double m_const = 0.0;
    for (const auto& g : per_token_grads(inst.policy, inst.pair.prompt, inst.pair.preferred)) {
        m_const = std::max(m_const, g.norm());
    }
    for (const auto& g : per_token_grads(inst.policy, inst.pair.prompt, inst.pair.non_preferred)) {
        m_const = std::max(m_const, g.norm());
    }
    rep.max_token_grad_norm = m_const;

    auto norm_of = [&](losses::Method method) {
        losses::LossConfig cfg;
        cfg.method = method;
        cfg.beta = beta;
        cfg.alpha = method == losses::Method::RRPO ? alpha : 0.0;
        auto scores = losses::score_pair(inst.policy, inst.reference, inst.pair);
        auto loss = losses::build(scores, inst.pair, cfg);
        ad::backward(loss.total);
        return flat_grad(inst.policy).norm();
    };
    rep.measured_norm_dpo = norm_of(losses::Method::DPO);
    rep.measured_norm_rrpo_rank = norm_of(losses::Method::RRPO_RANK);
    rep.measured_norm_rrpo = norm_of(losses::Method::RRPO);

    rep.bound_dpo = dpo_bound(beta, m_const, rep.len_pos, rep.len_neg);
    rep.bound_rrpo_rank = rank_bound(beta, m_const, rep.span_lengths_pos, rep.span_lengths_neg);
    rep.sound_dpo = rep.measured_norm_dpo <= rep.bound_dpo;
    rep.sound_rank = rep.measured_norm_rrpo_rank <= rep.bound_rrpo_rank;
    rep.rank_lt_dpo = rep.measured_norm_rrpo_rank < rep.measured_norm_dpo;
    rep.rrpo_lt_rank = rep.measured_norm_rrpo < rep.measured_norm_rrpo_rank;
    rep.ordering_holds = rep.rank_lt_dpo && rep.rrpo_lt_rank;
    return rep;
}

OrderingStats ordering_experiment(int n_instances, double span_coverage_max, uint64_t seed,
                                  const InstanceConfig& base,
                                  std::vector<GradBoundReport>* rows) {
    InstanceConfig cfg = base;
    cfg.max_coverage = span_coverage_max;
    OrderingStats stats;
    for (int i = 0; i < n_instances; ++i) {
        const uint64_t inst_seed = rng::subseed(seed, "ordering-" + std::to_string(i));
        Instance inst = make_instance(inst_seed, cfg);
        GradBoundReport rep = bound_report(inst, cfg.beta, cfg.alpha, inst_seed);
        stats.n++;
        stats.rank_lt_dpo += rep.rank_lt_dpo ? 1 : 0;
        stats.rrpo_lt_rank += rep.rrpo_lt_rank ? 1 : 0;
        stats.sound_dpo += rep.sound_dpo ? 1 : 0;
        stats.sound_rank += rep.sound_rank ? 1 : 0;
        if (rows) rows->push_back(std::move(rep));
    }
    return stats;
}

void write_reports_csv(const std::filesystem::path& path,
                       const std::vector<GradBoundReport>& rows) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open report file for writing: " + path.string());
    os << "seed,measured_norm_dpo,measured_norm_rrpo_rank,measured_norm_rrpo,"
          "bound_dpo,bound_rrpo_rank,max_token_grad_norm,span_lengths_pos,span_lengths_neg,"
          "len_pos,len_neg,sound_dpo,sound_rank,rank_lt_dpo,rrpo_lt_rank,ordering_holds\n";
    os.precision(17);
    auto join = [](const std::vector<int>& v) {
        std::string s;
        for (size_t i = 0; i < v.size(); ++i) {
            if (i) s += ';';
            s += std::to_string(v[i]);
        }
        return s;
    };
    for (const auto& r : rows) {
        os << r.seed << ',' << r.measured_norm_dpo << ',' << r.measured_norm_rrpo_rank << ','
           << r.measured_norm_rrpo << ',' << r.bound_dpo << ',' << r.bound_rrpo_rank << ','
           << r.max_token_grad_norm << ',' << join(r.span_lengths_pos) << ','
           << join(r.span_lengths_neg) << ',' << r.len_pos << ',' << r.len_neg << ','
           << r.sound_dpo << ',' << r.sound_rank << ',' << r.rank_lt_dpo << ','
           << r.rrpo_lt_rank << ',' << r.ordering_holds << '\n';
    }
}

}  // namespace rrpo::gradcheck
