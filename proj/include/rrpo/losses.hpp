#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "rrpo/autodiff.hpp"
#include "rrpo/spans.hpp"
#include "rrpo/toylm.hpp"

namespace rrpo::losses {

enum class Method { DPO, DDPO, TDPO, DPA, RRPO_RANK, RRPO };

Method method_from_string(const std::string& s);
std::string to_string(Method m);

// Which losses need at least one annotated span.
spans::SpanNeed span_need(Method m);

struct LossConfig {
    Method method = Method::RRPO;
    double alpha = 0.05;  // token-wise KL weight
    double beta = 0.5;    // reward scale
    double gamma = 1.0;   // weight on differing segments (DDPO)
    // The regularizer applies the live TKL to the non-preferred response and
    // freezes the preferred one; this switch flips that mapping.
    bool tdpo_swap_mapping = false;

    void validate() const;
};

struct LossBreakdown {
    double total = 0.0;
    double rank_term = 0.0;
    double tkl_term = 0.0;  // TKL(y+) against the reference
    std::vector<double> per_span_margins;
    double total_margin = 0.0;
};

// Graph inputs for one response: policy tensors carry gradients, reference
// tensors are constants.
struct ResponseScores {
    ad::Tensor pol_log_dist;  // |y| x V
    ad::Tensor pol_realized;  // |y| x 1
    ad::Tensor ref_log_dist;
    ad::Tensor ref_realized;
};

struct PairScores {
    ResponseScores pos;
    ResponseScores neg;
};

// Score both responses of a pair under policy and reference models.
PairScores score_pair(const lm::ToyModel& policy, const lm::ToyModel& reference,
                      const spans::PreferencePair& pair);

// Wrap already-computed log-probabilities as constant graph inputs.
PairScores from_logprobs(const lm::TokenLogProbs& pol_pos, const lm::TokenLogProbs& pol_neg,
                         const lm::TokenLogProbs& ref_pos, const lm::TokenLogProbs& ref_neg);

struct LossGraph {
    ad::Tensor total;
    LossBreakdown breakdown;
};

// Build the configured loss over a scored pair. Throws ValidationError (naming
// the pair id) when the pair does not satisfy the loss's span requirement.
LossGraph build(const PairScores& scores, const spans::PreferencePair& pair,
                const LossConfig& cfg);

// Sub-sequence reward margin u (graph form), beta applied once to the summed
// raw log-ratio margins; per-span beta-scaled margins written to out_per_span.
ad::Tensor margin_graph(const PairScores& scores, const spans::PreferencePair& pair, double beta,
                        std::vector<double>* out_per_span = nullptr);

// ---------------------------------------------------------------------------
// Value-level operations over TokenLogProbs.
// ---------------------------------------------------------------------------

// beta * sum_{j in span} (log pi_theta(t_j|.) - log pi_ref(t_j|.))
double subseq_reward(const lm::TokenLogProbs& policy, const lm::TokenLogProbs& reference,
                     spans::SpanRange span, double beta);

// (u, per-span u_i) over all spans of the pair.
std::pair<double, std::vector<double>> total_margin(const spans::PreferencePair& pair,
                                                    const lm::TokenLogProbs& pol_pos,
                                                    const lm::TokenLogProbs& pol_neg,
                                                    const lm::TokenLogProbs& ref_pos,
                                                    const lm::TokenLogProbs& ref_neg, double beta);

// Token-wise KL divergence, reference distribution first, summed over rows.
double tkl(const Eigen::MatrixXd& ref_full_dists, const Eigen::MatrixXd& pol_full_dists);

LossBreakdown dpo_loss(const lm::TokenLogProbs& pol_pos, const lm::TokenLogProbs& pol_neg,
                       const lm::TokenLogProbs& ref_pos, const lm::TokenLogProbs& ref_neg,
                       double beta);

LossBreakdown rrpo_rank_loss(const spans::PreferencePair& pair, const lm::TokenLogProbs& pol_pos,
                             const lm::TokenLogProbs& pol_neg, const lm::TokenLogProbs& ref_pos,
                             const lm::TokenLogProbs& ref_neg, double beta);

LossBreakdown rrpo_loss(const spans::PreferencePair& pair, const lm::TokenLogProbs& pol_pos,
                        const lm::TokenLogProbs& pol_neg, const lm::TokenLogProbs& ref_pos,
                        const lm::TokenLogProbs& ref_neg, double alpha, double beta);

LossBreakdown ddpo_loss(const spans::PreferencePair& pair, const lm::TokenLogProbs& pol_pos,
                        const lm::TokenLogProbs& pol_neg, const lm::TokenLogProbs& ref_pos,
                        const lm::TokenLogProbs& ref_neg, double beta, double gamma);

LossBreakdown tdpo_loss(const spans::PreferencePair& pair, const lm::TokenLogProbs& pol_pos,
                        const lm::TokenLogProbs& pol_neg, const lm::TokenLogProbs& ref_pos,
                        const lm::TokenLogProbs& ref_neg, double alpha, double beta,
                        bool swap_mapping = false);

LossBreakdown dpa_loss(const spans::PreferencePair& pair, const lm::TokenLogProbs& pol_pos,
                       const lm::TokenLogProbs& pol_neg, const lm::TokenLogProbs& ref_pos,
                       const lm::TokenLogProbs& ref_neg, double alpha);

// Dispatch on cfg.method.
LossBreakdown evaluate(const spans::PreferencePair& pair, const lm::TokenLogProbs& pol_pos,
                       const lm::TokenLogProbs& pol_neg, const lm::TokenLogProbs& ref_pos,
                       const lm::TokenLogProbs& ref_neg, const LossConfig& cfg);

}  // namespace rrpo::losses
