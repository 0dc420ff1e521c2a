#pragma once

#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "rrpo/datagen.hpp"
#include "rrpo/spans.hpp"
#include "rrpo/toylm.hpp"

namespace rrpo::eval {

using Answerer = std::function<std::vector<int>(const datagen::SyntheticTask&)>;

// Fraction of held-out tasks answered correctly. Tasks must be disjoint from
// the training pairs (checked by id).
double accuracy(const Answerer& answer, const std::vector<datagen::SyntheticTask>& tasks,
                const std::set<std::string>& train_ids);

Answerer model_answerer(const lm::ToyModel& model, int max_len = 16);
// The scripted responder reading the clean video; answers every task right.
Answerer oracle_answerer();

// Mean over probes of the token-wise KL from the base model to the aligned
// model, summed over probe positions (base distribution first).
double divergence(const lm::ToyModel& aligned, const lm::ToyModel& base,
                  const std::vector<std::vector<int>>& probes);

// Mean log pi(y+ | x) over pairs.
double mean_pref_loglik(const lm::ToyModel& model,
                        const std::vector<spans::PreferencePair>& pairs);

// Mean TKL(y+) of the model against a base model over pairs.
double mean_tkl_pref(const lm::ToyModel& model, const lm::ToyModel& base,
                     const std::vector<spans::PreferencePair>& pairs);

struct HackingReport {
    double drop_rank_only = 0;  // base loglik minus model loglik on y+
    double drop_full = 0;
    double tkl_rank_only = 0;
    double tkl_full = 0;
    bool rank_only_worse = false;  // rank-only degraded y+ strictly more
};

HackingReport hacking_probe(const lm::ToyModel& aligned_rank_only,
                            const lm::ToyModel& aligned_full, const lm::ToyModel& base,
                            const std::vector<spans::PreferencePair>& held_out_pairs);

struct DeltaResult {
    double se = 0;
    double delta = 0;
    double adjusted = 0;
    bool significant = false;
};

// SE = sqrt(score1 * (1 - score2) / n); delta = score1 - score2;
// adjusted = delta - 1.96 * SE; significant iff adjusted > 0. Implemented
// verbatim, including the mixed-score variance term.
DeltaResult adjusted_delta(double score1, double score2, int n);

struct EvalReport {
    std::string label;
    double accuracy = 0;
    double mean_seq_kl = 0;
    double pref_loglik_drop = 0;
};

void write_report_json(const std::filesystem::path& path, const EvalReport& report);
void write_comparison_csv(const std::filesystem::path& path,
                          const std::vector<EvalReport>& rows);

}  // namespace rrpo::eval
