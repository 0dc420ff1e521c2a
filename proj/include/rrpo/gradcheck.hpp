#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "rrpo/losses.hpp"
#include "rrpo/spans.hpp"
#include "rrpo/toylm.hpp"

namespace rrpo::gradcheck {

struct InstanceConfig {
    lm::ToyModelConfig model{.vocab_size = 32, .embed_dim = 16, .context_len = 64, .depth = 1};
    int prompt_len = 6;
    int min_resp_len = 12;
    int max_resp_len = 20;
    int max_spans = 3;
    double max_coverage = 0.3;  // total span tokens / response tokens, per side
    // The policy is moved off the reference by a few ranking-loss descent
    // steps; at the exact reference point the TKL gradient vanishes and the
    // full-vs-rank norm comparison is degenerate.
    int descent_steps = 5;
    double descent_lr = 0.03;
    double alpha = 0.05;
    double beta = 0.5;
};

struct Instance {
    lm::ToyModel policy;
    lm::ToyModel reference;
    spans::PreferencePair pair;
};

Instance make_instance(uint64_t seed, const InstanceConfig& cfg);

// Flattened gradient of the model parameters after a backward pass.
Eigen::VectorXd flat_grad(const lm::ToyModel& m);

// Per-token gradient vectors of log pi(t_j | x, t_<j) for every response
// position, computed with the same engine as the losses.
std::vector<Eigen::VectorXd> per_token_grads(const lm::ToyModel& policy,
                                             const std::vector<int>& prompt,
                                             const std::vector<int>& response);

// Compares the autodiff gradient of the margin u against its term-by-term
// assembly from per-token gradients; returns the max relative error over
// parameters.
double verify_margin_gradient(const Instance& inst, double beta);

struct GradBoundReport {
    uint64_t seed = 0;
    double measured_norm_dpo = 0;
    double measured_norm_rrpo_rank = 0;
    double measured_norm_rrpo = 0;
    double bound_dpo = 0;        // beta * M * (|y+| + |y-|)
    double bound_rrpo_rank = 0;  // beta * M * sum_i (L+_i + L-_i)
    double max_token_grad_norm = 0;
    std::vector<int> span_lengths_pos;
    std::vector<int> span_lengths_neg;
    int len_pos = 0;
    int len_neg = 0;
    bool sound_dpo = false;
    bool sound_rank = false;
    bool rank_lt_dpo = false;
    bool rrpo_lt_rank = false;
    bool ordering_holds = false;  // rrpo < rank < dpo
};

double rank_bound(double beta, double max_token_grad_norm, const std::vector<int>& lens_pos,
                  const std::vector<int>& lens_neg);
double dpo_bound(double beta, double max_token_grad_norm, int len_pos, int len_neg);

GradBoundReport bound_report(const Instance& inst, double beta, double alpha, uint64_t seed = 0);

struct OrderingStats {
    int n = 0;
    int rank_lt_dpo = 0;
    int rrpo_lt_rank = 0;
    int sound_dpo = 0;
    int sound_rank = 0;

    double frac_rank_lt_dpo() const { return n ? static_cast<double>(rank_lt_dpo) / n : 0.0; }
    double frac_rrpo_lt_rank() const { return n ? static_cast<double>(rrpo_lt_rank) / n : 0.0; }
};

OrderingStats ordering_experiment(int n_instances, double span_coverage_max, uint64_t seed,
                                  const InstanceConfig& base,
                                  std::vector<GradBoundReport>* rows = nullptr);

void write_reports_csv(const std::filesystem::path& path,
                       const std::vector<GradBoundReport>& rows);

}  // namespace rrpo::gradcheck
