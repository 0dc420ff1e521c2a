#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rrpo/losses.hpp"
#include "rrpo/spans.hpp"
#include "rrpo/toylm.hpp"

namespace rrpo::trainer {

enum class Schedule { cosine, constant };

Schedule schedule_from_string(const std::string& s);
std::string to_string(Schedule s);

struct TrainConfig {
    losses::LossConfig loss;
    double lr_max = 1e-3;
    Schedule schedule = Schedule::cosine;
    double warmup_ratio = 0.03;
    int steps = 100;
    int batch_size = 8;
    uint64_t seed = 0;
    double weight_decay = 0.0;
    // Adam moment decays and epsilon: conventional defaults, echoed into the
    // resolved-config record of every run.
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 0.0;  // 0 disables clipping (ablation flag)

    void validate() const;
};

struct StepMetrics {
    int step = 0;
    double lr = 0;
    double total = 0;      // batch means of the loss breakdown
    double rank_term = 0;
    double tkl_term = 0;
    double mean_margin = 0;
    double mean_tkl_pos = 0;
    double update_norm = 0;  // L2 norm of the applied parameter delta
};

// Owns the policy, the frozen reference snapshot (taken once at step 0), the
// optimizer state, and the metrics stream. Batch order is a pure function of
// (seed, step), so resumed runs continue bit-exactly.
class Trainer {
  public:
    Trainer(lm::ToyModel model, std::vector<spans::PreferencePair> data, TrainConfig cfg);

    int step() const { return step_; }
    bool done() const { return step_ >= cfg_.steps; }
    void run_step();
    void run();

    const lm::ToyModel& model() const { return policy_; }
    const lm::ToyModel& reference() const { return reference_; }
    const TrainConfig& config() const { return cfg_; }
    const std::vector<StepMetrics>& metrics() const { return metrics_; }
    uint64_t data_hash() const { return data_hash_; }

    double lr_at(int t) const;
    std::vector<int> batch_indices(int t) const;

    void save_checkpoint(const std::filesystem::path& path) const;
    static Trainer resume(const std::filesystem::path& path,
                          std::vector<spans::PreferencePair> data);

  private:
    struct CachedRef {
        lm::TokenLogProbs pos;
        lm::TokenLogProbs neg;
    };
    Trainer(lm::ToyModel policy, lm::ToyModel reference, std::vector<spans::PreferencePair> data,
            TrainConfig cfg, int start_step, bool fresh);
    void validate_data() const;
    void build_ref_cache();

    TrainConfig cfg_;
    lm::ToyModel policy_;
    lm::ToyModel reference_;
    std::vector<spans::PreferencePair> data_;
    std::vector<CachedRef> ref_cache_;
    std::vector<ad::Arr> adam_m_, adam_v_;
    uint64_t data_hash_ = 0;
    int step_ = 0;
    std::vector<StepMetrics> metrics_;
};

void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepMetrics>& rows);

// Mean loss of the configured objective over a dataset (no gradients).
double mean_loss(const lm::ToyModel& policy, const lm::ToyModel& reference,
                 const std::vector<spans::PreferencePair>& data, const losses::LossConfig& cfg);

// Convenience: train to completion, return the final model.
lm::ToyModel train(lm::ToyModel model, std::vector<spans::PreferencePair> data, TrainConfig cfg,
                   std::vector<StepMetrics>* out_metrics = nullptr);

}  // namespace rrpo::trainer
