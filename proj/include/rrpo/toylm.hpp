#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rrpo/autodiff.hpp"
#include "rrpo/common.hpp"

namespace rrpo::lm {

// Reserved token ids shared by every vocabulary in this project.
inline constexpr int kPad = 0;
inline constexpr int kMask = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;

struct ToyModelConfig {
    int vocab_size = 64;
    int embed_dim = 32;
    int context_len = 96;
    int depth = 1;
    uint64_t seed = 0;

    int ffn_dim() const { return 4 * embed_dim; }
    void validate() const;
};

// Per-position log-probabilities for one scored response.
struct TokenLogProbs {
    enum class Side { preferred, non_preferred };
    enum class Source { policy, reference };

    Eigen::VectorXd realized;   // log pi(t_j | x, t_<j) of the realized token
    Eigen::MatrixXd full_dist;  // |response| x V log-distribution rows
    Side side = Side::preferred;
    Source source = Source::policy;
};

// Graph-carrying score of one response; gradients flow back to the model
// parameters through these tensors.
struct ScoredResponse {
    ad::Tensor log_dist;  // |response| x V
    ad::Tensor realized;  // |response| x 1
    std::vector<int> tokens;
};

// Single-block decoder: token+position embeddings, pre-norm self-attention,
// pre-norm tanh feedforward, final norm, tied output projection. No biases.
class ToyModel {
  public:
    explicit ToyModel(ToyModelConfig cfg);
    ToyModel(const ToyModel& other);  // deep copy
    ToyModel& operator=(const ToyModel& other);
    ToyModel(ToyModel&&) = default;
    ToyModel& operator=(ToyModel&&) = default;

    const ToyModelConfig& config() const { return cfg_; }
    std::vector<ad::Tensor>& params() { return params_; }
    const std::vector<ad::Tensor>& params() const { return params_; }
    int64_t param_count() const;
    void set_requires_grad(bool on);

    // Log-distribution rows for every position of `tokens` (predicting the
    // next token at each position).
    ad::Tensor forward_log_dist(std::span<const int> tokens) const;

    ScoredResponse score(std::span<const int> prompt, std::span<const int> response) const;
    TokenLogProbs logprobs(std::span<const int> prompt, std::span<const int> response,
                           TokenLogProbs::Side side = TokenLogProbs::Side::preferred,
                           TokenLogProbs::Source source = TokenLogProbs::Source::policy) const;

    // Deterministic argmax decode; ties break toward the lowest token id.
    // Emits up to max_len tokens; a produced kEos terminates (and is kept).
    std::vector<int> greedy_decode(std::span<const int> prompt, int max_len) const;

    void save(const std::filesystem::path& path) const;
    static ToyModel load(const std::filesystem::path& path);

  private:
    void check_tokens(std::span<const int> tokens) const;
    ToyModelConfig cfg_;
    // Layout: [tok_embed, pos_embed, then per block: wq, wk, wv, wo, w1, w2]
    std::vector<ad::Tensor> params_;
};

// Immutable value copy of a model; training the source never changes it.
class PolicySnapshot {
  public:
    explicit PolicySnapshot(const ToyModel& source);
    const ToyModel& model() const { return model_; }

  private:
    ToyModel model_;
};

inline PolicySnapshot snapshot(const ToyModel& m) { return PolicySnapshot(m); }

}  // namespace rrpo::lm
