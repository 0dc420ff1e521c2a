#include "rrpo/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "rrpo/rng.hpp"

namespace rrpo::trainer {

namespace {

constexpr char kMagic[8] = {'R', 'R', 'P', 'O', 'C', 'K', 'P', '1'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw FormatError("checkpoint truncated");
    return v;
}

void write_arrays(std::ostream& os, const std::vector<ad::Arr>& arrays) {
    for (const auto& a : arrays) {
        os.write(reinterpret_cast<const char*>(a.data()),
                 static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(a.size())));
    }
}

void read_into_params(std::istream& is, std::vector<ad::Tensor>& params) {
    for (auto& p : params) {
        ad::Arr& v = p.mutable_value();
        is.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(v.size())));
        if (!is) throw FormatError("checkpoint truncated");
    }
}

}  // namespace

Schedule schedule_from_string(const std::string& s) {
    if (s == "cosine") return Schedule::cosine;
    if (s == "constant") return Schedule::constant;
    throw UsageError("unknown schedule '" + s + "'");
}

std::string to_string(Schedule s) {
    return s == Schedule::cosine ? "cosine" : "constant";
}

void TrainConfig::validate() const {
    loss.validate();
    if (steps < 1) throw UsageError("train config: steps must be >= 1");
    if (batch_size < 1) throw UsageError("train config: batch_size must be >= 1");
    if (warmup_ratio < 0.0 || warmup_ratio >= 1.0) {
        throw UsageError("train config: warmup_ratio must lie in [0, 1)");
    }
    if (lr_max < 0.0) throw UsageError("train config: lr_max must be >= 0");
    if (weight_decay < 0.0) throw UsageError("train config: weight_decay must be >= 0");
}

Trainer::Trainer(lm::ToyModel model, std::vector<spans::PreferencePair> data, TrainConfig cfg)
    : Trainer(std::move(model), lm::ToyModel{lm::ToyModelConfig{}}, std::move(data), cfg, 0,
              true) {}

Trainer::Trainer(lm::ToyModel policy, lm::ToyModel reference,
                 std::vector<spans::PreferencePair> data, TrainConfig cfg, int start_step,
                 bool fresh)
    : cfg_(cfg), policy_(std::move(policy)), reference_(std::move(reference)),
      data_(std::move(data)), step_(start_step) {
    cfg_.validate();
    if (data_.empty()) throw ValidationError("trainer: dataset is empty");
    if (fresh) {
        reference_ = lm::PolicySnapshot(policy_).model();  // fixed at step 0
    }
    validate_data();
    data_hash_ = spans::dataset_hash(data_);
    build_ref_cache();
    if (fresh) {
        for (const auto& p : policy_.params()) {
            adam_m_.emplace_back(ad::Arr::Zero(p.rows(), p.cols()));
            adam_v_.emplace_back(ad::Arr::Zero(p.rows(), p.cols()));
        }
    }
}

void Trainer::validate_data() const {
    const auto need = losses::span_need(cfg_.loss.method);
    for (const auto& pair : data_) {
        auto violations = spans::validate(pair, need);
        if (!violations.empty()) {
            std::string msg = "pair '" + pair.id + "' invalid for " +
                              losses::to_string(cfg_.loss.method) + ":";
            for (const auto& v : violations) msg += "\n  - " + v;
            throw ValidationError(msg);
        }
        const int total = 1 + static_cast<int>(pair.prompt.size()) +
                          static_cast<int>(std::max(pair.preferred.size(),
                                                    pair.non_preferred.size()));
        if (total > policy_.config().context_len) {
            throw ValidationError("pair '" + pair.id + "' exceeds the model context window");
        }
    }
}

void Trainer::build_ref_cache() {
    ref_cache_.clear();
    ref_cache_.reserve(data_.size());
    for (const auto& pair : data_) {
        CachedRef c;
        c.pos = reference_.logprobs(pair.prompt, pair.preferred, lm::TokenLogProbs::Side::preferred,
                                    lm::TokenLogProbs::Source::reference);
        c.neg = reference_.logprobs(pair.prompt, pair.non_preferred,
                                    lm::TokenLogProbs::Side::non_preferred,
                                    lm::TokenLogProbs::Source::reference);
        ref_cache_.push_back(std::move(c));
    }
}

double Trainer::lr_at(int t) const {
    const int warmup = static_cast<int>(std::llround(cfg_.warmup_ratio * cfg_.steps));
    if (warmup > 0 && t < warmup) {
        return cfg_.lr_max * static_cast<double>(t + 1) / static_cast<double>(warmup);
    }
    if (cfg_.schedule == Schedule::constant) return cfg_.lr_max;
    return cfg_.lr_max * 0.5 *
           (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) /
                           static_cast<double>(cfg_.steps)));
}

std::vector<int> Trainer::batch_indices(int t) const {
    const int n = static_cast<int>(data_.size());
    std::vector<int> out;
    out.reserve(static_cast<size_t>(cfg_.batch_size));
    for (int i = 0; i < cfg_.batch_size; ++i) {
        const int64_t sample = static_cast<int64_t>(t) * cfg_.batch_size + i;
        const int64_t epoch = sample / n;
        rng::Rng r(rng::subseed(cfg_.seed, "epoch-" + std::to_string(epoch)));
        auto perm = r.permutation(n);
        out.push_back(perm[static_cast<size_t>(sample % n)]);
    }
    return out;
}

void Trainer::run_step() {
    if (done()) return;
    const double lr = lr_at(step_);
    const auto batch = batch_indices(step_);

    ad::Tensor acc;
    StepMetrics m;
    m.step = step_;
    m.lr = lr;
    for (int idx : batch) {
        const auto& pair = data_[static_cast<size_t>(idx)];
        const auto& cached = ref_cache_[static_cast<size_t>(idx)];
        losses::PairScores scores;
        lm::ScoredResponse pos = policy_.score(pair.prompt, pair.preferred);
        lm::ScoredResponse neg = policy_.score(pair.prompt, pair.non_preferred);
        scores.pos.pol_log_dist = pos.log_dist;
        scores.pos.pol_realized = pos.realized;
        scores.pos.ref_log_dist = ad::Tensor::leaf(cached.pos.full_dist.array());
        scores.pos.ref_realized = ad::Tensor::leaf(cached.pos.realized.array());
        scores.neg.pol_log_dist = neg.log_dist;
        scores.neg.pol_realized = neg.realized;
        scores.neg.ref_log_dist = ad::Tensor::leaf(cached.neg.full_dist.array());
        scores.neg.ref_realized = ad::Tensor::leaf(cached.neg.realized.array());

        auto loss = losses::build(scores, pair, cfg_.loss);
        acc = acc.defined() ? ad::add(acc, loss.total) : loss.total;
        m.total += loss.breakdown.total;
        m.rank_term += loss.breakdown.rank_term;
        m.tkl_term += loss.breakdown.tkl_term;
        m.mean_margin += loss.breakdown.total_margin;
        m.mean_tkl_pos += loss.breakdown.tkl_term;
    }
    const double inv_b = 1.0 / static_cast<double>(cfg_.batch_size);
    m.total *= inv_b;
    m.rank_term *= inv_b;
    m.tkl_term *= inv_b;
    m.mean_margin *= inv_b;
    m.mean_tkl_pos *= inv_b;

    ad::backward(ad::mul(acc, inv_b));

    auto& params = policy_.params();
    double clip_scale = 1.0;
    if (cfg_.grad_clip > 0.0) {
        double sq = 0.0;
        for (const auto& p : params) sq += p.grad().square().sum();
        const double norm = std::sqrt(sq);
        if (norm > cfg_.grad_clip) clip_scale = cfg_.grad_clip / norm;
    }
    const int t = step_ + 1;  // bias-correction time
    const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, t);
    const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, t);
    double update_sq = 0.0;
    for (size_t i = 0; i < params.size(); ++i) {
        const ad::Arr g = params[i].grad() * clip_scale;
        adam_m_[i] = cfg_.adam_beta1 * adam_m_[i] + (1.0 - cfg_.adam_beta1) * g;
        adam_v_[i] = cfg_.adam_beta2 * adam_v_[i] + (1.0 - cfg_.adam_beta2) * g.square();
        const ad::Arr mhat = adam_m_[i] / bc1;
        const ad::Arr vhat = adam_v_[i] / bc2;
        ad::Arr delta = lr * (mhat / (vhat.sqrt() + cfg_.adam_eps));
        if (cfg_.weight_decay > 0.0) {
            delta += lr * cfg_.weight_decay * params[i].value();
        }
        params[i].mutable_value() -= delta;
        update_sq += delta.square().sum();
    }
    m.update_norm = std::sqrt(update_sq);
    metrics_.push_back(m);
    ++step_;
}

void Trainer::run() {
    while (!done()) run_step();
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open checkpoint for writing: " + path.string());
    os.write(kMagic, sizeof(kMagic));
    write_pod<uint32_t>(os, 1);
    write_pod<int32_t>(os, step_);
    write_pod<int32_t>(os, cfg_.steps);
    write_pod<int32_t>(os, cfg_.batch_size);
    write_pod<uint64_t>(os, cfg_.seed);
    write_pod<double>(os, cfg_.lr_max);
    write_pod<double>(os, cfg_.warmup_ratio);
    write_pod<double>(os, cfg_.weight_decay);
    write_pod<uint8_t>(os, cfg_.schedule == Schedule::cosine ? 0 : 1);
    write_pod<double>(os, cfg_.adam_beta1);
    write_pod<double>(os, cfg_.adam_beta2);
    write_pod<double>(os, cfg_.adam_eps);
    write_pod<double>(os, cfg_.grad_clip);
    write_pod<uint8_t>(os, static_cast<uint8_t>(cfg_.loss.method));
    write_pod<double>(os, cfg_.loss.alpha);
    write_pod<double>(os, cfg_.loss.beta);
    write_pod<double>(os, cfg_.loss.gamma);
    write_pod<uint8_t>(os, cfg_.loss.tdpo_swap_mapping ? 1 : 0);
    write_pod<uint64_t>(os, data_hash_);
    const auto& mc = policy_.config();
    write_pod<int32_t>(os, mc.vocab_size);
    write_pod<int32_t>(os, mc.embed_dim);
    write_pod<int32_t>(os, mc.context_len);
    write_pod<int32_t>(os, mc.depth);
    write_pod<uint64_t>(os, mc.seed);

    std::vector<ad::Arr> policy_values, ref_values;
    for (const auto& p : policy_.params()) policy_values.push_back(p.value());
    for (const auto& p : reference_.params()) ref_values.push_back(p.value());
    write_arrays(os, policy_values);
    write_arrays(os, ref_values);
    write_arrays(os, adam_m_);
    write_arrays(os, adam_v_);
    if (!os) throw FormatError("failed writing checkpoint: " + path.string());
}

Trainer Trainer::resume(const std::filesystem::path& path,
                        std::vector<spans::PreferencePair> data) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ArtifactError("checkpoint not found: " + path.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("bad checkpoint magic: " + path.string());
    }
    if (read_pod<uint32_t>(is) != 1) throw FormatError("unsupported checkpoint version");
    TrainConfig cfg;
    const int step = read_pod<int32_t>(is);
    cfg.steps = read_pod<int32_t>(is);
    cfg.batch_size = read_pod<int32_t>(is);
    cfg.seed = read_pod<uint64_t>(is);
    cfg.lr_max = read_pod<double>(is);
    cfg.warmup_ratio = read_pod<double>(is);
    cfg.weight_decay = read_pod<double>(is);
    cfg.schedule = read_pod<uint8_t>(is) == 0 ? Schedule::cosine : Schedule::constant;
    cfg.adam_beta1 = read_pod<double>(is);
    cfg.adam_beta2 = read_pod<double>(is);
    cfg.adam_eps = read_pod<double>(is);
    cfg.grad_clip = read_pod<double>(is);
    cfg.loss.method = static_cast<losses::Method>(read_pod<uint8_t>(is));
    cfg.loss.alpha = read_pod<double>(is);
    cfg.loss.beta = read_pod<double>(is);
    cfg.loss.gamma = read_pod<double>(is);
    cfg.loss.tdpo_swap_mapping = read_pod<uint8_t>(is) != 0;
    const uint64_t stored_hash = read_pod<uint64_t>(is);

    lm::ToyModelConfig mc;
    mc.vocab_size = read_pod<int32_t>(is);
    mc.embed_dim = read_pod<int32_t>(is);
    mc.context_len = read_pod<int32_t>(is);
    mc.depth = read_pod<int32_t>(is);
    mc.seed = read_pod<uint64_t>(is);

    const uint64_t fresh_hash = spans::dataset_hash(data);
    if (fresh_hash != stored_hash) {
        throw ValidationError("checkpoint was trained on different data (dataset hash mismatch)");
    }

    lm::ToyModel policy(mc);
    lm::ToyModel reference(mc);
    read_into_params(is, policy.params());
    read_into_params(is, reference.params());
    reference.set_requires_grad(false);

    Trainer t(std::move(policy), std::move(reference), std::move(data), cfg, step, false);
    for (const auto& p : t.policy_.params()) {
        ad::Arr m(p.rows(), p.cols());
        is.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(m.size())));
        if (!is) throw FormatError("checkpoint truncated");
        t.adam_m_.push_back(std::move(m));
    }
    for (const auto& p : t.policy_.params()) {
        ad::Arr v(p.rows(), p.cols());
        is.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(v.size())));
        if (!is) throw FormatError("checkpoint truncated");
        t.adam_v_.push_back(std::move(v));
    }
    return t;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepMetrics>& rows) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open metrics file for writing: " + path.string());
    os << "step,lr,total,rank_term,tkl_term,mean_margin,mean_tkl_pos,update_norm\n";
    os.precision(17);
    for (const auto& r : rows) {
        os << r.step << ',' << r.lr << ',' << r.total << ',' << r.rank_term << ',' << r.tkl_term
           << ',' << r.mean_margin << ',' << r.mean_tkl_pos << ',' << r.update_norm << '\n';
    }
}

double mean_loss(const lm::ToyModel& policy, const lm::ToyModel& reference,
                 const std::vector<spans::PreferencePair>& data,
                 const losses::LossConfig& cfg) {
    if (data.empty()) throw ValidationError("mean_loss: dataset is empty");
    double acc = 0.0;
    for (const auto& pair : data) {
        auto pol_pos = policy.logprobs(pair.prompt, pair.preferred);
        auto pol_neg = policy.logprobs(pair.prompt, pair.non_preferred);
        auto ref_pos = reference.logprobs(pair.prompt, pair.preferred);
        auto ref_neg = reference.logprobs(pair.prompt, pair.non_preferred);
        acc += losses::evaluate(pair, pol_pos, pol_neg, ref_pos, ref_neg, cfg).total;
    }
    return acc / static_cast<double>(data.size());
}

lm::ToyModel train(lm::ToyModel model, std::vector<spans::PreferencePair> data, TrainConfig cfg,
                   std::vector<StepMetrics>* out_metrics) {
    Trainer t(std::move(model), std::move(data), cfg);
    t.run();
    if (out_metrics) *out_metrics = t.metrics();
    return t.model();
}

}  // namespace rrpo::trainer
