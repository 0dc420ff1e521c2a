#include "rrpo/eval.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "rrpo/losses.hpp"

namespace rrpo::eval {

double accuracy(const Answerer& answer, const std::vector<datagen::SyntheticTask>& tasks,
                const std::set<std::string>& train_ids) {
    if (tasks.empty()) throw EvalError("accuracy: empty task list");
    int correct = 0;
    for (const auto& t : tasks) {
        if (train_ids.contains(t.id)) {
            throw EvalError("accuracy: task '" + t.id + "' overlaps the training set");
        }
        if (datagen::verify(t, answer(t))) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(tasks.size());
}

Answerer model_answerer(const lm::ToyModel& model, int max_len) {
    return [&model, max_len](const datagen::SyntheticTask& task) {
        return model.greedy_decode(datagen::task_prompt(task), max_len);
    };
}

Answerer oracle_answerer() {
    return [](const datagen::SyntheticTask& task) {
        return datagen::scripted_responder(task, task.video);
    };
}

double divergence(const lm::ToyModel& aligned, const lm::ToyModel& base,
                  const std::vector<std::vector<int>>& probes) {
    if (aligned.config().vocab_size != base.config().vocab_size) {
        throw ShapeError("divergence: models use different vocabularies");
    }
    if (probes.empty()) throw EvalError("divergence: no probes");
    double acc = 0.0;
    const std::vector<int> empty_prompt;
    for (const auto& probe : probes) {
        auto base_lp = base.logprobs(empty_prompt, probe);
        auto aligned_lp = aligned.logprobs(empty_prompt, probe);
        acc += losses::tkl(base_lp.full_dist, aligned_lp.full_dist);
    }
    return acc / static_cast<double>(probes.size());
}

double mean_pref_loglik(const lm::ToyModel& model,
                        const std::vector<spans::PreferencePair>& pairs) {
    if (pairs.empty()) throw EvalError("mean_pref_loglik: no pairs");
    double acc = 0.0;
    for (const auto& p : pairs) {
        acc += model.logprobs(p.prompt, p.preferred).realized.sum();
    }
    return acc / static_cast<double>(pairs.size());
}

double mean_tkl_pref(const lm::ToyModel& model, const lm::ToyModel& base,
                     const std::vector<spans::PreferencePair>& pairs) {
    if (pairs.empty()) throw EvalError("mean_tkl_pref: no pairs");
    double acc = 0.0;
    for (const auto& p : pairs) {
        auto base_lp = base.logprobs(p.prompt, p.preferred);
        auto model_lp = model.logprobs(p.prompt, p.preferred);
        acc += losses::tkl(base_lp.full_dist, model_lp.full_dist);
    }
    return acc / static_cast<double>(pairs.size());
}

HackingReport hacking_probe(const lm::ToyModel& aligned_rank_only,
                            const lm::ToyModel& aligned_full, const lm::ToyModel& base,
                            const std::vector<spans::PreferencePair>& held_out_pairs) {
    const double base_ll = mean_pref_loglik(base, held_out_pairs);
    HackingReport rep;
    rep.drop_rank_only = base_ll - mean_pref_loglik(aligned_rank_only, held_out_pairs);
    rep.drop_full = base_ll - mean_pref_loglik(aligned_full, held_out_pairs);
    rep.tkl_rank_only = mean_tkl_pref(aligned_rank_only, base, held_out_pairs);
    rep.tkl_full = mean_tkl_pref(aligned_full, base, held_out_pairs);
    rep.rank_only_worse = rep.drop_rank_only > rep.drop_full;
    return rep;
}

DeltaResult adjusted_delta(double score1, double score2, int n) {
    if (n < 1) throw DomainError("adjusted_delta: n must be >= 1");
    if (score1 < 0.0 || score1 > 1.0 || score2 < 0.0 || score2 > 1.0) {
        throw DomainError("adjusted_delta: scores must lie in [0, 1]");
    }
    DeltaResult r;
    r.se = std::sqrt(score1 * (1.0 - score2) / static_cast<double>(n));
    r.delta = score1 - score2;
    r.adjusted = r.delta - 1.96 * r.se;
    r.significant = r.adjusted > 0.0;
    return r;
}

void write_report_json(const std::filesystem::path& path, const EvalReport& report) {
    nlohmann::ordered_json j;
    j["label"] = report.label;
    j["accuracy"] = report.accuracy;
    j["mean_seq_kl"] = report.mean_seq_kl;
    j["pref_loglik_drop"] = report.pref_loglik_drop;
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open report for writing: " + path.string());
    os << j.dump(2) << '\n';
}

void write_comparison_csv(const std::filesystem::path& path,
                          const std::vector<EvalReport>& rows) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open comparison for writing: " + path.string());
    os << "method,accuracy,mean_seq_kl,pref_loglik_drop\n";
    os.precision(17);
    for (const auto& r : rows) {
        os << r.label << ',' << r.accuracy << ',' << r.mean_seq_kl << ',' << r.pref_loglik_drop
           << '\n';
    }
}

}  // namespace rrpo::eval
