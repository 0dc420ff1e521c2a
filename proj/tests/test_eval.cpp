#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "rrpo/autodiff.hpp"
#include "rrpo/eval.hpp"
#include "rrpo/losses.hpp"
#include "rrpo/rng.hpp"
#include "rrpo/trainer.hpp"

using namespace rrpo;
using datagen::SyntheticTask;

namespace {

lm::ToyModelConfig small_model(uint64_t seed = 2) {
    lm::ToyModelConfig cfg;
    cfg.vocab_size = 64;
    cfg.embed_dim = 16;
    cfg.context_len = 96;
    cfg.seed = seed;
    return cfg;
}

std::vector<SyntheticTask> eval_tasks(int n = 80, uint64_t seed = 50) {
    datagen::TaskGenConfig tg;
    tg.frames = 4;
    tg.frame_width = 4;
    return datagen::make_tasks(seed, 1000, n, tg);
}

}  // namespace

TEST_CASE("oracle answerer scores a perfect accuracy") {
    auto tasks = eval_tasks();
    CHECK(eval::accuracy(eval::oracle_answerer(), tasks, {}) == doctest::Approx(1.0));
}

TEST_CASE("constant-distractor answerer matches the counted fixture fraction") {
    auto tasks = eval_tasks(200);
    const int c = datagen::tok::kConceptBase + 5;
    int expect = 0;
    for (const auto& t : tasks) {
        // a bare concept token only verifies for MCQ tasks whose truth is c
        if (t.type == datagen::TaskType::MCQ && t.answer.front() == c) ++expect;
    }
    const double got = eval::accuracy(
        [&](const SyntheticTask&) { return std::vector<int>{c}; }, tasks, {});
    CHECK(got == doctest::Approx(static_cast<double>(expect) / 200.0));
}

TEST_CASE("accuracy rejects empty task lists and train/test overlap") {
    CHECK_THROWS_AS(eval::accuracy(eval::oracle_answerer(), {}, {}), EvalError);
    auto tasks = eval_tasks(5);
    std::set<std::string> train_ids{tasks[2].id};
    CHECK_THROWS_AS(eval::accuracy(eval::oracle_answerer(), tasks, train_ids), EvalError);
}

TEST_CASE("accuracy is invariant to task order") {
    auto tasks = eval_tasks(60);
    lm::ToyModel m(small_model(9));
    auto fwd = eval::accuracy(eval::model_answerer(m), tasks, {});
    std::reverse(tasks.begin(), tasks.end());
    CHECK(eval::accuracy(eval::model_answerer(m), tasks, {}) == doctest::Approx(fwd));
}

TEST_CASE("divergence of a model against itself is zero") {
    lm::ToyModel m(small_model(3));
    std::vector<std::vector<int>> probes;
    for (const auto& t : eval_tasks(10)) probes.push_back(datagen::task_prompt(t));
    CHECK(eval::divergence(m, m, probes) == doctest::Approx(0.0));
}

TEST_CASE("uniform logit shifts change nothing after normalization") {
    // softmax shift invariance: the same logits offset by a constant induce
    // identical distributions, hence zero divergence contribution
    rng::Rng r(8);
    ad::Arr z(3, 6);
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = r.uniform(-2.0, 2.0);
    }
    auto a = ad::log_softmax(ad::Tensor::leaf(z));
    auto b = ad::log_softmax(ad::Tensor::leaf(ad::Arr(z + 4.2)));
    CHECK(losses::tkl(a.value().matrix(), b.value().matrix()) ==
          doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("divergence grows once the aligned model moves") {
    lm::ToyModel base(small_model(4));
    lm::ToyModel moved = base;
    for (auto& p : moved.params()) p.mutable_value() += 0.05;
    std::vector<std::vector<int>> probes;
    for (const auto& t : eval_tasks(8)) probes.push_back(datagen::task_prompt(t));
    CHECK(eval::divergence(moved, base, probes) > 0.0);

    lm::ToyModelConfig other = small_model(4);
    other.vocab_size = 32;
    CHECK_THROWS_AS(eval::divergence(lm::ToyModel(other), base, probes), ShapeError);
}

TEST_CASE("hacking probe on untrained copies reports zero drops") {
    lm::ToyModel base(small_model(6));
    datagen::PerturbConfig pc;
    pc.mode = datagen::PerturbMode::RSMask;
    pc.seed = 123;
    datagen::TaskGenConfig tg;
    tg.frames = 4;
    tg.frame_width = 4;
    auto pairs = datagen::build_pairs(datagen::make_tasks(61, 0, 40, tg), pc, nullptr);
    REQUIRE_FALSE(pairs.empty());
    auto rep = eval::hacking_probe(base, base, base, pairs);
    CHECK(rep.drop_rank_only == doctest::Approx(0.0));
    CHECK(rep.drop_full == doctest::Approx(0.0));
    CHECK_FALSE(rep.rank_only_worse);
}

TEST_CASE("strong regularization pins the preferred log-likelihood") {
    // Train one rank-only model and one with a very large TKL weight from the
    // same base; the regularized model must degrade y+ strictly less.
    datagen::PerturbConfig pc;
    pc.mode = datagen::PerturbMode::RSMask;
    pc.seed = 5;
    datagen::TaskGenConfig tg;
    tg.frames = 4;
    tg.frame_width = 4;
    auto train_pairs = datagen::build_pairs(datagen::make_tasks(62, 0, 120, tg), pc, nullptr);
    pc.seed = 6;
    auto held_out = datagen::build_pairs(datagen::make_tasks(62, 500, 40, tg), pc, nullptr);
    REQUIRE_FALSE(train_pairs.empty());
    REQUIRE_FALSE(held_out.empty());

    trainer::TrainConfig cfg;
    cfg.loss.method = losses::Method::RRPO;
    cfg.loss.beta = 0.5;
    cfg.lr_max = 5e-3;
    cfg.steps = 200;
    cfg.batch_size = 8;
    cfg.seed = 11;

    lm::ToyModel base(small_model(31));
    cfg.loss.alpha = 0.0;
    auto rank_only = trainer::train(base, train_pairs, cfg);
    cfg.loss.alpha = 100.0;
    auto full = trainer::train(base, train_pairs, cfg);

    auto rep = eval::hacking_probe(rank_only, full, base, held_out);
    CHECK(rep.drop_rank_only > rep.drop_full);
    CHECK(rep.rank_only_worse);
}

TEST_CASE("adjusted delta reproduces the worked example") {
    auto r = eval::adjusted_delta(0.565, 0.543, 1000);
    CHECK(r.se == doctest::Approx(0.016069).epsilon(1e-4));
    CHECK(r.delta == doctest::Approx(0.022).epsilon(1e-9));
    CHECK(r.adjusted == doctest::Approx(-0.009495).epsilon(1e-4));
    CHECK_FALSE(r.significant);
}

TEST_CASE("adjusted delta edge cases") {
    auto equal = eval::adjusted_delta(0.4, 0.4, 50);
    CHECK(equal.delta == doctest::Approx(0.0));
    CHECK(equal.adjusted < 0.0);
    CHECK_FALSE(equal.significant);

    auto ones = eval::adjusted_delta(1.0, 1.0, 10);
    CHECK(ones.se == doctest::Approx(0.0));
    CHECK(ones.adjusted == doctest::Approx(0.0));
    CHECK_FALSE(ones.significant);  // strict inequality

    CHECK_THROWS_AS(eval::adjusted_delta(0.5, 0.5, 0), DomainError);
    CHECK_THROWS_AS(eval::adjusted_delta(1.5, 0.5, 10), DomainError);
}

TEST_CASE("adjusted delta is antisymmetric in the difference but not in SE") {
    auto ab = eval::adjusted_delta(0.7, 0.5, 200);
    auto ba = eval::adjusted_delta(0.5, 0.7, 200);
    CHECK(ab.delta == doctest::Approx(-ba.delta));
    CHECK(ab.se != doctest::Approx(ba.se));  // verbatim mixed-score formula
}

TEST_CASE("reports serialize to json and csv") {
    eval::EvalReport rep;
    rep.label = "rrpo";
    rep.accuracy = 0.5;
    rep.mean_seq_kl = 1.25;
    rep.pref_loglik_drop = 0.1;
    auto dir = std::filesystem::temp_directory_path();
    eval::write_report_json(dir / "rrpo_eval_test.json", rep);
    eval::write_comparison_csv(dir / "rrpo_eval_test.csv", {rep, rep});
    std::ifstream is(dir / "rrpo_eval_test.csv");
    std::string line;
    int count = 0;
    while (std::getline(is, line)) ++count;
    CHECK(count == 3);
    std::filesystem::remove(dir / "rrpo_eval_test.json");
    std::filesystem::remove(dir / "rrpo_eval_test.csv");
}
