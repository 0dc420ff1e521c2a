#pragma once

// Finite-difference sweep over every autodiff primitive. Shared by the unit
// tests and the acceptance suite (criterion-style run uses 100 instances per
// primitive).

#include <functional>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "rrpo/autodiff.hpp"
#include "rrpo/rng.hpp"

namespace fd_suite {

using oracles::Arr;
using rrpo::ad::Tensor;

struct Worst {
    double err = 0.0;
    std::string where;
};

// Scalarize an op output against fixed random weights, then compare the
// backward gradient of one chosen input with central finite differences.
template <typename Build>
inline void check_one(Worst& w, const std::string& name, const Arr& x0, const Arr& weights,
                      Build build, double h = 1e-5) {
    auto value_of = [&](const Arr& x) -> double {
        Tensor xt = Tensor::leaf(x, false);
        return (build(xt).value() * weights).sum();
    };
    const Arr fd = oracles::fd_grad(value_of, x0, h);

    Tensor xt = Tensor::leaf(x0, true);
    Tensor out = build(xt);
    Tensor loss = rrpo::ad::sum(rrpo::ad::mul(out, Tensor::leaf(weights, false)));
    rrpo::ad::backward(loss);
    const double err = oracles::max_rel_err(Arr(xt.grad()), fd, 1e-4);
    if (err > w.err) {
        w.err = err;
        w.where = name;
    }
}

inline Arr random_arr(rrpo::rng::Rng& r, Eigen::Index rows, Eigen::Index cols, double lo,
                      double hi) {
    Arr a(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) a(i, j) = r.uniform(lo, hi);
    }
    return a;
}

// One full pass over the primitive set with random shapes and inputs.
inline Worst primitive_sweep(uint64_t seed, int instances_per_primitive) {
    namespace ad = rrpo::ad;
    rrpo::rng::Rng r(seed);
    Worst w;
    for (int it = 0; it < instances_per_primitive; ++it) {
        const Eigen::Index n = r.pick(2, 5);
        const Eigen::Index m = r.pick(2, 5);
        const Arr x = random_arr(r, n, m, -2.0, 2.0);
        const Arr y = random_arr(r, n, m, -2.0, 2.0);
        const Arr wts = random_arr(r, n, m, -1.0, 1.0);
        const Arr wts_t = random_arr(r, m, n, -1.0, 1.0);
        const Tensor yc = Tensor::leaf(y, false);
        const double c = r.uniform(-2.0, 2.0);

        check_one(w, "add.lhs", x, wts, [&](Tensor t) { return ad::add(t, yc); });
        check_one(w, "add.rhs", y, wts, [&](Tensor t) { return ad::add(Tensor::leaf(x), t); });
        check_one(w, "add_scalar", x, wts, [&](Tensor t) { return ad::add(t, c); });
        check_one(w, "sub.lhs", x, wts, [&](Tensor t) { return ad::sub(t, yc); });
        check_one(w, "sub.rhs", y, wts, [&](Tensor t) { return ad::sub(Tensor::leaf(x), t); });
        check_one(w, "neg", x, wts, [&](Tensor t) { return ad::neg(t); });
        check_one(w, "mul.lhs", x, wts, [&](Tensor t) { return ad::mul(t, yc); });
        check_one(w, "mul.rhs", y, wts, [&](Tensor t) { return ad::mul(Tensor::leaf(x), t); });
        check_one(w, "mul_scalar", x, wts, [&](Tensor t) { return ad::mul(t, c); });
        check_one(w, "transpose", x, wts_t, [&](Tensor t) { return ad::transpose(t); });
        check_one(w, "exp", x, wts, [&](Tensor t) { return ad::exp(t); });
        check_one(w, "tanh", x, wts, [&](Tensor t) { return ad::tanh(t); });
        check_one(w, "sigmoid", x, wts, [&](Tensor t) { return ad::sigmoid(t); });
        check_one(w, "log_sigmoid", x, wts, [&](Tensor t) { return ad::log_sigmoid(t); });
        check_one(w, "softmax", x, wts, [&](Tensor t) { return ad::softmax(t); });
        check_one(w, "log_softmax", x, wts, [&](Tensor t) { return ad::log_softmax(t); });
        check_one(w, "rms_norm", x, wts, [&](Tensor t) { return ad::rms_norm(t); });

        const Arr xpos = random_arr(r, n, m, 0.3, 3.0);
        check_one(w, "log", xpos, wts, [&](Tensor t) { return ad::log(t); });

        Arr wsum(1, 1);
        wsum(0, 0) = r.uniform(-1.0, 1.0);
        check_one(w, "sum", x, wsum, [&](Tensor t) { return ad::sum(t); });

        // matmul: n x m times m x n
        const Arr b = random_arr(r, m, n, -2.0, 2.0);
        const Arr wmm = random_arr(r, n, n, -1.0, 1.0);
        check_one(w, "matmul.lhs", x, wmm,
                  [&](Tensor t) { return ad::matmul(t, Tensor::leaf(b)); });
        check_one(w, "matmul.rhs", b, wmm,
                  [&](Tensor t) { return ad::matmul(Tensor::leaf(x), t); });

        std::vector<int> cols(static_cast<size_t>(n));
        for (auto& cix : cols) cix = r.pick(0, static_cast<int>(m) - 1);
        Arr wcol = random_arr(r, n, 1, -1.0, 1.0);
        check_one(w, "gather", x, wcol, [&](Tensor t) { return ad::gather(t, cols); });

        std::vector<int> rows(static_cast<size_t>(n + 1));
        for (auto& rix : rows) rix = r.pick(0, static_cast<int>(n) - 1);
        Arr wrow = random_arr(r, n + 1, m, -1.0, 1.0);
        check_one(w, "take_rows", x, wrow, [&](Tensor t) { return ad::take_rows(t, rows); });
    }
    return w;
}

}  // namespace fd_suite
