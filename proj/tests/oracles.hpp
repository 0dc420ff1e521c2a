#pragma once

// Test-only oracles. Everything here is independent of the library's loss and
// gradient code paths: plain loops over plain arrays.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracles {

using Arr = Eigen::ArrayXXd;

// Central finite differences of a scalar function of one dense array.
template <typename F>
Arr fd_grad(F f, Arr x, double h = 1e-5) {
    Arr g(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            const double orig = x(i, j);
            x(i, j) = orig + h;
            const double fp = f(x);
            x(i, j) = orig - h;
            const double fm = f(x);
            x(i, j) = orig;
            g(i, j) = (fp - fm) / (2.0 * h);
        }
    }
    return g;
}

inline double max_rel_err(const Arr& a, const Arr& b, double floor = 1e-6) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            const double denom = std::max({std::abs(a(i, j)), std::abs(b(i, j)), floor});
            worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / denom);
        }
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Scalar reimplementation of the preference losses, straight from the
// formulas, used to cross-check the library kernels. Inputs are per-position
// realized log-probs and (optionally) full log-distributions.
// ---------------------------------------------------------------------------

struct SpanIx {
    int start;  // 1-based inclusive
    int end;
};

inline double lsum(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

inline double span_sum(const std::vector<double>& v, SpanIx s) {
    double acc = 0.0;
    for (int i = s.start - 1; i <= s.end - 1; ++i) acc += v[static_cast<size_t>(i)];
    return acc;
}

inline double logsigmoid(double x) {
    return -(std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x))));
}

struct PairLogps {
    std::vector<double> pol_pos, pol_neg, ref_pos, ref_neg;  // realized log-probs
    std::vector<SpanIx> spans_pos, spans_neg;                // aligned by index
};

inline double dpo(const PairLogps& p, double beta) {
    const double m = beta * ((lsum(p.pol_pos) - lsum(p.ref_pos)) -
                             (lsum(p.pol_neg) - lsum(p.ref_neg)));
    return -logsigmoid(m);
}

inline double margin_u(const PairLogps& p, double beta) {
    double u = 0.0;
    for (size_t i = 0; i < p.spans_pos.size(); ++i) {
        const double rp = beta * (span_sum(p.pol_pos, p.spans_pos[i]) -
                                  span_sum(p.ref_pos, p.spans_pos[i]));
        const double rn = beta * (span_sum(p.pol_neg, p.spans_neg[i]) -
                                  span_sum(p.ref_neg, p.spans_neg[i]));
        u += rp - rn;
    }
    return u;
}

inline double rrpo_rank(const PairLogps& p, double beta) { return -logsigmoid(margin_u(p, beta)); }

// Token-wise KL from full log-distributions (rows = positions).
inline double tkl(const Arr& ref_logdist, const Arr& pol_logdist) {
    double acc = 0.0;
    for (Eigen::Index t = 0; t < ref_logdist.rows(); ++t) {
        for (Eigen::Index a = 0; a < ref_logdist.cols(); ++a) {
            acc += std::exp(ref_logdist(t, a)) * (ref_logdist(t, a) - pol_logdist(t, a));
        }
    }
    return acc;
}

inline double rrpo(const PairLogps& p, const Arr& ref_ld_pos, const Arr& pol_ld_pos, double alpha,
                   double beta) {
    return rrpo_rank(p, beta) + alpha * tkl(ref_ld_pos, pol_ld_pos);
}

inline double ddpo(const PairLogps& p, double beta, double gamma) {
    auto weighted = [&](const std::vector<double>& lp, const std::vector<SpanIx>& spans) {
        std::vector<bool> in(lp.size(), false);
        for (const auto& s : spans) {
            for (int i = s.start - 1; i <= s.end - 1; ++i) in[static_cast<size_t>(i)] = true;
        }
        double acc = 0.0;
        for (size_t i = 0; i < lp.size(); ++i) acc += in[i] ? gamma * lp[i] : lp[i];
        return acc / static_cast<double>(lp.size());
    };
    const double m = beta * ((weighted(p.pol_pos, p.spans_pos) - weighted(p.ref_pos, p.spans_pos)) -
                             (weighted(p.pol_neg, p.spans_neg) - weighted(p.ref_neg, p.spans_neg)));
    return -logsigmoid(m);
}

inline double tdpo(const PairLogps& p, const Arr& ref_ld_pos, const Arr& pol_ld_pos,
                   const Arr& ref_ld_neg, const Arr& pol_ld_neg, double alpha, double beta) {
    const double m = beta * ((lsum(p.pol_pos) - lsum(p.ref_pos)) -
                             (lsum(p.pol_neg) - lsum(p.ref_neg)));
    const double reg = alpha * (beta * tkl(ref_ld_neg, pol_ld_neg) -
                                beta * tkl(ref_ld_pos, pol_ld_pos));
    return -logsigmoid(m - reg);
}

inline double dpa(const PairLogps& p, const Arr& ref_ld_pos, const Arr& pol_ld_pos, double alpha) {
    double rank = 0.0;
    const size_t n = p.spans_pos.size();
    for (size_t i = 0; i < n; ++i) {
        const double sp = span_sum(p.pol_pos, p.spans_pos[i]);
        const double sn = span_sum(p.pol_neg, p.spans_neg[i]);
        const double p_pos = std::exp(sp);
        const double p_neg = std::exp(sn);
        rank += -std::log(p_pos / (p_pos + p_neg));
    }
    rank /= static_cast<double>(n);
    return rank + alpha * tkl(ref_ld_pos, pol_ld_pos);
}

}  // namespace oracles
