#include "rrpo/toylm.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "rrpo/rng.hpp"

namespace rrpo::lm {

namespace {

constexpr char kMagic[8] = {'R', 'R', 'P', 'O', 'T', 'L', 'M', '1'};
constexpr double kInitStd = 0.08;
constexpr double kNegInf = -1e30;

ad::Arr gaussian_init(rng::Rng& r, Eigen::Index rows, Eigen::Index cols, double std_dev) {
    ad::Arr a(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) a(i, j) = r.gaussian() * std_dev;
    }
    return a;
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw FormatError("model file truncated");
    return v;
}

}  // namespace

void ToyModelConfig::validate() const {
    if (vocab_size < 4) throw ShapeError("toy model: vocab_size must be >= 4");
    if (embed_dim < 1 || context_len < 2 || depth < 1) {
        throw ShapeError("toy model: invalid dimensions");
    }
}

ToyModel::ToyModel(ToyModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    rng::Rng r(rng::subseed(cfg_.seed, "toylm-init"));
    const Eigen::Index v = cfg_.vocab_size;
    const Eigen::Index d = cfg_.embed_dim;
    const Eigen::Index h = cfg_.ffn_dim();
    params_.push_back(ad::Tensor::leaf(gaussian_init(r, v, d, kInitStd), true));
    params_.push_back(ad::Tensor::leaf(gaussian_init(r, cfg_.context_len, d, kInitStd), true));
    for (int b = 0; b < cfg_.depth; ++b) {
        for (int k = 0; k < 4; ++k) {
            params_.push_back(ad::Tensor::leaf(gaussian_init(r, d, d, kInitStd), true));
        }
        params_.push_back(ad::Tensor::leaf(gaussian_init(r, d, h, kInitStd), true));
        params_.push_back(ad::Tensor::leaf(gaussian_init(r, h, d, kInitStd), true));
    }
}

ToyModel::ToyModel(const ToyModel& other) : cfg_(other.cfg_) {
    params_.reserve(other.params_.size());
    for (const auto& p : other.params_) {
        params_.push_back(ad::Tensor::leaf(p.value(), p.requires_grad()));
    }
}

ToyModel& ToyModel::operator=(const ToyModel& other) {
    if (this == &other) return *this;
    ToyModel tmp(other);
    *this = std::move(tmp);
    return *this;
}

int64_t ToyModel::param_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
}

void ToyModel::set_requires_grad(bool on) {
    std::vector<ad::Tensor> fresh;
    fresh.reserve(params_.size());
    for (auto& p : params_) fresh.push_back(ad::Tensor::leaf(p.value(), on));
    params_ = std::move(fresh);
}

void ToyModel::check_tokens(std::span<const int> tokens) const {
    for (int t : tokens) {
        if (t < 0 || t >= cfg_.vocab_size) {
            throw VocabError("token id " + std::to_string(t) + " outside vocabulary of " +
                             std::to_string(cfg_.vocab_size));
        }
    }
}

ad::Tensor ToyModel::forward_log_dist(std::span<const int> tokens) const {
    check_tokens(tokens);
    const int n = static_cast<int>(tokens.size());
    if (n < 1) throw LengthError("toy model: empty input");
    if (n > cfg_.context_len) {
        throw LengthError("toy model: sequence of " + std::to_string(n) +
                          " exceeds context of " + std::to_string(cfg_.context_len));
    }
    const ad::Tensor& tok_embed = params_[0];
    const ad::Tensor& pos_embed = params_[1];

    std::vector<int> ids(tokens.begin(), tokens.end());
    std::vector<int> positions(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) positions[static_cast<size_t>(i)] = i;

    ad::Tensor x = ad::add(ad::take_rows(tok_embed, ids), ad::take_rows(pos_embed, positions));

    ad::Arr mask(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) mask(i, j) = j <= i ? 0.0 : kNegInf;
    }
    const ad::Tensor causal = ad::Tensor::leaf(mask, false);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.embed_dim));

    for (int b = 0; b < cfg_.depth; ++b) {
        const size_t base = 2 + static_cast<size_t>(b) * 6;
        const ad::Tensor &wq = params_[base], &wk = params_[base + 1], &wv = params_[base + 2];
        const ad::Tensor &wo = params_[base + 3], &w1 = params_[base + 4], &w2 = params_[base + 5];

        ad::Tensor xn = ad::rms_norm(x);
        ad::Tensor q = ad::matmul(xn, wq);
        ad::Tensor k = ad::matmul(xn, wk);
        ad::Tensor vproj = ad::matmul(xn, wv);
        ad::Tensor scores = ad::add(ad::mul(ad::matmul(q, ad::transpose(k)), scale), causal);
        ad::Tensor attn = ad::matmul(ad::softmax(scores), vproj);
        x = ad::add(x, ad::matmul(attn, wo));

        ad::Tensor hn = ad::rms_norm(x);
        x = ad::add(x, ad::matmul(ad::tanh(ad::matmul(hn, w1)), w2));
    }

    ad::Tensor logits = ad::matmul(ad::rms_norm(x), ad::transpose(tok_embed));
    return ad::log_softmax(logits);
}

ScoredResponse ToyModel::score(std::span<const int> prompt, std::span<const int> response) const {
    if (response.empty()) throw LengthError("toy model: empty response");
    const int m = static_cast<int>(prompt.size());
    const int k = static_cast<int>(response.size());
    if (1 + m + k > cfg_.context_len) {
        throw LengthError("toy model: prompt+response of " + std::to_string(1 + m + k) +
                          " exceeds context of " + std::to_string(cfg_.context_len));
    }
    // Input drops the final response token; row m+i-1 predicts response[i].
    std::vector<int> input;
    input.reserve(static_cast<size_t>(m + k));
    input.push_back(kBos);
    input.insert(input.end(), prompt.begin(), prompt.end());
    input.insert(input.end(), response.begin(), response.end() - 1);
    check_tokens(std::span<const int>(response.end() - 1, 1));

    ad::Tensor all = forward_log_dist(input);
    std::vector<int> rows(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) rows[static_cast<size_t>(i)] = m + i;

    ScoredResponse out;
    out.log_dist = ad::take_rows(all, rows);
    out.tokens.assign(response.begin(), response.end());
    out.realized = ad::gather(out.log_dist, out.tokens);
    return out;
}

TokenLogProbs ToyModel::logprobs(std::span<const int> prompt, std::span<const int> response,
                                 TokenLogProbs::Side side, TokenLogProbs::Source source) const {
    ScoredResponse s = score(prompt, response);
    TokenLogProbs out;
    out.realized = s.realized.value().matrix().col(0);
    out.full_dist = s.log_dist.value().matrix();
    out.side = side;
    out.source = source;
    return out;
}

std::vector<int> ToyModel::greedy_decode(std::span<const int> prompt, int max_len) const {
    std::vector<int> ctx;
    ctx.reserve(prompt.size() + static_cast<size_t>(max_len) + 1);
    ctx.push_back(kBos);
    ctx.insert(ctx.end(), prompt.begin(), prompt.end());
    if (static_cast<int>(ctx.size()) >= cfg_.context_len) {
        throw LengthError("toy model: prompt does not fit context");
    }
    std::vector<int> out;
    for (int step = 0; step < max_len; ++step) {
        if (static_cast<int>(ctx.size()) >= cfg_.context_len) break;
        ad::Tensor dist = forward_log_dist(ctx);
        const ad::Arr& row = dist.value();
        const Eigen::Index last = row.rows() - 1;
        int best = 0;
        double best_v = row(last, 0);
        for (int a = 1; a < cfg_.vocab_size; ++a) {
            if (row(last, a) > best_v) {
                best_v = row(last, a);
                best = a;
            }
        }
        out.push_back(best);
        ctx.push_back(best);
        if (best == kEos) break;
    }
    return out;
}

void ToyModel::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open model file for writing: " + path.string());
    os.write(kMagic, sizeof(kMagic));
    write_pod<uint32_t>(os, 1);  // version
    write_pod<int32_t>(os, cfg_.vocab_size);
    write_pod<int32_t>(os, cfg_.embed_dim);
    write_pod<int32_t>(os, cfg_.context_len);
    write_pod<int32_t>(os, cfg_.depth);
    write_pod<uint64_t>(os, cfg_.seed);
    write_pod<int64_t>(os, param_count());
    for (const auto& p : params_) {
        const ad::Arr& v = p.value();
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(v.size())));
    }
    if (!os) throw FormatError("failed writing model file: " + path.string());
}

ToyModel ToyModel::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ArtifactError("model file not found: " + path.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("bad model file magic: " + path.string());
    }
    const uint32_t version = read_pod<uint32_t>(is);
    if (version != 1) throw FormatError("unsupported model file version");
    ToyModelConfig cfg;
    cfg.vocab_size = read_pod<int32_t>(is);
    cfg.embed_dim = read_pod<int32_t>(is);
    cfg.context_len = read_pod<int32_t>(is);
    cfg.depth = read_pod<int32_t>(is);
    cfg.seed = read_pod<uint64_t>(is);
    const int64_t expect = read_pod<int64_t>(is);
    ToyModel m(cfg);
    if (m.param_count() != expect) throw FormatError("model file parameter count mismatch");
    for (auto& p : m.params_) {
        ad::Arr& v = p.mutable_value();
        is.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(v.size())));
        if (!is) throw FormatError("model file truncated");
    }
    return m;
}

PolicySnapshot::PolicySnapshot(const ToyModel& source) : model_(source) {
    model_.set_requires_grad(false);
}

}  // namespace rrpo::lm
