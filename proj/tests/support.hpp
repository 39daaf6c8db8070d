#pragma once

// Shared by the unit tests and the acceptance runner. The oracle below is a
// deliberately naive re-derivation of the forward pass: plain nested loops in
// feature-major (d_w x T, K x T) orientation, no library building blocks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "nrpa/data.hpp"
#include "nrpa/model.hpp"
#include "nrpa/rng.hpp"
#include "nrpa/training.hpp"

namespace testing_support {

using namespace nrpa;

namespace oracle {

struct SideResult {
    std::vector<double> p;                   // K
    std::vector<std::vector<double>> alpha;  // N x T
    std::vector<double> beta;                // N
};

inline std::vector<double> softmax_over(const std::vector<double>& logits, const std::vector<bool>& live,
                                        bool uniform) {
    std::vector<double> w(logits.size(), 0.0);
    double count = 0.0;
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < logits.size(); ++k)
        if (live[k]) {
            count += 1.0;
            top = std::max(top, logits[k]);
        }
    if (count == 0.0) return w;
    double z = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k)
        if (live[k]) {
            w[k] = uniform ? 1.0 : std::exp(logits[k] - top);
            z += w[k];
        }
    for (double& x : w) x /= z;
    return w;
}

inline SideResult encode(const Profile& profile, std::size_t owner, const Matrix& id_table, const SideParams& s,
                         const Matrix& word_table, const ModelDims& d, ConvActivation act, bool uniform_word,
                         bool uniform_review) {
    const std::size_t T = d.tokens_per_review, N = d.num_reviews, K = d.num_filters, A = d.attention_dim;
    const std::size_t dw = d.word_dim, half = d.window / 2;

    std::vector<double> qw(A), qr(A);
    for (std::size_t a = 0; a < A; ++a) {
        double x = s.word_query_bias[a], y = s.review_query_bias[a];
        for (std::size_t e = 0; e < d.id_dim; ++e) {
            x += s.word_query_weight(a, e) * id_table(owner, e);
            y += s.review_query_weight(a, e) * id_table(owner, e);
        }
        qw[a] = x > 0 ? x : 0;
        qr[a] = y > 0 ? y : 0;
    }

    SideResult out;
    out.alpha.assign(N, std::vector<double>(T, 0.0));
    std::vector<std::vector<double>> docs(N, std::vector<double>(K, 0.0));
    for (std::size_t n = 0; n < N; ++n) {
        if (!profile.review_mask[n]) continue;
        // M: d_w x T, column k = embedding of token k.
        std::vector<std::vector<double>> M(dw, std::vector<double>(T, 0.0));
        for (std::size_t k = 0; k < T; ++k) {
            const TokenId t = profile.tokens[n * T + k];
            if (t == kPadToken) continue;
            for (std::size_t c = 0; c < dw; ++c) M[c][k] = word_table(t, c);
        }
        // C: K x T
        std::vector<std::vector<double>> C(K, std::vector<double>(T, 0.0));
        for (std::size_t j = 0; j < K; ++j)
            for (std::size_t k = 0; k < T; ++k) {
                double x = s.conv_bias[j];
                for (std::size_t o = 0; o < d.window; ++o) {
                    const long pos = static_cast<long>(k + o) - static_cast<long>(half);
                    if (pos < 0 || pos >= static_cast<long>(T)) continue;
                    for (std::size_t c = 0; c < dw; ++c) x += s.conv_weight(j, o * dw + c) * M[c][pos];
                }
                C[j][k] = act == ConvActivation::Relu ? (x > 0 ? x : 0) : std::tanh(x);
            }
        std::vector<double> g(T, 0.0);
        std::vector<bool> live(T);
        for (std::size_t k = 0; k < T; ++k) {
            live[k] = profile.token_mask[n * T + k];
            for (std::size_t a = 0; a < A; ++a)
                for (std::size_t j = 0; j < K; ++j) g[k] += qw[a] * s.word_harmony(a, j) * C[j][k];
        }
        out.alpha[n] = softmax_over(g, live, uniform_word);
        for (std::size_t j = 0; j < K; ++j)
            for (std::size_t k = 0; k < T; ++k) docs[n][j] += out.alpha[n][k] * C[j][k];
    }
    std::vector<double> e(N, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t a = 0; a < A; ++a)
            for (std::size_t j = 0; j < K; ++j) e[n] += qr[a] * s.review_harmony(a, j) * docs[n][j];
    out.beta = softmax_over(e, profile.review_mask, uniform_review);
    out.p.assign(K, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t j = 0; j < K; ++j) out.p[j] += out.beta[n] * docs[n][j];
    return out;
}

/// w0 + Σ w_i o_i + Σ_{i<j} <V_i, V_j> o_i o_j, summed explicitly.
inline double fm_explicit(const std::vector<double>& o, const FmParams& fm) {
    double r = fm.bias;
    for (std::size_t i = 0; i < o.size(); ++i) r += fm.linear[i] * o[i];
    for (std::size_t i = 0; i < o.size(); ++i)
        for (std::size_t j = i + 1; j < o.size(); ++j) {
            double v = 0.0;
            for (std::size_t f = 0; f < fm.factors.cols(); ++f) v += fm.factors(i, f) * fm.factors(j, f);
            r += v * o[i] * o[j];
        }
    return r;
}

struct Result {
    double rating = 0.0;
    SideResult user, item;
};

inline Result predict(UserId u, ItemId i, const Profile& up, const Profile& ip, const ModelParams& p,
                      const AblationSpec& ab = {}) {
    Result r;
    const auto uni = [](AttentionMode m) { return m == AttentionMode::Uniform; };
    r.user = encode(up, u, p.user_embedding, p.user_side, p.word_embedding, p.dims, p.activation,
                    uni(ab.word_mode(Side::User)), uni(ab.review_mode(Side::User)));
    r.item = encode(ip, i, p.item_embedding, p.item_side, p.word_embedding, p.dims, p.activation,
                    uni(ab.word_mode(Side::Item)), uni(ab.review_mode(Side::Item)));
    std::vector<double> o = r.user.p;
    o.insert(o.end(), r.item.p.begin(), r.item.p.end());
    r.rating = fm_explicit(o, p.fm);
    return r;
}

}  // namespace oracle

// ---------------------------------------------------------------------------
// Fixtures

/// Toy dims used by the gradient checks.
inline ModelDims toy_dims() {
    ModelDims d;
    d.vocab_size = 20;
    d.num_users = 3;
    d.num_items = 3;
    d.word_dim = 5;
    d.id_dim = 4;
    d.num_filters = 6;
    d.attention_dim = 6;
    d.window = 3;
    d.fm_factors = 2;
    d.tokens_per_review = 7;
    d.num_reviews = 3;
    return d;
}

/// Interactions over every (user, item) slot with random lengths (some
/// longer than T, some shorter) and token ids in [0, |V|), PAD included.
inline std::vector<Interaction> random_interactions(const ModelDims& d, std::uint64_t seed, double keep = 0.8) {
    SplitMix64 rng(seed);
    std::vector<Interaction> out;
    for (UserId u = 0; u < d.num_users; ++u)
        for (ItemId i = 0; i < d.num_items; ++i) {
            if (rng.uniform() > keep) continue;
            Interaction x{u, i, rng.uniform(1.0, 5.0), {}};
            const auto len = 1 + rng.below(d.tokens_per_review + 3);
            for (std::size_t k = 0; k < len; ++k)
                x.tokens.push_back(static_cast<TokenId>(rng.below(d.vocab_size)));
            out.push_back(std::move(x));
        }
    return out;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t k = 0; k < n; ++k) v[k] = k;
    return v;
}

inline ProfileSet profiles_of(const std::vector<Interaction>& xs, const ModelDims& d) {
    return build_profiles(xs, all_indices(xs.size()), d.num_users, d.num_items, d.tokens_per_review,
                          d.num_reviews);
}

/// init_params plus nonzero biases so every pathway carries signal.
inline ModelParams random_params(const ModelDims& d, std::uint64_t seed,
                                 ConvActivation act = ConvActivation::Relu) {
    ModelParams p = init_params(d, seed, act);
    SplitMix64 rng(seed * 31 + 7);
    for (auto* s : {&p.user_side, &p.item_side}) {
        for (double& b : s->conv_bias) b = rng.uniform(-0.05, 0.2);
        for (double& b : s->word_query_bias) b = rng.uniform(-0.05, 0.3);
        for (double& b : s->review_query_bias) b = rng.uniform(-0.05, 0.3);
        for (double& v : s->word_harmony.values()) v *= 4.0;
        for (double& v : s->review_harmony.values()) v *= 4.0;
    }
    for (double& v : p.word_embedding.values()) v *= 5.0;
    for (double& v : p.user_embedding.values()) v *= 5.0;
    for (double& v : p.item_embedding.values()) v *= 5.0;
    for (std::size_t c = 0; c < d.word_dim; ++c) p.word_embedding(kPadToken, c) = 0.0;
    p.fm.bias = 3.0;
    return p;
}

/// Per-tensor max relative error between backward() and central differences
/// of loss(), in checkpoint order.
inline std::vector<std::pair<std::string, double>> gradient_errors(const ModelParams& params,
                                                                   std::span<const Example> batch,
                                                                   const ProfileSet& profiles,
                                                                   const LossOptions& options, double eps = 1e-5) {
    const LossAndGradients analytic = backward(batch, params, profiles, options);
    std::vector<std::pair<std::string, std::vector<double>>> grads;
    for_each_tensor(analytic.gradients, [&](std::string_view name, std::span<const double> g) {
        grads.emplace_back(std::string(name), std::vector<double>(g.begin(), g.end()));
    });
    std::vector<std::pair<std::string, double>> out;
    std::size_t index = 0;
    ModelParams probe = params;
    for_each_tensor(probe, [&](std::string_view name, std::span<double> values) {
        const std::vector<double> origin(values.begin(), values.end());
        auto f = [&](std::span<const double> x) {
            std::copy(x.begin(), x.end(), values.begin());
            const double l = loss(batch, probe, profiles, options);
            std::copy(origin.begin(), origin.end(), values.begin());
            return l;
        };
        out.emplace_back(std::string(name), grad_check(f, origin, grads[index++].second, eps));
    });
    return out;
}

inline std::vector<Example> examples_from(const std::vector<Interaction>& xs) {
    std::vector<Example> out;
    for (const auto& x : xs) out.push_back({x.user, x.item, x.rating});
    return out;
}

inline std::string read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Fresh directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("nrpa_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing_support
