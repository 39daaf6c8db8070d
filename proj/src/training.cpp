#include "nrpa/training.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

#include "nrpa/evaluation.hpp"
#include "nrpa/rng.hpp"

namespace nrpa {

std::vector<Example> examples_of(const Dataset& dataset, const std::vector<std::size_t>& indices) {
    std::vector<Example> out;
    out.reserve(indices.size());
    for (const auto i : indices) {
        const auto& x = dataset.interactions.at(i);
        out.push_back({x.user, x.item, x.rating});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Regularisation

namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

bool regularised(std::string_view name, const AblationSpec& ablation) {
    if (ends_with(name, "bias") || !tensor_in_use(name, ablation)) return false;
    for (const Side side : {Side::User, Side::Item}) {
        const bool word_off = ablation.word_mode(side) == AttentionMode::Uniform;
        const bool review_off = ablation.review_mode(side) == AttentionMode::Uniform;
        if (word_off && review_off && name == (side == Side::User ? "user_embedding" : "item_embedding"))
            return false;
    }
    return true;
}

// Skips the PAD row of the word table.
std::span<const double> regularised_values(std::string_view name, std::span<const double> values,
                                           const ModelParams& params) {
    if (name == "word_embedding") return values.subspan(params.dims.word_dim);
    return values;
}

}  // namespace

double l2_penalty(const ModelParams& params, const LossOptions& options) {
    if (options.l2_weight == 0.0) return 0.0;
    double total = 0.0;
    for_each_tensor(params, [&](std::string_view name, std::span<const double> values) {
        if (!regularised(name, options.ablation)) return;
        for (const double v : regularised_values(name, values, params)) total += v * v;
    });
    return options.l2_weight * total;
}

double loss(std::span<const Example> batch, const ModelParams& params, const ProfileSet& profiles,
            const LossOptions& options) {
    if (batch.empty()) throw std::invalid_argument("loss: empty batch");
    std::vector<std::pair<UserId, ItemId>> pairs;
    pairs.reserve(batch.size());
    for (const auto& x : batch) pairs.emplace_back(x.user, x.item);
    const auto preds = predict_pairs(pairs, profiles, params, options.ablation, options.exclude_target);
    double sum = 0.0;
    for (std::size_t n = 0; n < batch.size(); ++n) {
        const double r = preds[n] - batch[n].rating;
        sum += r * r;
    }
    return sum / static_cast<double>(batch.size()) + l2_penalty(params, options);
}

// ---------------------------------------------------------------------------
// Backpropagation

namespace {

void add_outer(Matrix& g, std::span<const double> rows, std::span<const double> cols, double scale = 1.0) {
    for (std::size_t r = 0; r < g.rows(); ++r) {
        const double a = rows[r] * scale;
        if (a == 0.0) continue;
        auto out = g.row(r);
        for (std::size_t c = 0; c < g.cols(); ++c) out[c] += a * cols[c];
    }
}

void axpy(std::span<double> y, double a, std::span<const double> x) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

// Backprop of key = Hᵀ ReLU(W id + b) given dL/dkey.
void backward_query(std::span<const double> d_key, const Vector& query, const Vector& query_pre,
                    const Matrix& harmony, const Matrix& weight, std::span<const double> id_embedding,
                    Matrix& g_harmony, Matrix& g_weight, Vector& g_bias, std::span<double> g_id) {
    add_outer(g_harmony, query, d_key);
    Vector d_pre = matvec(harmony, d_key);
    for (std::size_t a = 0; a < d_pre.size(); ++a)
        if (!(query_pre[a] > 0.0)) d_pre[a] = 0.0;
    add_outer(g_weight, d_pre, id_embedding);
    axpy(g_bias, 1.0, d_pre);
    const Vector d_id = matvec_transposed(weight, d_pre);
    axpy(g_id, 1.0, d_id);
}

struct SideContext {
    const SideParams& side;
    const Matrix& word_embedding;
    ConvActivation activation;
    AttentionMode word_mode;
    AttentionMode review_mode;
};

void backward_side(const SideEncoding& enc, const Profile& profile, std::span<const double> id_embedding,
                   const SideContext& ctx, std::span<const double> upstream, SideParams& g_side,
                   Matrix& g_word, std::span<double> g_id) {
    const std::size_t filters = ctx.side.conv_weight.rows();
    const std::size_t dim = ctx.word_embedding.cols();
    const std::size_t window = ctx.side.conv_weight.cols() / dim;
    const std::size_t half = window / 2;
    const std::size_t length = profile.tokens_per_review;

    // review-level pooling
    std::vector<Vector> d_reviews(profile.num_reviews);
    for (std::size_t n = 0; n < profile.num_reviews; ++n) {
        d_reviews[n].assign(filters, 0.0);
        if (profile.review_mask[n]) axpy(d_reviews[n], enc.review_weights[n], upstream);
    }
    if (ctx.review_mode == AttentionMode::Personalized) {
        Vector d_beta(profile.num_reviews, 0.0);
        for (std::size_t n = 0; n < profile.num_reviews; ++n)
            if (profile.review_mask[n]) d_beta[n] = dot(upstream, enc.reviews[n].vector);
        const Vector d_logits = softmax_backward(enc.review_weights, d_beta);
        Vector d_key(filters, 0.0);
        for (std::size_t n = 0; n < profile.num_reviews; ++n) {
            if (!profile.review_mask[n] || d_logits[n] == 0.0) continue;
            axpy(d_reviews[n], d_logits[n], enc.review_key);
            axpy(d_key, d_logits[n], enc.reviews[n].vector);
        }
        backward_query(d_key, enc.review_query, enc.review_query_pre, ctx.side.review_harmony,
                       ctx.side.review_query_weight, id_embedding, g_side.review_harmony,
                       g_side.review_query_weight, g_side.review_query_bias, g_id);
    }

    // word-level pooling and convolution, review by review
    Vector d_word_key(filters, 0.0);
    Vector d_pre(filters);
    Vector patch(window * dim);
    Vector d_patch(window * dim);
    for (std::size_t n = 0; n < profile.num_reviews; ++n) {
        if (!profile.review_mask[n]) continue;
        const auto& r = enc.reviews[n];
        const auto tokens = std::span(profile.tokens).subspan(n * length, length);
        const auto mask_at = [&](std::size_t k) { return static_cast<bool>(profile.token_mask[n * length + k]); };

        Vector d_logits;
        if (ctx.word_mode == AttentionMode::Personalized) {
            Vector d_alpha(length, 0.0);
            for (std::size_t k = 0; k < length; ++k)
                if (mask_at(k)) d_alpha[k] = dot(d_reviews[n], r.features.row(k));
            d_logits = softmax_backward(r.word_weights, d_alpha);
        }
        const Matrix embedded = embed_review(tokens, ctx.word_embedding);
        for (std::size_t k = 0; k < length; ++k) {
            if (!mask_at(k)) continue;
            const auto z = r.features.row(k);
            const double alpha = r.word_weights[k];
            const double g = d_logits.empty() ? 0.0 : d_logits[k];
            for (std::size_t j = 0; j < filters; ++j) {
                const double dz = alpha * d_reviews[n][j] + g * enc.word_key[j];
                d_pre[j] = ctx.activation == ConvActivation::Relu ? (z[j] > 0.0 ? dz : 0.0) : dz * (1.0 - z[j] * z[j]);
            }
            if (g != 0.0) axpy(d_word_key, g, z);

            std::fill(patch.begin(), patch.end(), 0.0);
            for (std::size_t o = 0; o < window; ++o) {
                const auto pos = static_cast<std::ptrdiff_t>(k + o) - static_cast<std::ptrdiff_t>(half);
                if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(length)) continue;
                std::copy_n(embedded.row(static_cast<std::size_t>(pos)).begin(), dim, patch.begin() + o * dim);
            }
            std::fill(d_patch.begin(), d_patch.end(), 0.0);
            for (std::size_t j = 0; j < filters; ++j) {
                const double dp = d_pre[j];
                if (dp == 0.0) continue;
                g_side.conv_bias[j] += dp;
                axpy(g_side.conv_weight.row(j), dp, patch);
                axpy(d_patch, dp, ctx.side.conv_weight.row(j));
            }
            for (std::size_t o = 0; o < window; ++o) {
                const auto pos = static_cast<std::ptrdiff_t>(k + o) - static_cast<std::ptrdiff_t>(half);
                if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(length)) continue;
                const TokenId t = tokens[static_cast<std::size_t>(pos)];
                if (t == kPadToken) continue;
                axpy(g_word.row(t), 1.0, std::span<const double>(d_patch).subspan(o * dim, dim));
            }
        }
    }
    if (ctx.word_mode == AttentionMode::Personalized)
        backward_query(d_word_key, enc.word_query, enc.word_query_pre, ctx.side.word_harmony,
                       ctx.side.word_query_weight, id_embedding, g_side.word_harmony, g_side.word_query_weight,
                       g_side.word_query_bias, g_id);
}

// Adds dpred * ∂R̂/∂θ_fm to the gradients and returns ∂R̂/∂ô scaled by dpred.
Vector backward_fm(const Vector& features, const FmParams& fm, double d_pred, FmParams& g) {
    const std::size_t factors = fm.factors.cols();
    Vector sums(factors, 0.0);
    for (std::size_t i = 0; i < features.size(); ++i) axpy(sums, features[i], fm.factors.row(i));
    g.bias += d_pred;
    Vector d_features(features.size(), 0.0);
    for (std::size_t i = 0; i < features.size(); ++i) {
        const double x = features[i];
        g.linear[i] += d_pred * x;
        const auto v = fm.factors.row(i);
        auto gv = g.factors.row(i);
        double d = fm.linear[i];
        for (std::size_t f = 0; f < factors; ++f) {
            gv[f] += d_pred * (x * sums[f] - v[f] * x * x);
            d += v[f] * sums[f] - v[f] * v[f] * x;
        }
        d_features[i] = d_pred * d;
    }
    return d_features;
}

struct CachedSide {
    Profile profile;
    SideEncoding encoding;
    Vector upstream;
};

using SideKey = std::tuple<bool, std::uint32_t, std::uint64_t>;
constexpr std::uint64_t kNoExclusion = UINT64_MAX;

bool mentions(const Profile& p, std::uint32_t other) {
    for (std::size_t r = 0; r < p.num_reviews; ++r)
        if (p.review_mask[r] && p.counterpart[r] == other) return true;
    return false;
}

}  // namespace

LossAndGradients backward(std::span<const Example> batch, const ModelParams& params, const ProfileSet& profiles,
                          const LossOptions& options) {
    if (batch.empty()) throw std::invalid_argument("backward: empty batch");
    LossAndGradients out{0.0, zeros_like(params)};
    Gradients& g = out.gradients;
    const auto& ab = options.ablation;

    std::map<SideKey, CachedSide> cache;
    auto side_for = [&](Side side, std::uint32_t owner, std::uint32_t other) -> CachedSide& {
        const auto& table = side == Side::User ? profiles.users : profiles.items;
        if (owner >= table.size() || owner >= params.id_embedding(side).rows())
            throw std::out_of_range("backward: owner " + std::to_string(owner) + " outside profile/embedding tables");
        const Profile& base = table[owner];
        const bool excluded = options.exclude_target && mentions(base, other);
        const SideKey key{side == Side::User, owner, excluded ? std::uint64_t{other} : kNoExclusion};
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
        CachedSide entry;
        entry.profile = excluded ? base.without_counterpart(other) : base;
        entry.encoding = encode_side(entry.profile, params.id_embedding(side).row(owner), params.side(side),
                                     params.word_embedding, params.activation, ab.word_mode(side),
                                     ab.review_mode(side));
        entry.upstream.assign(params.dims.num_filters, 0.0);
        return cache.emplace(key, std::move(entry)).first->second;
    };

    const double scale = 1.0 / static_cast<double>(batch.size());
    double sum = 0.0;
    Vector features(2 * params.dims.num_filters);
    for (const auto& x : batch) {
        CachedSide& u = side_for(Side::User, x.user, x.item);
        CachedSide& i = side_for(Side::Item, x.item, x.user);
        const double pred = fm_predict(u.encoding.vector, i.encoding.vector, params.fm);
        const double residual = pred - x.rating;
        sum += residual * residual;
        std::copy(u.encoding.vector.begin(), u.encoding.vector.end(), features.begin());
        std::copy(i.encoding.vector.begin(), i.encoding.vector.end(),
                  features.begin() + static_cast<std::ptrdiff_t>(u.encoding.vector.size()));
        const Vector d_features = backward_fm(features, params.fm, 2.0 * residual * scale, g.fm);
        const std::size_t k = u.upstream.size();
        axpy(u.upstream, 1.0, std::span<const double>(d_features).first(k));
        axpy(i.upstream, 1.0, std::span<const double>(d_features).subspan(k));
    }
    out.loss = sum * scale + l2_penalty(params, options);

    for (auto& [key, entry] : cache) {
        const Side side = std::get<0>(key) ? Side::User : Side::Item;
        const std::uint32_t owner = std::get<1>(key);
        const SideContext ctx{params.side(side), params.word_embedding, params.activation, ab.word_mode(side),
                              ab.review_mode(side)};
        backward_side(entry.encoding, entry.profile, params.id_embedding(side).row(owner), ctx, entry.upstream,
                      g.side(side), g.word_embedding, g.id_embedding(side).row(owner));
    }

    if (options.l2_weight != 0.0) {
        // walk params and grads in lockstep
        std::vector<std::span<double>> grad_tensors;
        for_each_tensor(g, [&](std::string_view, std::span<double> v) { grad_tensors.push_back(v); });
        std::size_t t = 0;
        for_each_tensor(params, [&](std::string_view name, std::span<const double> v) {
            auto gv = grad_tensors[t++];
            if (!regularised(name, ab)) return;
            const std::size_t start = name == "word_embedding" ? params.dims.word_dim : 0;
            for (std::size_t n = start; n < v.size(); ++n) gv[n] += 2.0 * options.l2_weight * v[n];
        });
    }

    if (!std::isfinite(out.loss)) throw std::runtime_error("backward: non-finite loss");
    for_each_tensor(g, [&](std::string_view name, std::span<const double> v) {
        if (!all_finite(v)) throw std::runtime_error("backward: non-finite gradient in " + std::string(name));
    });
    return out;
}

// ---------------------------------------------------------------------------
// Optimiser

AdamState make_adam_state(const ModelParams& params) {
    return AdamState{zeros_like(params), zeros_like(params), 0};
}

void adam_step(ModelParams& params, const Gradients& grads, AdamState& state, double learning_rate) {
    if (!(params.dims == grads.dims) || !(params.dims == state.first_moment.dims))
        throw std::invalid_argument("adam_step: gradient/state shapes do not match parameters");
    ++state.step;
    const double correction1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
    const double correction2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));

    std::vector<std::span<const double>> g;
    std::vector<std::span<double>> m, v;
    for_each_tensor(grads, [&](std::string_view, std::span<const double> x) { g.push_back(x); });
    for_each_tensor(state.first_moment, [&](std::string_view, std::span<double> x) { m.push_back(x); });
    for_each_tensor(state.second_moment, [&](std::string_view, std::span<double> x) { v.push_back(x); });
    std::size_t t = 0;
    for_each_tensor(params, [&](std::string_view name, std::span<double> p) {
        if (g[t].size() != p.size()) throw std::invalid_argument("adam_step: shape mismatch in " + std::string(name));
        for (std::size_t n = 0; n < p.size(); ++n) {
            const double gn = g[t][n];
            m[t][n] = kAdamBeta1 * m[t][n] + (1.0 - kAdamBeta1) * gn;
            v[t][n] = kAdamBeta2 * v[t][n] + (1.0 - kAdamBeta2) * gn * gn;
            const double m_hat = m[t][n] / correction1;
            const double v_hat = v[t][n] / correction2;
            p[n] -= learning_rate * m_hat / (std::sqrt(v_hat) + kAdamEpsilon);
        }
        ++t;
    });
    auto pad = params.word_embedding.row(kPadToken);
    std::fill(pad.begin(), pad.end(), 0.0);
}

std::size_t load_word_vectors(std::istream& in, const Vocabulary& vocab, Matrix& word_embedding) {
    std::size_t loaded = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream fields(line);
        std::string token;
        if (!(fields >> token)) continue;
        Vector values;
        double x = 0.0;
        while (fields >> x) values.push_back(x);
        if (values.size() != word_embedding.cols())
            throw std::runtime_error("word vectors: line " + std::to_string(line_no) + " has " +
                                     std::to_string(values.size()) + " values, expected " +
                                     std::to_string(word_embedding.cols()));
        if (!vocab.contains(token)) continue;
        const TokenId id = vocab.id(token);
        std::copy(values.begin(), values.end(), word_embedding.row(id).begin());
        ++loaded;
    }
    return loaded;
}

// ---------------------------------------------------------------------------
// Training loop

TrainResult train(const TrainConfig& config, const Dataset& dataset, const ProfileSet& profiles,
                  const EpochCallback& on_epoch) {
    config.validate();
    if (profiles.num_reviews != config.num_reviews || profiles.tokens_per_review != config.tokens_per_review)
        throw std::invalid_argument("train: profiles were built with a different T/N than the config");
    if (dataset.split.train.empty() || dataset.split.validation.empty())
        throw std::invalid_argument("train: empty train or validation split");

    ModelParams params = init_params(config.dims_for(dataset), config.seed, config.conv_activation);
    if (!config.word_vectors.empty()) {
        std::ifstream in(config.word_vectors);
        if (!in) throw std::runtime_error("cannot open word vectors " + config.word_vectors);
        load_word_vectors(in, dataset.vocab, params.word_embedding);
    }
    AdamState state = make_adam_state(params);
    const LossOptions options{config.l2_weight, config.ablation, false};

    const std::vector<Example> train_examples = examples_of(dataset, dataset.split.train);
    std::vector<std::size_t> order(train_examples.size());
    for (std::size_t n = 0; n < order.size(); ++n) order[n] = n;
    SplitMix64 shuffler(config.seed ^ 0x9e3779b97f4a7c15ULL);

    TrainResult result;
    result.best_val_mse = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    std::vector<Example> batch;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        shuffler.shuffle(order);
        double weighted = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            batch.clear();
            for (std::size_t n = start; n < end; ++n) batch.push_back(train_examples[order[n]]);
            LossAndGradients lg;
            try {
                lg = backward(batch, params, profiles, options);
            } catch (const std::runtime_error& e) {
                throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
            }
            adam_step(params, lg.gradients, state, config.learning_rate);
            weighted += lg.loss * static_cast<double>(batch.size());
        }
        EpochRecord record;
        record.epoch = epoch;
        record.train_loss = weighted / static_cast<double>(order.size());
        record.val_mse = evaluate(params, dataset, dataset.split.validation, profiles, config.ablation,
                                  config.exclude_target);
        if (!std::isfinite(record.train_loss) || !std::isfinite(record.val_mse))
            throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch) + ": non-finite loss");
        result.history.push_back(record);
        if (on_epoch) on_epoch(record);

        if (record.val_mse < result.best_val_mse) {
            result.best_val_mse = record.val_mse;
            result.best_epoch = epoch;
            result.best_params = params;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    return result;
}

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
    out << "epoch,train_loss,val_mse\n";
    char buf[64];
    auto fmt = [&buf](double v) {
        const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, end);
    };
    for (const auto& r : history) out << r.epoch << ',' << fmt(r.train_loss) << ',' << fmt(r.val_mse) << '\n';
}

}  // namespace nrpa
