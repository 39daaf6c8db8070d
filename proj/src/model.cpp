#include "nrpa/model.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <tuple>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "nrpa/rng.hpp"

namespace nrpa {

void ModelDims::validate() const {
    const std::pair<const char*, std::size_t> fields[] = {
        {"vocab_size", vocab_size}, {"num_users", num_users},         {"num_items", num_items},
        {"word_dim", word_dim},     {"id_dim", id_dim},               {"num_filters", num_filters},
        {"attention_dim", attention_dim}, {"window", window},         {"fm_factors", fm_factors},
        {"tokens_per_review", tokens_per_review}, {"num_reviews", num_reviews},
    };
    for (const auto& [name, value] : fields)
        if (value == 0) throw std::invalid_argument(std::string("model dimension ") + name + " must be >= 1");
    if (window % 2 == 0) throw std::invalid_argument("convolution window must be odd, got " + std::to_string(window));
    if (vocab_size < 2) throw std::invalid_argument("vocab_size must include PAD and UNK");
}

std::string ModelDims::describe() const {
    std::ostringstream out;
    out << "(|V|=" << vocab_size << ", |U|=" << num_users << ", |I|=" << num_items << ", d_w=" << word_dim
        << ", d_id=" << id_dim << ", K=" << num_filters << ", d_a=" << attention_dim << ", window=" << window
        << ", k_fm=" << fm_factors << ", T=" << tokens_per_review << ", N=" << num_reviews << ")";
    return out.str();
}

ConvActivation parse_activation(std::string_view name) {
    if (name == "relu") return ConvActivation::Relu;
    if (name == "tanh") return ConvActivation::Tanh;
    throw std::invalid_argument("unknown activation '" + std::string(name) + "' (expected relu or tanh)");
}

std::string_view to_string(ConvActivation activation) {
    return activation == ConvActivation::Relu ? "relu" : "tanh";
}

AttentionMode AblationSpec::word_mode(Side side) const {
    const auto s = side == Side::User ? user : item;
    return s == AttentionMode::Uniform || word_level == AttentionMode::Uniform ? AttentionMode::Uniform
                                                                              : AttentionMode::Personalized;
}

AttentionMode AblationSpec::review_mode(Side side) const {
    const auto s = side == Side::User ? user : item;
    return s == AttentionMode::Uniform || review_level == AttentionMode::Uniform ? AttentionMode::Uniform
                                                                                : AttentionMode::Personalized;
}

AblationSpec AblationSpec::parse(std::string_view text) {
    AblationSpec spec;
    while (!text.empty()) {
        const auto comma = text.find(',');
        const auto item = text.substr(0, comma);
        const auto eq = item.find('=');
        if (eq == std::string_view::npos)
            throw std::invalid_argument("ablation: expected site=mode, got '" + std::string(item) + "'");
        const auto site = item.substr(0, eq);
        const auto value = item.substr(eq + 1);
        AttentionMode mode;
        if (value == "uniform") mode = AttentionMode::Uniform;
        else if (value == "personalized") mode = AttentionMode::Personalized;
        else throw std::invalid_argument("ablation: unknown mode '" + std::string(value) + "'");
        if (site == "user") spec.user = mode;
        else if (site == "item") spec.item = mode;
        else if (site == "word") spec.word_level = mode;
        else if (site == "review") spec.review_level = mode;
        else throw std::invalid_argument("ablation: unknown site '" + std::string(site) + "'");
        if (comma == std::string_view::npos) break;
        text.remove_prefix(comma + 1);
    }
    return spec;
}

std::string AblationSpec::to_string() const {
    std::string out;
    const std::pair<const char*, AttentionMode> sites[] = {
        {"user", user}, {"item", item}, {"word", word_level}, {"review", review_level}};
    for (const auto& [name, mode] : sites) {
        if (mode != AttentionMode::Uniform) continue;
        if (!out.empty()) out += ',';
        out += name;
        out += "=uniform";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

SideParams side_shapes(const ModelDims& d) {
    SideParams s;
    s.conv_weight = Matrix(d.num_filters, d.window * d.word_dim);
    s.conv_bias.assign(d.num_filters, 0.0);
    s.word_query_weight = Matrix(d.attention_dim, d.id_dim);
    s.word_query_bias.assign(d.attention_dim, 0.0);
    s.word_harmony = Matrix(d.attention_dim, d.num_filters);
    s.review_query_weight = Matrix(d.attention_dim, d.id_dim);
    s.review_query_bias.assign(d.attention_dim, 0.0);
    s.review_harmony = Matrix(d.attention_dim, d.num_filters);
    return s;
}

ModelParams shapes(const ModelDims& d) {
    d.validate();
    ModelParams p;
    p.dims = d;
    p.word_embedding = Matrix(d.vocab_size, d.word_dim);
    p.user_embedding = Matrix(d.num_users, d.id_dim);
    p.item_embedding = Matrix(d.num_items, d.id_dim);
    p.user_side = side_shapes(d);
    p.item_side = side_shapes(d);
    p.fm.linear.assign(2 * d.num_filters, 0.0);
    p.fm.factors = Matrix(2 * d.num_filters, d.fm_factors);
    return p;
}

void fill_uniform(std::span<double> values, double limit, SplitMix64& rng) {
    for (double& v : values) v = rng.uniform(-limit, limit);
}

double xavier_limit(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace

ModelParams init_params(const ModelDims& dims, std::uint64_t seed, ConvActivation activation) {
    ModelParams p = shapes(dims);
    p.activation = activation;
    SplitMix64 rng(seed);
    fill_uniform(p.word_embedding.values(), 0.1, rng);
    std::fill(p.word_embedding.row(kPadToken).begin(), p.word_embedding.row(kPadToken).end(), 0.0);
    fill_uniform(p.user_embedding.values(), 0.1, rng);
    fill_uniform(p.item_embedding.values(), 0.1, rng);
    for (auto* side : {&p.user_side, &p.item_side}) {
        for (Matrix* m : {&side->conv_weight, &side->word_query_weight, &side->word_harmony,
                          &side->review_query_weight, &side->review_harmony})
            fill_uniform(m->values(), xavier_limit(m->cols(), m->rows()), rng);
    }
    fill_uniform(p.fm.linear, xavier_limit(p.fm.linear.size(), 1), rng);
    fill_uniform(p.fm.factors.values(), xavier_limit(p.fm.factors.rows(), p.fm.factors.cols()), rng);
    return p;
}

ModelParams zero_params(const ModelDims& dims, ConvActivation activation) {
    ModelParams z = shapes(dims);
    z.activation = activation;
    return z;
}

ModelParams zeros_like(const ModelParams& params) { return zero_params(params.dims, params.activation); }

std::size_t parameter_count(const ModelParams& params) {
    std::size_t n = 0;
    for_each_tensor(params, [&](std::string_view, std::span<const double> v) { n += v.size(); });
    return n;
}

bool tensor_in_use(std::string_view name, const AblationSpec& ablation) {
    for (const Side side : {Side::User, Side::Item}) {
        const std::string_view prefix = side == Side::User ? "user." : "item.";
        if (!name.starts_with(prefix)) continue;
        const auto tail = name.substr(prefix.size());
        if (tail.starts_with("word_query") || tail == "word_harmony")
            return ablation.word_mode(side) == AttentionMode::Personalized;
        if (tail.starts_with("review_query") || tail == "review_harmony")
            return ablation.review_mode(side) == AttentionMode::Personalized;
    }
    return true;
}

std::size_t parameter_count(const ModelParams& params, const AblationSpec& ablation) {
    std::size_t n = 0;
    for_each_tensor(params, [&](std::string_view name, std::span<const double> v) {
        if (tensor_in_use(name, ablation)) n += v.size();
    });
    return n;
}

// ---------------------------------------------------------------------------
// Building blocks

Matrix embed_review(std::span<const TokenId> tokens, const Matrix& word_embedding) {
    Matrix out(tokens.size(), word_embedding.cols());
    for (std::size_t k = 0; k < tokens.size(); ++k) {
        const TokenId t = tokens[k];
        if (t >= word_embedding.rows())
            throw std::out_of_range("embed_review: token id " + std::to_string(t) + " >= vocabulary size " +
                                    std::to_string(word_embedding.rows()));
        if (t == kPadToken) continue;
        std::copy_n(word_embedding.row(t).begin(), word_embedding.cols(), out.row(k).begin());
    }
    return out;
}

namespace {

double activate(double x, ConvActivation act) { return act == ConvActivation::Relu ? (x > 0.0 ? x : 0.0) : std::tanh(x); }

// Convolution for the rows flagged in `rows` (all rows when null).
Matrix conv_rows(const Matrix& embedded, const Matrix& filters, std::span<const double> bias, std::size_t window,
                 ConvActivation act, const std::vector<bool>* rows, std::size_t row_offset = 0) {
    if (window % 2 == 0) throw std::invalid_argument("conv_encode: window must be odd, got " + std::to_string(window));
    const std::size_t length = embedded.rows();
    const std::size_t dim = embedded.cols();
    if (filters.cols() != window * dim || bias.size() != filters.rows())
        throw std::invalid_argument("conv_encode: filters " + filters.shape() + " / bias " +
                                    std::to_string(bias.size()) + " incompatible with input " + embedded.shape() +
                                    " and window " + std::to_string(window));
    const std::size_t half = window / 2;
    Matrix out(length, filters.rows());
    Vector patch(window * dim);
    const auto data = embedded.values();
    for (std::size_t k = 0; k < length; ++k) {
        if (rows && !(*rows)[row_offset + k]) continue;
        std::span<const double> view;
        if (k >= half && k + half < length) {
            view = data.subspan((k - half) * dim, window * dim);
        } else {
            std::fill(patch.begin(), patch.end(), 0.0);
            for (std::size_t o = 0; o < window; ++o) {
                const auto pos = static_cast<std::ptrdiff_t>(k + o) - static_cast<std::ptrdiff_t>(half);
                if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(length)) continue;
                std::copy_n(embedded.row(static_cast<std::size_t>(pos)).begin(), dim, patch.begin() + o * dim);
            }
            view = patch;
        }
        auto z = out.row(k);
        for (std::size_t j = 0; j < filters.rows(); ++j) z[j] = activate(dot(filters.row(j), view) + bias[j], act);
    }
    return out;
}

Vector pool_rows(const Matrix& features, std::span<const double> weights) {
    Vector out(features.cols(), 0.0);
    for (std::size_t k = 0; k < features.rows(); ++k) {
        const double a = weights[k];
        if (a == 0.0) continue;
        auto z = features.row(k);
        for (std::size_t c = 0; c < out.size(); ++c) out[c] += a * z[c];
    }
    return out;
}

Vector attention_weights(const Vector& logits, const std::vector<bool>& mask, AttentionMode mode) {
    return mode == AttentionMode::Uniform ? uniform_weights(mask) : masked_softmax(logits, mask);
}

}  // namespace

Matrix conv_encode(const Matrix& embedded, const Matrix& filters, std::span<const double> bias, std::size_t window,
                   ConvActivation activation) {
    return conv_rows(embedded, filters, bias, window, activation, nullptr);
}

Vector query_vector(std::span<const double> id_embedding, const Matrix& weight, std::span<const double> bias) {
    if (weight.rows() != bias.size())
        throw std::invalid_argument("query_vector: weight " + weight.shape() + " incompatible with bias of length " +
                                    std::to_string(bias.size()));
    Vector pre = matvec(weight, id_embedding);
    for (std::size_t a = 0; a < pre.size(); ++a) pre[a] += bias[a];
    return relu(pre);
}

EncodedReview word_attention_pool(const Matrix& features, std::span<const double> query, const Matrix& harmony,
                                  const std::vector<bool>& token_mask, AttentionMode mode) {
    if (token_mask.size() != features.rows() || harmony.cols() != features.cols())
        throw std::invalid_argument("word_attention_pool: features " + features.shape() + ", harmony " +
                                    harmony.shape() + ", mask length " + std::to_string(token_mask.size()));
    const Vector key = matvec_transposed(harmony, query);
    Vector logits(features.rows(), 0.0);
    for (std::size_t k = 0; k < features.rows(); ++k)
        if (token_mask[k]) logits[k] = dot(key, features.row(k));
    EncodedReview out;
    out.word_weights = attention_weights(logits, token_mask, mode);
    out.vector = pool_rows(features, out.word_weights);
    return out;
}

SideRepresentation review_attention_pool(const std::vector<Vector>& reviews, std::span<const double> query,
                                         const Matrix& harmony, const std::vector<bool>& review_mask,
                                         AttentionMode mode) {
    if (review_mask.size() != reviews.size())
        throw std::invalid_argument("review_attention_pool: mask length mismatch");
    const Vector key = matvec_transposed(harmony, query);
    Vector logits(reviews.size(), 0.0);
    for (std::size_t n = 0; n < reviews.size(); ++n) {
        if (reviews[n].size() != key.size())
            throw std::invalid_argument("review_attention_pool: review vector length " +
                                        std::to_string(reviews[n].size()) + " vs harmony " + harmony.shape());
        if (review_mask[n]) logits[n] = dot(key, reviews[n]);
    }
    SideRepresentation out;
    out.review_weights = attention_weights(logits, review_mask, mode);
    out.vector.assign(key.size(), 0.0);
    for (std::size_t n = 0; n < reviews.size(); ++n) {
        const double b = out.review_weights[n];
        if (b == 0.0) continue;
        for (std::size_t c = 0; c < key.size(); ++c) out.vector[c] += b * reviews[n][c];
    }
    return out;
}

double fm_predict(std::span<const double> user_vector, std::span<const double> item_vector, const FmParams& fm) {
    const std::size_t width = user_vector.size() + item_vector.size();
    if (fm.linear.size() != width || fm.factors.rows() != width)
        throw std::invalid_argument("fm_predict: features of length " + std::to_string(width) + " vs linear " +
                                    std::to_string(fm.linear.size()) + " / factors " + fm.factors.shape());
    auto feature = [&](std::size_t i) { return i < user_vector.size() ? user_vector[i] : item_vector[i - user_vector.size()]; };
    double out = fm.bias;
    Vector sums(fm.factors.cols(), 0.0);
    Vector square_sums(fm.factors.cols(), 0.0);
    for (std::size_t i = 0; i < width; ++i) {
        const double x = feature(i);
        out += fm.linear[i] * x;
        if (x == 0.0) continue;
        auto v = fm.factors.row(i);
        for (std::size_t f = 0; f < sums.size(); ++f) {
            sums[f] += v[f] * x;
            square_sums[f] += v[f] * v[f] * x * x;
        }
    }
    double pairwise = 0.0;
    for (std::size_t f = 0; f < sums.size(); ++f) pairwise += sums[f] * sums[f] - square_sums[f];
    return out + 0.5 * pairwise;
}

// ---------------------------------------------------------------------------
// Towers

SideEncoding encode_side(const Profile& profile, std::span<const double> id_embedding, const SideParams& side,
                         const Matrix& word_embedding, ConvActivation activation, AttentionMode word_mode,
                         AttentionMode review_mode) {
    const std::size_t length = profile.tokens_per_review;
    const std::size_t filters = side.conv_weight.rows();
    const std::size_t window = word_embedding.cols() == 0 ? 0 : side.conv_weight.cols() / word_embedding.cols();

    SideEncoding enc;
    enc.word_query_pre = matvec(side.word_query_weight, id_embedding);
    for (std::size_t a = 0; a < enc.word_query_pre.size(); ++a) enc.word_query_pre[a] += side.word_query_bias[a];
    enc.word_query = relu(enc.word_query_pre);
    enc.word_key = matvec_transposed(side.word_harmony, enc.word_query);
    enc.review_query_pre = matvec(side.review_query_weight, id_embedding);
    for (std::size_t a = 0; a < enc.review_query_pre.size(); ++a) enc.review_query_pre[a] += side.review_query_bias[a];
    enc.review_query = relu(enc.review_query_pre);
    enc.review_key = matvec_transposed(side.review_harmony, enc.review_query);

    enc.reviews.resize(profile.num_reviews);
    Vector review_logits(profile.num_reviews, 0.0);
    std::vector<bool> row_mask(length);
    for (std::size_t n = 0; n < profile.num_reviews; ++n) {
        auto& r = enc.reviews[n];
        r.word_weights.assign(length, 0.0);
        r.vector.assign(filters, 0.0);
        if (!profile.review_mask[n]) continue;
        const auto tokens = std::span(profile.tokens).subspan(n * length, length);
        for (std::size_t k = 0; k < length; ++k) row_mask[k] = profile.token_mask[n * length + k];
        const Matrix embedded = embed_review(tokens, word_embedding);
        r.features = conv_rows(embedded, side.conv_weight, side.conv_bias, window, activation, &row_mask);
        Vector logits(length, 0.0);
        if (word_mode == AttentionMode::Personalized)
            for (std::size_t k = 0; k < length; ++k)
                if (row_mask[k]) logits[k] = dot(enc.word_key, r.features.row(k));
        r.word_weights = attention_weights(logits, row_mask, word_mode);
        r.vector = pool_rows(r.features, r.word_weights);
        if (review_mode == AttentionMode::Personalized) review_logits[n] = dot(enc.review_key, r.vector);
    }
    enc.review_weights = attention_weights(review_logits, profile.review_mask, review_mode);
    enc.vector.assign(filters, 0.0);
    for (std::size_t n = 0; n < profile.num_reviews; ++n) {
        const double b = enc.review_weights[n];
        if (b == 0.0) continue;
        for (std::size_t c = 0; c < filters; ++c) enc.vector[c] += b * enc.reviews[n].vector[c];
    }
    return enc;
}

std::pair<Profile, Profile> scoring_profiles(const ProfileSet& profiles, UserId user, ItemId item,
                                             bool exclude_target) {
    if (user >= profiles.users.size() || item >= profiles.items.size())
        throw std::out_of_range("scoring_profiles: user " + std::to_string(user) + " / item " + std::to_string(item) +
                                " outside the profile table");
    if (!exclude_target) return {profiles.users[user], profiles.items[item]};
    return {profiles.users[user].without_counterpart(item), profiles.items[item].without_counterpart(user)};
}

namespace {

void check_ids(UserId user, ItemId item, const ModelParams& params) {
    if (user >= params.user_embedding.rows() || item >= params.item_embedding.rows())
        throw std::out_of_range("forward: user " + std::to_string(user) + " / item " + std::to_string(item) +
                                " outside the embedding tables");
}

std::vector<Vector> word_weight_grid(const SideEncoding& enc) {
    std::vector<Vector> out;
    out.reserve(enc.reviews.size());
    for (const auto& r : enc.reviews) out.push_back(r.word_weights);
    return out;
}

}  // namespace

Prediction forward(UserId user, ItemId item, const Profile& user_profile, const Profile& item_profile,
                   const ModelParams& params, const AblationSpec& ablation) {
    check_ids(user, item, params);
    const SideEncoding u = encode_side(user_profile, params.user_embedding.row(user), params.user_side,
                                       params.word_embedding, params.activation, ablation.word_mode(Side::User),
                                       ablation.review_mode(Side::User));
    const SideEncoding i = encode_side(item_profile, params.item_embedding.row(item), params.item_side,
                                       params.word_embedding, params.activation, ablation.word_mode(Side::Item),
                                       ablation.review_mode(Side::Item));
    Prediction out;
    out.rating = fm_predict(u.vector, i.vector, params.fm);
    out.trace.user_word_weights = word_weight_grid(u);
    out.trace.user_review_weights = u.review_weights;
    out.trace.item_word_weights = word_weight_grid(i);
    out.trace.item_review_weights = i.review_weights;
    return out;
}

namespace {

constexpr std::uint64_t kNoExclusion = UINT64_MAX;

bool mentions(const Profile& p, std::uint32_t other) {
    for (std::size_t r = 0; r < p.num_reviews; ++r)
        if (p.review_mask[r] && p.counterpart[r] == other) return true;
    return false;
}

class SideCache {
public:
    SideCache(const ProfileSet& profiles, const ModelParams& params, const AblationSpec& ablation)
        : profiles_(profiles), params_(params), ablation_(ablation) {}

    const Vector& get(Side side, std::uint32_t owner, std::uint32_t other, bool exclude) {
        const auto& table = side == Side::User ? profiles_.users : profiles_.items;
        if (owner >= table.size()) throw std::out_of_range("predict_pairs: owner outside the profile table");
        const Profile& base = table[owner];
        const bool excluded = exclude && mentions(base, other);
        const auto key = std::make_tuple(side == Side::User, owner, excluded ? std::uint64_t{other} : kNoExclusion);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        const Profile profile = excluded ? base.without_counterpart(other) : base;
        auto enc = encode_side(profile, params_.id_embedding(side).row(owner), params_.side(side),
                               params_.word_embedding, params_.activation, ablation_.word_mode(side),
                               ablation_.review_mode(side));
        return cache_.emplace(key, std::move(enc.vector)).first->second;
    }

private:
    const ProfileSet& profiles_;
    const ModelParams& params_;
    const AblationSpec& ablation_;
    std::map<std::tuple<bool, std::uint32_t, std::uint64_t>, Vector> cache_;
};

}  // namespace

std::vector<double> predict_pairs(const std::vector<std::pair<UserId, ItemId>>& pairs, const ProfileSet& profiles,
                                  const ModelParams& params, const AblationSpec& ablation, bool exclude_target,
                                  std::size_t threads) {
    std::vector<double> out(pairs.size(), 0.0);
    auto work = [&](std::size_t begin, std::size_t end) {
        SideCache cache(profiles, params, ablation);
        for (std::size_t n = begin; n < end; ++n) {
            const auto [u, i] = pairs[n];
            check_ids(u, i, params);
            const Vector& pu = cache.get(Side::User, u, i, exclude_target);
            const Vector& pi = cache.get(Side::Item, i, u, exclude_target);
            out[n] = fm_predict(pu, pi, params.fm);
        }
    };
    threads = std::max<std::size_t>(1, std::min(threads, pairs.size()));
    if (threads == 1) {
        work(0, pairs.size());
        return out;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    const std::size_t chunk = (pairs.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(pairs.size(), begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&, t, begin, end] {
            try {
                work(begin, end);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

}  // namespace nrpa
