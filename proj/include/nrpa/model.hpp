#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nrpa/data.hpp"
#include "nrpa/numeric.hpp"

namespace nrpa {

struct ModelDims {
    std::size_t vocab_size = 0;
    std::size_t num_users = 0;
    std::size_t num_items = 0;
    std::size_t word_dim = 300;
    std::size_t id_dim = 32;
    std::size_t num_filters = 80;    // K
    std::size_t attention_dim = 80;  // d_a
    std::size_t window = 3;
    std::size_t fm_factors = 10;
    std::size_t tokens_per_review = 100;  // T
    std::size_t num_reviews = 15;         // N

    /// Throws std::invalid_argument on a zero dimension or an even window.
    void validate() const;

    /// "(|V|, |U|, |I|, d_w, d_id, K, d_a, window, k_fm, T, N)" with values.
    std::string describe() const;

    bool operator==(const ModelDims&) const = default;
};

enum class ConvActivation { Relu, Tanh };

ConvActivation parse_activation(std::string_view name);
std::string_view to_string(ConvActivation activation);

enum class AttentionMode { Personalized, Uniform };

enum class Side { User, Item };

/// Which attention sites use learned personalized weights. A site (side,
/// level) is uniform when either its side or its level is uniform.
struct AblationSpec {
    AttentionMode user = AttentionMode::Personalized;
    AttentionMode item = AttentionMode::Personalized;
    AttentionMode word_level = AttentionMode::Personalized;
    AttentionMode review_level = AttentionMode::Personalized;

    AttentionMode word_mode(Side side) const;
    AttentionMode review_mode(Side side) const;

    /// Comma list of `user|item|word|review=uniform|personalized`; empty is
    /// the full model.
    static AblationSpec parse(std::string_view text);
    std::string to_string() const;

    bool operator==(const AblationSpec&) const = default;
};

/// One tower (User-Net or Item-Net) minus the shared word table.
struct SideParams {
    Matrix conv_weight;          // K x (window*d_w); column o*d_w + c is channel c at window offset o
    Vector conv_bias;            // K
    Matrix word_query_weight;    // d_a x d_id
    Vector word_query_bias;      // d_a
    Matrix word_harmony;         // d_a x K
    Matrix review_query_weight;  // d_a x d_id
    Vector review_query_bias;    // d_a
    Matrix review_harmony;       // d_a x K

    bool operator==(const SideParams&) const = default;
};

struct FmParams {
    double bias = 0.0;  // w0
    Vector linear;      // 2K
    Matrix factors;     // 2K x k_fm

    bool operator==(const FmParams&) const = default;
};

struct ModelParams {
    ModelDims dims;
    ConvActivation activation = ConvActivation::Relu;
    Matrix word_embedding;  // |V| x d_w, row PAD pinned to zero
    Matrix user_embedding;  // |U| x d_id
    Matrix item_embedding;  // |I| x d_id
    SideParams user_side;
    SideParams item_side;
    FmParams fm;

    const SideParams& side(Side s) const { return s == Side::User ? user_side : item_side; }
    SideParams& side(Side s) { return s == Side::User ? user_side : item_side; }
    const Matrix& id_embedding(Side s) const { return s == Side::User ? user_embedding : item_embedding; }
    Matrix& id_embedding(Side s) { return s == Side::User ? user_embedding : item_embedding; }

    bool operator==(const ModelParams&) const = default;
};

/// Gradients share the parameter layout.
using Gradients = ModelParams;

/// Xavier-uniform weights, zero biases and w0, embeddings in [-0.1, 0.1],
/// PAD row zero. Deterministic in seed.
ModelParams init_params(const ModelDims& dims, std::uint64_t seed,
                        ConvActivation activation = ConvActivation::Relu);

/// All tensors zero with the shapes implied by dims.
ModelParams zero_params(const ModelDims& dims, ConvActivation activation = ConvActivation::Relu);

/// Same shapes, all zero.
ModelParams zeros_like(const ModelParams& params);

/// Visits every tensor in checkpoint order as (name, values).
template <typename Params, typename Fn>
void for_each_tensor(Params& p, Fn&& fn) {
    fn(std::string_view("word_embedding"), p.word_embedding.values());
    fn(std::string_view("user_embedding"), p.user_embedding.values());
    fn(std::string_view("item_embedding"), p.item_embedding.values());
    for (auto* side : {&p.user_side, &p.item_side}) {
        const bool user = side == &p.user_side;
        fn(std::string_view(user ? "user.conv_weight" : "item.conv_weight"), side->conv_weight.values());
        fn(std::string_view(user ? "user.conv_bias" : "item.conv_bias"), std::span(side->conv_bias));
        fn(std::string_view(user ? "user.word_query_weight" : "item.word_query_weight"),
           side->word_query_weight.values());
        fn(std::string_view(user ? "user.word_query_bias" : "item.word_query_bias"), std::span(side->word_query_bias));
        fn(std::string_view(user ? "user.word_harmony" : "item.word_harmony"), side->word_harmony.values());
        fn(std::string_view(user ? "user.review_query_weight" : "item.review_query_weight"),
           side->review_query_weight.values());
        fn(std::string_view(user ? "user.review_query_bias" : "item.review_query_bias"),
           std::span(side->review_query_bias));
        fn(std::string_view(user ? "user.review_harmony" : "item.review_harmony"), side->review_harmony.values());
    }
    fn(std::string_view("fm.bias"), std::span(&p.fm.bias, 1));
    fn(std::string_view("fm.linear"), std::span(p.fm.linear));
    fn(std::string_view("fm.factors"), p.fm.factors.values());
}

std::size_t parameter_count(const ModelParams& params);

/// False for the query MLP and harmony tensors of a uniform attention site;
/// those tensors never influence the output.
bool tensor_in_use(std::string_view name, const AblationSpec& ablation);

/// Counts only tensors in use under `ablation`.
std::size_t parameter_count(const ModelParams& params, const AblationSpec& ablation);

// ---------------------------------------------------------------------------
// Building blocks. Review matrices are position-major: row k holds token k.

/// T x d_w; row k is the embedding of token k (PAD rows are zero).
Matrix embed_review(std::span<const TokenId> tokens, const Matrix& word_embedding);

/// Same-length convolution with (window-1)/2 zero columns on each side.
/// Returns T x K; row k is z_k = act(W . window(k) + b).
Matrix conv_encode(const Matrix& embedded, const Matrix& filters, std::span<const double> bias,
                   std::size_t window, ConvActivation activation = ConvActivation::Relu);

/// ReLU(W id + b)
Vector query_vector(std::span<const double> id_embedding, const Matrix& weight, std::span<const double> bias);

struct EncodedReview {
    Vector vector;        // K
    Vector word_weights;  // T
};

struct SideRepresentation {
    Vector vector;          // K
    Vector review_weights;  // N
};

/// logits g_k = qᵀ A z_k over unmasked rows of `features`, masked softmax,
/// output Σ α_k z_k. All-masked input gives a zero vector and zero weights.
EncodedReview word_attention_pool(const Matrix& features, std::span<const double> query, const Matrix& harmony,
                                  const std::vector<bool>& token_mask,
                                  AttentionMode mode = AttentionMode::Personalized);

SideRepresentation review_attention_pool(const std::vector<Vector>& reviews, std::span<const double> query,
                                         const Matrix& harmony, const std::vector<bool>& review_mask,
                                         AttentionMode mode = AttentionMode::Personalized);

/// Second-order FM over ô = p_u ⊕ p_i using the O(2K k_fm) identity.
double fm_predict(std::span<const double> user_vector, std::span<const double> item_vector, const FmParams& fm);

// ---------------------------------------------------------------------------
// Tower evaluation with retained intermediates (consumed by backprop).

struct ReviewActivations {
    Matrix features;      // T x K post-activation; empty for padding rows
    Vector word_weights;  // T
    Vector vector;        // K
};

struct SideEncoding {
    Vector word_query_pre;    // W1 id + b1
    Vector word_query;        // ReLU of the above
    Vector word_key;          // Aᵀ q_w, so g_k = ⟨word_key, z_k⟩
    Vector review_query_pre;
    Vector review_query;
    Vector review_key;        // A2ᵀ q_r
    std::vector<ReviewActivations> reviews;  // N
    Vector review_weights;    // N
    Vector vector;            // K
};

SideEncoding encode_side(const Profile& profile, std::span<const double> id_embedding, const SideParams& side,
                         const Matrix& word_embedding, ConvActivation activation, AttentionMode word_mode,
                         AttentionMode review_mode);

struct AttentionTrace {
    std::vector<Vector> user_word_weights;  // N x T
    Vector user_review_weights;             // N
    std::vector<Vector> item_word_weights;
    Vector item_review_weights;
};

struct Prediction {
    double rating = 0.0;
    AttentionTrace trace;
};

/// Profiles actually used to score (u, i). With exclude_target the review
/// written by u about i is masked out of both sides.
std::pair<Profile, Profile> scoring_profiles(const ProfileSet& profiles, UserId user, ItemId item,
                                             bool exclude_target);

Prediction forward(UserId user, ItemId item, const Profile& user_profile, const Profile& item_profile,
                   const ModelParams& params, const AblationSpec& ablation = {});

/// Scores many pairs, reusing each distinct side encoding. Results are in
/// input order and independent of `threads`.
std::vector<double> predict_pairs(const std::vector<std::pair<UserId, ItemId>>& pairs, const ProfileSet& profiles,
                                  const ModelParams& params, const AblationSpec& ablation, bool exclude_target,
                                  std::size_t threads = 1);

}  // namespace nrpa
