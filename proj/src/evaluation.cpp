#include "nrpa/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "json.hpp"
#include "nrpa/rng.hpp"
#include "nrpa/training.hpp"

namespace nrpa {

namespace {

std::string format_double(double v) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

}  // namespace

double mse(std::span<const double> predictions, std::span<const double> truths) {
    if (predictions.size() != truths.size())
        throw std::invalid_argument("mse: " + std::to_string(predictions.size()) + " predictions vs " +
                                    std::to_string(truths.size()) + " truths");
    if (predictions.empty()) throw std::invalid_argument("mse: empty input");
    double sum = 0.0;
    for (std::size_t n = 0; n < predictions.size(); ++n) {
        const double d = predictions[n] - truths[n];
        sum += d * d;
    }
    return sum / static_cast<double>(predictions.size());
}

std::vector<double> predict_split(const ModelParams& params, const Dataset& dataset,
                                  const std::vector<std::size_t>& indices, const ProfileSet& profiles,
                                  const AblationSpec& ablation, bool exclude_target, bool clip, std::size_t threads) {
    std::vector<std::pair<UserId, ItemId>> pairs;
    pairs.reserve(indices.size());
    for (const auto i : indices) {
        const auto& x = dataset.interactions.at(i);
        pairs.emplace_back(x.user, x.item);
    }
    auto preds = predict_pairs(pairs, profiles, params, ablation, exclude_target, threads);
    if (clip)
        for (double& p : preds) p = std::clamp(p, kMinRating, kMaxRating);
    return preds;
}

double evaluate(const ModelParams& params, const Dataset& dataset, const std::vector<std::size_t>& indices,
                const ProfileSet& profiles, const AblationSpec& ablation, bool exclude_target, bool clip,
                std::size_t threads) {
    const auto preds = predict_split(params, dataset, indices, profiles, ablation, exclude_target, clip, threads);
    std::vector<double> truths;
    truths.reserve(indices.size());
    for (const auto i : indices) truths.push_back(dataset.interactions.at(i).rating);
    return mse(preds, truths);
}

const std::vector<AblationVariant>& ablation_variants() {
    static const std::vector<AblationVariant> variants = {
        {"full", AblationSpec{}},
        {"no-attention", AblationSpec::parse("word=uniform,review=uniform")},
        {"user-only", AblationSpec::parse("item=uniform")},
        {"item-only", AblationSpec::parse("user=uniform")},
        {"word-only", AblationSpec::parse("review=uniform")},
        {"review-only", AblationSpec::parse("word=uniform")},
    };
    return variants;
}

std::vector<VariantResult> run_ablation_suite(const TrainConfig& config, const Dataset& dataset,
                                              const ProfileSet& profiles) {
    std::vector<VariantResult> rows;
    for (const auto& variant : ablation_variants()) {
        TrainConfig c = config;
        c.ablation = variant.spec;
        const TrainResult result = train(c, dataset, profiles);
        rows.push_back({variant.name, result.best_val_mse,
                        evaluate(result.best_params, dataset, dataset.split.test, profiles, c.ablation,
                                 c.exclude_target)});
    }
    return rows;
}

void write_ablation_csv(std::ostream& out, const std::vector<VariantResult>& rows) {
    out << "variant,mse\n";
    for (const auto& r : rows) out << r.variant << ',' << format_double(r.test_mse) << '\n';
}

std::vector<SweepRow> sweep_id_dim(const TrainConfig& config, const Dataset& dataset, const ProfileSet& profiles,
                                   const std::vector<std::size_t>& dims) {
    if (dims.empty()) throw std::invalid_argument("sweep_id_dim: empty dimension list");
    std::vector<SweepRow> rows;
    for (const auto d : dims) {
        TrainConfig c = config;
        c.id_dim = d;
        const TrainResult result = train(c, dataset, profiles);
        rows.push_back({d, result.best_val_mse});
    }
    return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
    out << "d_id,val_mse\n";
    for (const auto& r : rows) out << r.id_dim << ',' << format_double(r.val_mse) << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

const char* const kLevelWords[] = {"terrible", "poor", "okay", "good", "excellent"};
const char* const kFillerWords[] = {"the",  "this", "it",   "was",   "and",     "i",     "bought",
                                    "for",  "my",   "a",    "really", "so",     "with",  "item",
                                    "product", "would", "again", "just", "got", "order"};
constexpr std::size_t kLevels = 5;
constexpr double kInformativeShare = 0.75;
constexpr std::size_t kMentionsPerReview = 4;
constexpr std::size_t kMinFiller = 3;
constexpr std::size_t kMaxFiller = 10;
constexpr double kRatingNoise = 0.1;

double level_value(std::size_t level) { return static_cast<double>(level) / static_cast<double>(kLevels - 1); }

std::size_t level_of(double score) {
    return static_cast<std::size_t>(std::lround(score * static_cast<double>(kLevels - 1)));
}

}  // namespace

SyntheticCorpus make_synthetic_corpus(std::uint64_t seed, std::size_t num_users, std::size_t num_items,
                                      std::size_t reviews_per_user) {
    if (num_users < 4 || num_items < 4)
        throw std::invalid_argument("make_synthetic_corpus: need at least 4 users and 4 items");
    SplitMix64 rng(seed);
    SyntheticCorpus corpus;
    for (std::size_t u = 0; u < num_users; ++u)
        corpus.user_price_weight.push_back(level_value(rng.below(kLevels)));
    for (std::size_t i = 0; i < num_items; ++i) {
        corpus.item_price_score.push_back(level_value(rng.below(kLevels)));
        corpus.item_quality_score.push_back(level_value(rng.below(kLevels)));
    }

    const std::size_t per_user = std::min(reviews_per_user, num_items);
    std::vector<std::size_t> items(num_items);
    for (std::size_t u = 0; u < num_users; ++u) {
        for (std::size_t i = 0; i < num_items; ++i) items[i] = i;
        for (std::size_t k = 0; k < per_user; ++k) {
            const std::size_t j = k + static_cast<std::size_t>(rng.below(num_items - k));
            std::swap(items[k], items[j]);
        }
        const double wp = corpus.user_price_weight[u];
        for (std::size_t k = 0; k < per_user; ++k) {
            const std::size_t i = items[k];
            const double sp = corpus.item_price_score[i];
            const double sq = corpus.item_quality_score[i];

            std::vector<std::string> units;
            const std::size_t filler = kMinFiller + static_cast<std::size_t>(rng.below(kMaxFiller - kMinFiller + 1));
            for (std::size_t f = 0; f < filler; ++f) units.emplace_back(kFillerWords[rng.below(std::size(kFillerWords))]);
            if (rng.uniform() < kInformativeShare) {
                const auto price_mentions =
                    static_cast<std::size_t>(std::lround(wp * static_cast<double>(kMentionsPerReview)));
                for (std::size_t m = 0; m < kMentionsPerReview; ++m) {
                    const bool price = m < price_mentions;
                    units.push_back(std::string(price ? "price " : "quality ") + kLevelWords[level_of(price ? sp : sq)]);
                }
            }
            rng.shuffle(units);
            std::string text;
            for (const auto& w : units) {
                if (!text.empty()) text += ' ';
                text += w;
            }
            text += '.';

            const double noise = kRatingNoise * rng.normal();
            const double rating = std::clamp(1.0 + 4.0 * (wp * sp + (1.0 - wp) * sq) + noise, kMinRating, kMaxRating);
            corpus.records.push_back({"u" + std::to_string(u), "i" + std::to_string(i), rating, std::move(text)});
        }
    }
    rng.shuffle(corpus.records);
    return corpus;
}

void write_trace_jsonl(std::ostream& out, const std::string& user, const std::string& item, const Prediction& p) {
    nlohmann::json j;
    j["user"] = user;
    j["item"] = item;
    j["rating"] = p.rating;
    j["user_alpha"] = p.trace.user_word_weights;
    j["user_beta"] = p.trace.user_review_weights;
    j["item_alpha"] = p.trace.item_word_weights;
    j["item_beta"] = p.trace.item_review_weights;
    out << j.dump() << '\n';
}

}  // namespace nrpa
