#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "nrpa/config.hpp"
#include "nrpa/data.hpp"
#include "nrpa/model.hpp"

namespace nrpa {

/// Mean of squared differences. Throws on empty or mismatched input.
double mse(std::span<const double> predictions, std::span<const double> truths);

/// Predictions for the interactions at `indices`, in that order. With
/// `clip` set the outputs are clamped to [1,5].
std::vector<double> predict_split(const ModelParams& params, const Dataset& dataset,
                                  const std::vector<std::size_t>& indices, const ProfileSet& profiles,
                                  const AblationSpec& ablation, bool exclude_target, bool clip = false,
                                  std::size_t threads = 1);

double evaluate(const ModelParams& params, const Dataset& dataset, const std::vector<std::size_t>& indices,
                const ProfileSet& profiles, const AblationSpec& ablation, bool exclude_target, bool clip = false,
                std::size_t threads = 1);

struct AblationVariant {
    std::string name;
    AblationSpec spec;
};

/// full, no-attention, user-only, item-only, word-only, review-only
const std::vector<AblationVariant>& ablation_variants();

struct VariantResult {
    std::string variant;
    double val_mse = 0.0;
    double test_mse = 0.0;
};

/// Trains every variant with the same seed and hyperparameters and scores
/// its best checkpoint on the test split.
std::vector<VariantResult> run_ablation_suite(const TrainConfig& config, const Dataset& dataset,
                                              const ProfileSet& profiles);

/// `variant,mse` (test MSE).
void write_ablation_csv(std::ostream& out, const std::vector<VariantResult>& rows);

inline const std::vector<std::size_t> kDefaultIdDims = {8, 16, 32, 64, 128};

struct SweepRow {
    std::size_t id_dim = 0;
    double val_mse = 0.0;
};

std::vector<SweepRow> sweep_id_dim(const TrainConfig& config, const Dataset& dataset, const ProfileSet& profiles,
                                   const std::vector<std::size_t>& dims);

/// `d_id,val_mse`
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

/// Two-aspect (price, quality) corpus. Each user weighs the aspects with
/// w_p + w_q = 1 and mentions them in proportion; each item has a score per
/// aspect that its reviews describe. rating = 1 + 4 (w_p s_p + w_q s_q)
/// + N(0, 0.1²), clipped to [1,5].
struct SyntheticCorpus {
    std::vector<RawRecord> records;
    std::vector<double> user_price_weight;   // by user number ("u<n>")
    std::vector<double> item_price_score;    // by item number ("i<n>")
    std::vector<double> item_quality_score;
};

SyntheticCorpus make_synthetic_corpus(std::uint64_t seed, std::size_t num_users, std::size_t num_items,
                                      std::size_t reviews_per_user = 25);

/// One JSON object per line: user, item, rating, user_alpha, user_beta,
/// item_alpha, item_beta (alpha arrays are N x T, beta arrays N).
void write_trace_jsonl(std::ostream& out, const std::string& user, const std::string& item, const Prediction& p);

}  // namespace nrpa
