#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include "nrpa/config.hpp"
#include "nrpa/data.hpp"
#include "nrpa/model.hpp"

namespace nrpa {

struct Example {
    UserId user = 0;
    ItemId item = 0;
    double rating = 0.0;
};

std::vector<Example> examples_of(const Dataset& dataset, const std::vector<std::size_t>& indices);

struct LossOptions {
    double l2_weight = 0.0;
    AblationSpec ablation;
    bool exclude_target = false;
};

/// l2_weight * Σθ² over weight matrices and embeddings. Biases, w0, the PAD
/// row and the query/harmony weights of uniform (ablated) sites are left out.
double l2_penalty(const ModelParams& params, const LossOptions& options);

/// Mean squared error of the batch plus the L2 penalty.
double loss(std::span<const Example> batch, const ModelParams& params, const ProfileSet& profiles,
            const LossOptions& options);

struct LossAndGradients {
    double loss = 0.0;
    Gradients gradients;
};

/// Exact reverse-mode derivative of loss() with respect to every tensor.
/// Throws std::runtime_error naming the tensor if any gradient is non-finite.
LossAndGradients backward(std::span<const Example> batch, const ModelParams& params, const ProfileSet& profiles,
                          const LossOptions& options);

struct AdamState {
    ModelParams first_moment;
    ModelParams second_moment;
    std::uint64_t step = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

AdamState make_adam_state(const ModelParams& params);

/// One bias-corrected Adam update; re-zeroes the PAD embedding row.
void adam_step(ModelParams& params, const Gradients& grads, AdamState& state, double learning_rate);

/// Reads `token v1 ... v_dw` lines and overwrites matching vocabulary rows.
/// Returns the number of rows set.
std::size_t load_word_vectors(std::istream& in, const Vocabulary& vocab, Matrix& word_embedding);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_mse = 0.0;
};

struct TrainResult {
    ModelParams best_params;
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_mse = 0.0;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam over dataset.split.train with seed-deterministic
/// shuffling; keeps the parameters with the lowest validation MSE and stops
/// after `patience` epochs without improvement.
TrainResult train(const TrainConfig& config, const Dataset& dataset, const ProfileSet& profiles,
                  const EpochCallback& on_epoch = {});

/// `epoch,train_loss,val_mse` with a header row.
void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history);

}  // namespace nrpa
