#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "nrpa/model.hpp"

namespace nrpa {

struct TrainConfig {
    // architecture
    std::size_t word_dim = 300;
    std::size_t id_dim = 32;
    std::size_t num_filters = 80;
    std::size_t attention_dim = 80;
    std::size_t window = 3;
    std::size_t tokens_per_review = 100;
    std::size_t num_reviews = 15;
    std::size_t fm_factors = 10;
    ConvActivation conv_activation = ConvActivation::Relu;

    // optimisation
    double learning_rate = 1e-3;
    std::size_t batch_size = 100;
    std::size_t max_epochs = 30;
    std::size_t patience = 5;
    double l2_weight = 1e-6;
    std::uint64_t seed = 42;

    // scoring
    bool exclude_target = true;
    AblationSpec ablation;

    // optional `token v1 ... v_dw` text file used to seed word embeddings
    std::string word_vectors;

    /// Throws std::invalid_argument on a non-positive dimension, an even
    /// window, learning_rate <= 0 or patience == 0.
    void validate() const;

    ModelDims dims_for(const Dataset& dataset) const;

    bool operator==(const TrainConfig&) const = default;
};

/// Thrown for config syntax errors and unknown keys.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Flat `key = value` lines; `#` starts a comment. Unknown keys throw
/// ConfigError naming the key. Missing keys keep their defaults.
TrainConfig parse_config(std::istream& in);
TrainConfig load_config(const std::filesystem::path& path);

/// Canonical text form; parse_config(to_text(c)) == c.
std::string to_text(const TrainConfig& config);

}  // namespace nrpa
