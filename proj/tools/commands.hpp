#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

// Operator commands behind the `nrpa` executable. Each returns a process exit
// code: 0 success, 2 usage/input error, 3 runtime/numeric failure.
namespace nrpa::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

struct PrepareArgs {
    std::filesystem::path input;
    std::string format = "amazon-json";
    std::filesystem::path out;
    std::uint64_t seed = 42;
    std::size_t min_count = 1;
};

struct TrainArgs {
    std::filesystem::path data;
    std::filesystem::path config;
    std::filesystem::path out;
};

struct EvalArgs {
    std::filesystem::path checkpoint;
    std::filesystem::path data;
    std::string split = "test";
    std::string ablation;
    bool clip = false;
    std::size_t threads = 1;
    std::optional<std::filesystem::path> metrics;
    std::optional<std::filesystem::path> trace;
};

struct AblateArgs {
    std::filesystem::path data;
    std::filesystem::path config;
    std::filesystem::path out;
};

struct SweepArgs {
    std::filesystem::path data;
    std::filesystem::path config;
    std::vector<std::size_t> dims;
    std::filesystem::path out;
};

struct InspectArgs {
    std::filesystem::path checkpoint;
    std::filesystem::path data;
    std::string user;
    std::string item;
    std::size_t top = 5;
    std::optional<std::filesystem::path> trace;
};

struct SynthArgs {
    std::uint64_t seed = 1;
    std::size_t users = 200;
    std::size_t items = 100;
    std::size_t per_user = 25;
    std::filesystem::path out;
};

int cmd_prepare(const PrepareArgs& args, std::ostream& out, std::ostream& err);
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);
int cmd_ablate(const AblateArgs& args, std::ostream& out, std::ostream& err);
int cmd_sweep(const SweepArgs& args, std::ostream& out, std::ostream& err);
int cmd_inspect(const InspectArgs& args, std::ostream& out, std::ostream& err);
int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err);

/// FNV-1a 64 over the prepared-dataset files, in a fixed order.
std::uint64_t dataset_fingerprint(const std::filesystem::path& data_dir);

}  // namespace nrpa::cli
