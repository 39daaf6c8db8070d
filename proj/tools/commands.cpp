#include "commands.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "nrpa/checkpoint.hpp"
#include "nrpa/config.hpp"
#include "nrpa/data.hpp"
#include "nrpa/evaluation.hpp"
#include "nrpa/training.hpp"

namespace nrpa::cli {

namespace {

// Bad flags, unreadable inputs, mismatched artifacts: exit code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <typename Body>
int guarded(std::ostream& err, Body&& body) {
    try {
        return body();
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const TrainingDiverged& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

std::string with_commas(std::size_t n) {
    std::string digits = std::to_string(n);
    for (auto pos = static_cast<std::ptrdiff_t>(digits.size()) - 3; pos > 0; pos -= 3)
        digits.insert(static_cast<std::size_t>(pos), ",");
    return digits;
}

std::string format_double(double v) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

Dataset load_data(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw UsageError("prepared dataset directory not found: " + dir.string());
    try {
        return load_dataset(dir);
    } catch (const std::exception& e) {
        throw UsageError("cannot load prepared dataset " + dir.string() + ": " + e.what());
    }
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) throw UsageError("config file not found: " + path.string());
    return load_config(path);
}

Checkpoint load_checkpoint_file(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) throw UsageError("checkpoint not found: " + path.string());
    try {
        return load_checkpoint(path);
    } catch (const std::exception& e) {
        throw UsageError("cannot load checkpoint " + path.string() + ": " + e.what());
    }
}

// Hyperparameters recorded in the checkpoint's metadata block.
TrainConfig config_from_metadata(const Checkpoint& cp) {
    std::istringstream in(cp.metadata);
    return parse_config(in);
}

void check_dims(const ModelDims& model, const Dataset& dataset) {
    ModelDims expected = model;
    expected.vocab_size = dataset.vocab.size();
    expected.num_users = dataset.num_users();
    expected.num_items = dataset.num_items();
    if (!(expected == model))
        throw UsageError("checkpoint dims " + model.describe() + " do not match dataset dims " + expected.describe());
}

std::ofstream open_output(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write " + path.string());
    return out;
}

ProfileSet profiles_for(const Dataset& ds, std::size_t tokens_per_review, std::size_t num_reviews) {
    return build_profiles(ds.interactions, ds.split.train, ds.num_users(), ds.num_items(), tokens_per_review,
                          num_reviews);
}

}  // namespace

std::uint64_t dataset_fingerprint(const std::filesystem::path& data_dir) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (const char* name : {"vocab.tsv", "users.tsv", "items.tsv", "interactions.bin", "split.txt"}) {
        std::ifstream in(data_dir / name, std::ios::binary);
        if (!in) throw UsageError("missing dataset file " + (data_dir / name).string());
        char c;
        while (in.get(c)) {
            hash ^= static_cast<unsigned char>(c);
            hash *= 0x100000001b3ULL;
        }
    }
    return hash;
}

int cmd_prepare(const PrepareArgs& args, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        InputFormat format;
        try {
            format = parse_input_format(args.format);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        std::ifstream in(args.input, std::ios::binary);
        if (!in) throw UsageError("cannot read input " + args.input.string());
        const ParseResult parsed = parse_reviews(in, format);
        if (parsed.records.size() < 10)
            throw UsageError("need at least 10 valid records, found " + std::to_string(parsed.records.size()));

        const Dataset ds = prepare_dataset(parsed.records, args.seed, args.min_count);
        save_dataset(ds, args.out);

        const DatasetStats s = ds.stats();
        out << std::left << std::setw(12) << "dataset" << std::right << std::setw(12) << "#users" << std::setw(12)
            << "#items" << std::setw(12) << "#ratings" << std::setw(10) << "density" << '\n';
        std::ostringstream density;
        density << std::fixed << std::setprecision(3) << s.density_percent;
        out << std::left << std::setw(12) << args.input.stem().string() << std::right << std::setw(12)
            << with_commas(s.users) << std::setw(12) << with_commas(s.items) << std::setw(12) << with_commas(s.ratings)
            << std::setw(10) << density.str() << '\n';
        out << "split train/validation/test = " << ds.split.train.size() << "/" << ds.split.validation.size() << "/"
            << ds.split.test.size() << " (seed " << args.seed << ")\n";
        out << "vocabulary = " << ds.vocab.size() << " (min_count " << args.min_count << ")\n";
        out << "skipped lines = " << parsed.skipped << '\n';
        return kExitOk;
    });
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const std::string started = utc_now();
        const TrainConfig config = load_train_config(args.config);
        const Dataset ds = load_data(args.data);
        const ProfileSet profiles = profiles_for(ds, config.tokens_per_review, config.num_reviews);

        std::filesystem::create_directories(args.out);
        const auto checkpoint_path = args.out / "checkpoint.nrpa";
        const auto history_path = args.out / "history.csv";

        const TrainResult result = train(config, ds, profiles, [&](const EpochRecord& r) {
            out << "epoch " << r.epoch << " train_loss=" << format_double(r.train_loss)
                << " val_mse=" << format_double(r.val_mse) << '\n';
        });

        save_checkpoint(checkpoint_path, Checkpoint{result.best_params, to_text(config)});
        {
            auto h = open_output(history_path);
            write_history_csv(h, result.history);
        }

        std::ostringstream fp;
        fp << std::hex << std::setw(16) << std::setfill('0') << dataset_fingerprint(args.data);
        nlohmann::ordered_json manifest;
        manifest["config"] = to_text(config);
        manifest["dataset"] = std::filesystem::absolute(args.data).string();
        manifest["dataset_fingerprint"] = fp.str();
        manifest["seed"] = config.seed;
        manifest["checkpoint"] = checkpoint_path.string();
        manifest["history"] = history_path.string();
        manifest["epochs_run"] = result.history.size();
        manifest["best_epoch"] = result.best_epoch;
        manifest["best_val_mse"] = result.best_val_mse;
        manifest["started_at"] = started;
        manifest["finished_at"] = utc_now();
        {
            auto m = open_output(args.out / "manifest.json");
            m << manifest.dump(2) << '\n';
        }
        out << "best epoch " << result.best_epoch << " val_mse=" << format_double(result.best_val_mse) << '\n';
        return kExitOk;
    });
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (args.split != "val" && args.split != "test") throw UsageError("--split must be val or test");
        AblationSpec ablation;
        try {
            ablation = AblationSpec::parse(args.ablation);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        const Checkpoint cp = load_checkpoint_file(args.checkpoint);
        const TrainConfig config = config_from_metadata(cp);
        const Dataset ds = load_data(args.data);
        check_dims(cp.params.dims, ds);
        const ProfileSet profiles = profiles_for(ds, cp.params.dims.tokens_per_review, cp.params.dims.num_reviews);

        const auto& indices = args.split == "val" ? ds.split.validation : ds.split.test;
        const auto preds = predict_split(cp.params, ds, indices, profiles, ablation, config.exclude_target, args.clip,
                                         std::max<std::size_t>(1, args.threads));
        std::vector<double> truths;
        for (const auto i : indices) truths.push_back(ds.interactions[i].rating);
        const double value = mse(preds, truths);
        out << "mse=" << format_double(value) << '\n';

        const auto metrics_path =
            args.metrics ? *args.metrics : args.checkpoint.parent_path() / ("eval_" + args.split + ".csv");
        {
            auto m = open_output(metrics_path);
            m << "split,ablation,clip,count,mse\n"
              << args.split << ',' << (ablation.to_string().empty() ? "none" : ablation.to_string()) << ','
              << (args.clip ? "true" : "false") << ',' << indices.size() << ',' << format_double(value) << '\n';
        }
        if (args.trace) {
            auto t = open_output(*args.trace);
            for (const auto i : indices) {
                const auto& x = ds.interactions[i];
                const auto [up, ip] = scoring_profiles(profiles, x.user, x.item, config.exclude_target);
                write_trace_jsonl(t, ds.user_keys[x.user], ds.item_keys[x.item],
                                  forward(x.user, x.item, up, ip, cp.params, ablation));
            }
        }
        return kExitOk;
    });
}

int cmd_ablate(const AblateArgs& args, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const TrainConfig config = load_train_config(args.config);
        const Dataset ds = load_data(args.data);
        const ProfileSet profiles = profiles_for(ds, config.tokens_per_review, config.num_reviews);
        const auto rows = run_ablation_suite(config, ds, profiles);
        auto f = open_output(args.out);
        write_ablation_csv(f, rows);
        write_ablation_csv(out, rows);
        return kExitOk;
    });
}

int cmd_sweep(const SweepArgs& args, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (args.dims.empty()) throw UsageError("--dims must list at least one dimension");
        if (std::find(args.dims.begin(), args.dims.end(), 0) != args.dims.end())
            throw UsageError("--dims entries must be >= 1");
        const TrainConfig config = load_train_config(args.config);
        const Dataset ds = load_data(args.data);
        const ProfileSet profiles = profiles_for(ds, config.tokens_per_review, config.num_reviews);
        const auto rows = sweep_id_dim(config, ds, profiles, args.dims);
        auto f = open_output(args.out);
        write_sweep_csv(f, rows);
        write_sweep_csv(out, rows);
        return kExitOk;
    });
}

namespace {

void print_side(std::ostream& out, const char* title, const Profile& profile, const std::vector<Vector>& alpha,
                const Vector& beta, const Vocabulary& vocab, std::size_t top) {
    out << title << " (" << profile.real_reviews() << " reviews)\n";
    std::vector<std::size_t> rows;
    for (std::size_t n = 0; n < profile.num_reviews; ++n)
        if (profile.review_mask[n]) rows.push_back(n);
    std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) { return beta[a] > beta[b]; });
    for (const auto n : rows) {
        const auto& weights = alpha[n];
        std::vector<std::size_t> positions;
        for (std::size_t k = 0; k < weights.size(); ++k)
            if (profile.token_mask[n * profile.tokens_per_review + k]) positions.push_back(k);
        const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
        std::stable_sort(positions.begin(), positions.end(),
                         [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });
        out << "  review " << n << " beta=" << std::fixed << std::setprecision(4) << beta[n]
            << " alpha_sum=" << total << " top:";
        for (std::size_t k = 0; k < std::min(top, positions.size()); ++k) {
            const auto pos = positions[k];
            out << ' ' << vocab.token(profile.tokens[n * profile.tokens_per_review + pos]) << '(' << weights[pos]
                << ')';
        }
        out << '\n';
        out.unsetf(std::ios::floatfield);
    }
}

}  // namespace

int cmd_inspect(const InspectArgs& args, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const Checkpoint cp = load_checkpoint_file(args.checkpoint);
        const TrainConfig config = config_from_metadata(cp);
        const Dataset ds = load_data(args.data);
        check_dims(cp.params.dims, ds);
        const UserId u = ds.user_id(args.user);
        const ItemId i = ds.item_id(args.item);
        if (u == kUnknownUser) throw UsageError("unknown user '" + args.user + "'");
        if (i == kUnknownItem) throw UsageError("unknown item '" + args.item + "'");
        const ProfileSet profiles = profiles_for(ds, cp.params.dims.tokens_per_review, cp.params.dims.num_reviews);
        const auto [up, ip] = scoring_profiles(profiles, u, i, config.exclude_target);
        const Prediction p = forward(u, i, up, ip, cp.params);

        out << "user=" << args.user << " item=" << args.item << " predicted_rating=" << format_double(p.rating) << '\n';
        print_side(out, "user reviews", up, p.trace.user_word_weights, p.trace.user_review_weights, ds.vocab, args.top);
        print_side(out, "item reviews", ip, p.trace.item_word_weights, p.trace.item_review_weights, ds.vocab, args.top);
        if (args.trace) {
            auto t = open_output(*args.trace);
            write_trace_jsonl(t, args.user, args.item, p);
        }
        return kExitOk;
    });
}

int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        SyntheticCorpus corpus;
        try {
            corpus = make_synthetic_corpus(args.seed, args.users, args.items, args.per_user);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        auto f = open_output(args.out);
        for (const auto& r : corpus.records) f << r.user << ',' << r.item << ',' << format_double(r.rating) << ',' << r.text << '\n';
        out << "wrote " << corpus.records.size() << " records to " << args.out.string() << '\n';
        return kExitOk;
    });
}

}  // namespace nrpa::cli
