#include "nrpa/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace nrpa {

void TrainConfig::validate() const {
    const std::pair<const char*, std::size_t> positive[] = {
        {"word_dim", word_dim},         {"id_dim", id_dim},         {"num_filters", num_filters},
        {"attention_dim", attention_dim}, {"window", window},       {"tokens_per_review", tokens_per_review},
        {"num_reviews", num_reviews},   {"fm_factors", fm_factors}, {"batch_size", batch_size},
        {"max_epochs", max_epochs},     {"patience", patience},
    };
    for (const auto& [name, value] : positive)
        if (value == 0) throw std::invalid_argument(std::string("config: ") + name + " must be >= 1");
    if (window % 2 == 0) throw std::invalid_argument("config: window must be odd");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("config: learning_rate must be > 0");
    if (!(l2_weight >= 0.0)) throw std::invalid_argument("config: l2_weight must be >= 0");
}

ModelDims TrainConfig::dims_for(const Dataset& dataset) const {
    ModelDims d;
    d.vocab_size = dataset.vocab.size();
    d.num_users = dataset.num_users();
    d.num_items = dataset.num_items();
    d.word_dim = word_dim;
    d.id_dim = id_dim;
    d.num_filters = num_filters;
    d.attention_dim = attention_dim;
    d.window = window;
    d.fm_factors = fm_factors;
    d.tokens_per_review = tokens_per_review;
    d.num_reviews = num_reviews;
    return d;
}

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || end != value.data() + value.size())
        throw ConfigError("config: bad value '" + value + "' for key '" + key + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config: bad boolean '" + value + "' for key '" + key + "'");
}

using Setter = std::function<void(TrainConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        auto size_field = [&t](const char* name, std::size_t TrainConfig::*field) {
            t[name] = [field](TrainConfig& c, const std::string& k, const std::string& v) {
                c.*field = parse_number<std::size_t>(k, v);
            };
        };
        size_field("word_dim", &TrainConfig::word_dim);
        size_field("id_dim", &TrainConfig::id_dim);
        size_field("num_filters", &TrainConfig::num_filters);
        size_field("attention_dim", &TrainConfig::attention_dim);
        size_field("window", &TrainConfig::window);
        size_field("tokens_per_review", &TrainConfig::tokens_per_review);
        size_field("num_reviews", &TrainConfig::num_reviews);
        size_field("fm_factors", &TrainConfig::fm_factors);
        size_field("batch_size", &TrainConfig::batch_size);
        size_field("max_epochs", &TrainConfig::max_epochs);
        size_field("patience", &TrainConfig::patience);
        t["conv_activation"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
            try {
                c.conv_activation = parse_activation(v);
            } catch (const std::invalid_argument& e) {
                throw ConfigError("config: key '" + k + "': " + e.what());
            }
        };
        t["learning_rate"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
            c.learning_rate = parse_number<double>(k, v);
        };
        t["l2_weight"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
            c.l2_weight = parse_number<double>(k, v);
        };
        t["seed"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
            c.seed = parse_number<std::uint64_t>(k, v);
        };
        t["exclude_target"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
            c.exclude_target = parse_bool(k, v);
        };
        t["ablation"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
            try {
                c.ablation = AblationSpec::parse(v);
            } catch (const std::invalid_argument& e) {
                throw ConfigError("config: key '" + k + "': " + e.what());
            }
        };
        t["word_vectors"] = [](TrainConfig& c, const std::string&, const std::string& v) { c.word_vectors = v; };
        return t;
    }();
    return table;
}

std::string format_double(double v) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

}  // namespace

TrainConfig parse_config(std::istream& in) {
    TrainConfig config;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string content = trim(line);
        if (content.empty()) continue;
        const auto eq = content.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(line_no) + " is not `key = value`");
        const std::string key = trim(std::string_view(content).substr(0, eq));
        const std::string value = trim(std::string_view(content).substr(eq + 1));
        const auto it = setters().find(key);
        if (it == setters().end()) throw ConfigError("config: unknown key '" + key + "'");
        it->second(config, key, value);
    }
    try {
        config.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return config;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    return parse_config(in);
}

std::string to_text(const TrainConfig& c) {
    std::ostringstream out;
    out << "word_dim = " << c.word_dim << '\n'
        << "id_dim = " << c.id_dim << '\n'
        << "num_filters = " << c.num_filters << '\n'
        << "attention_dim = " << c.attention_dim << '\n'
        << "window = " << c.window << '\n'
        << "tokens_per_review = " << c.tokens_per_review << '\n'
        << "num_reviews = " << c.num_reviews << '\n'
        << "fm_factors = " << c.fm_factors << '\n'
        << "conv_activation = " << to_string(c.conv_activation) << '\n'
        << "learning_rate = " << format_double(c.learning_rate) << '\n'
        << "batch_size = " << c.batch_size << '\n'
        << "max_epochs = " << c.max_epochs << '\n'
        << "patience = " << c.patience << '\n'
        << "l2_weight = " << format_double(c.l2_weight) << '\n'
        << "seed = " << c.seed << '\n'
        << "exclude_target = " << (c.exclude_target ? "true" : "false") << '\n'
        << "ablation = " << c.ablation.to_string() << '\n';
    if (!c.word_vectors.empty()) out << "word_vectors = " << c.word_vectors << '\n';
    return out.str();
}

}  // namespace nrpa
