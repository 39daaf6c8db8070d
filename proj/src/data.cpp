#include "nrpa/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "nrpa/binary_io.hpp"
#include "nrpa/rng.hpp"

namespace nrpa {

namespace {

bool rating_in_range(double r) { return std::isfinite(r) && r >= kMinRating && r <= kMaxRating; }

bool parse_double(std::string_view s, double& out) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    if (s.empty()) return false;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && end == s.data() + s.size();
}

std::optional<RawRecord> parse_amazon_line(const std::string& line) {
    const auto doc = nlohmann::json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) return std::nullopt;
    const auto user = doc.find("reviewerID");
    const auto item = doc.find("asin");
    const auto overall = doc.find("overall");
    if (user == doc.end() || !user->is_string()) return std::nullopt;
    if (item == doc.end() || !item->is_string()) return std::nullopt;
    if (overall == doc.end() || !overall->is_number()) return std::nullopt;
    RawRecord record{user->get<std::string>(), item->get<std::string>(), overall->get<double>(), {}};
    if (const auto text = doc.find("reviewText"); text != doc.end()) {
        if (!text->is_string()) return std::nullopt;
        record.text = text->get<std::string>();
    }
    return record;
}

std::optional<RawRecord> parse_csv_line(std::string_view line) {
    std::string_view fields[3];
    for (auto& field : fields) {
        const auto comma = line.find(',');
        if (comma == std::string_view::npos) return std::nullopt;
        field = line.substr(0, comma);
        line.remove_prefix(comma + 1);
    }
    RawRecord record;
    record.user = std::string(fields[0]);
    record.item = std::string(fields[1]);
    if (record.user.empty() || record.item.empty()) return std::nullopt;
    if (!parse_double(fields[2], record.rating)) return std::nullopt;

    if (!line.empty() && line.front() == '"') {
        std::string text;
        std::size_t i = 1;
        bool closed = false;
        while (i < line.size()) {
            if (line[i] == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    text.push_back('"');
                    i += 2;
                    continue;
                }
                closed = true;
                ++i;
                break;
            }
            text.push_back(line[i++]);
        }
        if (!closed || i != line.size()) return std::nullopt;
        record.text = std::move(text);
    } else {
        record.text = std::string(line);
    }
    return record;
}

}  // namespace

InputFormat parse_input_format(std::string_view name) {
    if (name == "amazon-json") return InputFormat::AmazonJson;
    if (name == "csv") return InputFormat::Csv;
    throw std::invalid_argument("unknown input format '" + std::string(name) + "' (expected amazon-json or csv)");
}

ParseResult parse_reviews(std::istream& in, InputFormat format) {
    ParseResult result;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
        auto record = format == InputFormat::AmazonJson ? parse_amazon_line(line) : parse_csv_line(line);
        if (!record || !rating_in_range(record->rating)) {
            ++result.skipped;
            continue;
        }
        result.records.push_back(std::move(*record));
    }
    return result;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (const char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (c < 0x80 && std::isalnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() : tokens_{"<pad>", "<unk>"} {
    ids_.emplace(tokens_[kPadToken], kPadToken);
    ids_.emplace(tokens_[kUnkToken], kUnkToken);
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& documents, std::size_t min_count) {
    std::map<std::string, std::size_t> counts;
    for (const auto& doc : documents)
        for (const auto& tok : doc) ++counts[tok];

    std::vector<std::pair<std::string, std::size_t>> kept;
    for (auto& [tok, n] : counts)
        if (n >= min_count) kept.emplace_back(tok, n);
    // counts is already lexicographic, so a stable sort on frequency keeps ties in order
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

    Vocabulary vocab;
    for (auto& [tok, n] : kept) {
        vocab.ids_.emplace(tok, static_cast<TokenId>(vocab.tokens_.size()));
        vocab.tokens_.push_back(tok);
    }
    return vocab;
}

TokenId Vocabulary::id(std::string_view token) const {
    const auto it = ids_.find(std::string(token));
    if (it == ids_.end() || it->second == kPadToken) return kUnkToken;
    return it->second;
}

bool Vocabulary::contains(std::string_view token) const {
    const auto it = ids_.find(std::string(token));
    return it != ids_.end() && it->second > kUnkToken;
}

const std::string& Vocabulary::token(TokenId id) const {
    if (id >= tokens_.size()) throw std::out_of_range("token id " + std::to_string(id) + " out of vocabulary");
    return tokens_[id];
}

std::vector<TokenId> Vocabulary::encode(const std::vector<std::string>& tokens) const {
    std::vector<TokenId> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id(t));
    return ids;
}

void Vocabulary::save(std::ostream& out) const {
    for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
}

Vocabulary Vocabulary::load(std::istream& in) {
    Vocabulary vocab;
    vocab.tokens_.clear();
    vocab.ids_.clear();
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto tab = line.rfind('\t');
        std::size_t id = 0;
        if (tab == std::string::npos ||
            std::from_chars(line.data() + tab + 1, line.data() + line.size(), id).ec != std::errc{})
            throw std::runtime_error("vocabulary: malformed line '" + line + "'");
        if (id != vocab.tokens_.size()) throw std::runtime_error("vocabulary: ids must be dense and ascending");
        std::string tok = line.substr(0, tab);
        vocab.ids_.emplace(tok, static_cast<TokenId>(id));
        vocab.tokens_.push_back(std::move(tok));
    }
    if (vocab.tokens_.size() < 2) throw std::runtime_error("vocabulary: missing PAD/UNK entries");
    return vocab;
}

// ---------------------------------------------------------------------------
// Split

DatasetSplit split_dataset(std::size_t n, std::uint64_t seed) {
    if (n < 10)
        throw std::invalid_argument("split_dataset: need at least 10 interactions, got " + std::to_string(n));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    SplitMix64 rng(seed);
    rng.shuffle(order);

    const std::size_t n_train = n * 8 / 10;
    const std::size_t n_val = n / 10;
    DatasetSplit split;
    split.seed = seed;
    split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                            order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    return split;
}

// ---------------------------------------------------------------------------
// Profiles

std::size_t Profile::real_reviews() const {
    return static_cast<std::size_t>(std::count(review_mask.begin(), review_mask.end(), true));
}

Profile Profile::without_counterpart(std::uint32_t other) const {
    Profile p = *this;
    for (std::size_t r = 0; r < num_reviews; ++r) {
        if (!p.review_mask[r] || p.counterpart[r] != other) continue;
        p.review_mask[r] = false;
        for (std::size_t t = 0; t < tokens_per_review; ++t) {
            p.tokens[r * tokens_per_review + t] = kPadToken;
            p.token_mask[r * tokens_per_review + t] = false;
        }
    }
    return p;
}

Profile empty_profile(std::size_t num_reviews, std::size_t tokens_per_review) {
    Profile p;
    p.num_reviews = num_reviews;
    p.tokens_per_review = tokens_per_review;
    p.tokens.assign(num_reviews * tokens_per_review, kPadToken);
    p.review_mask.assign(num_reviews, false);
    p.token_mask.assign(num_reviews * tokens_per_review, false);
    p.counterpart.assign(num_reviews, 0);
    return p;
}

namespace {

void append_review(Profile& p, const Interaction& x, std::uint32_t counterpart) {
    const std::size_t row = p.real_reviews();
    if (row >= p.num_reviews) return;
    p.review_mask[row] = true;
    p.counterpart[row] = counterpart;
    const std::size_t n = std::min(x.tokens.size(), p.tokens_per_review);
    for (std::size_t t = 0; t < n; ++t) {
        p.tokens[row * p.tokens_per_review + t] = x.tokens[t];
        p.token_mask[row * p.tokens_per_review + t] = x.tokens[t] != kPadToken;
    }
}

}  // namespace

ProfileSet build_profiles(const std::vector<Interaction>& interactions,
                          const std::vector<std::size_t>& train, std::size_t num_users,
                          std::size_t num_items, std::size_t tokens_per_review,
                          std::size_t num_reviews) {
    if (tokens_per_review == 0 || num_reviews == 0)
        throw std::invalid_argument("build_profiles: T and N must be at least 1");
    ProfileSet set;
    set.num_reviews = num_reviews;
    set.tokens_per_review = tokens_per_review;
    set.users.assign(num_users, empty_profile(num_reviews, tokens_per_review));
    set.items.assign(num_items, empty_profile(num_reviews, tokens_per_review));

    std::vector<std::size_t> order = train;
    std::sort(order.begin(), order.end());
    for (const std::size_t idx : order) {
        const Interaction& x = interactions.at(idx);
        if (x.user >= num_users || x.item >= num_items)
            throw std::out_of_range("build_profiles: interaction owner out of range");
        append_review(set.users[x.user], x, x.item);
        append_review(set.items[x.item], x, x.user);
    }
    return set;
}

// ---------------------------------------------------------------------------
// Dataset

UserId Dataset::user_id(std::string_view key) const {
    const auto it = std::find(user_keys.begin() + 1, user_keys.end(), key);
    return it == user_keys.end() ? kUnknownUser : static_cast<UserId>(it - user_keys.begin());
}

ItemId Dataset::item_id(std::string_view key) const {
    const auto it = std::find(item_keys.begin() + 1, item_keys.end(), key);
    return it == item_keys.end() ? kUnknownItem : static_cast<ItemId>(it - item_keys.begin());
}

std::vector<Interaction> Dataset::select(const std::vector<std::size_t>& indices) const {
    std::vector<Interaction> out;
    out.reserve(indices.size());
    for (const auto i : indices) out.push_back(interactions.at(i));
    return out;
}

DatasetStats Dataset::stats() const {
    DatasetStats s;
    s.users = user_keys.size() - 1;
    s.items = item_keys.size() - 1;
    s.ratings = interactions.size();
    if (s.users > 0 && s.items > 0)
        s.density_percent = 100.0 * static_cast<double>(s.ratings) /
                            (static_cast<double>(s.users) * static_cast<double>(s.items));
    return s;
}

Dataset prepare_dataset(const std::vector<RawRecord>& records, std::uint64_t seed, std::size_t min_count) {
    Dataset ds;
    ds.user_keys = {"<unk>"};
    ds.item_keys = {"<unk>"};
    std::unordered_map<std::string, std::uint32_t> users, items;
    auto intern = [](auto& table, auto& keys, const std::string& key) {
        const auto [it, inserted] = table.emplace(key, static_cast<std::uint32_t>(keys.size()));
        if (inserted) keys.push_back(key);
        return it->second;
    };

    std::vector<std::vector<std::string>> tokenized;
    tokenized.reserve(records.size());
    ds.interactions.reserve(records.size());
    for (const auto& r : records) {
        if (!rating_in_range(r.rating)) throw std::invalid_argument("prepare_dataset: rating outside [1,5]");
        Interaction x;
        x.user = intern(users, ds.user_keys, r.user);
        x.item = intern(items, ds.item_keys, r.item);
        x.rating = r.rating;
        ds.interactions.push_back(std::move(x));
        tokenized.push_back(tokenize(r.text));
    }

    ds.split = split_dataset(records.size(), seed);
    std::vector<std::vector<std::string>> train_docs;
    train_docs.reserve(ds.split.train.size());
    for (const auto i : ds.split.train) train_docs.push_back(tokenized[i]);
    ds.vocab = Vocabulary::build(train_docs, min_count);

    for (std::size_t i = 0; i < ds.interactions.size(); ++i)
        ds.interactions[i].tokens = ds.vocab.encode(tokenized[i]);
    return ds;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr char kInteractionsMagic[5] = "NRPI";
constexpr std::uint32_t kInteractionsVersion = 1;

std::ofstream open_out(const std::filesystem::path& p, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(p, mode | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + p.string() + " for writing");
    return out;
}

std::ifstream open_in(const std::filesystem::path& p, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(p, mode);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    return in;
}

void write_keys(std::ostream& out, const std::vector<std::string>& keys) {
    for (std::size_t i = 0; i < keys.size(); ++i) out << keys[i] << '\t' << i << '\n';
}

std::vector<std::string> read_keys(std::istream& in, const char* what) {
    std::vector<std::string> keys;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto tab = line.rfind('\t');
        if (tab == std::string::npos || std::stoul(line.substr(tab + 1)) != keys.size())
            throw std::runtime_error(std::string(what) + ": malformed line '" + line + "'");
        keys.push_back(line.substr(0, tab));
    }
    if (keys.empty()) throw std::runtime_error(std::string(what) + ": empty key table");
    return keys;
}

void write_index_list(std::ostream& out, const char* name, const std::vector<std::size_t>& idx) {
    out << name << '=';
    for (std::size_t i = 0; i < idx.size(); ++i) out << (i ? "," : "") << idx[i];
    out << '\n';
}

std::vector<std::size_t> parse_index_list(std::string_view s) {
    std::vector<std::size_t> out;
    while (!s.empty()) {
        const auto comma = s.find(',');
        const auto part = s.substr(0, comma);
        std::size_t v = 0;
        if (std::from_chars(part.data(), part.data() + part.size(), v).ec != std::errc{})
            throw std::runtime_error("split manifest: bad index '" + std::string(part) + "'");
        out.push_back(v);
        if (comma == std::string_view::npos) break;
        s.remove_prefix(comma + 1);
    }
    return out;
}

}  // namespace

void write_interactions(std::ostream& out, const std::vector<Interaction>& interactions) {
    std::uint64_t total_tokens = 0;
    for (const auto& x : interactions) total_tokens += x.tokens.size();
    binary::write_magic(out, kInteractionsMagic);
    binary::write_le<std::uint32_t>(out, kInteractionsVersion);
    binary::write_le<std::uint64_t>(out, interactions.size());
    binary::write_le<std::uint64_t>(out, total_tokens);
    // fixed-width records: user u32, item u32, rating f64, token offset u64, token count u32
    std::uint64_t offset = 0;
    for (const auto& x : interactions) {
        binary::write_le<std::uint32_t>(out, x.user);
        binary::write_le<std::uint32_t>(out, x.item);
        binary::write_le<double>(out, x.rating);
        binary::write_le<std::uint64_t>(out, offset);
        binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(x.tokens.size()));
        offset += x.tokens.size();
    }
    for (const auto& x : interactions)
        for (const auto t : x.tokens) binary::write_le<std::uint32_t>(out, t);
}

std::vector<Interaction> read_interactions(std::istream& in) {
    binary::expect_magic(in, kInteractionsMagic, "interactions file");
    const auto version = binary::read_le<std::uint32_t>(in, "interactions version");
    if (version != kInteractionsVersion)
        throw std::runtime_error("interactions file: unsupported version " + std::to_string(version));
    const auto n = binary::read_le<std::uint64_t>(in, "interaction count");
    const auto total = binary::read_le<std::uint64_t>(in, "token count");
    std::vector<Interaction> out(n);
    std::vector<std::pair<std::uint64_t, std::uint32_t>> spans(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].user = binary::read_le<std::uint32_t>(in, "user");
        out[i].item = binary::read_le<std::uint32_t>(in, "item");
        out[i].rating = binary::read_le<double>(in, "rating");
        spans[i].first = binary::read_le<std::uint64_t>(in, "token offset");
        spans[i].second = binary::read_le<std::uint32_t>(in, "token length");
    }
    std::vector<TokenId> pool(total);
    for (auto& t : pool) t = binary::read_le<std::uint32_t>(in, "token");
    for (std::size_t i = 0; i < n; ++i) {
        const auto [off, len] = spans[i];
        if (off + len > total) throw std::runtime_error("interactions file: token span out of range");
        out[i].tokens.assign(pool.begin() + static_cast<std::ptrdiff_t>(off),
                             pool.begin() + static_cast<std::ptrdiff_t>(off + len));
    }
    return out;
}

void write_split(std::ostream& out, const DatasetSplit& split) {
    out << "seed=" << split.seed << '\n';
    write_index_list(out, "train", split.train);
    write_index_list(out, "validation", split.validation);
    write_index_list(out, "test", split.test);
}

DatasetSplit read_split(std::istream& in) {
    DatasetSplit split;
    bool seen[4] = {false, false, false, false};
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("split manifest: malformed line");
        const std::string key = line.substr(0, eq);
        const std::string_view value = std::string_view(line).substr(eq + 1);
        if (key == "seed") {
            split.seed = std::stoull(std::string(value));
            seen[0] = true;
        } else if (key == "train") {
            split.train = parse_index_list(value);
            seen[1] = true;
        } else if (key == "validation") {
            split.validation = parse_index_list(value);
            seen[2] = true;
        } else if (key == "test") {
            split.test = parse_index_list(value);
            seen[3] = true;
        } else {
            throw std::runtime_error("split manifest: unknown key '" + key + "'");
        }
    }
    if (!(seen[0] && seen[1] && seen[2] && seen[3])) throw std::runtime_error("split manifest: incomplete");
    return split;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        auto out = open_out(dir / "vocab.tsv");
        dataset.vocab.save(out);
    }
    {
        auto out = open_out(dir / "users.tsv");
        write_keys(out, dataset.user_keys);
    }
    {
        auto out = open_out(dir / "items.tsv");
        write_keys(out, dataset.item_keys);
    }
    {
        auto out = open_out(dir / "interactions.bin", std::ios::out | std::ios::binary);
        write_interactions(out, dataset.interactions);
    }
    {
        auto out = open_out(dir / "split.txt");
        write_split(out, dataset.split);
    }
}

Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    {
        auto in = open_in(dir / "vocab.tsv");
        ds.vocab = Vocabulary::load(in);
    }
    {
        auto in = open_in(dir / "users.tsv");
        ds.user_keys = read_keys(in, "users.tsv");
    }
    {
        auto in = open_in(dir / "items.tsv");
        ds.item_keys = read_keys(in, "items.tsv");
    }
    {
        auto in = open_in(dir / "interactions.bin", std::ios::in | std::ios::binary);
        ds.interactions = read_interactions(in);
    }
    {
        auto in = open_in(dir / "split.txt");
        ds.split = read_split(in);
    }
    for (const auto& x : ds.interactions) {
        if (x.user >= ds.num_users() || x.item >= ds.num_items())
            throw std::runtime_error("prepared dataset: interaction refers to unknown user/item");
        for (const auto t : x.tokens)
            if (t >= ds.vocab.size()) throw std::runtime_error("prepared dataset: token id out of vocabulary");
    }
    for (const auto* part : {&ds.split.train, &ds.split.validation, &ds.split.test})
        for (const auto i : *part)
            if (i >= ds.interactions.size()) throw std::runtime_error("split manifest: index out of range");
    return ds;
}

}  // namespace nrpa
