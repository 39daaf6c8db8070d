#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nrpa {

using TokenId = std::uint32_t;
using UserId = std::uint32_t;
using ItemId = std::uint32_t;

inline constexpr TokenId kPadToken = 0;
inline constexpr TokenId kUnkToken = 1;

// Index 0 on each side is reserved for owners never seen in the corpus.
inline constexpr UserId kUnknownUser = 0;
inline constexpr ItemId kUnknownItem = 0;

inline constexpr double kMinRating = 1.0;
inline constexpr double kMaxRating = 5.0;

struct RawRecord {
    std::string user;
    std::string item;
    double rating = 0.0;
    std::string text;

    bool operator==(const RawRecord&) const = default;
};

enum class InputFormat { AmazonJson, Csv };

InputFormat parse_input_format(std::string_view name);

struct ParseResult {
    std::vector<RawRecord> records;
    std::size_t skipped = 0;
};

/// One record per non-blank line. Malformed lines and ratings outside [1,5]
/// are skipped and counted.
///   amazon-json: reviewerID, asin, overall, reviewText
///   csv:         user,item,rating,text   (text may be double-quoted)
ParseResult parse_reviews(std::istream& in, InputFormat format);

/// Lowercases ASCII and splits on every run of non-alphanumeric bytes.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
public:
    Vocabulary();

    /// Tokens with count >= min_count get ids from 2 upward in descending
    /// frequency, ties broken lexicographically.
    static Vocabulary build(const std::vector<std::vector<std::string>>& documents, std::size_t min_count);

    TokenId id(std::string_view token) const;
    const std::string& token(TokenId id) const;
    std::size_t size() const { return tokens_.size(); }
    bool contains(std::string_view token) const;

    std::vector<TokenId> encode(const std::vector<std::string>& tokens) const;

    /// token<TAB>id per line, ids ascending, specials included.
    void save(std::ostream& out) const;
    static Vocabulary load(std::istream& in);

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> ids_;
};

struct Interaction {
    UserId user = 0;
    ItemId item = 0;
    double rating = 0.0;
    std::vector<TokenId> tokens;

    bool operator==(const Interaction&) const = default;
};

/// Index lists into the interaction table.
struct DatasetSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
    std::uint64_t seed = 0;

    bool operator==(const DatasetSplit&) const = default;
};

/// Seeded Fisher-Yates shuffle of 0..n-1; first floor(0.8n) train, next
/// floor(0.1n) validation, remainder test. Requires n >= 10.
DatasetSplit split_dataset(std::size_t n, std::uint64_t seed);

/// Fixed N x T grid of one owner's training reviews.
struct Profile {
    std::size_t num_reviews = 0;       // N
    std::size_t tokens_per_review = 0; // T
    std::vector<TokenId> tokens;       // N*T, row-major, PAD where masked
    std::vector<bool> review_mask;     // N
    std::vector<bool> token_mask;      // N*T
    std::vector<std::uint32_t> counterpart; // per row: item (user side) or user (item side)

    std::size_t real_reviews() const;

    /// Copy with every row written about `other` masked out.
    Profile without_counterpart(std::uint32_t other) const;
};

struct ProfileSet {
    std::size_t num_reviews = 0;
    std::size_t tokens_per_review = 0;
    std::vector<Profile> users;
    std::vector<Profile> items;
};

Profile empty_profile(std::size_t num_reviews, std::size_t tokens_per_review);

/// Takes up to N of each owner's training reviews in corpus (index) order,
/// each truncated to its first T tokens.
ProfileSet build_profiles(const std::vector<Interaction>& interactions,
                          const std::vector<std::size_t>& train, std::size_t num_users,
                          std::size_t num_items, std::size_t tokens_per_review,
                          std::size_t num_reviews);

struct DatasetStats {
    std::size_t users = 0;
    std::size_t items = 0;
    std::size_t ratings = 0;
    double density_percent = 0.0;
};

/// A prepared corpus: id maps, train-only vocabulary, encoded interactions
/// and the split.
struct Dataset {
    std::vector<std::string> user_keys;  // index -> key; slot 0 is "<unk>"
    std::vector<std::string> item_keys;
    Vocabulary vocab;
    std::vector<Interaction> interactions;
    DatasetSplit split;

    std::size_t num_users() const { return user_keys.size(); }
    std::size_t num_items() const { return item_keys.size(); }

    UserId user_id(std::string_view key) const;  // kUnknownUser when absent
    ItemId item_id(std::string_view key) const;

    std::vector<Interaction> select(const std::vector<std::size_t>& indices) const;

    DatasetStats stats() const;
};

Dataset prepare_dataset(const std::vector<RawRecord>& records, std::uint64_t seed, std::size_t min_count);

/// Writes vocab.tsv, users.tsv, items.tsv, interactions.bin, split.txt.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

void write_interactions(std::ostream& out, const std::vector<Interaction>& interactions);
std::vector<Interaction> read_interactions(std::istream& in);

void write_split(std::ostream& out, const DatasetSplit& split);
DatasetSplit read_split(std::istream& in);

}  // namespace nrpa
