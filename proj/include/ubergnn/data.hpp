#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ubergnn {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EmptyDatasetError : DataError {
    using DataError::DataError;
};

struct InteractionRecord {
    std::string user_id;
    std::string item_id;
    std::int64_t timestamp = 0;
    std::string session_id;
};

// A session after vocabulary mapping: ordered item indices for one user.
struct Session {
    std::string user_id;
    std::vector<std::size_t> items;
    std::string id;  // originating session_id, when known
};

// Dense bijection item_id <-> [0, m), iteration order sorted by item_id.
class ItemVocabulary {
public:
    ItemVocabulary() = default;
    explicit ItemVocabulary(std::vector<std::string> sorted_ids);

    std::size_t size() const { return ids_.size(); }
    const std::string& id_of(std::size_t index) const { return ids_.at(index); }
    const std::vector<std::string>& ids() const { return ids_; }

    // -1 if unknown
    std::ptrdiff_t index_of(const std::string& item_id) const;

private:
    std::vector<std::string> ids_;
    std::map<std::string, std::size_t> index_;
};

struct FieldSpec {
    enum class Kind { Categorical, Continuous };
    Kind kind = Kind::Categorical;
    std::string name;
    std::vector<std::string> categories;  // categorical only
    std::vector<double> edges;            // continuous only, strictly increasing

    // One-hot width: categories + 1 unknown slot, or bins (edges+1) + 1 unknown.
    std::size_t width() const {
        return kind == Kind::Categorical ? categories.size() + 1 : edges.size() + 2;
    }
};

struct UserFeatureSchema {
    std::vector<FieldSpec> fields;

    std::size_t total_width() const;
    void validate() const;  // throws DataError on bad field specs
};

// Concatenated per-field one-hot segments, stored sparsely: exactly one
// active slot per field.
struct UserFeatureVector {
    std::size_t width = 0;
    std::vector<std::size_t> active;  // one global slot index per field

    std::vector<double> dense() const;
};

struct LoadResult {
    std::vector<InteractionRecord> records;
    std::size_t rejected_rows = 0;
};

enum class FileFormat { Csv, Jsonl };

// Records sorted by (session_id, timestamp); malformed rows counted, not fatal.
LoadResult load_interactions(const std::string& path, FileFormat format);

struct FilteredDataset {
    ItemVocabulary vocabulary;
    std::vector<Session> sessions;
};

// Items with a global occurrence count < min_item_count are removed first,
// then sessions shorter than 2 are dropped.
FilteredDataset filter_dataset(const std::vector<InteractionRecord>& records,
                               std::size_t min_item_count = 5);

// Session of length n -> n-1 (prefix, label) pairs.
std::vector<std::pair<Session, std::size_t>> prefix_expand(const Session& session);

// Pure function of (raw values, schema); unknown or missing values land in
// the reserved unknown slot of their field.
UserFeatureVector encode_user(const std::map<std::string, std::string>& raw,
                              const UserFeatureSchema& schema);

struct SplitResult {
    std::vector<Session> train;
    std::vector<Session> test;
};

// Session-level split, deterministic per seed.
SplitResult split_train_test(const std::vector<Session>& sessions, double ratio,
                             std::uint64_t seed);

// Map raw records onto an existing vocabulary: out-of-vocabulary items are
// dropped, sessions shorter than 2 afterwards are skipped.
std::vector<Session> sessions_with_vocabulary(const std::vector<InteractionRecord>& records,
                                              const ItemVocabulary& vocabulary);

void write_interactions_csv(const std::vector<InteractionRecord>& records,
                            const std::string& path);

// Schema JSON file: [{"name":..,"type":"categorical","values":[..]}, ...]
UserFeatureSchema load_schema(const std::string& path);
UserFeatureSchema schema_from_json_text(const std::string& text);
std::string schema_to_json_text(const UserFeatureSchema& schema);

// Portraits CSV: header user_id,<field...>; values kept as raw strings.
std::map<std::string, std::map<std::string, std::string>> load_portraits(
    const std::string& path);

}  // namespace ubergnn
