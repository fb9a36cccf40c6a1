#include "ubergnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ubergnn/rng.hpp"

namespace ubergnn {

using nlohmann::json;

ItemVocabulary::ItemVocabulary(std::vector<std::string> sorted_ids)
    : ids_(std::move(sorted_ids)) {
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        index_[ids_[i]] = i;
    }
    if (index_.size() != ids_.size()) {
        throw DataError("vocabulary contains duplicate item ids");
    }
}

std::ptrdiff_t ItemVocabulary::index_of(const std::string& item_id) const {
    auto it = index_.find(item_id);
    return it == index_.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
}

std::size_t UserFeatureSchema::total_width() const {
    std::size_t w = 0;
    for (const auto& f : fields) w += f.width();
    return w;
}

void UserFeatureSchema::validate() const {
    std::set<std::string> names;
    for (const auto& f : fields) {
        if (f.name.empty()) throw DataError("schema field with empty name");
        if (!names.insert(f.name).second) {
            throw DataError("duplicate schema field name '" + f.name + "'");
        }
        if (f.kind == FieldSpec::Kind::Categorical) {
            if (f.categories.empty()) {
                throw DataError("categorical field '" + f.name + "' has no categories");
            }
            auto sorted = f.categories;
            std::sort(sorted.begin(), sorted.end());
            if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
                throw DataError("categorical field '" + f.name + "' has duplicate categories");
            }
        } else {
            if (f.edges.empty()) {
                throw DataError("continuous field '" + f.name + "' has no bin edges");
            }
            for (std::size_t i = 1; i < f.edges.size(); ++i) {
                if (!(f.edges[i - 1] < f.edges[i])) {
                    throw DataError("continuous field '" + f.name +
                                    "' edges not strictly increasing");
                }
            }
        }
    }
}

std::vector<double> UserFeatureVector::dense() const {
    std::vector<double> x(width, 0.0);
    for (std::size_t slot : active) x[slot] = 1.0;
    return x;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

bool parse_timestamp(const std::string& s, std::int64_t& out) {
    if (s.empty()) return false;
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos != s.size() || v < 0) return false;
        out = v;
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

void sort_records(std::vector<InteractionRecord>& records) {
    std::stable_sort(records.begin(), records.end(),
                     [](const InteractionRecord& a, const InteractionRecord& b) {
                         if (a.session_id != b.session_id) return a.session_id < b.session_id;
                         return a.timestamp < b.timestamp;
                     });
}

}  // namespace

LoadResult load_interactions(const std::string& path, FileFormat format) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open interactions file: " + path);
    }
    LoadResult result;
    std::string line;
    if (format == FileFormat::Csv) {
        if (!std::getline(in, line)) {
            throw DataError("empty interactions file: " + path);
        }
        const auto header = split_csv_line(line);
        std::map<std::string, std::size_t> col;
        for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
        for (const char* name : {"user_id", "item_id", "timestamp", "session_id"}) {
            if (!col.count(name)) {
                throw DataError(std::string("interactions file missing column: ") + name);
            }
        }
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto cells = split_csv_line(line);
            if (cells.size() != header.size()) {
                ++result.rejected_rows;
                continue;
            }
            InteractionRecord r;
            r.user_id = cells[col["user_id"]];
            r.item_id = cells[col["item_id"]];
            r.session_id = cells[col["session_id"]];
            if (r.user_id.empty() || r.item_id.empty() || r.session_id.empty() ||
                !parse_timestamp(cells[col["timestamp"]], r.timestamp)) {
                ++result.rejected_rows;
                continue;
            }
            result.records.push_back(std::move(r));
        }
    } else {
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            json obj = json::parse(line, nullptr, false);
            if (obj.is_discarded() || !obj.is_object() || !obj.contains("user_id") ||
                !obj.contains("item_id") || !obj.contains("timestamp") ||
                !obj.contains("session_id")) {
                ++result.rejected_rows;
                continue;
            }
            InteractionRecord r;
            try {
                r.user_id = obj["user_id"].get<std::string>();
                r.item_id = obj["item_id"].get<std::string>();
                r.session_id = obj["session_id"].get<std::string>();
                r.timestamp = obj["timestamp"].get<std::int64_t>();
            } catch (const json::exception&) {
                ++result.rejected_rows;
                continue;
            }
            if (r.user_id.empty() || r.item_id.empty() || r.session_id.empty() ||
                r.timestamp < 0) {
                ++result.rejected_rows;
                continue;
            }
            result.records.push_back(std::move(r));
        }
    }
    sort_records(result.records);
    return result;
}

FilteredDataset filter_dataset(const std::vector<InteractionRecord>& records,
                               std::size_t min_item_count) {
    if (records.empty()) {
        throw EmptyDatasetError("filter_dataset: no records");
    }
    // Raw occurrence counts across all sessions, before any deduplication.
    std::map<std::string, std::size_t> counts;
    for (const auto& r : records) ++counts[r.item_id];

    std::vector<std::string> kept_ids;
    for (const auto& [id, c] : counts) {
        if (c >= min_item_count) kept_ids.push_back(id);
    }
    ItemVocabulary vocab(std::move(kept_ids));

    auto sorted = records;
    sort_records(sorted);

    FilteredDataset out;
    out.vocabulary = std::move(vocab);
    Session current;
    std::string current_sid;
    auto flush = [&]() {
        if (current.items.size() >= 2) {
            out.sessions.push_back(current);
        }
        current = Session{};
    };
    for (const auto& r : sorted) {
        if (r.session_id != current_sid) {
            flush();
            current_sid = r.session_id;
        }
        const auto idx = out.vocabulary.index_of(r.item_id);
        if (idx < 0) continue;  // filtered item
        if (current.items.empty()) {
            current.user_id = r.user_id;
            current.id = r.session_id;
        }
        current.items.push_back(static_cast<std::size_t>(idx));
    }
    flush();
    if (out.sessions.empty()) {
        throw EmptyDatasetError("filter_dataset: empty dataset after filtering");
    }
    return out;
}

std::vector<std::pair<Session, std::size_t>> prefix_expand(const Session& session) {
    if (session.items.size() < 2) {
        throw std::invalid_argument("prefix_expand: session shorter than 2");
    }
    std::vector<std::pair<Session, std::size_t>> pairs;
    pairs.reserve(session.items.size() - 1);
    for (std::size_t k = 1; k < session.items.size(); ++k) {
        Session prefix;
        prefix.user_id = session.user_id;
        prefix.items.assign(session.items.begin(), session.items.begin() + k);
        pairs.emplace_back(std::move(prefix), session.items[k]);
    }
    return pairs;
}

UserFeatureVector encode_user(const std::map<std::string, std::string>& raw,
                              const UserFeatureSchema& schema) {
    schema.validate();
    UserFeatureVector out;
    out.width = schema.total_width();
    std::size_t offset = 0;
    for (const auto& f : schema.fields) {
        const std::size_t unknown_slot = offset + f.width() - 1;
        std::size_t slot = unknown_slot;
        auto it = raw.find(f.name);
        if (it != raw.end()) {
            if (f.kind == FieldSpec::Kind::Categorical) {
                auto pos = std::find(f.categories.begin(), f.categories.end(), it->second);
                if (pos != f.categories.end()) {
                    slot = offset + static_cast<std::size_t>(pos - f.categories.begin());
                }
            } else {
                try {
                    std::size_t consumed = 0;
                    const double v = std::stod(it->second, &consumed);
                    if (consumed == it->second.size() && std::isfinite(v)) {
                        const auto bin = static_cast<std::size_t>(
                            std::upper_bound(f.edges.begin(), f.edges.end(), v) -
                            f.edges.begin());
                        slot = offset + bin;
                    }
                } catch (const std::exception&) {
                    // unparsable -> unknown slot
                }
            }
        }
        out.active.push_back(slot);
        offset += f.width();
    }
    return out;
}

SplitResult split_train_test(const std::vector<Session>& sessions, double ratio,
                             std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw std::invalid_argument("split_train_test: ratio must be in (0,1)");
    }
    if (sessions.size() < 2) {
        throw std::invalid_argument("split_train_test: need at least 2 sessions");
    }
    std::vector<std::size_t> order(sessions.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    const auto n_train = static_cast<std::size_t>(
        std::llround(ratio * static_cast<double>(sessions.size())));
    SplitResult out;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_train ? out.train : out.test).push_back(sessions[order[i]]);
    }
    if (out.train.empty() || out.test.empty()) {
        throw std::invalid_argument("split_train_test: degenerate split");
    }
    return out;
}

std::vector<Session> sessions_with_vocabulary(const std::vector<InteractionRecord>& records,
                                              const ItemVocabulary& vocabulary) {
    auto sorted = records;
    sort_records(sorted);
    std::vector<Session> sessions;
    Session current;
    std::string current_sid;
    auto flush = [&]() {
        if (current.items.size() >= 2) sessions.push_back(current);
        current = Session{};
    };
    for (const auto& r : sorted) {
        if (r.session_id != current_sid) {
            flush();
            current_sid = r.session_id;
        }
        const auto idx = vocabulary.index_of(r.item_id);
        if (idx < 0) continue;
        if (current.items.empty()) {
            current.user_id = r.user_id;
            current.id = r.session_id;
        }
        current.items.push_back(static_cast<std::size_t>(idx));
    }
    flush();
    return sessions;
}

void write_interactions_csv(const std::vector<InteractionRecord>& records,
                            const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "user_id,item_id,timestamp,session_id\n";
    for (const auto& r : records) {
        out << r.user_id << ',' << r.item_id << ',' << r.timestamp << ','
            << r.session_id << '\n';
    }
}

UserFeatureSchema schema_from_json_text(const std::string& text) {
    json doc = json::parse(text);
    UserFeatureSchema schema;
    for (const auto& item : doc) {
        FieldSpec f;
        f.name = item.at("name").get<std::string>();
        const auto type = item.at("type").get<std::string>();
        if (type == "categorical") {
            f.kind = FieldSpec::Kind::Categorical;
            f.categories = item.at("values").get<std::vector<std::string>>();
        } else if (type == "continuous") {
            f.kind = FieldSpec::Kind::Continuous;
            f.edges = item.at("edges").get<std::vector<double>>();
        } else {
            throw DataError("schema field '" + f.name + "' has unknown type: " + type);
        }
        schema.fields.push_back(std::move(f));
    }
    schema.validate();
    return schema;
}

std::string schema_to_json_text(const UserFeatureSchema& schema) {
    json doc = json::array();
    for (const auto& f : schema.fields) {
        json item;
        item["name"] = f.name;
        if (f.kind == FieldSpec::Kind::Categorical) {
            item["type"] = "categorical";
            item["values"] = f.categories;
        } else {
            item["type"] = "continuous";
            item["edges"] = f.edges;
        }
        doc.push_back(std::move(item));
    }
    return doc.dump(2) + "\n";
}

UserFeatureSchema load_schema(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open schema file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        return schema_from_json_text(buf.str());
    } catch (const json::exception& e) {
        throw DataError("invalid schema file " + path + ": " + e.what());
    }
}

std::map<std::string, std::map<std::string, std::string>> load_portraits(
    const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open portraits file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty portraits file: " + path);
    const auto header = split_csv_line(line);
    if (header.empty() || header[0] != "user_id") {
        throw DataError("portraits file must start with a user_id column: " + path);
    }
    std::map<std::string, std::map<std::string, std::string>> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size() || cells[0].empty()) continue;
        auto& row = out[cells[0]];
        for (std::size_t i = 1; i < cells.size(); ++i) {
            row[header[i]] = cells[i];
        }
    }
    return out;
}

}  // namespace ubergnn
