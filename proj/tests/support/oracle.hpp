#pragma once

// Brute-force reference evaluation straight over ingestion JSON. Shares nothing
// with the engine's execution path beyond the FormalQuery data type.

#include "mammofed/local_handler.hpp"
#include "mammofed/query.hpp"

#include <map>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

namespace mftest {

/// Every record of every site, keyed by entity name and id.
class UnionStore {
public:
    void add(const std::string& site, const std::vector<nlohmann::json>& records);

    struct Rec {
        std::string site;
        nlohmann::json obj;
    };

    [[nodiscard]] const Rec* find(const std::string& entity, const std::string& id) const;
    [[nodiscard]] const std::map<std::string, Rec>& all(const std::string& entity) const;
    /// Records of `child_entity` whose parent is (`entity`, `parent_id`).
    [[nodiscard]] std::vector<const Rec*> children(const std::string& entity, const std::string& parent_id,
                                                   const std::string& child_entity) const;

private:
    std::map<std::string, std::map<std::string, Rec>> records_;
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<std::string>> children_;
};

struct OracleRow {
    std::string entity;
    std::string id;
    std::string site;
    bool operator<(const OracleRow& o) const { return std::tie(entity, id, site) < std::tie(o.entity, o.id, o.site); }
    bool operator==(const OracleRow& o) const = default;
};

/// Rows whose predicate is definitely true.
std::vector<OracleRow> brute_force(const UnionStore& store, const mammofed::FormalQuery& q);

/// Empty when engine rows (site ignored) and oracle rows are the same multiset
/// and every engine field matches the stored value. Otherwise a description.
std::string compare_rows(const UnionStore& store, const mammofed::FormalQuery& q,
                         const std::vector<mammofed::Row>& engine, const std::vector<OracleRow>& oracle);

} // namespace mftest
