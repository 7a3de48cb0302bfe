#pragma once

// The fixed attribute-path vocabulary ("patient.age_years", "image.view", ...).

#include "mammofed/metadata.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mammofed {

enum class AttrType {
    string,
    integer,
    real,
    boolean,
    date,
    enumeration,
    list,  // reader_ids, feature_vector, regions: projectable only
};

struct AttributeInfo {
    std::string_view path;
    Entity entity;
    AttrType type;
    std::vector<std::string_view> enum_values;  // for AttrType::enumeration

    [[nodiscard]] bool comparable() const { return type != AttrType::list; }
    [[nodiscard]] bool numeric() const { return type == AttrType::integer || type == AttrType::real; }
};

/// Every attribute path, grouped by entity in reference-chain order.
std::span<const AttributeInfo> attribute_vocabulary();

const AttributeInfo* find_attribute(std::string_view path);

/// The target entity's own attributes, in vocabulary order (the ALL projection).
std::vector<std::string> default_projection(Entity target);

/// True when a record of `target` references exactly one `other` along the
/// annotation -> image -> study -> patient chain (or other == target).
bool reachable(Entity target, Entity other);

/// Entities strictly above `target` on the chain, nearest first.
std::vector<Entity> ancestors(Entity target);

} // namespace mammofed
