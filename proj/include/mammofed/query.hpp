#pragma once

// Formal query representation: predicate trees, canonical form, cache key and wire encoding.

#include "mammofed/metadata.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace mammofed {

/// Comparison literal. Integers are carried as doubles (exact up to 2^53); dates
/// and enum values as strings.
using Literal = std::variant<bool, double, std::string>;

/// Shortest decimal text that round-trips to the same double; -0 renders as "0".
std::string format_number(double v);

/// Canonical literal text: true/false, shortest decimal, or a JSON-quoted string.
std::string render_literal(const Literal& lit);

enum class CmpOp { eq, ne, lt, le, gt, ge, between, in };

std::string_view to_string(CmpOp op);
std::optional<CmpOp> cmp_op_from_string(std::string_view s);

/// Heap-allocated value with value semantics, for recursive variants.
template <typename T>
class Box {
public:
    Box(T value) : ptr_(std::make_unique<T>(std::move(value))) {}  // NOLINT(google-explicit-constructor)
    Box(const Box& other) : ptr_(std::make_unique<T>(*other.ptr_)) {}
    Box(Box&&) noexcept = default;
    Box& operator=(const Box& other) {
        if (this != &other) ptr_ = std::make_unique<T>(*other.ptr_);
        return *this;
    }
    Box& operator=(Box&&) noexcept = default;
    ~Box() = default;

    T& operator*() { return *ptr_; }
    const T& operator*() const { return *ptr_; }
    T* operator->() { return ptr_.get(); }
    const T* operator->() const { return ptr_.get(); }

    bool operator==(const Box& other) const { return *ptr_ == *other.ptr_; }

private:
    std::unique_ptr<T> ptr_;
};

struct Predicate;

/// Conjunction; an empty And is true.
struct And {
    std::vector<Predicate> children;
    bool operator==(const And&) const = default;
};

/// Disjunction; an empty Or is false.
struct Or {
    std::vector<Predicate> children;
    bool operator==(const Or&) const = default;
};

struct Not {
    Box<Predicate> child;
    bool operator==(const Not&) const = default;
};

/// Simple predicate over a stored attribute. `between` carries [lo, hi] (inclusive),
/// `in` carries one or more values, every other operator exactly one.
struct Cmp {
    std::string path;
    CmpOp op = CmpOp::eq;
    std::vector<Literal> values;
    bool operator==(const Cmp&) const = default;
};

/// Predicate over a value computed by a registered provider.
struct DerivedCmp {
    std::string provider;
    nlohmann::json params = nlohmann::json::object();
    CmpOp op = CmpOp::ge;
    std::vector<Literal> values;
    bool operator==(const DerivedCmp&) const = default;
};

struct Predicate {
    std::variant<And, Or, Not, Cmp, DerivedCmp> node;
    bool operator==(const Predicate&) const = default;
};

Predicate all_of(std::vector<Predicate> children);
Predicate any_of(std::vector<Predicate> children);
Predicate negate(Predicate child);
Predicate compare(std::string path, CmpOp op, std::vector<Literal> values);
Predicate derived(std::string provider, nlohmann::json params, CmpOp op, std::vector<Literal> values);

inline constexpr int kMaxPredicateDepth = 32;

struct QueryScope {
    SiteId origin_site;
    int hop_budget = 1;  // 1: fan out to every peer; 0: this site only
    bool operator==(const QueryScope&) const = default;
};

struct FormalQuery {
    Entity target = Entity::images;
    Predicate predicate{And{}};
    std::optional<std::vector<std::string>> projection;  // nullopt = ALL
    QueryScope scope;
    bool operator==(const FormalQuery&) const = default;
};

/// Leaves count as depth 1.
int depth(const Predicate& p);

/// Throws QueryError when the query breaks a model invariant.
void validate(const FormalQuery& q);

struct CanonicalQuery {
    std::string canonical_text;
    std::uint64_t key = 0;
    bool operator==(const CanonicalQuery&) const = default;
};

std::uint64_t fnv1a64(std::string_view data);

/// Sorted And/Or children, double negation removed, `in` lists sorted and deduplicated.
Predicate canonical_form(const Predicate& p);
FormalQuery canonical_form(const FormalQuery& q);

std::string canonical_text(const Predicate& p);
CanonicalQuery normalize(const FormalQuery& q);

/// Resolved attribute list: the explicit projection or the target's own attributes.
std::vector<std::string> effective_projection(const FormalQuery& q);

nlohmann::json to_json(const Predicate& p);
nlohmann::json to_json(const FormalQuery& q);
/// Throws ParseError (offset 0) on structural problems.
FormalQuery formal_query_from_json(const nlohmann::json& j);

/// Wire text: compact JSON with fields target, predicate, projection, scope.
std::string encode(const FormalQuery& q);
/// Throws ParseError carrying the byte offset of malformed JSON.
FormalQuery decode(std::string_view text);

} // namespace mammofed
