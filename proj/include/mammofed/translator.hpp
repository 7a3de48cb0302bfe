#pragma once

// User-facing query language and the term dictionary that maps user vocabulary
// onto attribute paths and derived-data providers.
//
//   find <entity> [local] where <cond> { and|or <cond> }
//   cond := term op literal | term is [not] literal | term over N | term under N
//         | term between a and b | term in (a, b, ...)
//         | term like image <id> threshold <t> [in MLO|CC|both]
//         | not cond | ( cond ... )

#include "mammofed/metadata.hpp"
#include "mammofed/query.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mammofed {

struct TermTarget {
    enum class Kind { attribute, provider };
    Kind kind = Kind::attribute;
    std::string name;  // attribute path or provider id

    bool operator==(const TermTarget&) const = default;
};

class TermDictionary {
public:
    /// Case-insensitive; whitespace runs collapse to one space. Throws QueryError when
    /// `term` is already mapped to a different target.
    void add(std::string_view term, TermTarget target);
    [[nodiscard]] const TermTarget* find(std::string_view term) const;

    [[nodiscard]] std::size_t size() const { return terms_.size(); }
    [[nodiscard]] std::size_t max_words() const { return max_words_; }
    [[nodiscard]] int version() const { return version_; }
    [[nodiscard]] const std::map<std::string, TermTarget>& entries() const { return terms_; }

    /// The dictionary shipped with the engine.
    static TermDictionary defaults();

    /// JSONL: {"entity":"dictionary","version":N} then {"entity":"term","term":..,"attribute"|"provider":..}.
    static TermDictionary load(std::istream& in);
    static TermDictionary load_file(const std::filesystem::path& path);

    bool operator==(const TermDictionary&) const = default;

private:
    std::map<std::string, TermTarget> terms_;
    std::size_t max_words_ = 0;
    int version_ = 1;
};

/// Parses and resolves a DSL request. Throws ParseError (with byte position),
/// TranslationError (unknown term) or QueryError (ill-typed literal).
FormalQuery translate(std::string_view text, const TermDictionary& dict, const SiteId& origin_site = {});

struct ImageMatchCriteria {
    std::string reference_image;
    double threshold = 0.8;
    std::vector<View> views{View::MLO, View::CC};
};

struct SimilarityCriteria {
    int age_band = 3;
    bool match_children_band = false;
    std::optional<int> match_pregnancy_ages_band;  // no default: the band width is not fixed
    std::optional<ImageMatchCriteria> image_match;
    Entity target = Entity::patients;
};

/// The children-count band containing `count`: {0}, [1,2], [3,4] or [5, inf).
Predicate children_band_predicate(int count);

/// Conjunction describing "similar cases" to `ref`, excluding `ref` itself.
/// Throws CriteriaError when an enabled criterion lacks reference data.
FormalQuery build_similarity_query(const PatientRecord& ref, const SimilarityCriteria& crit);

} // namespace mammofed
