#pragma once

// Local query handling: compile a formal query into relational steps over the
// site store, run them against a snapshot, and render the result set as XML.

#include "mammofed/analyser.hpp"
#include "mammofed/metadata.hpp"
#include "mammofed/query.hpp"
#include "mammofed/schema.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

namespace mammofed {

// ---------------------------------------------------------------------------
// Row context and attribute access
// ---------------------------------------------------------------------------

/// One candidate record plus the ancestors it references.
struct RowContext {
    Entity target = Entity::patients;
    const PatientRecord* patient = nullptr;
    const StudyRecord* study = nullptr;
    const ImageRecord* image = nullptr;
    const AnnotationRecord* annotation = nullptr;

    [[nodiscard]] const std::string& id() const;
};

/// Comparable value of a scalar attribute; nullopt when absent or not scalar.
std::optional<Literal> attribute_value(const RowContext& row, const AttributeInfo& attr);

/// Text rendering used in result rows; nullopt when the attribute is absent.
std::optional<std::string> render_attribute(const RowContext& row, const AttributeInfo& attr);

/// Applies a comparison to a present value. Mismatched literal kinds never match.
bool compare_literal(const Literal& value, CmpOp op, const std::vector<Literal>& operands);

// ---------------------------------------------------------------------------
// Derived-data providers
// ---------------------------------------------------------------------------

struct ProviderContext {
    const StoreSnapshot& store;
    const RowContext& row;
};

/// Returns nullopt when the value is undefined for this record.
using Provider = std::function<std::optional<double>(const ProviderContext&, const nlohmann::json& params)>;

class ProviderRegistry {
public:
    void add(std::string id, Provider provider);
    [[nodiscard]] const Provider* find(const std::string& id) const;
    [[nodiscard]] std::vector<std::string> ids() const;

    /// find_one_like_it and density_asymmetry.
    static ProviderRegistry defaults();

private:
    std::map<std::string, Provider> providers_;
};

/// 1 / (1 + Euclidean distance).
double feature_similarity(const std::array<double, kFeatureLength>& a, const std::array<double, kFeatureLength>& b);

/// max over views of |mean_density(L, v) - mean_density(R, v)|; nullopt without any L/R pair.
std::optional<double> study_density_asymmetry(const StoreSnapshot& store, const std::string& study_id);

/// Images a provider sees for a row: the image itself, the annotated image, or
/// every image of the study / patient.
std::vector<const ImageRecord*> images_in_scope(const StoreSnapshot& store, const RowContext& row);
std::vector<const StudyRecord*> studies_in_scope(const StoreSnapshot& store, const RowContext& row);

/// Throws ExecutionError naming the provider when it is not registered.
std::optional<double> evaluate_derived(const ProviderRegistry& providers, const std::string& provider_id,
                                       const nlohmann::json& params, const ProviderContext& ctx);

/// Copies feature vectors of locally held reference images into find_one_like_it
/// params so that remote sites can evaluate the comparison.
FormalQuery bind_provider_references(FormalQuery q, const StoreSnapshot& store);

// ---------------------------------------------------------------------------
// Statement plans
// ---------------------------------------------------------------------------

struct ScanStep {
    Entity entity;
};

/// Key join from the scanned entity up to `to`, through `via` (nearest first, ending with `to`).
struct ResolvePathStep {
    Entity to;
    std::vector<Entity> via;
};

/// Drops rows whose predicate is false regardless of derived values.
struct FilterStep {
    Predicate predicate;
};

/// Evaluates providers for rows the simple filter could not decide.
struct DerivedFilterStep {
    Predicate predicate;
    std::vector<std::string> providers;
};

struct ProjectStep {
    std::vector<std::string> paths;
};

using Step = std::variant<ScanStep, ResolvePathStep, FilterStep, DerivedFilterStep, ProjectStep>;

struct StatementPlan {
    FormalQuery query;
    std::vector<Step> steps;

    /// One step per line, e.g. "Scan(images)", "ResolvePath(image->study->patient)".
    [[nodiscard]] std::string describe() const;
};

/// Throws CompileError for paths outside the vocabulary or unreachable from the target.
StatementPlan compile_statements(const FormalQuery& q);

// ---------------------------------------------------------------------------
// Execution and XML
// ---------------------------------------------------------------------------

struct Row {
    Entity entity = Entity::patients;
    std::string id;
    SiteId site;
    std::vector<std::pair<std::string, std::string>> fields;

    bool operator==(const Row&) const = default;
};

/// (site, entity, id) ordering used for every row list the engine emits.
bool row_less(const Row& a, const Row& b);

struct ResultSet {
    QueryId query_id;
    SiteId site_id;
    std::vector<Row> rows;
    std::uint64_t source_version = 0;
    std::uint64_t skipped = 0;  // rows whose derived predicate was undefined

    bool operator==(const ResultSet&) const = default;
};

ResultSet execute_local(const StatementPlan& plan, const StoreSnapshot& snapshot, const ProviderRegistry& providers,
                        const QueryId& query_id = {});
ResultSet execute_local(const StatementPlan& plan, const SiteStore& store, const ProviderRegistry& providers,
                        const QueryId& query_id = {});

/// `<resultset query=".." site=".." version=".." skipped="..">` with one `<record>`
/// per row and one `<field name="..">` per projected value. No XML declaration.
std::string to_xml(const ResultSet& r);

/// Inverse of to_xml. Throws ParseError.
ResultSet result_set_from_xml(std::string_view text);

} // namespace mammofed
