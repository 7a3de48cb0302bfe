#include "mammofed/local_handler.hpp"

#include "mammofed/error.hpp"
#include "mammofed/xml.hpp"

#include <algorithm>
#include <charconv>
#include <set>
#include <sstream>

namespace mammofed {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Attribute access
// ---------------------------------------------------------------------------

const std::string& RowContext::id() const {
    static const std::string kEmpty;
    switch (target) {
    case Entity::patients: return patient ? patient->patient_id : kEmpty;
    case Entity::studies: return study ? study->study_id : kEmpty;
    case Entity::images: return image ? image->image_id : kEmpty;
    case Entity::annotations: return annotation ? annotation->annotation_id : kEmpty;
    }
    return kEmpty;
}

namespace {

template <typename T>
std::optional<Literal> opt_num(const std::optional<T>& v) {
    if (!v) return std::nullopt;
    return static_cast<double>(*v);
}

template <typename E>
std::optional<Literal> opt_enum(const std::optional<E>& v) {
    if (!v) return std::nullopt;
    return std::string(to_string(*v));
}

std::optional<Literal> patient_value(const PatientRecord& p, std::string_view field) {
    if (field == "patient_id") return p.patient_id;
    if (field == "age_years") return static_cast<double>(p.age_years);
    if (field == "children_count") return static_cast<double>(p.children_count);
    if (field == "age_first_pregnancy") return opt_num(p.age_first_pregnancy);
    if (field == "age_last_pregnancy") return opt_num(p.age_last_pregnancy);
    if (field == "hrt") return p.hrt;
    if (field == "hrt_start") return p.hrt_start ? std::optional<Literal>(p.hrt_start->to_string()) : std::nullopt;
    if (field == "site_id") return p.site_id;
    return std::nullopt;
}

std::optional<Literal> study_value(const StudyRecord& s, std::string_view field) {
    if (field == "study_id") return s.study_id;
    if (field == "patient_id") return s.patient_id;
    if (field == "study_date") return s.study_date.to_string();
    if (field == "diagnosis") return opt_enum(s.diagnosis);
    if (field == "diagnosed_laterality") return opt_enum(s.diagnosed_laterality);
    if (field == "therapy_outcome") return opt_enum(s.therapy_outcome);
    return std::nullopt;
}

std::optional<Literal> image_value(const ImageRecord& i, std::string_view field) {
    if (field == "image_id") return i.image_id;
    if (field == "study_id") return i.study_id;
    if (field == "laterality") return std::string(to_string(i.laterality));
    if (field == "view") return std::string(to_string(i.view));
    if (field == "breast_area_mm2") return i.breast_area_mm2;
    if (field == "mean_density") return i.mean_density;
    return std::nullopt;
}

std::optional<Literal> annotation_value(const AnnotationRecord& a, std::string_view field) {
    if (field == "annotation_id") return a.annotation_id;
    if (field == "image_id") return a.image_id;
    if (field == "author") return a.author.to_string();
    if (field == "kind") return std::string(to_string(a.kind));
    if (field == "microcalc_count") return opt_num(a.microcalc_count);
    if (field == "session_length_min") return opt_num(a.session_length_min);
    if (field == "serial_order") return opt_num(a.serial_order);
    if (field == "reading") return opt_enum(a.reading);
    if (field == "author_experience_years") return opt_num(a.author_experience_years);
    return std::nullopt;
}

std::string_view field_name(const AttributeInfo& attr) {
    return attr.path.substr(attr.path.find('.') + 1);
}

std::string join_numbers(const auto& values, char sep) {
    std::string out;
    bool first = true;
    for (double v : values) {
        if (!first) out += sep;
        first = false;
        out += format_number(v);
    }
    return out;
}

} // namespace

std::optional<Literal> attribute_value(const RowContext& row, const AttributeInfo& attr) {
    std::string_view field = field_name(attr);
    switch (attr.entity) {
    case Entity::patients: return row.patient ? patient_value(*row.patient, field) : std::nullopt;
    case Entity::studies: return row.study ? study_value(*row.study, field) : std::nullopt;
    case Entity::images: return row.image ? image_value(*row.image, field) : std::nullopt;
    case Entity::annotations: return row.annotation ? annotation_value(*row.annotation, field) : std::nullopt;
    }
    return std::nullopt;
}

std::optional<std::string> render_attribute(const RowContext& row, const AttributeInfo& attr) {
    if (attr.type == AttrType::list) {
        if (attr.path == "study.reader_ids" && row.study) {
            std::string out;
            for (std::size_t i = 0; i < row.study->reader_ids.size(); ++i) {
                if (i) out += ',';
                out += row.study->reader_ids[i];
            }
            return out;
        }
        if (attr.path == "image.feature_vector" && row.image) {
            return join_numbers(row.image->feature_vector, ',');
        }
        if (attr.path == "annotation.regions" && row.annotation) {
            std::string out;
            for (std::size_t i = 0; i < row.annotation->regions.size(); ++i) {
                const Rect& r = row.annotation->regions[i];
                if (i) out += ';';
                out += join_numbers(std::array{r.x0, r.y0, r.x1, r.y1}, ',');
            }
            return out;
        }
        return std::nullopt;
    }
    auto v = attribute_value(row, attr);
    if (!v) return std::nullopt;
    if (const std::string* s = std::get_if<std::string>(&*v)) return *s;
    return render_literal(*v);
}

bool compare_literal(const Literal& value, CmpOp op, const std::vector<Literal>& operands) {
    auto same_kind = [&](const Literal& o) { return o.index() == value.index(); };
    switch (op) {
    case CmpOp::eq: return same_kind(operands.at(0)) && value == operands[0];
    case CmpOp::ne: return same_kind(operands.at(0)) && value != operands[0];
    case CmpOp::lt: return same_kind(operands.at(0)) && value < operands[0];
    case CmpOp::le: return same_kind(operands.at(0)) && value <= operands[0];
    case CmpOp::gt: return same_kind(operands.at(0)) && value > operands[0];
    case CmpOp::ge: return same_kind(operands.at(0)) && value >= operands[0];
    case CmpOp::between:
        return same_kind(operands.at(0)) && same_kind(operands.at(1)) && operands[0] <= value &&
               value <= operands[1];
    case CmpOp::in:
        return std::any_of(operands.begin(), operands.end(),
                           [&](const Literal& o) { return same_kind(o) && o == value; });
    }
    return false;
}

// ---------------------------------------------------------------------------
// Compilation
// ---------------------------------------------------------------------------

namespace {

void collect(const Predicate& p, std::set<Entity>& entities, std::set<std::string>& providers) {
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, And> || std::is_same_v<T, Or>) {
                for (const auto& c : n.children) collect(c, entities, providers);
            } else if constexpr (std::is_same_v<T, Not>) {
                collect(*n.child, entities, providers);
            } else if constexpr (std::is_same_v<T, Cmp>) {
                entities.insert(find_attribute(n.path)->entity);
            } else {
                providers.insert(n.provider);
            }
        },
        p.node);
}

std::string_view singular(Entity e) {
    switch (e) {
    case Entity::patients: return "patient";
    case Entity::studies: return "study";
    case Entity::images: return "image";
    case Entity::annotations: return "annotation";
    }
    return "?";
}

} // namespace

StatementPlan compile_statements(const FormalQuery& q) {
    try {
        validate(q);
    } catch (const QueryError& e) {
        throw CompileError(e.what());
    }

    StatementPlan plan;
    plan.query = q;
    std::set<Entity> used;
    std::set<std::string> providers;
    collect(q.predicate, used, providers);
    std::vector<std::string> projection = effective_projection(q);
    for (const auto& path : projection) used.insert(find_attribute(path)->entity);

    plan.steps.emplace_back(ScanStep{q.target});
    std::vector<Entity> chain = ancestors(q.target);
    for (std::size_t i = 0; i < chain.size(); ++i) {
        if (used.contains(chain[i])) {
            plan.steps.emplace_back(ResolvePathStep{chain[i], std::vector<Entity>(chain.begin(), chain.begin() + i + 1)});
        }
    }
    plan.steps.emplace_back(FilterStep{q.predicate});
    if (!providers.empty()) {
        plan.steps.emplace_back(DerivedFilterStep{q.predicate, {providers.begin(), providers.end()}});
    }
    plan.steps.emplace_back(ProjectStep{std::move(projection)});
    return plan;
}

std::string StatementPlan::describe() const {
    std::ostringstream out;
    for (const auto& step : steps) {
        std::visit(
            [&](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, ScanStep>) {
                    out << "Scan(" << to_string(s.entity) << ")";
                } else if constexpr (std::is_same_v<T, ResolvePathStep>) {
                    out << "ResolvePath(" << singular(query.target);
                    for (Entity e : s.via) out << "->" << singular(e);
                    out << ")";
                } else if constexpr (std::is_same_v<T, FilterStep>) {
                    out << "Filter(" << canonical_text(s.predicate) << ")";
                } else if constexpr (std::is_same_v<T, DerivedFilterStep>) {
                    out << "DerivedFilter(";
                    for (std::size_t i = 0; i < s.providers.size(); ++i) out << (i ? "," : "") << s.providers[i];
                    out << ")";
                } else {
                    out << "Project(";
                    for (std::size_t i = 0; i < s.paths.size(); ++i) out << (i ? "," : "") << s.paths[i];
                    out << ")";
                }
            },
            step);
        out << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

namespace {

enum class Truth { no, yes, unknown };

Truth from_bool(bool b) { return b ? Truth::yes : Truth::no; }

/// Three-valued evaluation. With `providers == nullptr` every derived node is unknown.
Truth evaluate(const Predicate& p, const RowContext& row, const StoreSnapshot& store,
               const ProviderRegistry* providers) {
    return std::visit(
        [&](const auto& n) -> Truth {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, And>) {
                Truth acc = Truth::yes;
                for (const auto& c : n.children) {
                    Truth t = evaluate(c, row, store, providers);
                    if (t == Truth::no) return Truth::no;
                    if (t == Truth::unknown) acc = Truth::unknown;
                }
                return acc;
            } else if constexpr (std::is_same_v<T, Or>) {
                Truth acc = Truth::no;
                for (const auto& c : n.children) {
                    Truth t = evaluate(c, row, store, providers);
                    if (t == Truth::yes) return Truth::yes;
                    if (t == Truth::unknown) acc = Truth::unknown;
                }
                return acc;
            } else if constexpr (std::is_same_v<T, Not>) {
                Truth t = evaluate(*n.child, row, store, providers);
                return t == Truth::unknown ? t : from_bool(t == Truth::no);
            } else if constexpr (std::is_same_v<T, Cmp>) {
                auto v = attribute_value(row, *find_attribute(n.path));
                return from_bool(v && compare_literal(*v, n.op, n.values));
            } else {
                if (!providers) return Truth::unknown;
                auto v = evaluate_derived(*providers, n.provider, n.params, ProviderContext{store, row});
                if (!v) return Truth::unknown;
                return from_bool(compare_literal(Literal{*v}, n.op, n.values));
            }
        },
        p.node);
}

struct Candidate {
    RowContext row;
    Truth verdict = Truth::unknown;
};

std::vector<Candidate> scan(const StoreSnapshot& snap, Entity e) {
    std::vector<Candidate> out;
    auto push = [&](auto setter) {
        Candidate c;
        c.row.target = e;
        setter(c.row);
        out.push_back(c);
    };
    switch (e) {
    case Entity::patients:
        for (const auto& [_, r] : snap.patients) push([&](RowContext& row) { row.patient = &r; });
        break;
    case Entity::studies:
        for (const auto& [_, r] : snap.studies) push([&](RowContext& row) { row.study = &r; });
        break;
    case Entity::images:
        for (const auto& [_, r] : snap.images) push([&](RowContext& row) { row.image = &r; });
        break;
    case Entity::annotations:
        for (const auto& [_, r] : snap.annotations) push([&](RowContext& row) { row.annotation = &r; });
        break;
    }
    return out;
}

void resolve(const StoreSnapshot& snap, RowContext& row, const std::vector<Entity>& via) {
    for (Entity e : via) {
        switch (e) {
        case Entity::images:
            if (!row.image && row.annotation) row.image = snap.image(row.annotation->image_id);
            break;
        case Entity::studies:
            if (!row.study && row.image) row.study = snap.study(row.image->study_id);
            break;
        case Entity::patients:
            if (!row.patient && row.study) row.patient = snap.patient(row.study->patient_id);
            break;
        case Entity::annotations:
            break;
        }
    }
}

} // namespace

bool row_less(const Row& a, const Row& b) {
    if (a.site != b.site) return a.site < b.site;
    if (a.entity != b.entity) return to_string(a.entity) < to_string(b.entity);
    return a.id < b.id;
}

ResultSet execute_local(const StatementPlan& plan, const StoreSnapshot& snap, const ProviderRegistry& providers,
                        const QueryId& query_id) {
    for (const auto& step : plan.steps) {
        if (const auto* d = std::get_if<DerivedFilterStep>(&step)) {
            for (const auto& id : d->providers) {
                if (!providers.find(id)) throw ExecutionError("unknown provider " + id);
            }
        }
    }

    ResultSet result;
    result.query_id = query_id;
    result.site_id = snap.site_id;
    result.source_version = snap.version;

    std::vector<Candidate> rows;
    for (const auto& step : plan.steps) {
        std::visit(
            [&](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, ScanStep>) {
                    rows = scan(snap, s.entity);
                } else if constexpr (std::is_same_v<T, ResolvePathStep>) {
                    for (auto& c : rows) resolve(snap, c.row, s.via);
                } else if constexpr (std::is_same_v<T, FilterStep>) {
                    std::erase_if(rows, [&](Candidate& c) {
                        c.verdict = evaluate(s.predicate, c.row, snap, nullptr);
                        return c.verdict == Truth::no;
                    });
                } else if constexpr (std::is_same_v<T, DerivedFilterStep>) {
                    std::erase_if(rows, [&](Candidate& c) {
                        if (c.verdict != Truth::unknown) return false;
                        c.verdict = evaluate(s.predicate, c.row, snap, &providers);
                        if (c.verdict == Truth::unknown) ++result.skipped;
                        return c.verdict != Truth::yes;
                    });
                } else {
                    for (const auto& c : rows) {
                        Row row;
                        row.entity = c.row.target;
                        row.id = c.row.id();
                        row.site = snap.site_id;
                        for (const auto& path : s.paths) {
                            if (auto text = render_attribute(c.row, *find_attribute(path))) {
                                row.fields.emplace_back(path, std::move(*text));
                            }
                        }
                        result.rows.push_back(std::move(row));
                    }
                }
            },
            step);
    }
    std::sort(result.rows.begin(), result.rows.end(), row_less);
    return result;
}

ResultSet execute_local(const StatementPlan& plan, const SiteStore& store, const ProviderRegistry& providers,
                        const QueryId& query_id) {
    auto snap = store.snapshot();
    return execute_local(plan, *snap, providers, query_id);
}

// ---------------------------------------------------------------------------
// XML
// ---------------------------------------------------------------------------

std::string to_xml(const ResultSet& r) {
    std::string out = "<resultset query=\"" + r.query_id.to_string() + "\" site=\"" + xml::escape(r.site_id) +
                      "\" version=\"" + std::to_string(r.source_version) + "\" skipped=\"" +
                      std::to_string(r.skipped) + "\"";
    if (r.rows.empty()) return out + "/>\n";
    out += ">\n";
    for (const auto& row : r.rows) {
        out += "<record entity=\"";
        out += to_string(row.entity);
        out += "\" id=\"" + xml::escape(row.id) + "\" site=\"" + xml::escape(row.site) + "\">";
        for (const auto& [name, value] : row.fields) {
            out += "<field name=\"" + xml::escape(name) + "\">" + xml::escape(value) + "</field>";
        }
        out += "</record>\n";
    }
    return out + "</resultset>\n";
}

namespace {

const std::string& required(const xml::Element& e, const char* name) {
    const std::string* v = e.attribute(name);
    if (!v) throw ParseError(0, "<" + e.name + "> lacks attribute " + name);
    return *v;
}

std::uint64_t parse_count(const std::string& text, const char* what) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) throw ParseError(0, std::string("bad ") + what);
    return v;
}

} // namespace

ResultSet result_set_from_xml(std::string_view text) {
    xml::Element root = xml::parse(text);
    if (root.name != "resultset") throw ParseError(0, "expected <resultset>");
    ResultSet r;
    auto id = QueryId::parse(required(root, "query"));
    if (!id) throw ParseError(0, "bad query id");
    r.query_id = *id;
    r.site_id = required(root, "site");
    r.source_version = parse_count(required(root, "version"), "version");
    if (const std::string* skipped = root.attribute("skipped")) r.skipped = parse_count(*skipped, "skipped");
    for (const auto& rec : root.children) {
        if (rec.name != "record") throw ParseError(0, "unexpected <" + rec.name + ">");
        Row row;
        auto entity = entity_from_string(required(rec, "entity"));
        if (!entity) throw ParseError(0, "bad record entity");
        row.entity = *entity;
        row.id = required(rec, "id");
        row.site = required(rec, "site");
        for (const auto& f : rec.children) {
            if (f.name != "field") throw ParseError(0, "unexpected <" + f.name + ">");
            row.fields.emplace_back(required(f, "name"), f.text);
        }
        r.rows.push_back(std::move(row));
    }
    return r;
}

} // namespace mammofed
