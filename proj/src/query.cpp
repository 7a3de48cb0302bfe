#include "mammofed/query.hpp"

#include "mammofed/error.hpp"
#include "mammofed/schema.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

namespace mammofed {

using nlohmann::json;

std::string format_number(double v) {
    if (v == 0) {
        return "0";
    }
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string render_literal(const Literal& lit) {
    if (const bool* b = std::get_if<bool>(&lit)) return *b ? "true" : "false";
    if (const double* d = std::get_if<double>(&lit)) return format_number(*d);
    return json(std::get<std::string>(lit)).dump();
}

std::string_view to_string(CmpOp op) {
    switch (op) {
    case CmpOp::eq: return "=";
    case CmpOp::ne: return "!=";
    case CmpOp::lt: return "<";
    case CmpOp::le: return "<=";
    case CmpOp::gt: return ">";
    case CmpOp::ge: return ">=";
    case CmpOp::between: return "between";
    case CmpOp::in: return "in";
    }
    return "?";
}

std::optional<CmpOp> cmp_op_from_string(std::string_view s) {
    for (CmpOp op : {CmpOp::eq, CmpOp::ne, CmpOp::lt, CmpOp::le, CmpOp::gt, CmpOp::ge, CmpOp::between, CmpOp::in}) {
        if (to_string(op) == s) return op;
    }
    return std::nullopt;
}

Predicate all_of(std::vector<Predicate> children) { return Predicate{And{std::move(children)}}; }
Predicate any_of(std::vector<Predicate> children) { return Predicate{Or{std::move(children)}}; }
Predicate negate(Predicate child) { return Predicate{Not{Box<Predicate>(std::move(child))}}; }

Predicate compare(std::string path, CmpOp op, std::vector<Literal> values) {
    return Predicate{Cmp{std::move(path), op, std::move(values)}};
}

Predicate derived(std::string provider, json params, CmpOp op, std::vector<Literal> values) {
    return Predicate{DerivedCmp{std::move(provider), std::move(params), op, std::move(values)}};
}

int depth(const Predicate& p) {
    struct Visitor {
        int operator()(const And& a) const { return 1 + max_child(a.children); }
        int operator()(const Or& o) const { return 1 + max_child(o.children); }
        int operator()(const Not& n) const { return 1 + depth(*n.child); }
        int operator()(const Cmp&) const { return 1; }
        int operator()(const DerivedCmp&) const { return 1; }
        static int max_child(const std::vector<Predicate>& cs) {
            int d = 0;
            for (const auto& c : cs) d = std::max(d, depth(c));
            return d;
        }
    };
    return std::visit(Visitor{}, p.node);
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void invalid(const std::string& what) { throw QueryError("invalid query: " + what); }

void check_arity(CmpOp op, const std::vector<Literal>& values, const std::string& where) {
    switch (op) {
    case CmpOp::between:
        if (values.size() != 2) invalid(where + ": between takes exactly two values");
        break;
    case CmpOp::in:
        if (values.empty()) invalid(where + ": in takes at least one value");
        break;
    default:
        if (values.size() != 1) invalid(where + ": " + std::string(to_string(op)) + " takes exactly one value");
    }
}

bool literal_less(const Literal& a, const Literal& b) {
    if (a.index() != b.index()) return a.index() < b.index();
    return a < b;
}

void check_between_order(CmpOp op, const std::vector<Literal>& values, const std::string& where) {
    if (op == CmpOp::between && literal_less(values[1], values[0])) {
        invalid(where + ": between requires lo <= hi");
    }
}

void check_cmp(const Cmp& c, Entity target) {
    const AttributeInfo* attr = find_attribute(c.path);
    if (!attr) invalid("unknown attribute path \"" + c.path + "\"");
    if (!reachable(target, attr->entity)) {
        invalid("attribute \"" + c.path + "\" is not reachable from " + std::string(to_string(target)));
    }
    if (!attr->comparable()) invalid("attribute \"" + c.path + "\" cannot be compared");
    check_arity(c.op, c.values, c.path);

    bool ordering = c.op == CmpOp::lt || c.op == CmpOp::le || c.op == CmpOp::gt || c.op == CmpOp::ge ||
                    c.op == CmpOp::between;
    for (const auto& v : c.values) {
        switch (attr->type) {
        case AttrType::integer:
        case AttrType::real: {
            const double* d = std::get_if<double>(&v);
            if (!d) invalid(c.path + ": expected a number");
            if (!std::isfinite(*d)) invalid(c.path + ": number must be finite");
            break;
        }
        case AttrType::boolean:
            if (!std::holds_alternative<bool>(v)) invalid(c.path + ": expected true or false");
            if (ordering) invalid(c.path + ": booleans support =, != and in only");
            break;
        case AttrType::date:
            if (!std::holds_alternative<std::string>(v) || !Date::parse(std::get<std::string>(v))) {
                invalid(c.path + ": expected a YYYY-MM-DD date");
            }
            break;
        case AttrType::enumeration: {
            const std::string* s = std::get_if<std::string>(&v);
            if (!s || std::find(attr->enum_values.begin(), attr->enum_values.end(), *s) == attr->enum_values.end()) {
                invalid(c.path + ": value " + render_literal(v) + " is not one of its allowed values");
            }
            if (ordering) invalid(c.path + ": enumerations support =, != and in only");
            break;
        }
        case AttrType::string:
            if (!std::holds_alternative<std::string>(v)) invalid(c.path + ": expected a string");
            break;
        case AttrType::list:
            break;
        }
    }
    check_between_order(c.op, c.values, c.path);
}

void check_derived(const DerivedCmp& d) {
    if (d.provider.empty()) invalid("derived predicate without provider");
    if (!d.params.is_object()) invalid(d.provider + ": params must be an object");
    check_arity(d.op, d.values, d.provider);
    for (const auto& v : d.values) {
        const double* x = std::get_if<double>(&v);
        if (!x || !std::isfinite(*x)) invalid(d.provider + ": derived values compare against finite numbers");
    }
    check_between_order(d.op, d.values, d.provider);
}

void check_node(const Predicate& p, Entity target) {
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, And> || std::is_same_v<T, Or>) {
                for (const auto& c : n.children) check_node(c, target);
            } else if constexpr (std::is_same_v<T, Not>) {
                check_node(*n.child, target);
            } else if constexpr (std::is_same_v<T, Cmp>) {
                check_cmp(n, target);
            } else {
                check_derived(n);
            }
        },
        p.node);
}

} // namespace

void validate(const FormalQuery& q) {
    if (q.scope.hop_budget != 0 && q.scope.hop_budget != 1) invalid("hop_budget must be 0 or 1");
    if (depth(q.predicate) > kMaxPredicateDepth) {
        invalid("predicate depth exceeds " + std::to_string(kMaxPredicateDepth));
    }
    check_node(q.predicate, q.target);
    if (q.projection) {
        for (const auto& path : *q.projection) {
            const AttributeInfo* attr = find_attribute(path);
            if (!attr) invalid("unknown projection path \"" + path + "\"");
            if (!reachable(q.target, attr->entity)) {
                invalid("projection \"" + path + "\" is not reachable from " + std::string(to_string(q.target)));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Canonical form
// ---------------------------------------------------------------------------

std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

std::string render_params(const json& j) {
    switch (j.type()) {
    case json::value_t::object: {
        std::string out = "{";
        bool first = true;
        for (auto it = j.begin(); it != j.end(); ++it) {  // std::map keeps keys sorted
            if (!first) out += ',';
            first = false;
            out += json(it.key()).dump() + ':' + render_params(it.value());
        }
        return out + '}';
    }
    case json::value_t::array: {
        std::string out = "[";
        for (std::size_t i = 0; i < j.size(); ++i) {
            if (i) out += ',';
            out += render_params(j[i]);
        }
        return out + ']';
    }
    case json::value_t::number_integer:
    case json::value_t::number_unsigned:
    case json::value_t::number_float:
        return format_number(j.get<double>());
    default:
        return j.dump();
    }
}

std::string render_values(const std::vector<Literal>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ',';
        out += render_literal(values[i]);
    }
    return out;
}

std::vector<Literal> canonical_in_list(std::vector<Literal> values) {
    std::vector<std::pair<std::string, Literal>> keyed;
    keyed.reserve(values.size());
    for (auto& v : values) keyed.emplace_back(render_literal(v), std::move(v));
    std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    keyed.erase(std::unique(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first == b.first; }),
                keyed.end());
    std::vector<Literal> out;
    for (auto& [_, v] : keyed) out.push_back(std::move(v));
    return out;
}

std::vector<Predicate> sorted_children(const std::vector<Predicate>& children) {
    std::vector<std::pair<std::string, Predicate>> keyed;
    keyed.reserve(children.size());
    for (const auto& c : children) {
        Predicate cc = canonical_form(c);
        keyed.emplace_back(canonical_text(cc), std::move(cc));
    }
    std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<Predicate> out;
    for (auto& [_, p] : keyed) out.push_back(std::move(p));
    return out;
}

} // namespace

Predicate canonical_form(const Predicate& p) {
    return std::visit(
        [](const auto& n) -> Predicate {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, And>) {
                return all_of(sorted_children(n.children));
            } else if constexpr (std::is_same_v<T, Or>) {
                return any_of(sorted_children(n.children));
            } else if constexpr (std::is_same_v<T, Not>) {
                if (const auto* inner = std::get_if<Not>(&n.child->node)) {
                    return canonical_form(*inner->child);
                }
                return negate(canonical_form(*n.child));
            } else {
                T copy = n;
                if (copy.op == CmpOp::in) copy.values = canonical_in_list(std::move(copy.values));
                if constexpr (std::is_same_v<T, DerivedCmp>) {
                    if (copy.params.is_null()) copy.params = json::object();
                }
                return Predicate{std::move(copy)};
            }
        },
        p.node);
}

FormalQuery canonical_form(const FormalQuery& q) {
    FormalQuery out = q;
    out.predicate = canonical_form(q.predicate);
    return out;
}

std::string canonical_text(const Predicate& p) {
    return std::visit(
        [](const auto& n) -> std::string {
            using T = std::decay_t<decltype(n)>;
            auto join = [](const char* tag, const std::vector<Predicate>& cs) {
                std::string out = std::string(tag) + "[";
                for (std::size_t i = 0; i < cs.size(); ++i) {
                    if (i) out += ',';
                    out += canonical_text(cs[i]);
                }
                return out + "]";
            };
            if constexpr (std::is_same_v<T, And>) {
                return join("and", n.children);
            } else if constexpr (std::is_same_v<T, Or>) {
                return join("or", n.children);
            } else if constexpr (std::is_same_v<T, Not>) {
                return "not[" + canonical_text(*n.child) + "]";
            } else if constexpr (std::is_same_v<T, Cmp>) {
                return "cmp(" + n.path + " " + std::string(to_string(n.op)) + " " + render_values(n.values) + ")";
            } else {
                return "derived(" + n.provider + " " + render_params(n.params) + " " + std::string(to_string(n.op)) +
                       " " + render_values(n.values) + ")";
            }
        },
        p.node);
}

CanonicalQuery normalize(const FormalQuery& q) {
    FormalQuery c = canonical_form(q);
    std::string text = "find " + std::string(to_string(c.target)) + " hop=" + std::to_string(c.scope.hop_budget) +
                       " proj=";
    if (c.projection) {
        text += '[';
        for (std::size_t i = 0; i < c.projection->size(); ++i) {
            if (i) text += ',';
            text += (*c.projection)[i];
        }
        text += ']';
    } else {
        text += '*';
    }
    text += " where " + canonical_text(c.predicate);
    return CanonicalQuery{text, fnv1a64(text)};
}

std::vector<std::string> effective_projection(const FormalQuery& q) {
    return q.projection ? *q.projection : default_projection(q.target);
}

// ---------------------------------------------------------------------------
// Wire encoding
// ---------------------------------------------------------------------------

namespace {

json literal_json(const Literal& lit) {
    return std::visit([](const auto& v) { return json(v); }, lit);
}

json values_json(const std::vector<Literal>& values) {
    json out = json::array();
    for (const auto& v : values) out.push_back(literal_json(v));
    return out;
}

[[noreturn]] void structure_error(const std::string& where, const std::string& what) {
    throw ParseError(0, where + ": " + what);
}

const json& member(const json& obj, const char* name, const std::string& where) {
    if (!obj.is_object()) structure_error(where, "expected an object");
    auto it = obj.find(name);
    if (it == obj.end()) structure_error(where, std::string("missing field \"") + name + "\"");
    return *it;
}

std::string string_member(const json& obj, const char* name, const std::string& where) {
    const json& v = member(obj, name, where);
    if (!v.is_string()) structure_error(where + "/" + name, "expected a string");
    return v.get<std::string>();
}

Literal literal_from_json(const json& j, const std::string& where) {
    if (j.is_boolean()) return j.get<bool>();
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) return j.get<std::string>();
    structure_error(where, "literal must be a boolean, number or string");
}

std::vector<Literal> values_from_json(const json& obj, const std::string& where) {
    const json& arr = member(obj, "values", where);
    if (!arr.is_array()) structure_error(where + "/values", "expected an array");
    std::vector<Literal> out;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        out.push_back(literal_from_json(arr[i], where + "/values/" + std::to_string(i)));
    }
    return out;
}

CmpOp op_from_json(const json& obj, const std::string& where) {
    auto text = string_member(obj, "op", where);
    auto op = cmp_op_from_string(text);
    if (!op) structure_error(where + "/op", "unknown operator \"" + text + "\"");
    return *op;
}

Predicate predicate_from_json(const json& j, const std::string& where, int level) {
    if (level > kMaxPredicateDepth) structure_error(where, "predicate nested too deeply");
    auto kind = string_member(j, "kind", where);
    if (kind == "and" || kind == "or") {
        const json& arr = member(j, "children", where);
        if (!arr.is_array()) structure_error(where + "/children", "expected an array");
        std::vector<Predicate> children;
        for (std::size_t i = 0; i < arr.size(); ++i) {
            children.push_back(predicate_from_json(arr[i], where + "/children/" + std::to_string(i), level + 1));
        }
        return kind == "and" ? all_of(std::move(children)) : any_of(std::move(children));
    }
    if (kind == "not") {
        return negate(predicate_from_json(member(j, "child", where), where + "/child", level + 1));
    }
    if (kind == "cmp") {
        return compare(string_member(j, "attr", where), op_from_json(j, where), values_from_json(j, where));
    }
    if (kind == "derived") {
        json params = json::object();
        if (auto it = j.find("params"); it != j.end() && !it->is_null()) {
            if (!it->is_object()) structure_error(where + "/params", "expected an object");
            params = *it;
        }
        return derived(string_member(j, "provider", where), std::move(params), op_from_json(j, where),
                       values_from_json(j, where));
    }
    structure_error(where + "/kind", "unknown predicate kind \"" + kind + "\"");
}

} // namespace

json to_json(const Predicate& p) {
    return std::visit(
        [](const auto& n) -> json {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, And> || std::is_same_v<T, Or>) {
                json children = json::array();
                for (const auto& c : n.children) children.push_back(to_json(c));
                return {{"kind", std::is_same_v<T, And> ? "and" : "or"}, {"children", children}};
            } else if constexpr (std::is_same_v<T, Not>) {
                return {{"kind", "not"}, {"child", to_json(*n.child)}};
            } else if constexpr (std::is_same_v<T, Cmp>) {
                return {{"kind", "cmp"}, {"attr", n.path}, {"op", to_string(n.op)}, {"values", values_json(n.values)}};
            } else {
                return {{"kind", "derived"},
                        {"provider", n.provider},
                        {"params", n.params},
                        {"op", to_string(n.op)},
                        {"values", values_json(n.values)}};
            }
        },
        p.node);
}

json to_json(const FormalQuery& q) {
    json j;
    j["target"] = to_string(q.target);
    j["predicate"] = to_json(q.predicate);
    j["projection"] = q.projection ? json(*q.projection) : json("ALL");
    j["scope"] = {{"origin_site", q.scope.origin_site}, {"hop_budget", q.scope.hop_budget}};
    return j;
}

FormalQuery formal_query_from_json(const json& j) {
    FormalQuery q;
    auto target = string_member(j, "target", "");
    auto entity = entity_from_string(target);
    if (!entity) structure_error("/target", "unknown target \"" + target + "\"");
    q.target = *entity;
    q.predicate = predicate_from_json(member(j, "predicate", ""), "/predicate", 1);

    const json& proj = member(j, "projection", "");
    if (proj.is_string() && proj.get<std::string>() == "ALL") {
        q.projection.reset();
    } else if (proj.is_array()) {
        std::vector<std::string> paths;
        for (const auto& p : proj) {
            if (!p.is_string()) structure_error("/projection", "expected attribute path strings");
            paths.push_back(p.get<std::string>());
        }
        q.projection = std::move(paths);
    } else {
        structure_error("/projection", "expected \"ALL\" or an array");
    }

    const json& scope = member(j, "scope", "");
    q.scope.origin_site = string_member(scope, "origin_site", "/scope");
    const json& hop = member(scope, "hop_budget", "/scope");
    if (!hop.is_number_integer()) structure_error("/scope/hop_budget", "expected an integer");
    q.scope.hop_budget = hop.get<int>();
    return q;
}

std::string encode(const FormalQuery& q) { return to_json(q).dump(); }

FormalQuery decode(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(e.byte > 0 ? e.byte - 1 : 0, e.what());
    }
    return formal_query_from_json(j);
}

} // namespace mammofed
