#include "generators.hpp"

#include "mammofed/schema.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace mftest {

using nlohmann::json;
using namespace mammofed;

int uniform(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

double uniform_real(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

bool coin(Rng& rng, double p) { return std::bernoulli_distribution(p)(rng); }

namespace {

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
    return v[static_cast<std::size_t>(uniform(rng, 0, static_cast<int>(v.size()) - 1))];
}

std::string random_date(Rng& rng) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", uniform(rng, 1995, 2010), uniform(rng, 1, 12), uniform(rng, 1, 28));
    return buf;
}

// Coarse grids so that equality literals actually hit stored values.
double density(Rng& rng) { return uniform(rng, 0, 20) / 20.0; }
double feature(Rng& rng) { return uniform(rng, 0, 10) / 10.0; }

json rect(Rng& rng) {
    int x0 = uniform(rng, 0, 60), y0 = uniform(rng, 0, 60);
    return json::array({x0, y0, x0 + uniform(rng, 1, 25), y0 + uniform(rng, 1, 25)});
}

} // namespace

std::vector<json> random_site_records(Rng& rng, const std::string& site, std::size_t budget) {
    std::vector<json> out;
    int np = 0, ns = 0, ni = 0, na = 0;
    while (out.size() < budget) {
        json p{{"entity", "patient"},
               {"patient_id", site + "-p" + std::to_string(np++)},
               {"age_years", uniform(rng, 25, 90)},
               {"hrt", coin(rng, 0.4)}};
        int children = uniform(rng, 0, 6);
        p["children_count"] = children;
        if (children > 0 && coin(rng, 0.8)) {
            int first = uniform(rng, 16, 35);
            p["age_first_pregnancy"] = first;
            if (coin(rng, 0.8)) p["age_last_pregnancy"] = first + uniform(rng, 0, 10);
        }
        if (p["hrt"].get<bool>() && coin(rng, 0.7)) p["hrt_start"] = random_date(rng);
        if (coin(rng)) p["site_id"] = site;
        const std::string pid = p["patient_id"];
        out.push_back(std::move(p));

        int studies = uniform(rng, 0, 3);
        for (int s = 0; s < studies && out.size() < budget; ++s) {
            json st{{"entity", "study"},
                    {"study_id", site + "-s" + std::to_string(ns++)},
                    {"patient_id", pid},
                    {"study_date", random_date(rng)}};
            json readers = json::array();
            for (int r = uniform(rng, 0, 3); r > 0; --r) readers.push_back("r" + std::to_string(uniform(rng, 1, 6)));
            st["reader_ids"] = readers;
            int d = uniform(rng, 0, 3);
            if (d == 1) st["diagnosis"] = "normal";
            if (d == 2) st["diagnosis"] = "benign";
            if (d == 3) {
                st["diagnosis"] = "cancer";
                st["diagnosed_laterality"] = coin(rng) ? "left" : "right";
                if (coin(rng, 0.7)) st["therapy_outcome"] = coin(rng, 0.6) ? "successful" : "unsuccessful";
            }
            const std::string sid = st["study_id"];
            out.push_back(std::move(st));

            std::vector<std::pair<const char*, const char*>> slots{{"L", "MLO"}, {"R", "MLO"}, {"L", "CC"}, {"R", "CC"}};
            std::shuffle(slots.begin(), slots.end(), rng);
            int images = uniform(rng, 0, 4);
            for (int i = 0; i < images && out.size() < budget; ++i) {
                json fv = json::array();
                for (int k = 0; k < 8; ++k) fv.push_back(feature(rng));
                json im{{"entity", "image"},
                        {"image_id", site + "-i" + std::to_string(ni++)},
                        {"study_id", sid},
                        {"laterality", slots[static_cast<std::size_t>(i)].first},
                        {"view", slots[static_cast<std::size_t>(i)].second},
                        {"breast_area_mm2", uniform(rng, 50, 400) * 100.0},
                        {"mean_density", density(rng)},
                        {"feature_vector", fv}};
                const std::string iid = im["image_id"];
                out.push_back(std::move(im));

                int annotations = uniform(rng, 0, 3);
                for (int a = 0; a < annotations && out.size() < budget; ++a) {
                    bool mass = coin(rng);
                    json an{{"entity", "annotation"},
                            {"annotation_id", site + "-a" + std::to_string(na++)},
                            {"image_id", iid},
                            {"kind", mass ? "mass" : "microcalcification_cluster"}};
                    an["author"] = coin(rng, 0.3) ? std::string("cad") : "radiologist:r" + std::to_string(uniform(rng, 1, 6));
                    json regions = json::array();
                    for (int r = uniform(rng, 0, 3); r > 0; --r) regions.push_back(rect(rng));
                    an["regions"] = regions;
                    if (!mass) an["microcalc_count"] = uniform(rng, 0, 40);
                    if (coin(rng, 0.6)) an["session_length_min"] = uniform(rng, 10, 240) / 2.0;
                    if (coin(rng, 0.6)) an["serial_order"] = uniform(rng, 1, 20);
                    if (coin(rng, 0.6)) an["reading"] = coin(rng) ? "first" : "second";
                    if (coin(rng, 0.6)) an["author_experience_years"] = uniform(rng, 0, 40);
                    out.push_back(std::move(an));
                }
            }
        }
    }
    return out;
}

std::string to_jsonl(const std::vector<json>& records) {
    std::string out;
    for (const auto& r : records) out += r.dump() + "\n";
    return out;
}

namespace {

std::vector<const AttributeInfo*> comparable_attributes(Entity target) {
    std::vector<const AttributeInfo*> out;
    for (const auto& a : attribute_vocabulary()) {
        if (a.comparable() && reachable(target, a.entity)) out.push_back(&a);
    }
    return out;
}

Literal random_number_for(Rng& rng, std::string_view path) {
    if (path == "patient.age_years") return double(uniform(rng, 25, 90));
    if (path == "patient.children_count") return double(uniform(rng, 0, 6));
    if (path == "patient.age_first_pregnancy" || path == "patient.age_last_pregnancy") return double(uniform(rng, 16, 45));
    if (path == "image.breast_area_mm2") return uniform(rng, 50, 400) * 100.0;
    if (path == "image.mean_density") return density(rng);
    if (path == "annotation.microcalc_count") return double(uniform(rng, 0, 40));
    if (path == "annotation.session_length_min") return uniform(rng, 10, 240) / 2.0;
    if (path == "annotation.serial_order") return double(uniform(rng, 1, 20));
    return double(uniform(rng, 0, 40));
}

Literal random_string_for(Rng& rng, const AttributeInfo& a, const QueryGenOptions& opts) {
    if (a.path == "annotation.author") {
        return coin(rng, 0.3) ? std::string("cad") : "radiologist:r" + std::to_string(uniform(rng, 1, 6));
    }
    if (a.path == "patient.site_id") return "s" + std::to_string(uniform(rng, 1, 5));
    if (!opts.sample_ids.empty() && coin(rng, 0.7)) return pick(rng, opts.sample_ids);
    return "s1-x" + std::to_string(uniform(rng, 0, 9));
}

Literal random_literal(Rng& rng, const AttributeInfo& a, const QueryGenOptions& opts) {
    switch (a.type) {
    case AttrType::integer:
    case AttrType::real: return random_number_for(rng, a.path);
    case AttrType::boolean: return coin(rng);
    case AttrType::date: return random_date(rng);
    case AttrType::enumeration: return std::string(pick(rng, a.enum_values));
    default: return random_string_for(rng, a, opts);
    }
}

bool literal_lt(const Literal& a, const Literal& b) { return a < b; }

Predicate random_cmp(Rng& rng, Entity target, const QueryGenOptions& opts) {
    auto attrs = comparable_attributes(target);
    const AttributeInfo& a = *pick(rng, attrs);
    bool ordered = a.type == AttrType::integer || a.type == AttrType::real || a.type == AttrType::date ||
                   a.type == AttrType::string;
    std::vector<CmpOp> ops{CmpOp::eq, CmpOp::ne, CmpOp::in};
    if (ordered) ops.insert(ops.end(), {CmpOp::lt, CmpOp::le, CmpOp::gt, CmpOp::ge, CmpOp::between});
    CmpOp op = pick(rng, ops);
    std::vector<Literal> values;
    if (op == CmpOp::between) {
        Literal x = random_literal(rng, a, opts), y = random_literal(rng, a, opts);
        if (literal_lt(y, x)) std::swap(x, y);
        values = {x, y};
    } else if (op == CmpOp::in) {
        for (int n = uniform(rng, 1, 4); n > 0; --n) values.push_back(random_literal(rng, a, opts));
    } else {
        values = {random_literal(rng, a, opts)};
    }
    return compare(std::string(a.path), op, std::move(values));
}

Predicate random_derived(Rng& rng, const QueryGenOptions& opts) {
    std::vector<CmpOp> ops{CmpOp::ge, CmpOp::gt, CmpOp::lt, CmpOp::le, CmpOp::between};
    CmpOp op = pick(rng, ops);
    if (coin(rng)) {
        json params = json::object();
        if (!opts.reference_images.empty() && coin(rng, 0.6)) {
            params["ref"] = pick(rng, opts.reference_images);
        } else if (coin(rng, 0.1)) {
            params["ref"] = "no-such-image";
        } else {
            json v = json::array();
            for (int k = 0; k < 8; ++k) v.push_back(feature(rng));
            params["vector"] = v;
        }
        int view = uniform(rng, 0, 3);
        if (view == 1) params["view"] = "MLO";
        if (view == 2) params["view"] = "CC";
        if (view == 3) params["view"] = "both";
        double lo = uniform(rng, 15, 70) / 100.0;
        if (op == CmpOp::between) return derived("find_one_like_it", params, op, {lo, lo + uniform(rng, 5, 40) / 100.0});
        return derived("find_one_like_it", params, op, {lo});
    }
    double lo = uniform(rng, 0, 12) / 20.0;
    if (op == CmpOp::between) return derived("density_asymmetry", json::object(), op, {lo, lo + uniform(rng, 0, 8) / 20.0});
    return derived("density_asymmetry", json::object(), op, {lo});
}

} // namespace

Predicate random_predicate(Rng& rng, Entity target, const QueryGenOptions& opts, int depth) {
    bool leaf = depth >= opts.max_depth || coin(rng, depth == 1 ? 0.2 : 0.45);
    if (leaf) {
        if (opts.derived && coin(rng, 0.2)) return random_derived(rng, opts);
        return random_cmp(rng, target, opts);
    }
    int kind = uniform(rng, 0, 4);
    if (kind == 4) return negate(random_predicate(rng, target, opts, depth + 1));
    std::vector<Predicate> children;
    for (int n = uniform(rng, 0, 3); n > 0; --n) children.push_back(random_predicate(rng, target, opts, depth + 1));
    return kind <= 1 ? all_of(std::move(children)) : any_of(std::move(children));
}

FormalQuery random_query(Rng& rng, const QueryGenOptions& opts) {
    FormalQuery q;
    q.target = static_cast<Entity>(uniform(rng, 0, 3));
    q.predicate = random_predicate(rng, q.target, opts);
    if (coin(rng, 0.3)) {
        std::vector<std::string> proj;
        for (const auto& a : attribute_vocabulary()) {
            if (reachable(q.target, a.entity) && coin(rng, 0.3)) proj.emplace_back(a.path);
        }
        q.projection = proj;
    }
    return q;
}

} // namespace mftest
