#include "mammofed/metadata.hpp"

#include "mammofed/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>

namespace mammofed {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Dates and enums
// ---------------------------------------------------------------------------

namespace {

bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

int days_in_month(int y, int m) {
    static constexpr std::array<int, 12> kDays{31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    return m == 2 && is_leap(y) ? 29 : kDays[static_cast<std::size_t>(m - 1)];
}

template <typename E, std::size_t N>
std::optional<E> enum_from(std::string_view s, const std::array<E, N>& values) {
    for (E v : values) {
        if (to_string(v) == s) {
            return v;
        }
    }
    return std::nullopt;
}

} // namespace

std::optional<Date> Date::parse(std::string_view text) {
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
        return std::nullopt;
    }
    auto num = [&](std::size_t pos, std::size_t len) -> std::optional<int> {
        int value = 0;
        auto first = text.data() + pos;
        auto [ptr, ec] = std::from_chars(first, first + len, value);
        if (ec != std::errc{} || ptr != first + len) {
            return std::nullopt;
        }
        return value;
    };
    auto y = num(0, 4);
    auto m = num(5, 2);
    auto d = num(8, 2);
    if (!y || !m || !d || *m < 1 || *m > 12 || *d < 1 || *d > days_in_month(*y, *m)) {
        return std::nullopt;
    }
    return Date{*y, *m, *d};
}

std::string Date::to_string() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", year, month, day);
    return buf;
}

std::string_view to_string(Entity e) {
    switch (e) {
    case Entity::patients: return "patients";
    case Entity::studies: return "studies";
    case Entity::images: return "images";
    case Entity::annotations: return "annotations";
    }
    return "?";
}

std::optional<Entity> entity_from_string(std::string_view s) {
    return enum_from(s, std::array{Entity::patients, Entity::studies, Entity::images, Entity::annotations});
}

std::string_view to_string(Diagnosis v) {
    switch (v) {
    case Diagnosis::normal: return "normal";
    case Diagnosis::benign: return "benign";
    case Diagnosis::cancer: return "cancer";
    }
    return "?";
}

std::string_view to_string(Side v) { return v == Side::left ? "left" : "right"; }

std::string_view to_string(TherapyOutcome v) {
    return v == TherapyOutcome::successful ? "successful" : "unsuccessful";
}

std::string_view to_string(ImageLaterality v) { return v == ImageLaterality::L ? "L" : "R"; }

std::string_view to_string(View v) { return v == View::MLO ? "MLO" : "CC"; }

std::string_view to_string(AnnotationKind v) {
    return v == AnnotationKind::mass ? "mass" : "microcalcification_cluster";
}

std::string_view to_string(Reading v) { return v == Reading::first ? "first" : "second"; }

std::string Author::to_string() const {
    return radiologist_id ? "radiologist:" + *radiologist_id : std::string("cad");
}

std::optional<Author> Author::parse(std::string_view text) {
    if (text == "cad") {
        return Author{};
    }
    constexpr std::string_view prefix = "radiologist:";
    if (text.starts_with(prefix) && text.size() > prefix.size()) {
        return Author{std::string(text.substr(prefix.size()))};
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Snapshot lookups
// ---------------------------------------------------------------------------

namespace {

template <typename Map>
auto find_ptr(const Map& m, const std::string& id) -> const typename Map::mapped_type* {
    auto it = m.find(id);
    return it == m.end() ? nullptr : &it->second;
}

} // namespace

const PatientRecord* StoreSnapshot::patient(const std::string& id) const { return find_ptr(patients, id); }
const StudyRecord* StoreSnapshot::study(const std::string& id) const { return find_ptr(studies, id); }
const ImageRecord* StoreSnapshot::image(const std::string& id) const { return find_ptr(images, id); }
const AnnotationRecord* StoreSnapshot::annotation(const std::string& id) const {
    return find_ptr(annotations, id);
}

std::optional<EntityRecord> get_entity(const StoreSnapshot& snap, Entity entity, const std::string& id) {
    switch (entity) {
    case Entity::patients:
        if (auto* r = snap.patient(id)) return EntityRecord{*r};
        break;
    case Entity::studies:
        if (auto* r = snap.study(id)) return EntityRecord{*r};
        break;
    case Entity::images:
        if (auto* r = snap.image(id)) return EntityRecord{*r};
        break;
    case Entity::annotations:
        if (auto* r = snap.annotation(id)) return EntityRecord{*r};
        break;
    }
    return std::nullopt;
}

std::optional<EntityRecord> get_entity(const SiteStore& store, Entity entity, const std::string& id) {
    return get_entity(*store.snapshot(), entity, id);
}

// ---------------------------------------------------------------------------
// Ingestion line parsing
// ---------------------------------------------------------------------------

namespace {

struct Rejected {
    std::string reason;
};

[[noreturn]] void reject(std::string reason) { throw Rejected{std::move(reason)}; }

/// Reads fields off one JSON object, tracking which ones were consumed.
class FieldReader {
public:
    explicit FieldReader(const json& obj) : obj_(obj) {}

    const json* raw(const char* name) {
        seen_.insert(name);
        auto it = obj_.find(name);
        if (it == obj_.end() || it->is_null()) {
            return nullptr;
        }
        return &*it;
    }

    std::string id(const char* name) {
        auto s = opt_string(name);
        if (!s || s->empty()) {
            reject(std::string("missing ") + name);
        }
        return *s;
    }

    std::optional<std::string> opt_string(const char* name) {
        const json* v = raw(name);
        if (!v) return std::nullopt;
        if (!v->is_string()) reject(std::string("invalid ") + name + ": expected string");
        auto s = v->get<std::string>();
        if (std::any_of(s.begin(), s.end(), [](char c) { return static_cast<unsigned char>(c) < 0x20; })) {
            reject(std::string("invalid ") + name + ": control character");
        }
        return s;
    }

    std::optional<long long> opt_int(const char* name) {
        const json* v = raw(name);
        if (!v) return std::nullopt;
        if (!v->is_number_integer()) reject(std::string("invalid ") + name + ": expected integer");
        return v->get<long long>();
    }

    long long req_int(const char* name) {
        auto v = opt_int(name);
        if (!v) reject(std::string("missing ") + name);
        return *v;
    }

    std::optional<double> opt_real(const char* name) {
        const json* v = raw(name);
        if (!v) return std::nullopt;
        if (!v->is_number()) reject(std::string("invalid ") + name + ": expected number");
        double d = v->get<double>();
        if (!std::isfinite(d)) reject(std::string("invalid ") + name + ": not finite");
        return d;
    }

    double req_real(const char* name) {
        auto v = opt_real(name);
        if (!v) reject(std::string("missing ") + name);
        return *v;
    }

    bool req_bool(const char* name) {
        const json* v = raw(name);
        if (!v) reject(std::string("missing ") + name);
        if (!v->is_boolean()) reject(std::string("invalid ") + name + ": expected boolean");
        return v->get<bool>();
    }

    std::optional<Date> opt_date(const char* name) {
        auto s = opt_string(name);
        if (!s) return std::nullopt;
        auto d = Date::parse(*s);
        if (!d) reject(std::string("invalid ") + name + ": expected YYYY-MM-DD");
        return d;
    }

    template <typename E, std::size_t N>
    std::optional<E> opt_enum(const char* name, const std::array<E, N>& values) {
        auto s = opt_string(name);
        if (!s) return std::nullopt;
        auto e = enum_from(*s, values);
        if (!e) reject(std::string("invalid ") + name + ": \"" + *s + "\"");
        return e;
    }

    template <typename E, std::size_t N>
    E req_enum(const char* name, const std::array<E, N>& values) {
        auto e = opt_enum(name, values);
        if (!e) reject(std::string("missing ") + name);
        return *e;
    }

    void finish() const {
        for (auto it = obj_.begin(); it != obj_.end(); ++it) {
            if (it.key() != "entity" && !seen_.contains(it.key())) {
                reject("unknown field " + it.key());
            }
        }
    }

private:
    const json& obj_;
    std::set<std::string> seen_;
};

int checked_int(long long v, long long lo, long long hi, const char* name) {
    if (v < lo || v > hi) {
        reject(std::string("invalid ") + name + ": out of range");
    }
    return static_cast<int>(v);
}

std::optional<int> checked_opt_int(std::optional<long long> v, long long lo, long long hi, const char* name) {
    if (!v) return std::nullopt;
    return checked_int(*v, lo, hi, name);
}

constexpr std::array kDiagnoses{Diagnosis::normal, Diagnosis::benign, Diagnosis::cancer};
constexpr std::array kSides{Side::left, Side::right};
constexpr std::array kOutcomes{TherapyOutcome::successful, TherapyOutcome::unsuccessful};
constexpr std::array kLateralities{ImageLaterality::L, ImageLaterality::R};
constexpr std::array kViews{View::MLO, View::CC};
constexpr std::array kKinds{AnnotationKind::mass, AnnotationKind::microcalcification_cluster};
constexpr std::array kReadings{Reading::first, Reading::second};

constexpr long long kMaxCount = 1'000'000;

PatientRecord parse_patient(FieldReader& f, const SiteId& site) {
    PatientRecord r;
    r.patient_id = f.id("patient_id");
    r.age_years = checked_int(f.req_int("age_years"), 0, 130, "age_years");
    r.children_count = checked_int(f.req_int("children_count"), 0, kMaxCount, "children_count");
    r.age_first_pregnancy = checked_opt_int(f.opt_int("age_first_pregnancy"), 0, 130, "age_first_pregnancy");
    r.age_last_pregnancy = checked_opt_int(f.opt_int("age_last_pregnancy"), 0, 130, "age_last_pregnancy");
    r.hrt = f.req_bool("hrt");
    r.hrt_start = f.opt_date("hrt_start");
    r.site_id = f.opt_string("site_id").value_or(site);
    if (r.site_id != site) {
        reject("site mismatch: " + r.site_id);
    }
    if (r.children_count == 0 && (r.age_first_pregnancy || r.age_last_pregnancy)) {
        reject("pregnancy ages present with children_count 0");
    }
    if (r.age_first_pregnancy && r.age_last_pregnancy && *r.age_first_pregnancy > *r.age_last_pregnancy) {
        reject("age_first_pregnancy after age_last_pregnancy");
    }
    return r;
}

StudyRecord parse_study(FieldReader& f) {
    StudyRecord r;
    r.study_id = f.id("study_id");
    r.patient_id = f.id("patient_id");
    auto date = f.opt_date("study_date");
    if (!date) reject("missing study_date");
    r.study_date = *date;
    if (const json* readers = f.raw("reader_ids")) {
        if (!readers->is_array()) reject("invalid reader_ids: expected array");
        for (const auto& id : *readers) {
            if (!id.is_string() || id.get<std::string>().empty()) reject("invalid reader_ids: expected strings");
            r.reader_ids.push_back(id.get<std::string>());
        }
    }
    r.diagnosis = f.opt_enum("diagnosis", kDiagnoses);
    r.diagnosed_laterality = f.opt_enum("diagnosed_laterality", kSides);
    r.therapy_outcome = f.opt_enum("therapy_outcome", kOutcomes);
    bool cancer = r.diagnosis == Diagnosis::cancer;
    if (cancer != r.diagnosed_laterality.has_value()) {
        reject("diagnosed_laterality must be present iff diagnosis is cancer");
    }
    return r;
}

ImageRecord parse_image(FieldReader& f) {
    ImageRecord r;
    r.image_id = f.id("image_id");
    r.study_id = f.id("study_id");
    r.laterality = f.req_enum("laterality", kLateralities);
    r.view = f.req_enum("view", kViews);
    r.breast_area_mm2 = f.req_real("breast_area_mm2");
    if (r.breast_area_mm2 <= 0) reject("invalid breast_area_mm2: must be positive");
    r.mean_density = f.req_real("mean_density");
    if (r.mean_density < 0 || r.mean_density > 1) reject("invalid mean_density: outside [0,1]");
    const json* fv = f.raw("feature_vector");
    if (!fv) reject("missing feature_vector");
    if (!fv->is_array() || fv->size() != kFeatureLength) reject("invalid feature_vector: expected 8 numbers");
    for (std::size_t i = 0; i < kFeatureLength; ++i) {
        const json& x = (*fv)[i];
        if (!x.is_number() || !std::isfinite(x.get<double>())) reject("invalid feature_vector: expected 8 numbers");
        r.feature_vector[i] = x.get<double>();
    }
    return r;
}

AnnotationRecord parse_annotation(FieldReader& f) {
    AnnotationRecord r;
    r.annotation_id = f.id("annotation_id");
    r.image_id = f.id("image_id");
    auto author_text = f.opt_string("author");
    if (!author_text) reject("missing author");
    auto author = Author::parse(*author_text);
    if (!author) reject("invalid author: \"" + *author_text + "\"");
    r.author = *author;
    r.kind = f.req_enum("kind", kKinds);
    if (const json* regions = f.raw("regions")) {
        if (!regions->is_array()) reject("invalid regions: expected array");
        for (const auto& rect : *regions) {
            if (!rect.is_array() || rect.size() != 4 ||
                !std::all_of(rect.begin(), rect.end(), [](const json& x) { return x.is_number(); })) {
                reject("invalid regions: expected [x0,y0,x1,y1]");
            }
            Rect rc{rect[0].get<double>(), rect[1].get<double>(), rect[2].get<double>(), rect[3].get<double>()};
            if (!std::isfinite(rc.x0) || !std::isfinite(rc.y0) || !std::isfinite(rc.x1) || !std::isfinite(rc.y1) ||
                !(rc.x0 < rc.x1) || !(rc.y0 < rc.y1)) {
                reject("invalid regions: rectangle without positive area");
            }
            r.regions.push_back(rc);
        }
    }
    r.microcalc_count = checked_opt_int(f.opt_int("microcalc_count"), 0, kMaxCount, "microcalc_count");
    if ((r.kind == AnnotationKind::microcalcification_cluster) != r.microcalc_count.has_value()) {
        reject("microcalc_count must be present iff kind is microcalcification_cluster");
    }
    r.session_length_min = f.opt_real("session_length_min");
    if (r.session_length_min && *r.session_length_min < 0) reject("invalid session_length_min: negative");
    r.serial_order = checked_opt_int(f.opt_int("serial_order"), 1, kMaxCount, "serial_order");
    r.reading = f.opt_enum("reading", kReadings);
    r.author_experience_years =
        checked_opt_int(f.opt_int("author_experience_years"), 0, 100, "author_experience_years");
    return r;
}

void index_child(std::map<std::string, std::vector<std::string>>& index, const std::string& parent,
                 const std::string& child) {
    auto& ids = index[parent];
    ids.insert(std::upper_bound(ids.begin(), ids.end(), child), child);
}

/// Validates and applies one line against `snap`. Throws Rejected.
void apply_line(StoreSnapshot& snap, std::string_view line) {
    json obj;
    try {
        obj = json::parse(line);
    } catch (const json::parse_error& e) {
        reject(std::string("malformed json at offset ") + std::to_string(e.byte > 0 ? e.byte - 1 : 0));
    }
    if (!obj.is_object()) reject("malformed json: expected object");
    auto ent = obj.find("entity");
    if (ent == obj.end() || !ent->is_string()) reject("missing entity");
    const std::string kind = ent->get<std::string>();
    FieldReader f(obj);

    if (kind == "patient") {
        auto r = parse_patient(f, snap.site_id);
        f.finish();
        if (snap.patients.contains(r.patient_id)) reject("duplicate");
        auto id = r.patient_id;
        snap.patients.emplace(id, std::move(r));
    } else if (kind == "study") {
        auto r = parse_study(f);
        f.finish();
        if (snap.studies.contains(r.study_id)) reject("duplicate");
        if (!snap.patients.contains(r.patient_id)) reject("dangling reference patient_id=" + r.patient_id);
        index_child(snap.studies_by_patient, r.patient_id, r.study_id);
        auto id = r.study_id;
        snap.studies.emplace(id, std::move(r));
    } else if (kind == "image") {
        auto r = parse_image(f);
        f.finish();
        if (snap.images.contains(r.image_id)) reject("duplicate");
        if (!snap.studies.contains(r.study_id)) reject("dangling reference study_id=" + r.study_id);
        if (auto it = snap.images_by_study.find(r.study_id); it != snap.images_by_study.end()) {
            for (const auto& other : it->second) {
                const auto& o = snap.images.at(other);
                if (o.laterality == r.laterality && o.view == r.view) {
                    reject("duplicate view " + std::string(to_string(r.laterality)) +
                           std::string(to_string(r.view)) + " in study " + r.study_id);
                }
            }
        }
        index_child(snap.images_by_study, r.study_id, r.image_id);
        auto id = r.image_id;
        snap.images.emplace(id, std::move(r));
    } else if (kind == "annotation") {
        auto r = parse_annotation(f);
        f.finish();
        if (snap.annotations.contains(r.annotation_id)) reject("duplicate");
        if (!snap.images.contains(r.image_id)) reject("dangling reference image_id=" + r.image_id);
        index_child(snap.annotations_by_image, r.image_id, r.annotation_id);
        auto id = r.annotation_id;
        snap.annotations.emplace(id, std::move(r));
    } else {
        reject("unknown entity \"" + kind + "\"");
    }
}

bool blank(std::string_view line) {
    return std::all_of(line.begin(), line.end(), [](char c) { return c == ' ' || c == '\t' || c == '\r'; });
}

} // namespace

// ---------------------------------------------------------------------------
// SiteStore
// ---------------------------------------------------------------------------

SiteStore::SiteStore(SiteId site_id) : site_id_(std::move(site_id)) {
    auto snap = std::make_shared<StoreSnapshot>();
    snap->site_id = site_id_;
    current_ = std::move(snap);
}

std::shared_ptr<const StoreSnapshot> SiteStore::snapshot() const {
    std::lock_guard lock(read_mutex_);
    return current_;
}

std::uint64_t SiteStore::data_version() const { return snapshot()->version; }

IngestReport SiteStore::ingest(std::istream& source) {
    std::lock_guard writer(write_mutex_);
    auto base = snapshot();
    std::optional<StoreSnapshot> next;  // copied lazily on the first non-blank line

    IngestReport report;
    std::string line;
    int line_no = 0;
    while (std::getline(source, line)) {
        ++line_no;
        if (blank(line)) {
            continue;
        }
        if (!next) {
            next.emplace(*base);
        }
        // Per-line atomicity: validation happens before any table is touched, and
        // apply_line only inserts after every check passed.
        try {
            apply_line(*next, line);
            ++report.accepted;
        } catch (const Rejected& r) {
            report.rejected.emplace_back(line_no, r.reason);
        }
    }
    if (source.bad()) {
        throw IoError("failed reading ingest source at line " + std::to_string(line_no + 1));
    }
    if (report.accepted > 0) {
        next->version = base->version + 1;
        report.new_version = next->version;
        auto published = std::make_shared<const StoreSnapshot>(std::move(*next));
        std::lock_guard lock(read_mutex_);
        current_ = std::move(published);
    } else {
        report.new_version = base->version;
    }
    return report;
}

IngestReport SiteStore::ingest_text(std::string_view jsonl) {
    std::istringstream in{std::string(jsonl)};
    return ingest(in);
}

IngestReport ingest_file(SiteStore& store, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    return store.ingest(in);
}

json to_json(const IngestReport& report) {
    json rejected = json::array();
    for (const auto& [line, reason] : report.rejected) {
        rejected.push_back({{"line", line}, {"reason", reason}});
    }
    return {{"accepted", report.accepted}, {"rejected", rejected}, {"new_version", report.new_version}};
}

// ---------------------------------------------------------------------------
// Record -> JSON
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void put_opt(json& j, const char* name, const std::optional<T>& v) {
    if (v) j[name] = *v;
}

} // namespace

json to_json(const PatientRecord& r) {
    json j{{"entity", "patient"},
           {"patient_id", r.patient_id},
           {"age_years", r.age_years},
           {"children_count", r.children_count},
           {"hrt", r.hrt},
           {"site_id", r.site_id}};
    put_opt(j, "age_first_pregnancy", r.age_first_pregnancy);
    put_opt(j, "age_last_pregnancy", r.age_last_pregnancy);
    if (r.hrt_start) j["hrt_start"] = r.hrt_start->to_string();
    return j;
}

json to_json(const StudyRecord& r) {
    json j{{"entity", "study"},
           {"study_id", r.study_id},
           {"patient_id", r.patient_id},
           {"study_date", r.study_date.to_string()},
           {"reader_ids", r.reader_ids}};
    if (r.diagnosis) j["diagnosis"] = to_string(*r.diagnosis);
    if (r.diagnosed_laterality) j["diagnosed_laterality"] = to_string(*r.diagnosed_laterality);
    if (r.therapy_outcome) j["therapy_outcome"] = to_string(*r.therapy_outcome);
    return j;
}

json to_json(const ImageRecord& r) {
    return {{"entity", "image"},
            {"image_id", r.image_id},
            {"study_id", r.study_id},
            {"laterality", to_string(r.laterality)},
            {"view", to_string(r.view)},
            {"breast_area_mm2", r.breast_area_mm2},
            {"mean_density", r.mean_density},
            {"feature_vector", r.feature_vector}};
}

json to_json(const AnnotationRecord& r) {
    json regions = json::array();
    for (const auto& rc : r.regions) {
        regions.push_back({rc.x0, rc.y0, rc.x1, rc.y1});
    }
    json j{{"entity", "annotation"},
           {"annotation_id", r.annotation_id},
           {"image_id", r.image_id},
           {"author", r.author.to_string()},
           {"kind", to_string(r.kind)},
           {"regions", regions}};
    put_opt(j, "microcalc_count", r.microcalc_count);
    put_opt(j, "session_length_min", r.session_length_min);
    put_opt(j, "serial_order", r.serial_order);
    if (r.reading) j["reading"] = to_string(*r.reading);
    put_opt(j, "author_experience_years", r.author_experience_years);
    return j;
}

json to_json(const EntityRecord& r) {
    return std::visit([](const auto& rec) { return to_json(rec); }, r);
}

} // namespace mammofed
