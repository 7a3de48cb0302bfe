#include "mammofed/clinical.hpp"

#include "mammofed/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>

namespace mammofed {

// ---------------------------------------------------------------------------
// Reader allocation
// ---------------------------------------------------------------------------

Xorshift64Star::Xorshift64Star(std::uint64_t seed) : state_(seed == 0 ? 0x9E3779B97F4A7C15ULL : seed) {}

std::uint64_t Xorshift64Star::next() {
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545F4914F6CDD1DULL;
}

std::pair<int, int> ReaderPair::readers() const {
    static constexpr std::array<std::pair<int, int>, 3> kPairs{{{1, 2}, {1, 3}, {2, 3}}};
    return kPairs.at(static_cast<std::size_t>(index));
}

std::string ReaderPair::to_string() const {
    auto [a, b] = readers();
    return "R" + std::to_string(a) + "+R" + std::to_string(b);
}

AllocationState::AllocationState(std::uint64_t seed) : seed_(seed), rng_(seed) {}

ReaderPair AllocationState::allocate(const std::string& patient_id) {
    if (assigned_.contains(patient_id)) throw AllocationError("patient " + patient_id + " is already allocated");
    if (block_.empty()) {
        block_ = {0, 1, 2};
        for (std::size_t i = 2; i >= 1; --i) {
            auto j = static_cast<std::size_t>(rng_.next() % (i + 1));
            std::swap(block_[i], block_[j]);
        }
    }
    ReaderPair pair{block_.front()};
    block_.erase(block_.begin());
    ++counts_[static_cast<std::size_t>(pair.index)];
    assigned_.insert(patient_id);
    log_.emplace_back(patient_id, pair);
    return pair;
}

// ---------------------------------------------------------------------------
// Disagreement metrics
// ---------------------------------------------------------------------------

namespace {

bool covers(const std::vector<Rect>& regions, double x, double y) {
    return std::any_of(regions.begin(), regions.end(),
                       [&](const Rect& r) { return r.x0 <= x && x <= r.x1 && r.y0 <= y && y <= r.y1; });
}

std::vector<double> edges(const std::vector<Rect>& a, const std::vector<Rect>& b, bool horizontal) {
    std::vector<double> out;
    for (const auto* set : {&a, &b}) {
        for (const Rect& r : *set) {
            out.push_back(horizontal ? r.x0 : r.y0);
            out.push_back(horizontal ? r.x1 : r.y1);
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

/// Sums the area of every compressed grid cell where `keep(in_a, in_b)` holds.
template <typename Keep>
double grid_area(const std::vector<Rect>& a, const std::vector<Rect>& b, Keep keep) {
    std::vector<double> xs = edges(a, b, true);
    std::vector<double> ys = edges(a, b, false);
    double area = 0;
    for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
        double cx = (xs[i] + xs[i + 1]) / 2;
        for (std::size_t j = 0; j + 1 < ys.size(); ++j) {
            double cy = (ys[j] + ys[j + 1]) / 2;
            if (keep(covers(a, cx, cy), covers(b, cx, cy))) area += (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j]);
        }
    }
    return area;
}

} // namespace

double mass_disagreement(const std::vector<Rect>& a, const std::vector<Rect>& b) {
    return grid_area(a, b, [](bool in_a, bool in_b) { return in_a != in_b; });
}

double union_area(const std::vector<Rect>& regions) {
    return grid_area(regions, {}, [](bool in_a, bool) { return in_a; });
}

int microcalc_disagreement(int count_a, int count_b) { return std::abs(count_a - count_b); }

std::vector<DisagreementRow> disagreement_report(const std::vector<AnnotationRecord>& annotations) {
    struct ImageMarks {
        std::map<std::string, ReaderMarks> readers;
        std::optional<ReaderMarks> cad;
    };
    std::map<std::string, ImageMarks> by_image;
    for (const auto& a : annotations) {
        ImageMarks& image = by_image[a.image_id];
        ReaderMarks& marks = a.author.is_cad() ? (image.cad ? *image.cad : image.cad.emplace())
                                               : image.readers[*a.author.radiologist_id];
        if (a.kind == AnnotationKind::mass) {
            marks.mass_regions.insert(marks.mass_regions.end(), a.regions.begin(), a.regions.end());
        } else {
            marks.microcalc_count += a.microcalc_count.value_or(0);
        }
    }

    std::vector<DisagreementRow> rows;
    for (const auto& [image_id, image] : by_image) {
        for (auto a = image.readers.begin(); a != image.readers.end(); ++a) {
            for (auto b = std::next(a); b != image.readers.end(); ++b) {
                DisagreementRow row;
                row.image_id = image_id;
                row.reader_a = a->first;
                row.reader_b = b->first;
                row.mass_area_mm2 = mass_disagreement(a->second.mass_regions, b->second.mass_regions);
                row.microcalc_count_diff = microcalc_disagreement(a->second.microcalc_count, b->second.microcalc_count);
                if (image.cad) {
                    row.a_vs_cad_mass_area_mm2 = mass_disagreement(a->second.mass_regions, image.cad->mass_regions);
                    row.a_vs_cad_microcalc_diff =
                        microcalc_disagreement(a->second.microcalc_count, image.cad->microcalc_count);
                    row.b_vs_cad_mass_area_mm2 = mass_disagreement(b->second.mass_regions, image.cad->mass_regions);
                    row.b_vs_cad_microcalc_diff =
                        microcalc_disagreement(b->second.microcalc_count, image.cad->microcalc_count);
                }
                rows.push_back(std::move(row));
            }
        }
    }
    return rows;
}

std::string disagreement_csv(const std::vector<DisagreementRow>& rows) {
    auto opt = [](const auto& v) { return v ? format_number(static_cast<double>(*v)) : std::string(); };
    std::vector<std::vector<std::string>> body;
    for (const auto& r : rows) {
        body.push_back({r.image_id, r.reader_a, r.reader_b, format_number(r.mass_area_mm2),
                        std::to_string(r.microcalc_count_diff), opt(r.a_vs_cad_mass_area_mm2),
                        opt(r.a_vs_cad_microcalc_diff), opt(r.b_vs_cad_mass_area_mm2), opt(r.b_vs_cad_microcalc_diff)});
    }
    return to_csv({"image_id", "reader_a", "reader_b", "mass_area_mm2", "microcalc_count_diff",
                   "a_vs_cad_mass_area_mm2", "a_vs_cad_microcalc_diff", "b_vs_cad_mass_area_mm2",
                   "b_vs_cad_microcalc_diff"},
                  body);
}

// ---------------------------------------------------------------------------
// Epidemiology
// ---------------------------------------------------------------------------

std::vector<std::string> contralateral_cohort(const std::vector<StudyRecord>& studies) {
    std::map<std::string, std::vector<const StudyRecord*>> by_patient;
    for (const auto& s : studies) {
        if (s.diagnosis == Diagnosis::cancer && s.diagnosed_laterality) by_patient[s.patient_id].push_back(&s);
    }
    std::vector<std::string> cohort;
    for (auto& [patient, cancers] : by_patient) {
        // Earliest successfully treated cancer per side; any later opposite-side cancer qualifies.
        std::map<Side, Date> first_success;
        for (const StudyRecord* s : cancers) {
            if (s->therapy_outcome != TherapyOutcome::successful) continue;
            auto [it, inserted] = first_success.emplace(*s->diagnosed_laterality, s->study_date);
            if (!inserted) it->second = std::min(it->second, s->study_date);
        }
        bool found = std::any_of(cancers.begin(), cancers.end(), [&](const StudyRecord* s) {
            Side other = *s->diagnosed_laterality == Side::left ? Side::right : Side::left;
            auto it = first_success.find(other);
            return it != first_success.end() && it->second < s->study_date;
        });
        if (found) cohort.push_back(patient);
    }
    return cohort;
}

double pearson_correlation(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw CorrelationError("series lengths differ");
    if (xs.size() < 2) throw CorrelationError("correlation needs at least two points");
    auto n = static_cast<double>(xs.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double dx = xs[i] - mx;
        double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0 || syy == 0) throw CorrelationError("correlation undefined for a constant series");
    double r = sxy / std::sqrt(sxx * syy);
    return std::clamp(r, -1.0, 1.0);
}

std::map<std::string, double> patient_asymmetry(const std::vector<StudyRecord>& studies,
                                                const std::vector<ImageRecord>& images) {
    std::map<std::string, std::map<std::pair<View, ImageLaterality>, double>> densities;
    for (const auto& img : images) densities[img.study_id][{img.view, img.laterality}] = img.mean_density;

    std::map<std::string, double> out;
    for (const auto& s : studies) {
        auto it = densities.find(s.study_id);
        if (it == densities.end()) continue;
        for (View v : {View::MLO, View::CC}) {
            auto l = it->second.find({v, ImageLaterality::L});
            auto r = it->second.find({v, ImageLaterality::R});
            if (l == it->second.end() || r == it->second.end()) continue;
            double a = std::abs(l->second - r->second);
            auto [slot, inserted] = out.emplace(s.patient_id, a);
            if (!inserted) slot->second = std::max(slot->second, a);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Record reconstruction
// ---------------------------------------------------------------------------

namespace {

using FieldMap = std::map<std::string, std::string>;

FieldMap fields_of(const Row& row) { return {row.fields.begin(), row.fields.end()}; }

[[noreturn]] void bad_row(const Row& row, const std::string& what) {
    throw ParseError(0, std::string(to_string(row.entity)) + " " + row.id + ": " + what);
}

const std::string& need(const Row& row, const FieldMap& f, const std::string& path) {
    auto it = f.find(path);
    if (it == f.end()) bad_row(row, "missing " + path);
    return it->second;
}

const std::string* maybe(const FieldMap& f, const std::string& path) {
    auto it = f.find(path);
    return it == f.end() ? nullptr : &it->second;
}

double number(const Row& row, std::string_view text) {
    double v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) bad_row(row, "bad number \"" + std::string(text) + "\"");
    return v;
}

int integer(const Row& row, std::string_view text) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) bad_row(row, "bad integer \"" + std::string(text) + "\"");
    return v;
}

template <typename E, std::size_t N>
E enum_value(const Row& row, std::string_view text, const std::array<E, N>& values) {
    for (E v : values) {
        if (to_string(v) == text) return v;
    }
    bad_row(row, "bad value \"" + std::string(text) + "\"");
}

std::vector<std::string_view> split(std::string_view text, char sep) {
    std::vector<std::string_view> out;
    if (text.empty()) return out;
    for (;;) {
        auto pos = text.find(sep);
        out.push_back(text.substr(0, pos));
        if (pos == std::string_view::npos) return out;
        text.remove_prefix(pos + 1);
    }
}

} // namespace

std::vector<StudyRecord> studies_from_rows(const std::vector<Row>& rows) {
    std::vector<StudyRecord> out;
    for (const auto& row : rows) {
        if (row.entity != Entity::studies) continue;
        FieldMap f = fields_of(row);
        StudyRecord s;
        s.study_id = row.id;
        s.patient_id = need(row, f, "study.patient_id");
        auto date = Date::parse(need(row, f, "study.study_date"));
        if (!date) bad_row(row, "bad study_date");
        s.study_date = *date;
        if (const auto* r = maybe(f, "study.reader_ids")) {
            for (auto id : split(*r, ',')) s.reader_ids.emplace_back(id);
        }
        if (const auto* d = maybe(f, "study.diagnosis")) {
            s.diagnosis = enum_value(row, *d, std::array{Diagnosis::normal, Diagnosis::benign, Diagnosis::cancer});
        }
        if (const auto* l = maybe(f, "study.diagnosed_laterality")) {
            s.diagnosed_laterality = enum_value(row, *l, std::array{Side::left, Side::right});
        }
        if (const auto* t = maybe(f, "study.therapy_outcome")) {
            s.therapy_outcome = enum_value(row, *t, std::array{TherapyOutcome::successful, TherapyOutcome::unsuccessful});
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<ImageRecord> images_from_rows(const std::vector<Row>& rows) {
    std::vector<ImageRecord> out;
    for (const auto& row : rows) {
        if (row.entity != Entity::images) continue;
        FieldMap f = fields_of(row);
        ImageRecord img;
        img.image_id = row.id;
        img.study_id = need(row, f, "image.study_id");
        img.laterality = enum_value(row, need(row, f, "image.laterality"), std::array{ImageLaterality::L, ImageLaterality::R});
        img.view = enum_value(row, need(row, f, "image.view"), std::array{View::MLO, View::CC});
        img.breast_area_mm2 = number(row, need(row, f, "image.breast_area_mm2"));
        img.mean_density = number(row, need(row, f, "image.mean_density"));
        if (const auto* v = maybe(f, "image.feature_vector")) {
            auto parts = split(*v, ',');
            if (parts.size() != kFeatureLength) bad_row(row, "feature_vector needs 8 numbers");
            for (std::size_t i = 0; i < kFeatureLength; ++i) img.feature_vector[i] = number(row, parts[i]);
        }
        out.push_back(std::move(img));
    }
    return out;
}

std::vector<AnnotationRecord> annotations_from_rows(const std::vector<Row>& rows) {
    std::vector<AnnotationRecord> out;
    for (const auto& row : rows) {
        if (row.entity != Entity::annotations) continue;
        FieldMap f = fields_of(row);
        AnnotationRecord a;
        a.annotation_id = row.id;
        a.image_id = need(row, f, "annotation.image_id");
        auto author = Author::parse(need(row, f, "annotation.author"));
        if (!author) bad_row(row, "bad author");
        a.author = *author;
        a.kind = enum_value(row, need(row, f, "annotation.kind"),
                            std::array{AnnotationKind::mass, AnnotationKind::microcalcification_cluster});
        if (const auto* r = maybe(f, "annotation.regions")) {
            for (auto rect : split(*r, ';')) {
                auto c = split(rect, ',');
                if (c.size() != 4) bad_row(row, "bad region");
                a.regions.push_back({number(row, c[0]), number(row, c[1]), number(row, c[2]), number(row, c[3])});
            }
        }
        if (const auto* v = maybe(f, "annotation.microcalc_count")) a.microcalc_count = integer(row, *v);
        if (const auto* v = maybe(f, "annotation.session_length_min")) a.session_length_min = number(row, *v);
        if (const auto* v = maybe(f, "annotation.serial_order")) a.serial_order = integer(row, *v);
        if (const auto* v = maybe(f, "annotation.reading")) {
            a.reading = enum_value(row, *v, std::array{Reading::first, Reading::second});
        }
        if (const auto* v = maybe(f, "annotation.author_experience_years")) a.author_experience_years = integer(row, *v);
        out.push_back(std::move(a));
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::string csv_field(std::string_view value) {
    if (value.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(value);
    std::string out = "\"";
    for (char c : value) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string to_csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out += ',';
            out += csv_field(cells[i]);
        }
        out += "\r\n";
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out;
}

} // namespace mammofed
