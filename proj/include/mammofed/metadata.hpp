#pragma once

// Per-site mammogram metadata: record types, the embedded store and JSONL ingestion.

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

namespace mammofed {

using SiteId = std::string;

/// Calendar date; ordering is chronological.
struct Date {
    int year = 1970;
    int month = 1;
    int day = 1;

    /// Parses "YYYY-MM-DD" and rejects impossible calendar days.
    static std::optional<Date> parse(std::string_view text);
    [[nodiscard]] std::string to_string() const;

    auto operator<=>(const Date&) const = default;
};

enum class Entity { patients, studies, images, annotations };

std::string_view to_string(Entity e);
std::optional<Entity> entity_from_string(std::string_view s);

enum class Diagnosis { normal, benign, cancer };
enum class Side { left, right };
enum class TherapyOutcome { successful, unsuccessful };
enum class ImageLaterality { L, R };
enum class View { MLO, CC };
enum class AnnotationKind { mass, microcalcification_cluster };
enum class Reading { first, second };

std::string_view to_string(Diagnosis v);
std::string_view to_string(Side v);
std::string_view to_string(TherapyOutcome v);
std::string_view to_string(ImageLaterality v);
std::string_view to_string(View v);
std::string_view to_string(AnnotationKind v);
std::string_view to_string(Reading v);

/// Axis-aligned rectangle in mm. Valid rectangles have x0 < x1 and y0 < y1.
struct Rect {
    double x0 = 0;
    double y0 = 0;
    double x1 = 0;
    double y1 = 0;

    [[nodiscard]] double area() const { return (x1 - x0) * (y1 - y0); }
    bool operator==(const Rect&) const = default;
};

struct PatientRecord {
    std::string patient_id;
    int age_years = 0;
    int children_count = 0;
    std::optional<int> age_first_pregnancy;
    std::optional<int> age_last_pregnancy;
    bool hrt = false;
    std::optional<Date> hrt_start;
    SiteId site_id;

    bool operator==(const PatientRecord&) const = default;
};

struct StudyRecord {
    std::string study_id;
    std::string patient_id;
    Date study_date;
    std::vector<std::string> reader_ids;
    std::optional<Diagnosis> diagnosis;
    std::optional<Side> diagnosed_laterality;
    std::optional<TherapyOutcome> therapy_outcome;

    bool operator==(const StudyRecord&) const = default;
};

inline constexpr std::size_t kFeatureLength = 8;

struct ImageRecord {
    std::string image_id;
    std::string study_id;
    ImageLaterality laterality = ImageLaterality::L;
    View view = View::MLO;
    double breast_area_mm2 = 0;
    double mean_density = 0;
    std::array<double, kFeatureLength> feature_vector{};

    bool operator==(const ImageRecord&) const = default;
};

/// Annotation author: a radiologist with an id, or CAD (empty id).
struct Author {
    std::optional<std::string> radiologist_id;

    [[nodiscard]] bool is_cad() const { return !radiologist_id.has_value(); }
    /// "cad" or "radiologist:<id>".
    [[nodiscard]] std::string to_string() const;
    static std::optional<Author> parse(std::string_view text);

    bool operator==(const Author&) const = default;
};

struct AnnotationRecord {
    std::string annotation_id;
    std::string image_id;
    Author author;
    AnnotationKind kind = AnnotationKind::mass;
    std::vector<Rect> regions;
    std::optional<int> microcalc_count;
    std::optional<double> session_length_min;
    std::optional<int> serial_order;
    std::optional<Reading> reading;
    std::optional<int> author_experience_years;

    bool operator==(const AnnotationRecord&) const = default;
};

using EntityRecord = std::variant<PatientRecord, StudyRecord, ImageRecord, AnnotationRecord>;

/// Immutable view of one store at one data version.
struct StoreSnapshot {
    SiteId site_id;
    std::uint64_t version = 0;

    std::map<std::string, PatientRecord> patients;
    std::map<std::string, StudyRecord> studies;
    std::map<std::string, ImageRecord> images;
    std::map<std::string, AnnotationRecord> annotations;

    // parent id -> child ids, each list in id order
    std::map<std::string, std::vector<std::string>> studies_by_patient;
    std::map<std::string, std::vector<std::string>> images_by_study;
    std::map<std::string, std::vector<std::string>> annotations_by_image;

    [[nodiscard]] const PatientRecord* patient(const std::string& id) const;
    [[nodiscard]] const StudyRecord* study(const std::string& id) const;
    [[nodiscard]] const ImageRecord* image(const std::string& id) const;
    [[nodiscard]] const AnnotationRecord* annotation(const std::string& id) const;

    [[nodiscard]] std::size_t record_count() const {
        return patients.size() + studies.size() + images.size() + annotations.size();
    }
};

struct IngestReport {
    int accepted = 0;
    std::vector<std::pair<int, std::string>> rejected;  // (1-based line, reason)
    std::uint64_t new_version = 0;
};

nlohmann::json to_json(const IngestReport& report);

/// Single-writer, multi-reader store. Readers take a snapshot and keep it as long as they like.
class SiteStore {
public:
    explicit SiteStore(SiteId site_id);

    SiteStore(const SiteStore&) = delete;
    SiteStore& operator=(const SiteStore&) = delete;

    [[nodiscard]] const SiteId& site_id() const { return site_id_; }
    [[nodiscard]] std::shared_ptr<const StoreSnapshot> snapshot() const;
    [[nodiscard]] std::uint64_t data_version() const;

    /// Applies every line of a JSONL batch; bad lines are rejected individually.
    /// The version advances by one iff at least one line was accepted.
    IngestReport ingest(std::istream& source);
    IngestReport ingest_text(std::string_view jsonl);

private:
    SiteId site_id_;
    mutable std::mutex read_mutex_;
    std::mutex write_mutex_;
    std::shared_ptr<const StoreSnapshot> current_;
};

/// Ingests a JSONL file. Throws IoError when the file cannot be read.
IngestReport ingest_file(SiteStore& store, const std::filesystem::path& path);

std::optional<EntityRecord> get_entity(const StoreSnapshot& snap, Entity entity, const std::string& id);
std::optional<EntityRecord> get_entity(const SiteStore& store, Entity entity, const std::string& id);

/// Record -> one ingestion-format JSON object (including the "entity" tag).
nlohmann::json to_json(const PatientRecord& r);
nlohmann::json to_json(const StudyRecord& r);
nlohmann::json to_json(const ImageRecord& r);
nlohmann::json to_json(const AnnotationRecord& r);
nlohmann::json to_json(const EntityRecord& r);

} // namespace mammofed
