#pragma once

// Clinical workloads: similar-case support lives in the translator; this header
// covers the contralateral cohort, correlation, reader allocation for double
// reading and the annotation disagreement metrics.

#include "mammofed/local_handler.hpp"
#include "mammofed/metadata.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace mammofed {

// ---------------------------------------------------------------------------
// Reader allocation
// ---------------------------------------------------------------------------

/// xorshift64*. A zero seed is replaced by a fixed non-zero constant.
class Xorshift64Star {
public:
    explicit Xorshift64Star(std::uint64_t seed);
    std::uint64_t next();

private:
    std::uint64_t state_;
};

/// Pair index 0 = (R1,R2), 1 = (R1,R3), 2 = (R2,R3).
struct ReaderPair {
    int index = 0;

    [[nodiscard]] std::pair<int, int> readers() const;  // 1-based reader numbers
    [[nodiscard]] std::string to_string() const;        // "R1+R2"
    bool operator==(const ReaderPair&) const = default;
};

/// Blocked randomization: each block of three holds every pair once, in an order
/// drawn by a Fisher-Yates shuffle from the seeded generator.
class AllocationState {
public:
    explicit AllocationState(std::uint64_t seed);

    /// Throws AllocationError when the patient was already assigned.
    ReaderPair allocate(const std::string& patient_id);

    [[nodiscard]] std::uint64_t seed() const { return seed_; }
    [[nodiscard]] const std::array<int, 3>& pair_counts() const { return counts_; }
    [[nodiscard]] const std::vector<int>& current_block() const { return block_; }
    [[nodiscard]] const std::vector<std::pair<std::string, ReaderPair>>& assignments() const { return log_; }

private:
    std::uint64_t seed_;
    Xorshift64Star rng_;
    std::array<int, 3> counts_{};
    std::vector<int> block_;  // remaining pairs of the active block, next first
    std::vector<std::pair<std::string, ReaderPair>> log_;
    std::set<std::string> assigned_;
};

// ---------------------------------------------------------------------------
// Disagreement metrics
// ---------------------------------------------------------------------------

/// Area of the symmetric difference of the unions of both region sets (mm^2).
double mass_disagreement(const std::vector<Rect>& a, const std::vector<Rect>& b);

/// Area of the union of a region set (mm^2).
double union_area(const std::vector<Rect>& regions);

int microcalc_disagreement(int count_a, int count_b);

/// What one author marked on one image: union of mass regions, summed cluster counts.
struct ReaderMarks {
    std::vector<Rect> mass_regions;
    int microcalc_count = 0;
};

struct DisagreementRow {
    std::string image_id;
    std::string reader_a;
    std::string reader_b;
    double mass_area_mm2 = 0;
    int microcalc_count_diff = 0;
    // Against the CAD marks of the same image; absent when CAD did not annotate it.
    std::optional<double> a_vs_cad_mass_area_mm2;
    std::optional<int> a_vs_cad_microcalc_diff;
    std::optional<double> b_vs_cad_mass_area_mm2;
    std::optional<int> b_vs_cad_microcalc_diff;
};

/// One row per image and unordered pair of radiologists who both annotated it,
/// ordered by (image, reader_a, reader_b).
std::vector<DisagreementRow> disagreement_report(const std::vector<AnnotationRecord>& annotations);

std::string disagreement_csv(const std::vector<DisagreementRow>& rows);

// ---------------------------------------------------------------------------
// Epidemiology
// ---------------------------------------------------------------------------

/// Patients with a successfully treated cancer study followed, at a strictly
/// later study date, by a cancer study of the opposite breast. Sorted ids.
std::vector<std::string> contralateral_cohort(const std::vector<StudyRecord>& studies);

/// Sample Pearson correlation. Throws CorrelationError on length mismatch, fewer
/// than two points or zero variance.
double pearson_correlation(const std::vector<double>& xs, const std::vector<double>& ys);

/// Per-patient maximum density asymmetry over all studies with an L/R pair.
std::map<std::string, double> patient_asymmetry(const std::vector<StudyRecord>& studies,
                                                const std::vector<ImageRecord>& images);

// ---------------------------------------------------------------------------
// Record reconstruction from result rows
// ---------------------------------------------------------------------------

/// Rebuild records from query rows projected with every attribute of their entity.
/// Throws ParseError when a required field is missing or malformed.
std::vector<StudyRecord> studies_from_rows(const std::vector<Row>& rows);
std::vector<ImageRecord> images_from_rows(const std::vector<Row>& rows);
std::vector<AnnotationRecord> annotations_from_rows(const std::vector<Row>& rows);

/// RFC 4180: CRLF line ends, fields quoted when they hold a comma, quote or line break.
std::string csv_field(std::string_view value);
std::string to_csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows);

} // namespace mammofed
