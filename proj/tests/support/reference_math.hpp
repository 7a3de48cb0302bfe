#pragma once

// Slow, obviously-correct references for the clinical metrics.

#include "generators.hpp"

#include "mammofed/metadata.hpp"

#include <string>
#include <vector>

namespace mftest {

/// Cells of a 1 mm grid covered by exactly one of the two region unions.
/// Exact for integer-mm rectangles.
double raster_symmetric_difference(const std::vector<mammofed::Rect>& a, const std::vector<mammofed::Rect>& b);

/// Sample Pearson r evaluated in 50-digit decimal arithmetic.
double reference_pearson(const std::vector<double>& xs, const std::vector<double>& ys);

/// Studies of `patients` random patients (0..5 each) over a small date range.
std::vector<mammofed::StudyRecord> random_studies(Rng& rng, int patients);

/// Patients with an ordered pair (successfully treated cancer, later cancer on
/// the other side), found by checking every pair of their studies. Sorted.
std::vector<std::string> quadratic_cohort(const std::vector<mammofed::StudyRecord>& studies);

} // namespace mftest
