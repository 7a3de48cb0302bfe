#include "reference_math.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <boost/multiprecision/cpp_dec_float.hpp>

namespace mftest {

using namespace mammofed;

namespace {

bool covers(const std::vector<Rect>& rs, double x, double y) {
    return std::any_of(rs.begin(), rs.end(), [&](const Rect& r) { return r.x0 < x && x < r.x1 && r.y0 < y && y < r.y1; });
}

} // namespace

double raster_symmetric_difference(const std::vector<Rect>& a, const std::vector<Rect>& b) {
    double lo = 0, hi = 1;
    for (const auto* set : {&a, &b}) {
        for (const auto& r : *set) {
            lo = std::min({lo, r.x0, r.y0});
            hi = std::max({hi, r.x1, r.y1});
        }
    }
    long cells = 0;
    for (long x = static_cast<long>(std::floor(lo)); x < static_cast<long>(std::ceil(hi)); ++x) {
        for (long y = static_cast<long>(std::floor(lo)); y < static_cast<long>(std::ceil(hi)); ++y) {
            if (covers(a, x + 0.5, y + 0.5) != covers(b, x + 0.5, y + 0.5)) ++cells;
        }
    }
    return static_cast<double>(cells);
}

double reference_pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    using Big = boost::multiprecision::cpp_dec_float_50;
    const std::size_t n = xs.size();
    Big sx = 0, sy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sx += Big(xs[i]);
        sy += Big(ys[i]);
    }
    Big mx = sx / n, my = sy / n;
    Big sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        Big dx = Big(xs[i]) - mx, dy = Big(ys[i]) - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Big r = sxy / boost::multiprecision::sqrt(sxx * syy);
    return r.convert_to<double>();
}

std::vector<StudyRecord> random_studies(Rng& rng, int patients) {
    std::vector<StudyRecord> out;
    int next = 0;
    for (int p = 0; p < patients; ++p) {
        std::string pid = "P" + std::to_string(p);
        for (int k = uniform(rng, 0, 5); k > 0; --k) {
            StudyRecord s;
            s.study_id = "S" + std::to_string(next++);
            s.patient_id = pid;
            // Narrow range so that equal dates occur.
            s.study_date = Date{uniform(rng, 2000, 2004), uniform(rng, 1, 2), 1};
            int d = uniform(rng, 0, 4);
            if (d == 1) s.diagnosis = Diagnosis::normal;
            if (d == 2) s.diagnosis = Diagnosis::benign;
            if (d >= 3) {
                s.diagnosis = Diagnosis::cancer;
                s.diagnosed_laterality = coin(rng) ? Side::left : Side::right;
                int t = uniform(rng, 0, 2);
                if (t == 1) s.therapy_outcome = TherapyOutcome::successful;
                if (t == 2) s.therapy_outcome = TherapyOutcome::unsuccessful;
            }
            out.push_back(s);
        }
    }
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

std::vector<std::string> quadratic_cohort(const std::vector<StudyRecord>& studies) {
    std::set<std::string> ids;
    for (const auto& first : studies) {
        for (const auto& later : studies) {
            if (first.patient_id != later.patient_id) continue;
            if (first.diagnosis != Diagnosis::cancer || later.diagnosis != Diagnosis::cancer) continue;
            if (first.therapy_outcome != TherapyOutcome::successful) continue;
            if (!(first.study_date < later.study_date)) continue;
            if (first.diagnosed_laterality == later.diagnosed_laterality) continue;
            ids.insert(first.patient_id);
        }
    }
    return {ids.begin(), ids.end()};
}

} // namespace mftest
