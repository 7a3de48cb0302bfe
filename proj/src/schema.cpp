#include "mammofed/schema.hpp"

#include <algorithm>

namespace mammofed {

namespace {

const std::vector<AttributeInfo>& vocabulary() {
    static const std::vector<AttributeInfo> kVocabulary{
        {"patient.patient_id", Entity::patients, AttrType::string, {}},
        {"patient.age_years", Entity::patients, AttrType::integer, {}},
        {"patient.children_count", Entity::patients, AttrType::integer, {}},
        {"patient.age_first_pregnancy", Entity::patients, AttrType::integer, {}},
        {"patient.age_last_pregnancy", Entity::patients, AttrType::integer, {}},
        {"patient.hrt", Entity::patients, AttrType::boolean, {}},
        {"patient.hrt_start", Entity::patients, AttrType::date, {}},
        {"patient.site_id", Entity::patients, AttrType::string, {}},

        {"study.study_id", Entity::studies, AttrType::string, {}},
        {"study.patient_id", Entity::studies, AttrType::string, {}},
        {"study.study_date", Entity::studies, AttrType::date, {}},
        {"study.reader_ids", Entity::studies, AttrType::list, {}},
        {"study.diagnosis", Entity::studies, AttrType::enumeration, {"normal", "benign", "cancer"}},
        {"study.diagnosed_laterality", Entity::studies, AttrType::enumeration, {"left", "right"}},
        {"study.therapy_outcome", Entity::studies, AttrType::enumeration, {"successful", "unsuccessful"}},

        {"image.image_id", Entity::images, AttrType::string, {}},
        {"image.study_id", Entity::images, AttrType::string, {}},
        {"image.laterality", Entity::images, AttrType::enumeration, {"L", "R"}},
        {"image.view", Entity::images, AttrType::enumeration, {"MLO", "CC"}},
        {"image.breast_area_mm2", Entity::images, AttrType::real, {}},
        {"image.mean_density", Entity::images, AttrType::real, {}},
        {"image.feature_vector", Entity::images, AttrType::list, {}},

        {"annotation.annotation_id", Entity::annotations, AttrType::string, {}},
        {"annotation.image_id", Entity::annotations, AttrType::string, {}},
        {"annotation.author", Entity::annotations, AttrType::string, {}},
        {"annotation.kind", Entity::annotations, AttrType::enumeration, {"mass", "microcalcification_cluster"}},
        {"annotation.regions", Entity::annotations, AttrType::list, {}},
        {"annotation.microcalc_count", Entity::annotations, AttrType::integer, {}},
        {"annotation.session_length_min", Entity::annotations, AttrType::real, {}},
        {"annotation.serial_order", Entity::annotations, AttrType::integer, {}},
        {"annotation.reading", Entity::annotations, AttrType::enumeration, {"first", "second"}},
        {"annotation.author_experience_years", Entity::annotations, AttrType::integer, {}},
    };
    return kVocabulary;
}

int chain_rank(Entity e) {
    switch (e) {
    case Entity::patients: return 0;
    case Entity::studies: return 1;
    case Entity::images: return 2;
    case Entity::annotations: return 3;
    }
    return 0;
}

} // namespace

std::span<const AttributeInfo> attribute_vocabulary() { return vocabulary(); }

const AttributeInfo* find_attribute(std::string_view path) {
    const auto& v = vocabulary();
    auto it = std::find_if(v.begin(), v.end(), [&](const AttributeInfo& a) { return a.path == path; });
    return it == v.end() ? nullptr : &*it;
}

std::vector<std::string> default_projection(Entity target) {
    std::vector<std::string> out;
    for (const auto& a : vocabulary()) {
        if (a.entity == target) {
            out.emplace_back(a.path);
        }
    }
    return out;
}

bool reachable(Entity target, Entity other) { return chain_rank(other) <= chain_rank(target); }

std::vector<Entity> ancestors(Entity target) {
    static constexpr std::array kChain{Entity::patients, Entity::studies, Entity::images, Entity::annotations};
    std::vector<Entity> out;
    for (int r = chain_rank(target) - 1; r >= 0; --r) {
        out.push_back(kChain[static_cast<std::size_t>(r)]);
    }
    return out;
}

} // namespace mammofed
