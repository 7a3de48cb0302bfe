#include "mammofed/error.hpp"
#include "mammofed/local_handler.hpp"

#include <algorithm>
#include <cmath>

namespace mammofed {

using nlohmann::json;

void ProviderRegistry::add(std::string id, Provider provider) { providers_[std::move(id)] = std::move(provider); }

const Provider* ProviderRegistry::find(const std::string& id) const {
    auto it = providers_.find(id);
    return it == providers_.end() ? nullptr : &it->second;
}

std::vector<std::string> ProviderRegistry::ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : providers_) out.push_back(id);
    return out;
}

double feature_similarity(const std::array<double, kFeatureLength>& a, const std::array<double, kFeatureLength>& b) {
    double sum = 0;
    for (std::size_t i = 0; i < kFeatureLength; ++i) {
        double d = a[i] - b[i];
        sum += d * d;
    }
    return 1.0 / (1.0 + std::sqrt(sum));
}

std::optional<double> study_density_asymmetry(const StoreSnapshot& store, const std::string& study_id) {
    auto it = store.images_by_study.find(study_id);
    if (it == store.images_by_study.end()) return std::nullopt;
    std::optional<double> best;
    for (View v : {View::MLO, View::CC}) {
        const ImageRecord* left = nullptr;
        const ImageRecord* right = nullptr;
        for (const auto& id : it->second) {
            const ImageRecord* img = store.image(id);
            if (img->view != v) continue;
            (img->laterality == ImageLaterality::L ? left : right) = img;
        }
        if (left && right) {
            double diff = std::abs(left->mean_density - right->mean_density);
            best = best ? std::max(*best, diff) : diff;
        }
    }
    return best;
}

namespace {

void add_study_images(const StoreSnapshot& store, const std::string& study_id, std::vector<const ImageRecord*>& out) {
    if (auto it = store.images_by_study.find(study_id); it != store.images_by_study.end()) {
        for (const auto& id : it->second) out.push_back(store.image(id));
    }
}

const std::vector<std::string>* studies_of(const StoreSnapshot& store, const std::string& patient_id) {
    auto it = store.studies_by_patient.find(patient_id);
    return it == store.studies_by_patient.end() ? nullptr : &it->second;
}

const ImageRecord* image_of(const StoreSnapshot& store, const RowContext& row) {
    if (row.target == Entity::images) return row.image;
    if (row.target == Entity::annotations && row.annotation) return store.image(row.annotation->image_id);
    return nullptr;
}

} // namespace

std::vector<const ImageRecord*> images_in_scope(const StoreSnapshot& store, const RowContext& row) {
    std::vector<const ImageRecord*> out;
    switch (row.target) {
    case Entity::images:
    case Entity::annotations:
        if (const ImageRecord* img = image_of(store, row)) out.push_back(img);
        break;
    case Entity::studies:
        if (row.study) add_study_images(store, row.study->study_id, out);
        break;
    case Entity::patients:
        if (row.patient) {
            if (auto* studies = studies_of(store, row.patient->patient_id)) {
                for (const auto& sid : *studies) add_study_images(store, sid, out);
            }
        }
        break;
    }
    return out;
}

std::vector<const StudyRecord*> studies_in_scope(const StoreSnapshot& store, const RowContext& row) {
    std::vector<const StudyRecord*> out;
    switch (row.target) {
    case Entity::patients:
        if (row.patient) {
            if (auto* studies = studies_of(store, row.patient->patient_id)) {
                for (const auto& sid : *studies) out.push_back(store.study(sid));
            }
        }
        break;
    case Entity::studies:
        if (row.study) out.push_back(row.study);
        break;
    case Entity::images:
    case Entity::annotations:
        if (const ImageRecord* img = image_of(store, row)) {
            if (const StudyRecord* s = store.study(img->study_id)) out.push_back(s);
        }
        break;
    }
    return out;
}

namespace {

[[noreturn]] void bad_params(const std::string& provider, const std::string& what) {
    throw ExecutionError("provider " + provider + ": " + what);
}

std::optional<double> find_one_like_it(const ProviderContext& ctx, const json& params) {
    std::array<double, kFeatureLength> reference{};
    if (auto v = params.find("vector"); v != params.end()) {
        if (!v->is_array() || v->size() != kFeatureLength) bad_params("find_one_like_it", "vector needs 8 numbers");
        for (std::size_t i = 0; i < kFeatureLength; ++i) {
            if (!(*v)[i].is_number()) bad_params("find_one_like_it", "vector needs 8 numbers");
            reference[i] = (*v)[i].get<double>();
        }
    } else if (auto ref = params.find("ref"); ref != params.end() && ref->is_string()) {
        const ImageRecord* img = ctx.store.image(ref->get<std::string>());
        if (!img) return std::nullopt;
        reference = img->feature_vector;
    } else {
        bad_params("find_one_like_it", "needs \"ref\" or \"vector\"");
    }

    std::string view = "both";
    if (auto v = params.find("view"); v != params.end()) {
        if (!v->is_string()) bad_params("find_one_like_it", "view must be MLO, CC or both");
        view = v->get<std::string>();
        if (view != "MLO" && view != "CC" && view != "both") bad_params("find_one_like_it", "view must be MLO, CC or both");
    }

    std::optional<double> best;
    for (const ImageRecord* img : images_in_scope(ctx.store, ctx.row)) {
        if (view != "both" && to_string(img->view) != view) continue;
        double s = feature_similarity(reference, img->feature_vector);
        best = best ? std::max(*best, s) : s;
    }
    return best;
}

std::optional<double> density_asymmetry(const ProviderContext& ctx, const json&) {
    std::optional<double> best;
    for (const StudyRecord* s : studies_in_scope(ctx.store, ctx.row)) {
        if (auto a = study_density_asymmetry(ctx.store, s->study_id)) {
            best = best ? std::max(*best, *a) : *a;
        }
    }
    return best;
}

void bind_node(Predicate& p, const StoreSnapshot& store) {
    std::visit(
        [&](auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, And> || std::is_same_v<T, Or>) {
                for (auto& c : n.children) bind_node(c, store);
            } else if constexpr (std::is_same_v<T, Not>) {
                bind_node(*n.child, store);
            } else if constexpr (std::is_same_v<T, DerivedCmp>) {
                if (n.provider != "find_one_like_it" || n.params.contains("vector")) return;
                auto ref = n.params.find("ref");
                if (ref == n.params.end() || !ref->is_string()) return;
                if (const ImageRecord* img = store.image(ref->template get<std::string>())) {
                    n.params["vector"] = img->feature_vector;
                }
            }
        },
        p.node);
}

} // namespace

ProviderRegistry ProviderRegistry::defaults() {
    ProviderRegistry r;
    r.add("find_one_like_it", find_one_like_it);
    r.add("density_asymmetry", density_asymmetry);
    return r;
}

std::optional<double> evaluate_derived(const ProviderRegistry& providers, const std::string& provider_id,
                                       const json& params, const ProviderContext& ctx) {
    const Provider* p = providers.find(provider_id);
    if (!p) throw ExecutionError("unknown provider " + provider_id);
    return (*p)(ctx, params);
}

FormalQuery bind_provider_references(FormalQuery q, const StoreSnapshot& store) {
    bind_node(q.predicate, store);
    return q;
}

} // namespace mammofed
