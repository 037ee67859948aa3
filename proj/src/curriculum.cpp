#include "mixdpo/curriculum.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "mixdpo/rng.hpp"

namespace mixdpo::curriculum {

Ordering ordering_from_string(const std::string& name) {
    if (name == "easy_first") return Ordering::easy_first;
    if (name == "random") return Ordering::random;
    if (name == "file_order") return Ordering::file_order;
    if (name == "easy_first_swapped") return Ordering::easy_first_swapped;
    throw std::invalid_argument("unknown ordering '" + name +
                                "' (expected easy_first|random|file_order|easy_first_swapped)");
}

std::string to_string(Ordering ordering) {
    switch (ordering) {
        case Ordering::easy_first: return "easy_first";
        case Ordering::random: return "random";
        case Ordering::file_order: return "file_order";
        case Ordering::easy_first_swapped: return "easy_first_swapped";
    }
    return "?";
}

std::string to_string(Stage stage) {
    return stage == Stage::preference ? "preference" : "sft";
}

namespace {

// Easiest-first: margin descending, pair_id ascending on ties.
std::vector<std::int64_t> sort_easiest_first(std::vector<const difficulty::DifficultyRecord*> recs) {
    std::sort(recs.begin(), recs.end(),
              [](const difficulty::DifficultyRecord* a, const difficulty::DifficultyRecord* b) {
                  if (a->margin != b->margin) return a->margin > b->margin;
                  return a->pair_id < b->pair_id;
              });
    std::vector<std::int64_t> ids;
    ids.reserve(recs.size());
    for (const auto* r : recs) ids.push_back(r->pair_id);
    return ids;
}

}  // namespace

CurriculumPlan build_plan(const std::vector<difficulty::DifficultyRecord>& records,
                          Ordering ordering, int batch_size, std::uint64_t seed) {
    if (records.empty()) throw std::invalid_argument("build_plan: no difficulty records");
    if (batch_size < 1) throw std::invalid_argument("build_plan: batch_size must be >= 1");

    CurriculumPlan plan;
    plan.ordering = ordering;
    plan.batch_size = batch_size;
    plan.seed = seed;

    if (ordering == Ordering::file_order) {
        // Unrouted baseline: the whole dataset as one preference stage, file order.
        plan.stage1_ids.reserve(records.size());
        for (const auto& rec : records) plan.stage1_ids.push_back(rec.pair_id);
        std::sort(plan.stage1_ids.begin(), plan.stage1_ids.end());
        return plan;
    }

    if (ordering == Ordering::easy_first_swapped) {
        // Perturb the full easiest-first order, then split at the routing count.
        std::vector<const difficulty::DifficultyRecord*> all;
        std::size_t n_easy = 0;
        for (const auto& rec : records) {
            all.push_back(&rec);
            if (rec.route == 0) n_easy++;
        }
        const std::vector<std::int64_t> swapped =
            difficulty::swap_perturbation(sort_easiest_first(std::move(all)));
        plan.stage1_ids.assign(swapped.begin(), swapped.begin() + n_easy);
        plan.stage2_ids.assign(swapped.begin() + n_easy, swapped.end());
        return plan;
    }

    std::vector<const difficulty::DifficultyRecord*> easy, difficult;
    for (const auto& rec : records) {
        (rec.route == 0 ? easy : difficult).push_back(&rec);
    }
    plan.stage1_ids = sort_easiest_first(std::move(easy));
    // Stage2 is ordered easiest-first as well, under every ordering.
    plan.stage2_ids = sort_easiest_first(std::move(difficult));

    if (ordering == Ordering::random) {
        Rng rng(seed);
        rng.shuffle(plan.stage1_ids);
    }
    return plan;
}

std::vector<Batch> iterate_batches(const CurriculumPlan& plan) {
    std::vector<Batch> batches;
    const auto chunk = [&](const std::vector<std::int64_t>& ids, Stage stage) {
        for (std::size_t i = 0; i < ids.size(); i += static_cast<std::size_t>(plan.batch_size)) {
            const std::size_t end = std::min(ids.size(), i + static_cast<std::size_t>(plan.batch_size));
            batches.push_back({stage, {ids.begin() + i, ids.begin() + end}});
        }
    };
    chunk(plan.stage1_ids, Stage::preference);
    chunk(plan.stage2_ids, Stage::sft);
    return batches;
}

CurriculumPlan plan_variant_discard(const CurriculumPlan& plan) {
    CurriculumPlan out = plan;
    out.stage2_ids.clear();
    return out;
}

void write_plan_manifest(const CurriculumPlan& plan, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write plan manifest: " + path);
    out << "position,stage,pair_id\n";
    std::int64_t position = 0;
    for (std::int64_t id : plan.stage1_ids) out << position++ << ",preference," << id << '\n';
    for (std::int64_t id : plan.stage2_ids) out << position++ << ",sft," << id << '\n';
}

}  // namespace mixdpo::curriculum
