#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mixdpo/difficulty.hpp"

namespace mixdpo::curriculum {

enum class Ordering { easy_first, random, file_order, easy_first_swapped };

// Throws std::invalid_argument on an unknown name.
Ordering ordering_from_string(const std::string& name);
std::string to_string(Ordering ordering);

enum class Stage { preference, sft };
std::string to_string(Stage stage);

// Executable two-stage training manifest: a preference stage over the easy
// pairs followed by an SFT stage over the difficult ones.
struct CurriculumPlan {
    Ordering ordering = Ordering::easy_first;
    std::vector<std::int64_t> stage1_ids;  // route = 0
    std::vector<std::int64_t> stage2_ids;  // route = 1
    int batch_size = 16;
    std::uint64_t seed = 0;
};

struct Batch {
    Stage stage = Stage::preference;
    std::vector<std::int64_t> pair_ids;
};

CurriculumPlan build_plan(const std::vector<difficulty::DifficultyRecord>& records,
                          Ordering ordering, int batch_size, std::uint64_t seed);

// All stage1 batches precede all stage2 batches; batches never straddle the
// stage boundary; the last batch of a stage may be short.
std::vector<Batch> iterate_batches(const CurriculumPlan& plan);

// Filtering baseline: identical stage1, empty stage2.
CurriculumPlan plan_variant_discard(const CurriculumPlan& plan);

// CSV with columns position,stage,pair_id over the concatenated stages.
void write_plan_manifest(const CurriculumPlan& plan, const std::string& path);

}  // namespace mixdpo::curriculum
