#include <doctest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "mixdpo/curriculum.hpp"
#include "mixdpo/rng.hpp"
#include "test_helpers.hpp"

using namespace mixdpo;
using namespace mixdpo::testing;
using curriculum::Ordering;
using curriculum::Stage;
using difficulty::DifficultyRecord;

namespace {

std::vector<DifficultyRecord> records_with_margins(const std::vector<double>& margins, double tau) {
    std::vector<corpus::PreferencePair> pairs;
    for (std::size_t i = 0; i < margins.size(); ++i) {
        pairs.push_back(make_pair(static_cast<std::int64_t>(i), "p", "c", "r", margins[i], 0.0));
    }
    return difficulty::score_dataset(pairs, tau);
}

// Brute-force oracle: stage1 = easy ids sorted by margin descending, pair_id
// ascending on ties.
std::vector<std::int64_t> oracle_stage1(const std::vector<DifficultyRecord>& records) {
    std::vector<DifficultyRecord> easy;
    for (const auto& rec : records) {
        if (rec.route == 0) easy.push_back(rec);
    }
    std::stable_sort(easy.begin(), easy.end(), [](const auto& a, const auto& b) {
        return a.margin > b.margin || (a.margin == b.margin && a.pair_id < b.pair_id);
    });
    std::vector<std::int64_t> ids;
    for (const auto& rec : easy) ids.push_back(rec.pair_id);
    return ids;
}

}  // namespace

TEST_CASE("build_plan splits by route and orders stage1 easiest-first") {
    // margin 0.4 < tau -> difficult; 8.0 and 3.0 stay in the preference stage
    const auto records = records_with_margins({0.4, 8.0, 3.0}, 0.5);
    const auto plan = curriculum::build_plan(records, Ordering::easy_first, 16, 1);
    CHECK(plan.stage1_ids == std::vector<std::int64_t>{1, 2});
    CHECK(plan.stage2_ids == std::vector<std::int64_t>{0});
}

TEST_CASE("build_plan with every pair easy degenerates to sorted DPO") {
    const auto records = records_with_margins({2.0, 8.0, 3.0}, 0.5);
    const auto plan = curriculum::build_plan(records, Ordering::easy_first, 16, 1);
    CHECK(plan.stage1_ids == std::vector<std::int64_t>{1, 2, 0});
    CHECK(plan.stage2_ids.empty());
}

TEST_CASE("build_plan is deterministic for a fixed seed") {
    Rng rng(3);
    std::vector<double> margins;
    for (int i = 0; i < 64; ++i) margins.push_back(4.0 * rng.uniform01());
    const auto records = records_with_margins(margins, 1.0);
    for (Ordering ordering : {Ordering::easy_first, Ordering::random, Ordering::file_order,
                              Ordering::easy_first_swapped}) {
        const auto a = curriculum::build_plan(records, ordering, 8, 99);
        const auto b = curriculum::build_plan(records, ordering, 8, 99);
        CHECK(a.stage1_ids == b.stage1_ids);
        CHECK(a.stage2_ids == b.stage2_ids);
    }
}

TEST_CASE("easy_first matches the brute-force sort oracle on random datasets") {
    Rng rng(13);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> margins;
        const int n = 1 + static_cast<int>(rng.below(60));
        for (int i = 0; i < n; ++i) {
            // quantized margins so ties actually occur
            margins.push_back(0.5 * static_cast<double>(rng.below(12)));
        }
        const auto records = records_with_margins(margins, 1.0);
        const auto plan = curriculum::build_plan(records, Ordering::easy_first, 4, trial);
        CHECK(plan.stage1_ids == oracle_stage1(records));

        // exact partition of the dataset's ids
        std::set<std::int64_t> seen;
        for (auto id : plan.stage1_ids) seen.insert(id);
        for (auto id : plan.stage2_ids) seen.insert(id);
        CHECK(seen.size() == plan.stage1_ids.size() + plan.stage2_ids.size());
        CHECK(seen.size() == records.size());
        for (auto id : plan.stage2_ids) {
            CHECK(records[static_cast<std::size_t>(id)].route == 1);
        }
    }
}

TEST_CASE("random ordering shuffles stage1 only, keeping the partition") {
    Rng rng(23);
    std::vector<double> margins;
    for (int i = 0; i < 80; ++i) margins.push_back(3.0 * rng.uniform01());
    const auto records = records_with_margins(margins, 1.0);
    const auto sorted_plan = curriculum::build_plan(records, Ordering::easy_first, 8, 5);
    const auto random_plan = curriculum::build_plan(records, Ordering::random, 8, 5);

    auto a = sorted_plan.stage1_ids;
    auto b = random_plan.stage1_ids;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);                                          // same easy set
    CHECK(random_plan.stage2_ids == sorted_plan.stage2_ids); // stage2 stays sorted
    CHECK(random_plan.stage1_ids != sorted_plan.stage1_ids); // but the order moved
}

TEST_CASE("file_order runs the whole dataset unrouted") {
    const auto records = records_with_margins({0.1, 5.0, 0.2, 4.0}, 0.5);
    const auto plan = curriculum::build_plan(records, Ordering::file_order, 2, 1);
    CHECK(plan.stage1_ids == std::vector<std::int64_t>{0, 1, 2, 3});
    CHECK(plan.stage2_ids.empty());
}

TEST_CASE("easy_first_swapped exchanges the tail blocks of the full order") {
    // ten pairs, margins 9..0: easiest-first order is ids 0..9; tau routes the
    // last pair only
    std::vector<double> margins;
    for (int i = 0; i < 10; ++i) margins.push_back(9.0 - i);
    const auto records = records_with_margins(margins, 0.5);
    const auto plan = curriculum::build_plan(records, Ordering::easy_first_swapped, 4, 1);
    std::vector<std::int64_t> combined = plan.stage1_ids;
    combined.insert(combined.end(), plan.stage2_ids.begin(), plan.stage2_ids.end());
    CHECK(combined == std::vector<std::int64_t>{0, 1, 2, 3, 4, 5, 6, 7, 9, 8});
    CHECK(plan.stage1_ids.size() == 9);  // margin 0 routes, boundary margin 1 does not
    CHECK(plan.stage2_ids == std::vector<std::int64_t>{8});
}

TEST_CASE("build_plan validates input") {
    const auto records = records_with_margins({1.0}, 0.5);
    CHECK_THROWS_AS(curriculum::build_plan({}, Ordering::easy_first, 4, 1), std::invalid_argument);
    CHECK_THROWS_AS(curriculum::build_plan(records, Ordering::easy_first, 0, 1),
                    std::invalid_argument);
}

TEST_CASE("iterate_batches chunks stages without straddling") {
    const auto records = records_with_margins({5, 4, 3, 2.4, 2.2, 0.1, 0.2}, 0.5);
    auto plan = curriculum::build_plan(records, Ordering::easy_first, 2, 1);
    REQUIRE(plan.stage1_ids.size() == 5);
    REQUIRE(plan.stage2_ids.size() == 2);

    const auto batches = curriculum::iterate_batches(plan);
    REQUIRE(batches.size() == 4);
    CHECK(batches[0].pair_ids.size() == 2);
    CHECK(batches[1].pair_ids.size() == 2);
    CHECK(batches[2].pair_ids.size() == 1);  // short last batch of stage1
    CHECK(batches[3].pair_ids.size() == 2);
    CHECK(batches[0].stage == Stage::preference);
    CHECK(batches[2].stage == Stage::preference);
    CHECK(batches[3].stage == Stage::sft);

    std::vector<std::int64_t> concat;
    for (const auto& b : batches) {
        for (auto id : b.pair_ids) concat.push_back(id);
    }
    std::vector<std::int64_t> expected = plan.stage1_ids;
    expected.insert(expected.end(), plan.stage2_ids.begin(), plan.stage2_ids.end());
    CHECK(concat == expected);
}

TEST_CASE("iterate_batches with batch_size >= N yields one batch per stage") {
    const auto records = records_with_margins({5, 4, 0.1}, 0.5);
    const auto plan = curriculum::build_plan(records, Ordering::easy_first, 100, 1);
    const auto batches = curriculum::iterate_batches(plan);
    REQUIRE(batches.size() == 2);
    CHECK(batches[0].pair_ids.size() == 2);
    CHECK(batches[1].pair_ids.size() == 1);
}

TEST_CASE("iterate_batches visits each pair exactly once over random plans") {
    Rng rng(33);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> margins;
        const int n = 1 + static_cast<int>(rng.below(100));
        for (int i = 0; i < n; ++i) margins.push_back(2.0 * rng.uniform01());
        const auto records = records_with_margins(margins, 1.0);
        const int batch_size = 1 + static_cast<int>(rng.below(9));
        const auto ordering =
            trial % 2 == 0 ? Ordering::easy_first : Ordering::random;
        const auto plan = curriculum::build_plan(records, ordering, batch_size, trial);

        std::map<std::int64_t, int> visits;
        std::size_t total = 0;
        for (const auto& batch : curriculum::iterate_batches(plan)) {
            CHECK(batch.pair_ids.size() <= static_cast<std::size_t>(batch_size));
            for (auto id : batch.pair_ids) visits[id]++;
            total += batch.pair_ids.size();
        }
        CHECK(total == records.size());
        for (const auto& [id, count] : visits) CHECK(count == 1);
    }
}

TEST_CASE("plan_variant_discard drops stage2 and nothing else") {
    const auto records = records_with_margins({5, 4, 3, 0.1, 0.2, 0.3, 0.4, 0.05, 0.15, 0.25,
                                               0.35, 0.45}, 0.5);
    const auto plan = curriculum::build_plan(records, Ordering::easy_first, 4, 1);
    REQUIRE(plan.stage2_ids.size() == 9);
    const auto discard = curriculum::plan_variant_discard(plan);
    CHECK(discard.stage1_ids == plan.stage1_ids);
    CHECK(discard.stage2_ids.empty());
    // discarding an already-empty stage2 is the identity
    const auto again = curriculum::plan_variant_discard(discard);
    CHECK(again.stage1_ids == discard.stage1_ids);
    CHECK(again.stage2_ids.empty());
    // the variant trains N - k pairs
    std::size_t trained = 0;
    for (const auto& b : curriculum::iterate_batches(discard)) trained += b.pair_ids.size();
    CHECK(trained == records.size() - 9);
}

TEST_CASE("ordering names round-trip and unknown names throw") {
    for (const std::string name : {"easy_first", "random", "file_order", "easy_first_swapped"}) {
        CHECK(curriculum::to_string(curriculum::ordering_from_string(name)) == name);
    }
    CHECK_THROWS_AS(curriculum::ordering_from_string("sorted"), std::invalid_argument);
}

TEST_CASE("plan manifest lists positions across both stages") {
    TempDir tmp("curriculum_manifest");
    const auto records = records_with_margins({0.4, 8.0, 3.0}, 0.5);
    const auto plan = curriculum::build_plan(records, Ordering::easy_first, 16, 1);
    const std::string path = tmp.file("plan.csv");
    curriculum::write_plan_manifest(plan, path);
    CHECK(read_file(path) ==
          "position,stage,pair_id\n"
          "0,preference,1\n"
          "1,preference,2\n"
          "2,sft,0\n");
}
