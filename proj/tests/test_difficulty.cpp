#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mixdpo/difficulty.hpp"
#include "mixdpo/rng.hpp"
#include "test_helpers.hpp"

using namespace mixdpo;
using namespace mixdpo::testing;
using difficulty::DifficultyRecord;

namespace {

std::vector<corpus::PreferencePair> pairs_with_margins(const std::vector<double>& margins) {
    std::vector<corpus::PreferencePair> pairs;
    for (std::size_t i = 0; i < margins.size(); ++i) {
        pairs.push_back(make_pair(static_cast<std::int64_t>(i), "p", "c", "r", margins[i], 0.0));
    }
    return pairs;
}

}  // namespace

TEST_CASE("pairwise_margin is the score difference") {
    CHECK(difficulty::pairwise_margin(10.0, 2.0) == 8.0);
    CHECK(difficulty::pairwise_margin(7.0, 7.0) == 0.0);
    for (double s : {-3.0, 0.0, 5.5, 9.25}) {
        CHECK(difficulty::pairwise_margin(s, s) == 0.0);
    }
    CHECK_THROWS_AS(difficulty::pairwise_margin(std::nan(""), 1.0), std::domain_error);
    CHECK_THROWS_AS(difficulty::pairwise_margin(1.0, INFINITY), std::domain_error);
}

TEST_CASE("route_indicator uses strict inequality") {
    CHECK(difficulty::route_indicator(0.0, 0.5) == 1);
    CHECK(difficulty::route_indicator(8.0, 0.5) == 0);
    CHECK(difficulty::route_indicator(0.5, 0.5) == 0);  // boundary pairs are easy
    CHECK(difficulty::route_indicator(-2.0, 0.5) == 1); // inverted pairs are difficult
}

TEST_CASE("route_indicator is translation-covariant in matched units") {
    // exact dyadic grid so m + c and tau + c round identically
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const double m = 0.25 * static_cast<double>(rng.below(64)) - 4.0;
        const double tau = 0.25 * static_cast<double>(rng.below(16));
        const double c = 0.25 * static_cast<double>(rng.below(32)) - 2.0;
        CHECK(difficulty::route_indicator(m, tau) == difficulty::route_indicator(m + c, tau + c));
    }
}

TEST_CASE("score_dataset ranks by descending margin and routes strictly") {
    const auto records = difficulty::score_dataset(pairs_with_margins({0.5, 8.0, 3.0}), 0.5);
    REQUIRE(records.size() == 3);
    CHECK(records[0].rank == 2);
    CHECK(records[1].rank == 0);
    CHECK(records[2].rank == 1);
    CHECK(records[0].route == 0);  // 0.5 is not < 0.5
    CHECK(records[1].route == 0);
    CHECK(records[2].route == 0);
}

TEST_CASE("score_dataset keeps stable ties by pair_id") {
    const auto records = difficulty::score_dataset(pairs_with_margins({2.0, 2.0, 2.0}), 0.5);
    CHECK(records[0].rank == 0);
    CHECK(records[1].rank == 1);
    CHECK(records[2].rank == 2);
}

TEST_CASE("score_dataset routing count is brute-force exact and monotone in tau") {
    Rng rng(21);
    std::vector<double> margins;
    for (int i = 0; i < 500; ++i) margins.push_back(4.0 * rng.uniform01());
    const auto pairs = pairs_with_margins(margins);

    std::int64_t previous = -1;
    for (double tau : {0.5, 1.0, 1.5}) {
        const auto records = difficulty::score_dataset(pairs, tau);
        std::int64_t routed = 0;
        for (const auto& rec : records) routed += rec.route;
        std::int64_t brute = 0;
        for (double m : margins) brute += m < tau ? 1 : 0;
        CHECK(routed == brute);
        CHECK(routed >= previous);
        previous = routed;
    }
}

TEST_CASE("ranking is invariant under strictly increasing margin transforms") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> margins;
        for (int i = 0; i < 50; ++i) margins.push_back(8.0 * rng.uniform01() - 1.0);
        const auto base = difficulty::score_dataset(pairs_with_margins(margins), 0.5);

        std::vector<double> transformed;
        for (double m : margins) transformed.push_back(2.0 * std::atan(m) + 5.0);
        const auto mapped = difficulty::score_dataset(pairs_with_margins(transformed), 0.5);

        for (std::size_t i = 0; i < base.size(); ++i) {
            CHECK(base[i].rank == mapped[i].rank);
        }
    }
}

TEST_CASE("score_dataset with override uses the column and errors when missing") {
    auto pairs = pairs_with_margins({5.0, 5.0});
    pairs[0].difficulty_override = 0.1;
    pairs[1].difficulty_override = 2.0;
    const auto records = difficulty::score_dataset(pairs, 0.5, /*override_enabled=*/true);
    CHECK(records[0].margin == 0.1);
    CHECK(records[0].route == 1);
    CHECK(records[1].margin == 2.0);
    CHECK(records[1].route == 0);

    pairs[1].difficulty_override.reset();
    CHECK_THROWS_WITH_AS(difficulty::score_dataset(pairs, 0.5, true),
                         doctest::Contains("missing on pairs: 1"), std::invalid_argument);
}

TEST_CASE("score_dataset rejects empty input") {
    CHECK_THROWS_AS(difficulty::score_dataset({}, 0.5), std::invalid_argument);
}

TEST_CASE("margin_histogram bins by hand") {
    const auto records = difficulty::score_dataset(pairs_with_margins({0.0, 0.4, 1.2, 2.0}), 0.5);
    const auto hist = difficulty::margin_histogram(records, 1.0);
    CHECK(hist.counts() == std::vector<std::int64_t>{2, 1, 1});
    CHECK(hist.total() == 4);
    CHECK(hist.fraction_below(1.0) == 0.5);
}

TEST_CASE("margin_histogram single record") {
    const auto records = difficulty::score_dataset(pairs_with_margins({3.3}), 0.5);
    const auto hist = difficulty::margin_histogram(records, 0.5);
    REQUIRE(hist.counts().size() == 1);
    CHECK(hist.counts()[0] == 1);
    CHECK(hist.total() == 1);
}

TEST_CASE("margin_histogram validates input") {
    const auto records = difficulty::score_dataset(pairs_with_margins({1.0}), 0.5);
    CHECK_THROWS_AS(difficulty::margin_histogram({}, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(difficulty::margin_histogram(records, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(difficulty::margin_histogram(records, -1.0), std::invalid_argument);
}

TEST_CASE("margin_histogram counts cover every record") {
    Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> margins;
        const int n = 1 + static_cast<int>(rng.below(200));
        for (int i = 0; i < n; ++i) margins.push_back(10.0 * rng.uniform01() - 2.0);
        const auto records = difficulty::score_dataset(pairs_with_margins(margins), 0.5);
        const auto hist = difficulty::margin_histogram(records, 0.5);
        CHECK(hist.total() == n);
    }
}

TEST_CASE("swap_perturbation matches the floor-formula blocks") {
    std::vector<std::int64_t> ten(10);
    std::iota(ten.begin(), ten.end(), 0);
    CHECK(difficulty::swap_perturbation(ten) ==
          std::vector<std::int64_t>{0, 1, 2, 3, 4, 5, 6, 7, 9, 8});

    std::vector<std::int64_t> twenty(20);
    std::iota(twenty.begin(), twenty.end(), 0);
    const auto swapped = difficulty::swap_perturbation(twenty);
    std::vector<std::int64_t> expected(20);
    std::iota(expected.begin(), expected.end(), 0);
    expected[16] = 18;
    expected[17] = 19;
    expected[18] = 16;
    expected[19] = 17;
    CHECK(swapped == expected);
}

TEST_CASE("swap_perturbation with unequal blocks keeps the prefix and swaps block order") {
    std::vector<std::int64_t> ids(61);
    std::iota(ids.begin(), ids.end(), 100);
    const auto swapped = difficulty::swap_perturbation(ids);
    REQUIRE(swapped.size() == 61);
    // prefix [0, 48) unchanged; then [54, 61) then [48, 54)
    for (int i = 0; i < 48; ++i) CHECK(swapped[i] == 100 + i);
    for (int i = 0; i < 7; ++i) CHECK(swapped[48 + i] == 100 + 54 + i);
    for (int i = 0; i < 6; ++i) CHECK(swapped[55 + i] == 100 + 48 + i);
}

TEST_CASE("swap_perturbation is a permutation and an involution on equal blocks") {
    Rng rng(51);
    for (int n : {10, 20, 30, 61, 100, 137}) {
        std::vector<std::int64_t> ids(static_cast<std::size_t>(n));
        std::iota(ids.begin(), ids.end(), 0);
        rng.shuffle(ids);
        const auto swapped = difficulty::swap_perturbation(ids);

        auto sorted_in = ids;
        auto sorted_out = swapped;
        std::sort(sorted_in.begin(), sorted_in.end());
        std::sort(sorted_out.begin(), sorted_out.end());
        CHECK(sorted_in == sorted_out);

        if (n % 10 == 0) {
            CHECK(difficulty::swap_perturbation(swapped) == ids);
        }
    }
    CHECK_THROWS_AS(difficulty::swap_perturbation({1, 2, 3}), std::invalid_argument);
}

TEST_CASE("routing manifest is written with fixed formatting") {
    TempDir tmp("difficulty_manifest");
    const auto records = difficulty::score_dataset(pairs_with_margins({0.5, 8.0, 3.0}), 0.5);
    const std::string path = tmp.file("routing.csv");
    difficulty::write_routing_manifest(records, path);
    CHECK(read_file(path) ==
          "pair_id,margin,rank,route\n"
          "0,0.500000,2,0\n"
          "1,8.000000,0,0\n"
          "2,3.000000,1,0\n");
}
