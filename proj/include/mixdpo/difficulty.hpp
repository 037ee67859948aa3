#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mixdpo/corpus.hpp"

namespace mixdpo::difficulty {

// Margin, rank, and loss-routing decision for one preference pair.
struct DifficultyRecord {
    std::int64_t pair_id = 0;
    double margin = 0.0;  // score_chosen - score_rejected (or the override)
    int rank = 0;         // 0 = largest margin = easiest; ties break by pair_id
    int route = 0;        // 1 -> SFT loss, 0 -> preference loss
};

class MarginHistogram {
public:
    MarginHistogram(std::vector<double> bin_edges, std::vector<std::int64_t> counts,
                    std::vector<double> sorted_margins);

    const std::vector<double>& bin_edges() const { return bin_edges_; }
    const std::vector<std::int64_t>& counts() const { return counts_; }
    std::int64_t total() const;

    // Fraction of margins strictly below x, computed from the raw margins so
    // it stays exact regardless of bin placement.
    double fraction_below(double x) const;

private:
    std::vector<double> bin_edges_;       // ascending; counts[i] covers [edges[i], edges[i+1])
    std::vector<std::int64_t> counts_;
    std::vector<double> sorted_margins_;  // ascending
};

// Pairwise difficulty: the rating-score difference. Throws on non-finite input.
double pairwise_margin(double score_chosen, double score_rejected);

// 1 iff margin < tau (strict); boundary pairs count as easy.
int route_indicator(double margin, double tau);

// One record per pair in input order. With override_enabled, the margin comes
// from the difficulty_override column; missing overrides are a hard error
// listing the offending pair_ids.
std::vector<DifficultyRecord> score_dataset(const std::vector<corpus::PreferencePair>& pairs,
                                            double tau, bool override_enabled = false);

MarginHistogram margin_histogram(const std::vector<DifficultyRecord>& records, double bin_width);

// Swaps the 80-90% percentile block with the 90-100% block of a list sorted
// easiest-first. Requires N >= 10.
std::vector<std::int64_t> swap_perturbation(const std::vector<std::int64_t>& sorted_ids);

// CSV with columns pair_id,margin,rank,route (margin with 6 fractional digits).
void write_routing_manifest(const std::vector<DifficultyRecord>& records, const std::string& path);

}  // namespace mixdpo::difficulty
