#include "mixdpo/difficulty.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "mixdpo/csv.hpp"

namespace mixdpo::difficulty {

double pairwise_margin(double score_chosen, double score_rejected) {
    if (!std::isfinite(score_chosen) || !std::isfinite(score_rejected)) {
        throw std::domain_error("non-finite rating score");
    }
    return score_chosen - score_rejected;
}

int route_indicator(double margin, double tau) {
    return margin < tau ? 1 : 0;
}

std::vector<DifficultyRecord> score_dataset(const std::vector<corpus::PreferencePair>& pairs,
                                            double tau, bool override_enabled) {
    if (pairs.empty()) throw std::invalid_argument("score_dataset: empty dataset");

    if (override_enabled) {
        std::string missing;
        for (const auto& pair : pairs) {
            if (!pair.difficulty_override.has_value()) {
                if (!missing.empty()) missing += ", ";
                missing += std::to_string(pair.pair_id);
            }
        }
        if (!missing.empty()) {
            throw std::invalid_argument("difficulty_override enabled but missing on pairs: " + missing);
        }
    }

    std::vector<DifficultyRecord> records;
    records.reserve(pairs.size());
    for (const auto& pair : pairs) {
        double margin;
        try {
            margin = override_enabled ? *pair.difficulty_override
                                      : pairwise_margin(pair.score_chosen, pair.score_rejected);
        } catch (const std::domain_error&) {
            throw std::domain_error("non-finite score on pair " + std::to_string(pair.pair_id));
        }
        if (!std::isfinite(margin)) {
            throw std::domain_error("non-finite margin on pair " + std::to_string(pair.pair_id));
        }
        records.push_back({pair.pair_id, margin, 0, route_indicator(margin, tau)});
    }

    // Rank 0 = largest margin; ties break by ascending pair_id.
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (records[a].margin != records[b].margin) return records[a].margin > records[b].margin;
        return records[a].pair_id < records[b].pair_id;
    });
    for (std::size_t r = 0; r < order.size(); ++r) {
        records[order[r]].rank = static_cast<int>(r);
    }
    return records;
}

MarginHistogram::MarginHistogram(std::vector<double> bin_edges, std::vector<std::int64_t> counts,
                                 std::vector<double> sorted_margins)
    : bin_edges_(std::move(bin_edges)),
      counts_(std::move(counts)),
      sorted_margins_(std::move(sorted_margins)) {}

std::int64_t MarginHistogram::total() const {
    return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

double MarginHistogram::fraction_below(double x) const {
    if (sorted_margins_.empty()) return 0.0;
    const auto it = std::lower_bound(sorted_margins_.begin(), sorted_margins_.end(), x);
    return static_cast<double>(it - sorted_margins_.begin()) /
           static_cast<double>(sorted_margins_.size());
}

MarginHistogram margin_histogram(const std::vector<DifficultyRecord>& records, double bin_width) {
    if (records.empty()) throw std::invalid_argument("margin_histogram: no records");
    if (!(bin_width > 0.0)) throw std::invalid_argument("margin_histogram: bin_width must be > 0");

    std::vector<double> margins;
    margins.reserve(records.size());
    for (const auto& rec : records) margins.push_back(rec.margin);
    std::sort(margins.begin(), margins.end());

    // Bins are aligned to multiples of bin_width so threshold grids land on edges.
    const double lo = std::floor(margins.front() / bin_width) * bin_width;
    const auto bin_of = [&](double m) {
        return static_cast<std::size_t>(std::floor((m - lo) / bin_width));
    };
    const std::size_t n_bins = bin_of(margins.back()) + 1;

    std::vector<std::int64_t> counts(n_bins, 0);
    for (double m : margins) counts[std::min(bin_of(m), n_bins - 1)]++;

    std::vector<double> edges(n_bins + 1);
    for (std::size_t i = 0; i <= n_bins; ++i) edges[i] = lo + static_cast<double>(i) * bin_width;

    return MarginHistogram(std::move(edges), std::move(counts), std::move(margins));
}

std::vector<std::int64_t> swap_perturbation(const std::vector<std::int64_t>& sorted_ids) {
    const std::size_t n = sorted_ids.size();
    if (n < 10) {
        throw std::invalid_argument("swap_perturbation requires at least 10 pairs, got " +
                                    std::to_string(n));
    }
    const std::size_t a = n * 8 / 10;  // floor(0.8 N)
    const std::size_t b = n * 9 / 10;  // floor(0.9 N)

    std::vector<std::int64_t> out;
    out.reserve(n);
    out.insert(out.end(), sorted_ids.begin(), sorted_ids.begin() + a);
    out.insert(out.end(), sorted_ids.begin() + b, sorted_ids.end());
    out.insert(out.end(), sorted_ids.begin() + a, sorted_ids.begin() + b);
    return out;
}

void write_routing_manifest(const std::vector<DifficultyRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write routing manifest: " + path);
    out << "pair_id,margin,rank,route\n";
    for (const auto& rec : records) {
        out << rec.pair_id << ',' << fmt6(rec.margin) << ',' << rec.rank << ',' << rec.route << '\n';
    }
}

}  // namespace mixdpo::difficulty
