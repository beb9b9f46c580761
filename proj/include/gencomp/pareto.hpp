#pragma once

// Accuracy / FLOPs frontier helpers: the uniform-compression baseline swept in
// 1/64 steps and the matched-ratio comparison against it.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <vector>

#include "gencomp/engine.hpp"
#include "gencomp/genome.hpp"

namespace gencomp {

inline constexpr int kBaselineSteps = 64;

/// Same compression level on every layer: pruning genes take `level`, rank
/// codes take round((1 - level) * code_max), at least 1.
inline Genome uniform_genome(const GenomeSchema& schema, double level) {
    Genome g;
    for (const auto& d : schema.genes) {
        if (d.discrete()) {
            const double c = std::round((1.0 - level) * d.code_max());
            g.values.push_back(std::clamp(c, 1.0, static_cast<double>(d.code_max())));
        } else {
            g.values.push_back(level);
        }
    }
    return g;
}

struct BaselinePoint {
    double level = 0.0;
    double accuracy = 0.0;
    double flops_ratio = 1.0;
};

inline std::vector<BaselinePoint> uniform_baseline(Scorer& scorer, int steps = kBaselineSteps) {
    std::vector<Genome> genomes;
    for (int k = 0; k <= steps; ++k) genomes.push_back(uniform_genome(scorer.schema(), static_cast<double>(k) / steps));
    const auto acc = scorer.accuracies(genomes);
    std::vector<BaselinePoint> out;
    for (int k = 0; k <= steps; ++k) {
        out.push_back({static_cast<double>(k) / steps, acc[static_cast<std::size_t>(k)],
                       scorer.flops_ratio(genomes[static_cast<std::size_t>(k)])});
    }
    return out;
}

/// Baseline grid index whose FLOPs ratio is closest to `ratio` (lowest index on ties).
inline std::size_t matched_index(const std::vector<BaselinePoint>& baseline, double ratio) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < baseline.size(); ++j) {
        if (std::abs(baseline[j].flops_ratio - ratio) < std::abs(baseline[best].flops_ratio - ratio)) best = j;
    }
    return best;
}

/// True when the evolved point is at least as accurate as a baseline point
/// within one grid step of its matched FLOPs ratio.
inline bool at_least_baseline(const std::vector<BaselinePoint>& baseline, double accuracy, double ratio) {
    if (baseline.empty()) return true;
    const std::size_t j = matched_index(baseline, ratio);
    const std::size_t lo = j == 0 ? 0 : j - 1;
    const std::size_t hi = std::min(j + 1, baseline.size() - 1);
    for (std::size_t k = lo; k <= hi; ++k) {
        if (accuracy >= baseline[k].accuracy) return true;
    }
    return false;
}

/// Sorted, duplicate-free thresholds; reports how many duplicates were dropped.
inline std::vector<double> dedupe_thresholds(std::vector<double> t, std::size_t* dropped = nullptr) {
    const std::size_t before = t.size();
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    if (dropped) *dropped = before - t.size();
    return t;
}

}  // namespace gencomp
