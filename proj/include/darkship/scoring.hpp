#pragma once

#include <optional>
#include <string>
#include <vector>

#include "darkship/pipeline.hpp"

namespace darkship {

enum class Confidence { High, Medium, Low };

struct GroundTruthLabel {
    std::string scene_id;
    int row = 0;
    int col = 0;
    std::optional<bool> is_vessel;
    std::optional<bool> is_fishing;
    Confidence confidence = Confidence::High;
    double distance_from_shore_km = 0;
};

struct MatchResult {
    // (truth index, pred index) pairs, plus leftovers
    std::vector<std::pair<int, int>> pairs;
    std::vector<int> unmatched_truth;
    std::vector<int> unmatched_preds;
};

struct MetricCounts {
    int tp = 0;
    int fp = 0;
    int fn = 0;
    double f1 = 0;  // 2PR/(P+R), 0/0 -> 0
};

struct ScoreReport {
    MetricCounts detection;
    MetricCounts near_shore;
    MetricCounts vessel;
    MetricCounts fishing;
};

// Greedy globally-nearest-first one-to-one assignment over pairs within
// radius_m (pixel distance * 10 m). Ties: (distance, truth index, pred index).
MatchResult match_detections(const std::vector<Detection>& preds,
                             const std::vector<GroundTruthLabel>& truth, double radius_m);

ScoreReport score(const std::vector<Detection>& preds,
                  const std::vector<GroundTruthLabel>& truth, double radius_m);

// One coordinate-descent sweep over the six (class, shore) cells, each picking
// the grid value maximizing detection F1 with the rest fixed; ties take the
// lower threshold. Cell order: class ascending, offshore before near-shore.
ThresholdTable threshold_search(const std::vector<Detection>& preds_raw,
                                const std::vector<GroundTruthLabel>& truth,
                                const std::vector<double>& grid, double radius_m = 200.0);

}  // namespace darkship
