#include "darkship/scoring.hpp"

#include <algorithm>
#include <cmath>

namespace darkship {

namespace {

double f1_of(int tp, int fp, int fn) {
    const double denom = 2.0 * tp + fp + fn;
    return denom > 0 ? 2.0 * tp / denom : 0.0;
}

MetricCounts counts_of(int tp, int fp, int fn) {
    MetricCounts c;
    c.tp = tp;
    c.fp = fp;
    c.fn = fn;
    c.f1 = f1_of(tp, fp, fn);
    return c;
}

bool pred_is_vessel(const Detection& d) { return d.class_id == 1 || d.class_id == 2; }
bool pred_is_fishing(const Detection& d) { return d.class_id == 2; }

}  // namespace

MatchResult match_detections(const std::vector<Detection>& preds,
                             const std::vector<GroundTruthLabel>& truth, double radius_m) {
    if (!(radius_m > 0)) throw ConfigError("match_detections: radius_m must be positive");

    struct Cand {
        double dist;
        int ti;
        int pi;
    };
    std::vector<Cand> cands;
    for (int ti = 0; ti < static_cast<int>(truth.size()); ++ti) {
        for (int pi = 0; pi < static_cast<int>(preds.size()); ++pi) {
            const double dr = preds[pi].row - truth[ti].row;
            const double dc = preds[pi].col - truth[ti].col;
            const double dist_m = std::sqrt(dr * dr + dc * dc) * 10.0;
            if (dist_m <= radius_m) cands.push_back({dist_m, ti, pi});
        }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        if (a.ti != b.ti) return a.ti < b.ti;
        return a.pi < b.pi;
    });

    MatchResult out;
    std::vector<bool> t_used(truth.size(), false), p_used(preds.size(), false);
    for (const Cand& c : cands) {
        if (t_used[c.ti] || p_used[c.pi]) continue;
        t_used[c.ti] = true;
        p_used[c.pi] = true;
        out.pairs.emplace_back(c.ti, c.pi);
    }
    for (int ti = 0; ti < static_cast<int>(truth.size()); ++ti) {
        if (!t_used[ti]) out.unmatched_truth.push_back(ti);
    }
    for (int pi = 0; pi < static_cast<int>(preds.size()); ++pi) {
        if (!p_used[pi]) out.unmatched_preds.push_back(pi);
    }
    return out;
}

ScoreReport score(const std::vector<Detection>& preds,
                  const std::vector<GroundTruthLabel>& truth, double radius_m) {
    const MatchResult m = match_detections(preds, truth, radius_m);
    ScoreReport rep;

    rep.detection = counts_of(static_cast<int>(m.pairs.size()),
                              static_cast<int>(m.unmatched_preds.size()),
                              static_cast<int>(m.unmatched_truth.size()));

    // Near-shore pool: near-shore truth, their matched preds, plus every
    // unmatched pred. Degenerates to the full-set F1 when all truth is
    // near-shore.
    int ns_tp = 0, ns_fn = 0;
    for (const auto& [ti, pi] : m.pairs) {
        (void)pi;
        if (truth[ti].distance_from_shore_km < 2.0) ++ns_tp;
    }
    for (int ti : m.unmatched_truth) {
        if (truth[ti].distance_from_shore_km < 2.0) ++ns_fn;
    }
    rep.near_shore = counts_of(ns_tp, static_cast<int>(m.unmatched_preds.size()), ns_fn);

    int v_tp = 0, v_fp = 0, v_fn = 0;
    int f_tp = 0, f_fp = 0, f_fn = 0;
    for (const auto& [ti, pi] : m.pairs) {
        const GroundTruthLabel& t = truth[ti];
        const Detection& p = preds[pi];
        if (t.confidence != Confidence::Low && t.is_vessel.has_value()) {
            if (pred_is_vessel(p) && *t.is_vessel) ++v_tp;
            else if (pred_is_vessel(p) && !*t.is_vessel) ++v_fp;
            else if (!pred_is_vessel(p) && *t.is_vessel) ++v_fn;
        }
        if (t.is_vessel.value_or(false) && t.is_fishing.has_value()) {
            if (pred_is_fishing(p) && *t.is_fishing) ++f_tp;
            else if (pred_is_fishing(p) && !*t.is_fishing) ++f_fp;
            else if (!pred_is_fishing(p) && *t.is_fishing) ++f_fn;
        }
    }
    rep.vessel = counts_of(v_tp, v_fp, v_fn);
    rep.fishing = counts_of(f_tp, f_fp, f_fn);
    return rep;
}

ThresholdTable threshold_search(const std::vector<Detection>& preds_raw,
                                const std::vector<GroundTruthLabel>& truth,
                                const std::vector<double>& grid, double radius_m) {
    if (grid.empty()) throw UsageError("threshold_search: empty grid");
    std::vector<double> g = grid;
    std::sort(g.begin(), g.end());
    for (double v : g) {
        if (v < 0.0 || v > 1.0) throw ConfigError("threshold_search: grid values must be in [0,1]");
    }
    for (const Detection& d : preds_raw) {
        if (std::isnan(d.shore_km)) {
            throw UsageError("threshold_search: shore_km not populated on predictions");
        }
    }

    ThresholdTable t;
    for (int c = 0; c < 3; ++c) t.t[c][0] = t.t[c][1] = g.front();

    const auto detection_f1 = [&](const ThresholdTable& tab) {
        const std::vector<Detection> kept = apply_adaptive_thresholds(preds_raw, tab);
        return score(kept, truth, radius_m).detection.f1;
    };

    for (int c = 0; c < 3; ++c) {
        for (int near = 0; near <= 1; ++near) {  // offshore cell first
            double best_v = t.t[c][near];
            double best_f1 = -1.0;
            for (double v : g) {  // ascending, strict improvement keeps the lowest tie
                ThresholdTable trial = t;
                trial.t[c][near] = v;
                const double f1 = detection_f1(trial);
                if (f1 > best_f1) {
                    best_f1 = f1;
                    best_v = v;
                }
            }
            t.t[c][near] = best_v;
        }
    }
    return t;
}

}  // namespace darkship
