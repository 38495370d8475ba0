#pragma once

#include "darkship/pipeline.hpp"

namespace darkship {

struct StageTiming {
    double pre_ms = 0;
    double infer_ms = 0;
    double decode_ms = 0;
    double nms_ms = 0;
    double wall_ms = 0;  // mean end-to-end wall time per run
    std::vector<StageClock> samples;  // one per measured run

    double total_ms() const { return pre_ms + infer_ms + decode_ms + nms_ms; }
};

struct ThroughputRow {
    int workers = 0;
    double fps = 0;
    int chips = 0;
    double wall_s = 0;
};

struct SweepResult {
    std::vector<ThroughputRow> rows;
    bool detections_identical = true;  // across all worker counts
    std::vector<Detection> detections;
};

// Mean per-stage latency over n_runs single-worker passes; one unmeasured
// warm-up pass runs first.
StageTiming run_breakdown(const ModelGraph& g, const WeightStore& w, const SceneRaster& scene,
                          const PipelineConfig& cfg, int n_runs);

// One full detection pass per worker count; verifies the outputs match.
SweepResult run_sweep(const ModelGraph& g, const WeightStore& w, const SceneRaster& scene,
                      const PipelineConfig& cfg, const std::vector<int>& workers);

int chip_count(const SceneRaster& scene, int overlap_px);

}  // namespace darkship
