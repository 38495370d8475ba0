#include "darkship/bench.hpp"

#include <chrono>

namespace darkship {

namespace {

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

bool same_detections(const std::vector<Detection>& a, const std::vector<Detection>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].row != b[i].row || a[i].col != b[i].col || a[i].x1 != b[i].x1 ||
            a[i].y1 != b[i].y1 || a[i].x2 != b[i].x2 || a[i].y2 != b[i].y2 ||
            a[i].class_id != b[i].class_id || a[i].score != b[i].score ||
            a[i].shore_km != b[i].shore_km) {
            return false;
        }
    }
    return true;
}

}  // namespace

StageTiming run_breakdown(const ModelGraph& g, const WeightStore& w, const SceneRaster& scene,
                          const PipelineConfig& cfg, int n_runs) {
    if (n_runs < 1) throw UsageError("run_breakdown: n_runs must be >= 1");
    PipelineConfig c = cfg;
    c.workers = 1;  // stage isolation

    detect_scene(scene, g, w, c);  // warm-up, not measured

    StageTiming t;
    for (int r = 0; r < n_runs; ++r) {
        StageClock clk;
        const double t0 = now_ms();
        detect_scene(scene, g, w, c, &clk);
        t.wall_ms += now_ms() - t0;
        t.pre_ms += clk.pre_ms;
        t.infer_ms += clk.infer_ms;
        t.decode_ms += clk.decode_ms;
        t.nms_ms += clk.nms_ms;
        t.samples.push_back(clk);
    }
    t.pre_ms /= n_runs;
    t.infer_ms /= n_runs;
    t.decode_ms /= n_runs;
    t.nms_ms /= n_runs;
    t.wall_ms /= n_runs;
    return t;
}

SweepResult run_sweep(const ModelGraph& g, const WeightStore& w, const SceneRaster& scene,
                      const PipelineConfig& cfg, const std::vector<int>& workers) {
    if (workers.empty()) throw UsageError("run_sweep: workers list is empty");
    for (int n : workers) {
        if (n < 1) throw UsageError("run_sweep: worker counts must be >= 1");
    }
    const int chips = chip_count(scene, cfg.overlap_px);

    SweepResult out;
    for (std::size_t i = 0; i < workers.size(); ++i) {
        PipelineConfig c = cfg;
        c.workers = workers[i];
        const double t0 = now_ms();
        std::vector<Detection> dets = detect_scene(scene, g, w, c);
        const double wall_s = (now_ms() - t0) / 1000.0;

        ThroughputRow row;
        row.workers = workers[i];
        row.chips = chips;
        row.wall_s = wall_s;
        row.fps = chips / wall_s;
        out.rows.push_back(row);

        if (i == 0) {
            out.detections = std::move(dets);
        } else if (!same_detections(out.detections, dets)) {
            out.detections_identical = false;
        }
    }
    return out;
}

int chip_count(const SceneRaster& scene, int overlap_px) {
    const int stride = kChipSize - overlap_px;
    const auto count = [&](int extent) {
        if (extent <= kChipSize) return 1;
        int n = 0;
        for (int o = 0;; o += stride) {
            ++n;
            if (o + kChipSize >= extent) break;
        }
        return n;
    };
    return count(scene.height) * count(scene.width);
}

}  // namespace darkship
