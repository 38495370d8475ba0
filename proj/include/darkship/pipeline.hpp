#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "darkship/model.hpp"

namespace darkship {

// Full SAR scene. VV/VH at 10 m/pixel (dB), bathymetry at 500 m/pixel (m).
struct SceneRaster {
    std::string scene_id;
    int width = 0;   // VV/VH pixels
    int height = 0;
    std::vector<float> vv;  // row-major height*width
    std::vector<float> vh;
    int bathy_width = 0;
    int bathy_height = 0;
    std::vector<float> bathymetry;
};

constexpr int kChipSize = 800;
constexpr int kBathyFactor = 50;  // 500 m cells over 10 m pixels

struct Chip {
    Tensor pixels;   // (1,3,800,800), channel order VV, VH, bathymetry, [0,255]
    int origin_row = 0;
    int origin_col = 0;
    int chip_index = 0;
};

struct Detection {
    double row = 0, col = 0;  // scene-pixel box center
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    int class_id = 0;  // 0 non-vessel, 1 non-fishing vessel, 2 fishing vessel
    double score = 0;
    double shore_km = std::nan("");  // unset until shore distance is applied
};

// thresholds[class_id][0] = offshore, [1] = near-shore (< 2 km)
struct ThresholdTable {
    double t[3][2] = {{0, 0}, {0, 0}, {0, 0}};
};

struct PipelineConfig {
    int overlap_px = 200;
    double nms_iou = 0.5;
    double conf_floor = 0.05;
    ThresholdTable thresholds;
    int workers = 1;
    ExecMode mode = ExecMode::Float;
};

SceneRaster normalize_scene(const SceneRaster& s);

// Nearest-neighbor 500 m -> 10 m; output dims equal the VV grid.
std::vector<float> resample_bathymetry(const SceneRaster& s);

// `s` must already be normalized. Chips are row-major over the tile grid;
// the last row/column of chips is shifted to align with the scene edge.
std::vector<Chip> tile_scene(const SceneRaster& s, int overlap_px);

std::vector<Detection> decode_heads(const HeadOutput& h, int origin_row, int origin_col,
                                    double conf_floor, int num_classes = 3);

// Greedy class-agnostic suppression; candidates ordered by
// (score desc, row asc, col asc); a kept box removes overlaps with IoU >= thresh.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh);

// Concatenate, NMS, then sort by (row, col).
std::vector<Detection> merge_chip_detections(const std::vector<std::vector<Detection>>& per_chip,
                                             double iou_thresh);

// Distance (km) to the nearest land cell (bathymetry >= 0) on the 500 m grid.
// All-water grids give +inf everywhere.
std::vector<double> shore_distance(const std::vector<float>& bathy, int bw, int bh);

std::vector<Detection> apply_adaptive_thresholds(const std::vector<Detection>& dets,
                                                 const ThresholdTable& t);

// Stage accumulators in milliseconds; filled by detect_scene when provided.
struct StageClock {
    double pre_ms = 0;
    double infer_ms = 0;
    double decode_ms = 0;
    double nms_ms = 0;
};

// normalize -> tile -> forward -> decode -> per-chip NMS -> merge ->
// shore distance -> adaptive thresholds. Deterministic for any worker count.
std::vector<Detection> detect_scene(const SceneRaster& scene, const ModelGraph& g,
                                    const WeightStore& w, const PipelineConfig& cfg,
                                    StageClock* clock = nullptr,
                                    QuantStats* qstats = nullptr);

}  // namespace darkship
