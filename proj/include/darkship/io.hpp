#pragma once

#include <string>
#include <vector>

#include "darkship/model.hpp"
#include "darkship/pipeline.hpp"
#include "darkship/scoring.hpp"

namespace darkship {

// --- SceneContainer: "SARSCN1\n", u32le JSON header length, JSON header,
// --- then three contiguous f32le planes (VV, VH, bathymetry).
void write_scene(const std::string& path, const SceneRaster& s);
SceneRaster read_scene(const std::string& path);

// --- WeightFile: "YW8Q1\n", u32le record count, record table, blobs in
// --- record order, trailing CRC32 (zlib polynomial) over count+table+blobs.
// Per conv layer: "<name>.weight" (f32, or i8 with fraction_bits = f_w),
// "<name>.bias" (f32); quantized stores add "<name>.qio" (i8, two bytes:
// input and output fraction bits).
void write_weights(const std::string& path, const ModelGraph& g, const WeightStore& w);
WeightStore read_weights(const std::string& path);
bool weights_quantized(const WeightStore& w);

// --- CSV formats (header row mandatory, UTF-8)
struct DetectionRow {
    std::string scene_id;
    Detection det;
};

extern const char* kDetectionsCsvHeader;
extern const char* kLabelsCsvHeader;

void write_detections_csv(const std::string& path, const std::vector<DetectionRow>& rows);
std::vector<DetectionRow> read_detections_csv(const std::string& path);

void write_labels_csv(const std::string& path, const std::vector<GroundTruthLabel>& labels);
std::vector<GroundTruthLabel> read_labels_csv(const std::string& path);

const char* class_name(int class_id);
int class_id_from_name(const std::string& name);

// --- JSON documents (deterministic key order)
std::string score_report_json(const ScoreReport& r);
std::string threshold_table_json(const ThresholdTable& t);
ThresholdTable threshold_table_from_json(const std::string& text);

// Run configuration: model spec plus pipeline knobs, all fields optional.
struct RunConfig {
    GraphSpec model;
    PipelineConfig pipeline;
    double radius_m = 200.0;
    std::uint64_t weight_seed = 1;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);  // "" -> defaults

}  // namespace darkship
