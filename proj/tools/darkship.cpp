#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "darkship/bench.hpp"
#include "darkship/io.hpp"
#include "darkship/synth.hpp"

namespace ds = darkship;
using nlohmann::json;

namespace {

int default_workers() {
    if (const char* env = std::getenv("DARKSHIP_WORKERS")) {
        try {
            const int n = std::stoi(env);
            if (n >= 1) return n;
        } catch (const std::logic_error&) {
        }
        throw ds::UsageError("DARKSHIP_WORKERS must be a positive integer");
    }
    return 1;
}

std::vector<double> parse_grid(const std::string& spec) {
    std::vector<double> out;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            out.push_back(std::stod(tok));
        } catch (const std::logic_error&) {
            throw ds::UsageError("bad grid value '" + tok + "'");
        }
    }
    return out;
}

std::vector<int> parse_workers_list(const std::string& spec) {
    std::vector<int> out;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            out.push_back(std::stoi(tok));
        } catch (const std::logic_error&) {
            throw ds::UsageError("bad worker count '" + tok + "'");
        }
    }
    return out;
}

void emit(const std::string& out_path, const std::string& text) {
    if (out_path.empty() || out_path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream f(out_path, std::ios::binary | std::ios::trunc);
    if (!f) throw ds::IoError("cannot write " + out_path);
    f << text;
}

struct DetectArgs {
    std::string scene, weights, config, out;
    int workers_override = 0;
};

ds::RunConfig effective_config(const std::string& config_path, int workers_override) {
    ds::RunConfig cfg = ds::load_run_config(config_path);
    if (workers_override > 0) {
        cfg.pipeline.workers = workers_override;
    } else if (config_path.empty() || cfg.pipeline.workers == 1) {
        cfg.pipeline.workers = default_workers();
    }
    return cfg;
}

int run_detect(const DetectArgs& a) {
    const ds::RunConfig cfg = effective_config(a.config, a.workers_override);
    const ds::SceneRaster scene = ds::read_scene(a.scene);
    const ds::ModelGraph g = ds::build_model(cfg.model);
    ds::WeightStore w = ds::read_weights(a.weights);
    if (cfg.pipeline.mode == ds::ExecMode::Quantized && !ds::weights_quantized(w)) {
        throw ds::UsageError("quantized mode requires a quantized weight file");
    }

    const std::vector<ds::Detection> dets = ds::detect_scene(scene, g, w, cfg.pipeline);
    std::vector<ds::DetectionRow> rows;
    rows.reserve(dets.size());
    for (const ds::Detection& d : dets) rows.push_back({scene.scene_id, d});
    ds::write_detections_csv(a.out, rows);
    std::cerr << dets.size() << " detections in " << scene.scene_id << "\n";
    return 0;
}

int run_score(const std::string& det_path, const std::string& lab_path, double radius_m,
              const std::string& out) {
    const std::vector<ds::DetectionRow> rows = ds::read_detections_csv(det_path);
    const std::vector<ds::GroundTruthLabel> labels = ds::read_labels_csv(lab_path);
    std::vector<ds::Detection> preds;
    preds.reserve(rows.size());
    for (const ds::DetectionRow& r : rows) preds.push_back(r.det);
    emit(out, ds::score_report_json(ds::score(preds, labels, radius_m)));
    return 0;
}

int run_calibrate(const std::string& weights_path, const std::vector<std::string>& scene_paths,
                  const std::string& out_path, const std::string& config_path,
                  int max_chips_per_scene) {
    const ds::RunConfig cfg = effective_config(config_path, 1);
    const ds::ModelGraph g = ds::build_model(cfg.model);
    const ds::WeightStore w = ds::read_weights(weights_path);
    if (ds::weights_quantized(w)) {
        throw ds::UsageError("calibrate expects a float weight file: " + weights_path);
    }
    if (scene_paths.empty()) throw ds::UsageError("calibrate needs at least one scene");

    std::vector<ds::Chip> all_chips;
    for (const std::string& sp : scene_paths) {
        const ds::SceneRaster norm = ds::normalize_scene(ds::read_scene(sp));
        std::vector<ds::Chip> chips = ds::tile_scene(norm, cfg.pipeline.overlap_px);
        const int take = std::min<int>(max_chips_per_scene, static_cast<int>(chips.size()));
        for (int i = 0; i < take; ++i) all_chips.push_back(std::move(chips[i]));
    }
    std::vector<const ds::Tensor*> ptrs;
    ptrs.reserve(all_chips.size());
    for (const ds::Chip& c : all_chips) ptrs.push_back(&c.pixels);

    const ds::WeightStore q = ds::calibrate_store(g, w, ptrs);
    ds::write_weights(out_path, g, q);
    std::cerr << "calibrated " << q.entries.size() << " layers over " << ptrs.size()
              << " chips\n";
    return 0;
}

int run_thresholds(const std::string& det_path, const std::string& lab_path,
                   const std::string& grid_spec, double radius_m, const std::string& out) {
    const std::vector<double> grid = parse_grid(grid_spec);
    if (grid.empty()) throw ds::UsageError("empty threshold grid");
    const std::vector<ds::DetectionRow> rows = ds::read_detections_csv(det_path);
    const std::vector<ds::GroundTruthLabel> labels = ds::read_labels_csv(lab_path);

    // The detections CSV carries no shore column; take each prediction's
    // shore bucket from its nearest label (offshore when there are none).
    std::vector<ds::Detection> preds;
    preds.reserve(rows.size());
    for (const ds::DetectionRow& r : rows) {
        ds::Detection d = r.det;
        double best = std::numeric_limits<double>::infinity();
        d.shore_km = std::numeric_limits<double>::infinity();
        for (const ds::GroundTruthLabel& l : labels) {
            const double dr = d.row - l.row, dc = d.col - l.col;
            const double dist = dr * dr + dc * dc;
            if (dist < best) {
                best = dist;
                d.shore_km = l.distance_from_shore_km;
            }
        }
        preds.push_back(d);
    }
    emit(out, ds::threshold_table_json(ds::threshold_search(preds, labels, grid, radius_m)));
    return 0;
}

int run_synth(std::uint64_t seed, int width, int height, int n_targets, double clutter,
              const std::string& out_scene, const std::string& out_labels) {
    const ds::SynthResult r = ds::synth_scene(seed, width, height, n_targets, clutter);
    ds::write_scene(out_scene, r.scene);
    ds::write_labels_csv(out_labels, r.labels);
    std::cerr << r.labels.size() << " targets in " << r.scene.width << "x" << r.scene.height
              << " scene\n";
    return 0;
}

int run_bench(const std::string& scene_path, const std::string& weights_path,
              const std::string& config_path, const std::string& workers_spec, int n_runs,
              const std::string& out, bool table) {
    const ds::RunConfig cfg = effective_config(config_path, 1);
    const ds::SceneRaster scene = ds::read_scene(scene_path);
    const ds::ModelGraph g = ds::build_model(cfg.model);
    const ds::WeightStore w = ds::read_weights(weights_path);
    const std::vector<int> workers = parse_workers_list(workers_spec);

    const ds::StageTiming bt = ds::run_breakdown(g, w, scene, cfg.pipeline, n_runs);
    const ds::SweepResult sweep = ds::run_sweep(g, w, scene, cfg.pipeline, workers);

    json j;
    j["breakdown"]["pre_ms"] = bt.pre_ms;
    j["breakdown"]["infer_ms"] = bt.infer_ms;
    j["breakdown"]["decode_ms"] = bt.decode_ms;
    j["breakdown"]["nms_ms"] = bt.nms_ms;
    j["breakdown"]["wall_ms"] = bt.wall_ms;
    j["breakdown"]["runs"] = n_runs;
    j["sweep"] = json::array();
    for (const ds::ThroughputRow& r : sweep.rows) {
        json row;
        row["workers"] = r.workers;
        row["fps"] = r.fps;
        row["chips"] = r.chips;
        row["wall_s"] = r.wall_s;
        j["sweep"].push_back(row);
    }
    j["detections_identical"] = sweep.detections_identical;
    emit(out, j.dump(2) + "\n");

    if (table) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%-8s %10s %8s %10s\n", "workers", "fps", "chips",
                      "wall_s");
        std::cerr << buf;
        for (const ds::ThroughputRow& r : sweep.rows) {
            std::snprintf(buf, sizeof(buf), "%-8d %10.3f %8d %10.3f\n", r.workers, r.fps,
                          r.chips, r.wall_s);
            std::cerr << buf;
        }
    }
    return sweep.detections_identical ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SAR vessel detection artifact"};
    app.require_subcommand(1);

    DetectArgs da;
    CLI::App* detect = app.add_subcommand("detect", "run the full detection pipeline");
    detect->add_option("--scene", da.scene, "scene container path")->required();
    detect->add_option("--weights", da.weights, "weight file path")->required();
    detect->add_option("--config", da.config, "run config JSON");
    detect->add_option("--out", da.out, "detections CSV output path")->required();
    detect->add_option("--workers", da.workers_override, "worker count override");

    std::string sc_det, sc_lab, sc_out;
    double sc_radius = 200.0;
    CLI::App* score = app.add_subcommand("score", "compute the four F1 metrics");
    score->add_option("--detections", sc_det)->required();
    score->add_option("--labels", sc_lab)->required();
    score->add_option("--radius-m", sc_radius, "match radius in meters");
    score->add_option("--out", sc_out, "report JSON path (default stdout)");

    std::string ca_weights, ca_out, ca_config;
    std::vector<std::string> ca_scenes;
    int ca_max_chips = 4;
    CLI::App* calibrate = app.add_subcommand("calibrate", "post-training INT8 calibration");
    calibrate->add_option("--weights", ca_weights, "float weight file")->required();
    calibrate->add_option("--out", ca_out, "quantized weight file")->required();
    calibrate->add_option("--scenes", ca_scenes, "calibration scenes")->required();
    calibrate->add_option("--config", ca_config, "run config JSON");
    calibrate->add_option("--max-chips-per-scene", ca_max_chips);

    std::string th_det, th_lab, th_grid, th_out;
    double th_radius = 200.0;
    CLI::App* thresholds = app.add_subcommand("thresholds", "adaptive threshold search");
    thresholds->add_option("--detections", th_det, "raw (pre-threshold) detections CSV")
        ->required();
    thresholds->add_option("--labels", th_lab)->required();
    thresholds->add_option("--grid", th_grid, "comma-separated candidate thresholds")
        ->required();
    thresholds->add_option("--radius-m", th_radius);
    thresholds->add_option("--out", th_out, "threshold JSON path (default stdout)");

    std::uint64_t sy_seed = 1;
    int sy_w = 800, sy_h = 800, sy_n = 10;
    double sy_clutter = 0.5;
    std::string sy_scene, sy_labels;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic scene + labels");
    synth->add_option("--seed", sy_seed);
    synth->add_option("--width", sy_w);
    synth->add_option("--height", sy_h);
    synth->add_option("--targets", sy_n);
    synth->add_option("--clutter", sy_clutter, "clutter level in [0,1]");
    synth->add_option("--out-scene", sy_scene)->required();
    synth->add_option("--out-labels", sy_labels)->required();

    std::string be_scene, be_weights, be_config, be_workers = "1,2,4,8", be_out;
    int be_runs = 3;
    bool be_table = false;
    CLI::App* bench = app.add_subcommand("bench", "stage breakdown + throughput sweep");
    bench->add_option("--scene", be_scene)->required();
    bench->add_option("--weights", be_weights)->required();
    bench->add_option("--config", be_config);
    bench->add_option("--workers", be_workers, "comma-separated worker counts");
    bench->add_option("--runs", be_runs, "measured breakdown runs");
    bench->add_option("--out", be_out, "benchmark JSON path (default stdout)");
    bench->add_flag("--table", be_table, "print an aligned text table to stderr");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*detect) return run_detect(da);
        if (*score) return run_score(sc_det, sc_lab, sc_radius, sc_out);
        if (*calibrate) return run_calibrate(ca_weights, ca_scenes, ca_out, ca_config,
                                             ca_max_chips);
        if (*thresholds) return run_thresholds(th_det, th_lab, th_grid, th_radius, th_out);
        if (*synth) return run_synth(sy_seed, sy_w, sy_h, sy_n, sy_clutter, sy_scene, sy_labels);
        if (*bench) return run_bench(be_scene, be_weights, be_config, be_workers, be_runs,
                                     be_out, be_table);
    } catch (const ds::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const ds::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const ds::DomainError& e) {
        std::cerr << "domain error: " << e.what() << "\n";
        return 1;
    } catch (const ds::LookupError& e) {
        std::cerr << "weights/config mismatch: " << e.what() << "\n";
        return 1;
    } catch (const ds::IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
