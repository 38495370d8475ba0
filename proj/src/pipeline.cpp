#include "darkship/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

namespace darkship {

namespace {

float clamp_affine(float v, float lo, float hi) {
    if (std::isnan(v)) return 0.f;
    v = std::min(std::max(v, lo), hi);
    return (v - lo) / (hi - lo) * 255.f;
}

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

double det_iou(const Detection& a, const Detection& b) {
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
    const double area_a = std::max(a.x2 - a.x1, 0.0) * std::max(a.y2 - a.y1, 0.0);
    const double area_b = std::max(b.x2 - b.x1, 0.0) * std::max(b.y2 - b.y1, 0.0);
    const double uni = area_a + area_b - inter;
    return uni > 0 ? inter / uni : 0.0;
}

bool nms_order(const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.row != b.row) return a.row < b.row;
    return a.col < b.col;
}

// Large finite stand-in for "no source"; real squared distances stay far below.
constexpr double kFar = 1e15;

// 1D squared distance transform (lower-envelope-of-parabolas method).
void dt1d(const std::vector<double>& f, std::vector<double>& d, int n) {
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<int> v(n);
    std::vector<double> z(n + 1);
    int k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = 1; q < n; ++q) {
        double s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) /
                   (2.0 * q - 2.0 * v[k]);
        while (s <= z[k]) {
            --k;
            s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) /
                (2.0 * q - 2.0 * v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double dq = double(q) - v[k];
        d[q] = dq * dq + f[v[k]];
    }
}

}  // namespace

SceneRaster normalize_scene(const SceneRaster& s) {
    SceneRaster out = s;
    for (float& v : out.vv) v = clamp_affine(v, -50.f, 20.f);
    for (float& v : out.vh) v = clamp_affine(v, -50.f, 20.f);
    for (float& v : out.bathymetry) v = clamp_affine(v, -6000.f, 2000.f);
    return out;
}

std::vector<float> resample_bathymetry(const SceneRaster& s) {
    if (s.bathy_width < 1 || s.bathy_height < 1) {
        throw DimensionError("resample_bathymetry: empty bathymetry grid");
    }
    std::vector<float> out(static_cast<std::size_t>(s.height) * s.width);
    for (int y = 0; y < s.height; ++y) {
        const int by = std::min(y / kBathyFactor, s.bathy_height - 1);
        for (int x = 0; x < s.width; ++x) {
            const int bx = std::min(x / kBathyFactor, s.bathy_width - 1);
            out[static_cast<std::size_t>(y) * s.width + x] =
                s.bathymetry[static_cast<std::size_t>(by) * s.bathy_width + bx];
        }
    }
    return out;
}

std::vector<Chip> tile_scene(const SceneRaster& s, int overlap_px) {
    if (overlap_px < 0 || overlap_px >= kChipSize) {
        throw ConfigError("tile_scene: overlap must be in [0, 800)");
    }
    const int stride = kChipSize - overlap_px;
    const auto origins = [&](int extent) {
        std::vector<int> out;
        if (extent <= kChipSize) {
            out.push_back(0);
            return out;
        }
        for (int o = 0;; o += stride) {
            if (o + kChipSize >= extent) {
                out.push_back(extent - kChipSize);  // align final chip to the edge
                break;
            }
            out.push_back(o);
        }
        return out;
    };
    const std::vector<int> rows = origins(s.height);
    const std::vector<int> cols = origins(s.width);
    const std::vector<float> bathy = resample_bathymetry(s);

    std::vector<Chip> chips;
    chips.reserve(rows.size() * cols.size());
    int index = 0;
    for (int r : rows) {
        for (int c : cols) {
            Chip chip;
            chip.origin_row = r;
            chip.origin_col = c;
            chip.chip_index = index++;
            chip.pixels = Tensor(Shape{1, 3, kChipSize, kChipSize});
            const int copy_h = std::min(kChipSize, s.height - r);
            const int copy_w = std::min(kChipSize, s.width - c);
            for (int y = 0; y < copy_h; ++y) {
                const std::size_t src = static_cast<std::size_t>(r + y) * s.width + c;
                for (int x = 0; x < copy_w; ++x) {
                    chip.pixels.at(0, 0, y, x) = s.vv[src + x];
                    chip.pixels.at(0, 1, y, x) = s.vh[src + x];
                    chip.pixels.at(0, 2, y, x) = bathy[src + x];
                }
            }
            chips.push_back(std::move(chip));
        }
    }
    return chips;
}

std::vector<Detection> decode_heads(const HeadOutput& h, int origin_row, int origin_col,
                                    double conf_floor, int num_classes) {
    if (conf_floor < 0.0 || conf_floor > 1.0) {
        throw ConfigError("decode_heads: conf_floor must be in [0,1]");
    }
    std::vector<Detection> out;
    for (const HeadOutput::Scale& sc : h.scales) {
        const Shape& bs = sc.box.shape();
        const int reg_max = bs.c / 4;
        std::vector<double> prob(reg_max);
        for (int cy = 0; cy < bs.h; ++cy) {
            for (int cx = 0; cx < bs.w; ++cx) {
                double best = -1.0;
                int best_cls = 0;
                for (int k = 0; k < num_classes; ++k) {
                    const double p = 1.0 / (1.0 + std::exp(-double(sc.cls.at(0, k, cy, cx))));
                    if (p > best) {
                        best = p;
                        best_cls = k;
                    }
                }
                if (best < conf_floor) continue;

                double dist[4];  // left, top, right, bottom
                for (int side = 0; side < 4; ++side) {
                    double m = -std::numeric_limits<double>::infinity();
                    for (int b = 0; b < reg_max; ++b) {
                        m = std::max(m, double(sc.box.at(0, side * reg_max + b, cy, cx)));
                    }
                    double z = 0, e = 0;
                    for (int b = 0; b < reg_max; ++b) {
                        const double p =
                            std::exp(double(sc.box.at(0, side * reg_max + b, cy, cx)) - m);
                        z += p;
                        e += p * b;
                    }
                    dist[side] = e / z * sc.stride;
                }

                Detection d;
                const double ccx = (cx + 0.5) * sc.stride + origin_col;
                const double ccy = (cy + 0.5) * sc.stride + origin_row;
                d.x1 = ccx - dist[0];
                d.y1 = ccy - dist[1];
                d.x2 = ccx + dist[2];
                d.y2 = ccy + dist[3];
                d.col = (d.x1 + d.x2) / 2.0;
                d.row = (d.y1 + d.y2) / 2.0;
                d.class_id = best_cls;
                d.score = best;
                out.push_back(d);
            }
        }
    }
    return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh) {
    if (!(iou_thresh > 0.0) || iou_thresh > 1.0) {
        throw ConfigError("nms: iou_thresh must be in (0,1]");
    }
    std::vector<Detection> sorted = dets;
    std::stable_sort(sorted.begin(), sorted.end(), nms_order);
    std::vector<bool> dead(sorted.size(), false);
    std::vector<Detection> keep;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (dead[i]) continue;
        keep.push_back(sorted[i]);
        for (std::size_t j = i + 1; j < sorted.size(); ++j) {
            if (!dead[j] && det_iou(sorted[i], sorted[j]) >= iou_thresh) dead[j] = true;
        }
    }
    return keep;
}

std::vector<Detection> merge_chip_detections(const std::vector<std::vector<Detection>>& per_chip,
                                             double iou_thresh) {
    std::vector<Detection> all;
    for (const auto& v : per_chip) all.insert(all.end(), v.begin(), v.end());
    std::vector<Detection> merged = nms(all, iou_thresh);
    std::sort(merged.begin(), merged.end(), [](const Detection& a, const Detection& b) {
        if (a.row != b.row) return a.row < b.row;
        if (a.col != b.col) return a.col < b.col;
        if (a.class_id != b.class_id) return a.class_id < b.class_id;
        return a.score > b.score;
    });
    return merged;
}

std::vector<double> shore_distance(const std::vector<float>& bathy, int bw, int bh) {
    if (bw < 1 || bh < 1 || bathy.size() != static_cast<std::size_t>(bw) * bh) {
        throw DimensionError("shore_distance: grid dims do not match data");
    }
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> d2(bathy.size());
    for (std::size_t i = 0; i < bathy.size(); ++i) {
        d2[i] = bathy[i] >= 0.f ? 0.0 : kFar;
    }
    // columns
    std::vector<double> f(std::max(bw, bh)), d(std::max(bw, bh));
    for (int x = 0; x < bw; ++x) {
        for (int y = 0; y < bh; ++y) f[y] = d2[static_cast<std::size_t>(y) * bw + x];
        f.resize(bh);
        d.resize(bh);
        dt1d(f, d, bh);
        for (int y = 0; y < bh; ++y) d2[static_cast<std::size_t>(y) * bw + x] = d[y];
        f.resize(std::max(bw, bh));
        d.resize(std::max(bw, bh));
    }
    // rows
    for (int y = 0; y < bh; ++y) {
        for (int x = 0; x < bw; ++x) f[x] = d2[static_cast<std::size_t>(y) * bw + x];
        f.resize(bw);
        d.resize(bw);
        dt1d(f, d, bw);
        for (int x = 0; x < bw; ++x) d2[static_cast<std::size_t>(y) * bw + x] = d[x];
        f.resize(std::max(bw, bh));
        d.resize(std::max(bw, bh));
    }
    std::vector<double> km(bathy.size());
    for (std::size_t i = 0; i < bathy.size(); ++i) {
        km[i] = d2[i] >= kFar ? kInf : std::sqrt(d2[i]) * 0.5;
    }
    return km;
}

std::vector<Detection> apply_adaptive_thresholds(const std::vector<Detection>& dets,
                                                 const ThresholdTable& t) {
    std::vector<Detection> out;
    for (const Detection& d : dets) {
        if (std::isnan(d.shore_km)) {
            throw UsageError("apply_adaptive_thresholds: shore_km not populated");
        }
        if (d.class_id < 0 || d.class_id > 2) {
            throw DomainError("apply_adaptive_thresholds: class_id out of range");
        }
        const int near = d.shore_km < 2.0 ? 1 : 0;
        if (d.score >= t.t[d.class_id][near]) out.push_back(d);
    }
    return out;
}

std::vector<Detection> detect_scene(const SceneRaster& scene, const ModelGraph& g,
                                    const WeightStore& w, const PipelineConfig& cfg,
                                    StageClock* clock, QuantStats* qstats) {
    if (cfg.workers < 1) throw ConfigError("detect_scene: workers must be >= 1");

    double t0 = now_ms();
    const SceneRaster norm = normalize_scene(scene);
    std::vector<Chip> chips = tile_scene(norm, cfg.overlap_px);
    if (clock) clock->pre_ms += now_ms() - t0;

    std::vector<std::vector<Detection>> per_chip(chips.size());
    std::atomic<std::size_t> next{0};
    std::mutex agg_mu;
    StageClock local;
    QuantStats qlocal;

    auto work = [&] {
        StageClock mine;
        QuantStats qmine;
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= chips.size()) break;
            double s0 = now_ms();
            HeadOutput h = forward_chip(g, w, chips[i].pixels, cfg.mode,
                                        qstats ? &qmine : nullptr);
            double s1 = now_ms();
            std::vector<Detection> dets =
                decode_heads(h, chips[i].origin_row, chips[i].origin_col, cfg.conf_floor);
            double s2 = now_ms();
            per_chip[i] = nms(dets, cfg.nms_iou);
            double s3 = now_ms();
            mine.infer_ms += s1 - s0;
            mine.decode_ms += s2 - s1;
            mine.nms_ms += s3 - s2;
        }
        std::lock_guard<std::mutex> lk(agg_mu);
        local.infer_ms += mine.infer_ms;
        local.decode_ms += mine.decode_ms;
        local.nms_ms += mine.nms_ms;
        qlocal.input_saturated += qmine.input_saturated;
        qlocal.output_saturated += qmine.output_saturated;
        for (const auto& [k, v] : qmine.per_layer_saturated) qlocal.per_layer_saturated[k] += v;
    };

    if (cfg.workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        const int n = std::min<int>(cfg.workers, static_cast<int>(chips.size()));
        for (int i = 0; i < std::max(n, 1); ++i) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }

    double t1 = now_ms();
    std::vector<Detection> merged = merge_chip_detections(per_chip, cfg.nms_iou);

    const std::vector<double> shore =
        shore_distance(scene.bathymetry, scene.bathy_width, scene.bathy_height);
    for (Detection& d : merged) {
        const int by = std::min(std::max(int(d.row) / kBathyFactor, 0), scene.bathy_height - 1);
        const int bx = std::min(std::max(int(d.col) / kBathyFactor, 0), scene.bathy_width - 1);
        d.shore_km = shore[static_cast<std::size_t>(by) * scene.bathy_width + bx];
    }
    std::vector<Detection> out = apply_adaptive_thresholds(merged, cfg.thresholds);
    if (clock) {
        clock->infer_ms += local.infer_ms;
        clock->decode_ms += local.decode_ms;
        clock->nms_ms += local.nms_ms + (now_ms() - t1);
    }
    if (qstats) {
        qstats->input_saturated += qlocal.input_saturated;
        qstats->output_saturated += qlocal.output_saturated;
        for (const auto& [k, v] : qlocal.per_layer_saturated) qstats->per_layer_saturated[k] += v;
    }
    return out;
}

}  // namespace darkship
