#include "darkship/synth.hpp"

#include <cmath>
#include <random>

namespace darkship {

SynthResult synth_scene(std::uint64_t seed, int width, int height, int n_targets,
                        double clutter_level, const std::string& scene_id) {
    if (width < kChipSize || height < kChipSize) {
        throw UsageError("synth_scene: dims must be at least 800x800");
    }
    if (n_targets < 0) throw UsageError("synth_scene: n_targets must be >= 0");
    if (clutter_level < 0.0 || clutter_level > 1.0) {
        throw UsageError("synth_scene: clutter_level must be in [0,1]");
    }

    SynthResult out;
    SceneRaster& s = out.scene;
    s.scene_id = scene_id;
    s.width = width;
    s.height = height;
    s.bathy_width = (width + kBathyFactor - 1) / kBathyFactor;
    s.bathy_height = (height + kBathyFactor - 1) / kBathyFactor;

    // Bathymetry: a land band along the left edge, then deepening water.
    const int land_cols = std::max(2, s.bathy_width / 10);
    s.bathymetry.resize(static_cast<std::size_t>(s.bathy_width) * s.bathy_height);
    for (int by = 0; by < s.bathy_height; ++by) {
        for (int bx = 0; bx < s.bathy_width; ++bx) {
            float v;
            if (bx < land_cols) {
                v = 20.f + 10.f * (land_cols - bx);
            } else {
                v = std::max(-3000.f, -100.f - 30.f * (bx - land_cols));
            }
            s.bathymetry[static_cast<std::size_t>(by) * s.bathy_width + bx] = v;
        }
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    // Multiplicative speckle: exponential intensity around a -30 dB mean,
    // spread scaled by clutter_level; land pixels sit ~10 dB brighter.
    const double spread = 0.5 + 0.5 * clutter_level;
    s.vv.resize(static_cast<std::size_t>(width) * height);
    s.vh.resize(s.vv.size());
    for (int y = 0; y < height; ++y) {
        const int by = std::min(y / kBathyFactor, s.bathy_height - 1);
        for (int x = 0; x < width; ++x) {
            const int bx = std::min(x / kBathyFactor, s.bathy_width - 1);
            const bool land =
                s.bathymetry[static_cast<std::size_t>(by) * s.bathy_width + bx] >= 0.f;
            const double e = std::max(-std::log(1.0 - uni(rng)), 1e-6);
            const double base = land ? -20.0 : -30.0;
            const double vv_db = base + 10.0 * std::log10(e) * spread;
            const std::size_t i = static_cast<std::size_t>(y) * width + x;
            s.vv[i] = static_cast<float>(vv_db);
            s.vh[i] = static_cast<float>(vv_db - 8.0 + 2.0 * (uni(rng) - 0.5));
        }
    }

    const std::vector<double> shore = shore_distance(s.bathymetry, s.bathy_width, s.bathy_height);
    const auto bathy_at = [&](int row, int col) {
        const int by = std::min(row / kBathyFactor, s.bathy_height - 1);
        const int bx = std::min(col / kBathyFactor, s.bathy_width - 1);
        return s.bathymetry[static_cast<std::size_t>(by) * s.bathy_width + bx];
    };

    const int margin = 50;
    constexpr double kMinSep = 60.0;
    for (int t = 0; t < n_targets; ++t) {
        int row = 0, col = 0;
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            row = margin + static_cast<int>(uni(rng) * (height - 2 * margin));
            col = margin + static_cast<int>(uni(rng) * (width - 2 * margin));
            if (bathy_at(row, col) >= 0.f) continue;  // water only
            placed = true;
            for (const GroundTruthLabel& prev : out.labels) {
                const double dr = row - prev.row, dc = col - prev.col;
                if (dr * dr + dc * dc < kMinSep * kMinSep) {
                    placed = false;
                    break;
                }
            }
        }
        if (!placed) break;  // scene too crowded for more targets

        const double length = 5.0 + 25.0 * uni(rng);
        const double beam = std::max(2.0, length / 4.0);
        const double theta = uni(rng) * 3.14159265358979323846;
        const double peak_db = -10.0 + 10.0 * uni(rng);  // >= +15 dB over clutter mean
        const double ct = std::cos(theta), st = std::sin(theta);
        const double a = length / 2.0, b = beam / 2.0;
        const int ext = static_cast<int>(std::ceil(a)) + 1;
        for (int dy = -ext; dy <= ext; ++dy) {
            for (int dx = -ext; dx <= ext; ++dx) {
                const int y = row + dy, x = col + dx;
                if (y < 0 || y >= height || x < 0 || x >= width) continue;
                const double u = dx * ct + dy * st;
                const double v = -dx * st + dy * ct;
                const double r2 = (u / a) * (u / a) + (v / b) * (v / b);
                if (r2 > 1.0) continue;
                const std::size_t i = static_cast<std::size_t>(y) * width + x;
                const float val = static_cast<float>(peak_db - 5.0 * r2);
                s.vv[i] = std::max(s.vv[i], val);
                s.vh[i] = std::max(s.vh[i], val - 6.f);
            }
        }

        GroundTruthLabel l;
        l.scene_id = scene_id;
        l.row = row;
        l.col = col;
        const int cls = static_cast<int>(uni(rng) * 3.0) % 3;
        l.is_vessel = cls != 0;
        if (cls == 0) {
            l.is_fishing = std::nullopt;
        } else {
            l.is_fishing = cls == 2;
        }
        l.confidence = uni(rng) < 0.8 ? Confidence::High : Confidence::Medium;
        const int by = std::min(row / kBathyFactor, s.bathy_height - 1);
        const int bx = std::min(col / kBathyFactor, s.bathy_width - 1);
        l.distance_from_shore_km = shore[static_cast<std::size_t>(by) * s.bathy_width + bx];
        out.labels.push_back(std::move(l));
    }
    return out;
}

}  // namespace darkship
