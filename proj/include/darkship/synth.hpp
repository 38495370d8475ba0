#pragma once

#include "darkship/pipeline.hpp"
#include "darkship/scoring.hpp"

namespace darkship {

struct SynthResult {
    SceneRaster scene;
    std::vector<GroundTruthLabel> labels;
};

// Deterministic seeded fixture: multiplicative speckle clutter, a land band in
// the bathymetry, and bright elongated targets (length 5-30 px) at least
// +15 dB over the clutter mean. clutter_level in [0,1] scales speckle spread.
SynthResult synth_scene(std::uint64_t seed, int width, int height, int n_targets,
                        double clutter_level, const std::string& scene_id = "synthetic");

}  // namespace darkship
