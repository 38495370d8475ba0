// Writes a deterministic seeded float weight file for a given model config.
#include <iostream>

#include "CLI11.hpp"

#include "darkship/io.hpp"

namespace ds = darkship;

int main(int argc, char** argv) {
    CLI::App app{"seeded weight file generator"};
    std::string config, out;
    std::uint64_t seed = 0;
    app.add_option("--config", config, "run config JSON (model section)");
    app.add_option("--seed", seed, "override the config weight seed");
    app.add_option("--out", out, "weight file path")->required();
    CLI11_PARSE(app, argc, argv);

    try {
        const ds::RunConfig cfg = ds::load_run_config(config);
        const ds::ModelGraph g = ds::build_model(cfg.model);
        const std::uint64_t s = seed != 0 ? seed : cfg.weight_seed;
        ds::write_weights(out, g, ds::seeded_weights(g, s));
        std::cerr << "wrote " << g.conv_layer_names().size() << " layers (seed " << s << ")\n";
    } catch (const ds::IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
