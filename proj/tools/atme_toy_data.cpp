#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "atme/toy_dataset.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Render a paired two-tone toy dataset (side-by-side composites)"};
    std::string out;
    std::string split = "train";
    int pairs = 200;
    uint64_t seed = 0;
    int size = 64;
    app.add_option("--out", out, "Dataset root directory")->required();
    app.add_option("--split", split, "Split subdirectory name");
    app.add_option("--pairs", pairs, "Number of image pairs");
    app.add_option("--seed", seed, "Render seed");
    app.add_option("--size", size, "Square image size per half");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        atme::write_toy_dataset(out, split, pairs, seed, size);
        std::printf("wrote %d pairs (%dx%d composites) to %s/%s\n", pairs, size, 2 * size,
                    out.c_str(), split.c_str());
        return 0;
    } catch (const atme::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
