#include <CLI11.hpp>

#include "curvforge/cli.hpp"

// curvforge: exact transformer-block derivatives, curvature bounds, and
// dataset-size loss-convergence checks from the command line.

int main(int argc, char** argv) {
    using namespace curvforge;
    cli::RunConfig cfg;
    std::string model = "attn";
    std::string variant = "appendix";

    CLI::App app{"curvforge: transformer curvature verification"};
    app.add_option("--cmd", cfg.command, "verify | bounds | converge | selftest")->required();
    app.add_option("--L", cfg.dims.L, "sequence length");
    app.add_option("--dv", cfg.dims.d_V, "model width");
    app.add_option("--dk", cfg.dims.d_K, "key/query width");
    app.add_option("--dff", cfg.dims.d_ff, "feed-forward width");
    app.add_option("--seed", cfg.seed, "base RNG seed (CURVFORGE_SEED overrides)");
    app.add_option("--instances", cfg.instances, "random instances per check");
    app.add_option("--model", model, "attn | block");
    app.add_option("--bound-variant", variant, "appendix | maintext");
    app.add_option("--data", cfg.data, "converge input: csv path or synthetic:<count>");
    app.add_option("--radius", cfg.radius, "probe radius around the minimizer");
    app.add_option("--out", cfg.out, "report output path");
    app.add_option("--format", cfg.format, "json | csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : cli::kExitConfig;
    }

    if (model == "attn") {
        cfg.model = ModelKind::attn;
    } else if (model == "block") {
        cfg.model = ModelKind::block;
    } else {
        std::fprintf(stderr, "config error: unknown model '%s'\n", model.c_str());
        return cli::kExitConfig;
    }
    if (variant == "appendix") {
        cfg.variant = BoundVariant::appendix;
    } else if (variant == "maintext") {
        cfg.variant = BoundVariant::maintext;
    } else {
        std::fprintf(stderr, "config error: unknown bound variant '%s'\n", variant.c_str());
        return cli::kExitConfig;
    }
    cli::apply_env_seed(cfg);

    try {
        return cli::run_command(cfg);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return cli::kExitFailure;
    }
}
