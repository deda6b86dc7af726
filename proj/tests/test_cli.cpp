#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "curvforge/cli.hpp"

using namespace curvforge;
using namespace curvforge::cli;

namespace {

std::string tmp_path(const std::string& name) {
    return std::string("/tmp/curvforge_cli_") + name;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

RunConfig small_cfg(const std::string& command) {
    RunConfig cfg;
    cfg.command = command;
    cfg.instances = 2;
    cfg.seed = 7;
    return cfg;
}

} // namespace

TEST_CASE("selftest passes at default config") {
    REQUIRE(run_command(small_cfg("selftest")) == kExitPass);
}

TEST_CASE("verify passes and writes a parseable JSON report") {
    RunConfig cfg = small_cfg("verify");
    cfg.out = tmp_path("verify.json");
    REQUIRE(run_command(cfg) == kExitPass);
    const auto doc = ordered_json::parse(slurp(cfg.out));
    REQUIRE(doc["schema"] == 1);
    REQUIRE(doc["pass"] == true);
    REQUIRE(doc["records"].is_array());
    REQUIRE(doc["records"].size() > 0);
    for (const auto& r : doc["records"]) {
        REQUIRE(r.contains("name"));
        REQUIRE(r.contains("seed"));
        REQUIRE(r.contains("value"));
        REQUIRE(r.contains("tol"));
        REQUIRE(r.contains("pass"));
    }
}

TEST_CASE("identical configs produce byte-identical reports") {
    RunConfig cfg = small_cfg("verify");
    cfg.out = tmp_path("det_a.json");
    REQUIRE(run_command(cfg) == kExitPass);
    const std::string a = slurp(cfg.out);
    cfg.out = tmp_path("det_b.json");
    REQUIRE(run_command(cfg) == kExitPass);
    REQUIRE(a == slurp(cfg.out));
}

TEST_CASE("csv report format emits one row per check") {
    RunConfig cfg = small_cfg("verify");
    cfg.format = "csv";
    cfg.out = tmp_path("verify.csv");
    REQUIRE(run_command(cfg) == kExitPass);
    std::istringstream lines(slurp(cfg.out));
    std::string line;
    REQUIRE(std::getline(lines, line));
    REQUIRE(line.rfind("# command=verify", 0) == 0);
    REQUIRE(std::getline(lines, line));
    REQUIRE(line == "name,seed,value,tol,pass");
    std::size_t rows = 0;
    while (std::getline(lines, line)) {
        if (!line.empty()) ++rows;
    }
    REQUIRE(rows > 0);
}

TEST_CASE("zero instances is a config error") {
    RunConfig cfg = small_cfg("verify");
    cfg.instances = 0;
    REQUIRE(run_command(cfg) == kExitConfig);
}

TEST_CASE("width-1 rows are rejected as a config error") {
    RunConfig cfg = small_cfg("verify");
    cfg.dims.d_V = 1;  // layer norm is undefined on zero-variance rows
    REQUIRE(run_command(cfg) == kExitConfig);
}

TEST_CASE("unknown command and bad format are config errors") {
    REQUIRE(run_command(small_cfg("frobnicate")) == kExitConfig);
    RunConfig cfg = small_cfg("verify");
    cfg.format = "yaml";
    REQUIRE(run_command(cfg) == kExitConfig);
}

TEST_CASE("bounds pass for both models and list all weight-pair records") {
    RunConfig cfg = small_cfg("bounds");
    cfg.model = ModelKind::attn;
    cfg.out = tmp_path("bounds_attn.json");
    REQUIRE(run_command(cfg) == kExitPass);

    cfg.model = ModelKind::block;
    cfg.variant = BoundVariant::maintext;
    cfg.out = tmp_path("bounds_block.json");
    REQUIRE(run_command(cfg) == kExitPass);
    const auto doc = ordered_json::parse(slurp(cfg.out));
    REQUIRE(doc["variant"] == "maintext");
    std::size_t pair_names = 0;
    std::string last;
    for (const auto& r : doc["records"]) {
        const std::string name = r["name"];
        if (name.rfind("block_pair_", 0) == 0 && name != last) {
            ++pair_names;
            last = name;
        }
    }
    REQUIRE(pair_names == 25);
}

TEST_CASE("converge requires a dataset source") {
    RunConfig cfg = small_cfg("converge");
    cfg.data = "";
    REQUIRE(run_command(cfg) == kExitConfig);
    cfg.data = "synthetic:1";
    REQUIRE(run_command(cfg) == kExitConfig);
}

TEST_CASE("malformed csv dataset is a config error") {
    const std::string path = tmp_path("bad.csv");
    {
        std::ofstream f(path);
        f << "# dims L=3 dV=4\n";
        f << "1,2,3\n";
    }
    RunConfig cfg = small_cfg("converge");
    cfg.data = path;
    REQUIRE(run_command(cfg) == kExitConfig);
}

TEST_CASE("synthetic attention run passes and writes a full trace") {
    RunConfig cfg = small_cfg("converge");
    cfg.data = "synthetic:512";
    cfg.out = tmp_path("trace.csv");
    REQUIRE(run_command(cfg) == kExitPass);
    std::istringstream lines(slurp(cfg.out));
    std::string line;
    std::size_t delta_rows = 0;
    bool saw_header = false;
    while (std::getline(lines, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!saw_header) {
            REQUIRE(line == "k,loss,delta,envelope,grad_norm,M,L_bar");
            saw_header = true;
            continue;
        }
        if (line.rfind("1,", 0) != 0) ++delta_rows;  // delta is defined from k=2 on
    }
    REQUIRE(saw_header);
    REQUIRE(delta_rows == 511);
}

TEST_CASE("environment variable overrides the configured seed") {
    RunConfig cfg = small_cfg("verify");
    cfg.seed = 7;
    REQUIRE(setenv("CURVFORGE_SEED", "123", 1) == 0);
    apply_env_seed(cfg);
    REQUIRE(cfg.seed == 123);
    REQUIRE(setenv("CURVFORGE_SEED", "not-a-number", 1) == 0);
    apply_env_seed(cfg);
    REQUIRE(cfg.seed == 123);
    REQUIRE(unsetenv("CURVFORGE_SEED") == 0);
    apply_env_seed(cfg);
    REQUIRE(cfg.seed == 123);
}
