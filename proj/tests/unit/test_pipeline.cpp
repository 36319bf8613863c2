#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "reachguard/common.hpp"
#include "reachguard/pipeline.hpp"

using namespace reachguard;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"({
  "grid": {"px": [-15, 15, 21], "py": [100, 250, 16], "theta_deg": [-30, 30, 13]},
  "vbc": {"corpus_size": 600, "eval_size": 200, "hidden": [16], "train": {"epochs": 4}, "retrain": {"epochs": 2}},
  "nrt": {"iterations": 100, "batch_size": 200, "hidden": [16, 16]},
  "mining": {"samples": 900, "max_traces": 10},
  "fd": {"hidden": [16], "train": {"epochs": 3}},
  "fallback": {"px_count": 3, "py_count": 2, "theta_count": 3}
})";

fs::path fresh_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("reachguard_test_" + name);
    fs::remove_all(d);
    return d;
}

std::set<std::string> listing(const fs::path& dir) {
    std::set<std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        out.insert(e.path().filename().string());
    }
    return out;
}

}  // namespace

TEST_CASE("configuration") {
    const PipelineConfig d = parse_config("{}");
    CHECK(d.plant.v == 5.0);
    CHECK(d.grid.axes[0].count == 101);
    CHECK(d.fd.alpha == 0.05);
    CHECK(d.nrt.horizon == d.horizon);
    CHECK(d.vbc.train.seed == d.stage_seed("train-vbc"));
    CHECK(d.fd.train.seed != d.vbc.train.seed);

    CHECK_THROWS_AS(parse_config(R"({"bogus": 1})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"nrt": {"iteratons": 5}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"fd": {"alpha": 1.5}})"), ConfigError);
    CHECK_THROWS_AS(parse_config("{not json"), ConfigError);

    std::string text = "{}";
    apply_overrides(text, {"nrt.iterations=77", "fallback.mode=velocity", "seed=9"});
    const PipelineConfig o = parse_config(text);
    CHECK(o.nrt.iterations == 77);
    CHECK(o.fallback.mode.variant == FallbackVariant::velocity);
    CHECK(o.seed == 9);
    CHECK(o.vbc.train.seed == derive_seed(9, "train-vbc"));

    const PipelineConfig t = parse_config(kTiny);
    const PipelineConfig again = parse_config(dump_config(t));
    CHECK(dump_config(again) == dump_config(t));
    CHECK(again.grid.axes[2].max == doctest::Approx(deg_to_rad(30.0)));
    CHECK(condition_tag(EnvParams{}) == "rw0_morning_clear");
}

TEST_CASE("value slices as PGM") {
    const PipelineConfig cfg = parse_config(kTiny);
    const GridSpec& g = cfg.grid;
    const std::size_t nx = g.axes[0].count;
    const std::size_t nt = g.axes[2].count;
    std::vector<double> l;
    for (std::size_t k = 0; k < nt; ++k) {
        for (std::size_t i = 0; i < nx; ++i) {
            l.push_back(signed_distance(State{g.axes[0].node(i), 110, g.axes[2].node(k)}, cfg.plant));
        }
    }
    const fs::path dir = fresh_dir("pgm");
    fs::create_directories(dir);
    write_value_pgm(dir / "l.pgm", l, nx, nt, 10.0);
    std::ifstream in(dir / "l.pgm", std::ios::binary);
    std::string magic;
    std::size_t w = 0, h = 0, maxv = 0;
    in >> magic >> w >> h >> maxv;
    in.get();
    CHECK(magic == "P5");
    CHECK(w == nx);
    CHECK(h == nt);
    std::vector<unsigned char> px(w * h);
    in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
    CHECK(in.gcount() == static_cast<std::streamsize>(px.size()));
    // Nodes step 1.5 m; the contour sits where px crosses +-10.
    for (std::size_t c = 0; c < w; ++c) {
        const double x0 = g.axes[0].node(c);
        const bool crosses = c + 1 < w && ((x0 < -10) != (g.axes[0].node(c + 1) < -10) ||
                                           (x0 <= 10) != (g.axes[0].node(c + 1) <= 10));
        CHECK((px[c] == 0) == crosses);
    }
    CHECK(px[nx / 2] == 255);
    CHECK_THROWS_AS(write_value_pgm(dir / "x.pgm", l, nx + 1, nt, 1.0), DimensionError);
    fs::remove_all(dir);
}

TEST_CASE("stages") {
    PipelineConfig cfg = parse_config(kTiny);
    std::ostringstream log;

    SUBCASE("missing prerequisites are named") {
        Run run(cfg, fresh_dir("missing"), &log);
        try {
            run.solve_grid();
            FAIL("expected MissingPrerequisite");
        } catch (const MissingPrerequisite& e) {
            CHECK(std::string(e.what()).find("reachguard train-vbc") != std::string::npos);
        }
        CHECK_THROWS_AS(run.run_stage("no-such-stage"), ConfigError);
    }

    SUBCASE("stages write only their artifacts and rerun identically") {
        const fs::path a = fresh_dir("a");
        const fs::path b = fresh_dir("b");
        Run ra(cfg, a, &log);
        ra.render();
        CHECK(listing(a) == std::set<std::string>{"config.json", "manifest.json", "corpus.vfmd", "eval.vfmd"});
        ra.train_vbc();
        ra.solve_grid();
        Run rb(cfg, b, &log);
        for (const char* s : {"render", "train-vbc", "solve-grid"}) {
            rb.run_stage(s);
        }
        CHECK(artifact_digests(a) == artifact_digests(b));
        CHECK(artifact_digests(a).count("brt_volumes.csv") == 1);
        CHECK(ra.manifest().stages.size() == 3);
        CHECK(ra.manifest().recorded_digest("corpus.vfmd") == artifact_digests(a).at("corpus.vfmd"));

        // A rerun replaces the stage record instead of appending.
        ra.solve_grid();
        CHECK(ra.manifest().stages.size() == 3);
        CHECK(load_manifest(a).stages.size() == 3);

        ra.train_nrt();
        ra.mine();
        ra.train_fd();
        StageOptions tight;
        tight.alpha = 0.001;
        CHECK_THROWS_AS(ra.calibrate(tight), ConfigError);
        fs::remove_all(a);
        fs::remove_all(b);
    }
}
