#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "reachguard/config.hpp"
#include "reachguard/fd.hpp"
#include "reachguard/levelset.hpp"
#include "reachguard/nrt.hpp"
#include "reachguard/vbc.hpp"

namespace reachguard {

// Stage names in pipeline order.
const std::vector<std::string>& stage_names();

struct StageRecord {
    std::string name;
    std::map<std::string, std::string> inputs;  // run-relative path -> sha256
    std::map<std::string, std::string> outputs;
    double seconds = 0.0;
};

struct RunManifest {
    std::string config_sha256;
    std::vector<StageRecord> stages;

    // Digest the manifest last recorded for an output file.
    std::optional<std::string> recorded_digest(const std::string& file) const;
};

RunManifest load_manifest(const std::filesystem::path& dir);
void save_manifest(const std::filesystem::path& dir, const RunManifest& m);

// Options that only some stages read.
struct StageOptions {
    std::optional<double> alpha;       // calibrate
    bool privileged_positives = false;  // calibrate: add test positives
    bool compare = false;               // fallback-eval: also run the bare VBC
};

// "rw0_morning_clear"
std::string condition_tag(const EnvParams& d);

EstimatorParams load_estimator(const std::filesystem::path& path, double camera_offset);
void save_estimator(const std::filesystem::path& path, const EstimatorParams& p);
FdParams load_fd(const std::filesystem::path& path);

// Initial states of the fallback comparison: an on-runway lattice crossed
// with the benchmark runway's conditions.
std::vector<SeedState> fallback_lattice(const PipelineConfig& cfg);

// 8-bit binary PGM. Values map linearly from [-scale, scale] to [0, 255];
// pixels where the sign changes against the right or lower neighbour are
// drawn black as the zero-level contour. Pixels set in `mark` are white.
void write_value_pgm(const std::filesystem::path& path, const std::vector<double>& values, std::size_t width,
                     std::size_t height, double scale, const std::vector<bool>& mark = {});

// Orchestrates stages over one run directory. Each stage checks its inputs,
// writes its artifacts and appends a manifest entry.
class Run {
public:
    Run(PipelineConfig cfg, std::filesystem::path dir, std::ostream* log = nullptr);

    const PipelineConfig& config() const { return cfg_; }
    const std::filesystem::path& dir() const { return dir_; }
    const RunManifest& manifest() const { return manifest_; }

    void render();
    void train_vbc();
    void solve_grid();
    void train_nrt();
    void mine();
    void train_fd();
    void calibrate(const StageOptions& opts = {});
    void eval_fd();
    void fallback_eval(const StageOptions& opts = {});
    void retrain();
    void report();

    void run_stage(const std::string& name, const StageOptions& opts = {});
    void run_all(const StageOptions& opts = {});

private:
    std::filesystem::path require(const std::string& file, const std::string& producer);
    std::filesystem::path output(const std::string& file);
    void begin(const std::string& stage);
    void commit();
    std::ostream& log();

    PipelineConfig cfg_;
    std::filesystem::path dir_;
    std::ostream* log_;
    RunManifest manifest_;
    StageRecord current_;
    double started_ = 0.0;
};

// Run files that carry wall-clock measurements.
const std::vector<std::string>& timing_records();

// sha256 of every regular file under `dir` except the timing records, keyed
// by run-relative path.
std::map<std::string, std::string> artifact_digests(const std::filesystem::path& dir);

}  // namespace reachguard
