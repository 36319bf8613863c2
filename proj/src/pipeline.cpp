#include "reachguard/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "json.hpp"
#include "reachguard/checkpoint.hpp"
#include "reachguard/dataset.hpp"
#include "reachguard/digest.hpp"
#include "reachguard/fallback.hpp"
#include "reachguard/mining.hpp"
#include "reachguard/parallel.hpp"

namespace reachguard {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw ReachError("cannot write " + path.string());
    }
    return out;
}

std::vector<EnvParams> training_envs(const PipelineConfig& cfg) {
    std::vector<EnvParams> envs;
    for (std::size_t r = 0; r < cfg.runways.size(); ++r) {
        if (!cfg.runways[r].training) {
            continue;
        }
        for (TimeOfDay d1 : {TimeOfDay::morning, TimeOfDay::night}) {
            for (Cloud d2 : {Cloud::clear, Cloud::overcast}) {
                envs.push_back({d1, d2, static_cast<std::uint8_t>(r)});
            }
        }
    }
    if (envs.empty()) {
        throw ConfigError("config: no training runway in the catalog");
    }
    return envs;
}

// Poses uniform over the grid bounds; draws are serial so the set does not
// depend on the worker count.
Dataset render_corpus(std::size_t n, const GridSpec& bounds, const std::vector<EnvParams>& envs, const Sensor& sensor,
                      std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, envs.size() - 1);
    std::vector<std::pair<State, EnvParams>> draws(n);
    const auto& ax = bounds.axes;
    for (auto& [x, d] : draws) {
        x = {uniform(rng, ax[0].min, ax[0].max), uniform(rng, ax[1].min, ax[1].max),
             uniform(rng, ax[2].min, ax[2].max)};
        d = envs[pick(rng)];
    }
    std::vector<LabeledObservation> records(n);
    parallel_for(n, [&](std::size_t i) { records[i].obs = sensor.render(draws[i].first, draws[i].second); });
    return make_dataset(std::move(records), false);
}

Dataset subset(const Dataset& ds, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
    std::vector<LabeledObservation> out;
    out.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        out.push_back(ds.records[idx[i]]);
    }
    return make_dataset(std::move(out), ds.labeled);
}

std::vector<double> linspace(double lo, double hi, std::uint32_t n) {
    if (n == 1) {
        return {0.5 * (lo + hi)};
    }
    std::vector<double> v(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    return v;
}

void write_key_values(const fs::path& path, const std::vector<std::pair<std::string, double>>& rows) {
    auto out = open_out(path);
    out << "key,value\n" << std::setprecision(10);
    for (const auto& [k, v] : rows) {
        out << k << ',' << v << '\n';
    }
}

std::size_t nearest_node(const AxisSpec& a, double value) {
    const double t = std::round((value - a.min) / a.spacing());
    return static_cast<std::size_t>(std::clamp(t, 0.0, static_cast<double>(a.count - 1)));
}

const UnsafeRow* find_row(const UnsafeReport& r, const std::string& env) {
    for (const auto& row : r.rows) {
        if (row.env == env) {
            return &row;
        }
    }
    return nullptr;
}

// Effective configuration without the run directory, so runs placed in
// different directories record the same document.
std::string portable_config(PipelineConfig cfg) {
    cfg.output.clear();
    return dump_config(cfg);
}

}  // namespace

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names{"render",  "train-vbc", "solve-grid", "train-nrt",
                                                "mine",    "train-fd",  "calibrate",  "eval-fd",
                                                "fallback-eval", "retrain", "report"};
    return names;
}

std::optional<std::string> RunManifest::recorded_digest(const std::string& file) const {
    for (auto it = stages.rbegin(); it != stages.rend(); ++it) {
        const auto f = it->outputs.find(file);
        if (f != it->outputs.end()) {
            return f->second;
        }
    }
    return std::nullopt;
}

RunManifest load_manifest(const fs::path& dir) {
    RunManifest m;
    const fs::path path = dir / "manifest.json";
    if (!fs::exists(path)) {
        return m;
    }
    std::ifstream in(path);
    json j;
    try {
        in >> j;
        m.config_sha256 = j.at("config_sha256").get<std::string>();
        for (const auto& s : j.at("stages")) {
            StageRecord r;
            r.name = s.at("name").get<std::string>();
            r.inputs = s.at("inputs").get<std::map<std::string, std::string>>();
            r.outputs = s.at("outputs").get<std::map<std::string, std::string>>();
            r.seconds = s.at("seconds").get<double>();
            m.stages.push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        throw FormatError("manifest.json: " + std::string(e.what()));
    }
    return m;
}

void save_manifest(const fs::path& dir, const RunManifest& m) {
    json stages = json::array();
    for (const auto& s : m.stages) {
        stages.push_back({{"name", s.name}, {"inputs", s.inputs}, {"outputs", s.outputs}, {"seconds", s.seconds}});
    }
    const json j{{"config_sha256", m.config_sha256}, {"stages", stages}};
    auto out = open_out(dir / "manifest.json");
    out << j.dump(2) << '\n';
}

std::string condition_tag(const EnvParams& d) {
    return "rw" + std::to_string(d.runway_id) + "_" + to_string(d.d1) + "_" + to_string(d.d2);
}

EstimatorParams load_estimator(const fs::path& path, double camera_offset) {
    const Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.nrt || ckpt.layers.empty() || ckpt.layers.back().out != 2) {
        throw FormatError(path.string() + ": not an estimator checkpoint");
    }
    return {to_mlp(ckpt, Activation::tanh), camera_offset};
}

void save_estimator(const fs::path& path, const EstimatorParams& p) { save_checkpoint(path, to_checkpoint(p.net)); }

FdParams load_fd(const fs::path& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.nrt || ckpt.layers.empty() || ckpt.layers.back().out != 1) {
        throw FormatError(path.string() + ": not a detector checkpoint");
    }
    return {to_mlp(ckpt, Activation::tanh)};
}

std::vector<SeedState> fallback_lattice(const PipelineConfig& cfg) {
    const auto& ax = cfg.grid.axes;
    const double b = cfg.plant.half_width;
    // Downtrack starts leave room for a full-horizon run inside the grid.
    const double py_hi = std::max(ax[1].min, ax[1].max - cfg.plant.v * cfg.horizon);
    const auto px = linspace(-0.9 * b, 0.9 * b, cfg.fallback.px_count);
    const auto py = linspace(ax[1].min, py_hi, cfg.fallback.py_count);
    const auto th = linspace(ax[2].min, ax[2].max, cfg.fallback.theta_count);
    std::vector<SeedState> out;
    for (const EnvParams& d : cfg.tube_envs()) {
        for (double x : px) {
            for (double y : py) {
                for (double t : th) {
                    out.push_back({State{x, y, t}, d});
                }
            }
        }
    }
    return out;
}

void write_value_pgm(const fs::path& path, const std::vector<double>& values, std::size_t width, std::size_t height,
                     double scale, const std::vector<bool>& mark) {
    if (values.size() != width * height || (!mark.empty() && mark.size() != values.size())) {
        throw DimensionError("write_value_pgm: size mismatch");
    }
    std::vector<unsigned char> px(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double t = std::clamp(0.5 + 0.5 * values[i] / scale, 0.0, 1.0);
        px[i] = static_cast<unsigned char>(std::lround(t * 255.0));
    }
    auto neg = [&](std::size_t r, std::size_t c) { return values[r * width + c] <= 0.0; };
    for (std::size_t r = 0; r < height; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            const bool edge = (c + 1 < width && neg(r, c) != neg(r, c + 1)) ||
                              (r + 1 < height && neg(r, c) != neg(r + 1, c));
            if (edge) {
                px[r * width + c] = 0;
            }
            if (!mark.empty() && mark[r * width + c]) {
                px[r * width + c] = 255;
            }
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ReachError("cannot write " + path.string());
    }
    out << "P5\n" << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

const std::vector<std::string>& timing_records() {
    static const std::vector<std::string> files{"manifest.json", "fallback_comparison.csv"};
    return files;
}

std::map<std::string, std::string> artifact_digests(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) {
            continue;
        }
        const std::string rel = fs::relative(e.path(), dir).generic_string();
        if (std::find(timing_records().begin(), timing_records().end(), rel) != timing_records().end()) {
            continue;
        }
        out[rel] = sha256_file(e.path());
    }
    return out;
}

Run::Run(PipelineConfig cfg, fs::path dir, std::ostream* log) : cfg_(std::move(cfg)), dir_(std::move(dir)), log_(log) {
    cfg_.validate();
    fs::create_directories(dir_);
    manifest_ = load_manifest(dir_);
    const std::string digest = sha256_hex(portable_config(cfg_));
    if (!manifest_.config_sha256.empty() && manifest_.config_sha256 != digest) {
        this->log() << "warning: configuration differs from the one recorded in " << (dir_ / "manifest.json").string()
                    << '\n';
    }
    manifest_.config_sha256 = digest;
}

std::ostream& Run::log() {
    static std::ostream null_stream(nullptr);
    return log_ ? *log_ : null_stream;
}

void Run::begin(const std::string& stage) {
    current_ = StageRecord{};
    current_.name = stage;
    started_ = now_seconds();
    log() << "[" << stage << "]\n";
    auto out = open_out(dir_ / "config.json");
    out << portable_config(cfg_) << '\n';
}

fs::path Run::require(const std::string& file, const std::string& producer) {
    const fs::path path = dir_ / file;
    if (!fs::exists(path)) {
        throw MissingPrerequisite(file + " not found in " + dir_.string() + "; run `reachguard " + producer +
                                  "` first");
    }
    const std::string digest = sha256_file(path);
    const auto recorded = manifest_.recorded_digest(file);
    if (recorded && *recorded != digest) {
        log() << "warning: " << file << " changed since `" << producer << "` recorded it\n";
    }
    current_.inputs[file] = digest;
    return path;
}

fs::path Run::output(const std::string& file) {
    const fs::path path = dir_ / file;
    fs::create_directories(path.parent_path());
    current_.outputs[file] = "";
    return path;
}

void Run::commit() {
    for (auto& [file, digest] : current_.outputs) {
        digest = sha256_file(dir_ / file);
    }
    current_.seconds = now_seconds() - started_;
    std::erase_if(manifest_.stages, [&](const StageRecord& s) { return s.name == current_.name; });
    manifest_.stages.push_back(current_);
    save_manifest(dir_, manifest_);
    const auto flags = log().flags();
    log() << "  done in " << std::fixed << std::setprecision(1) << current_.seconds << " s\n";
    log().flags(flags);
    log() << std::setprecision(6);
}

void Run::render() {
    begin("render");
    const Sensor sensor = cfg_.sensor();
    const auto envs = training_envs(cfg_);
    save_dataset(output("corpus.vfmd"),
                 render_corpus(cfg_.vbc.corpus_size, cfg_.grid, envs, sensor, cfg_.stage_seed("render")));
    save_dataset(output("eval.vfmd"),
                 render_corpus(cfg_.vbc.eval_size, cfg_.grid, envs, sensor, cfg_.stage_seed("render-eval")));
    log() << "  " << cfg_.vbc.corpus_size << " training and " << cfg_.vbc.eval_size << " held-out images over "
          << envs.size() << " conditions\n";
    commit();
}

void Run::train_vbc() {
    begin("train-vbc");
    const Dataset corpus = load_dataset(require("corpus.vfmd", "render"));
    const Dataset eval = load_dataset(require("eval.vfmd", "render"));
    const auto res =
        train_estimator(corpus.observations(), cfg_.vbc.train, cfg_.vbc.hidden, cfg_.camera.lateral_offset);
    save_estimator(output("estimator.vfmw"), res.params);
    {
        auto out = open_out(output("vbc_loss.csv"));
        out << "epoch,loss\n" << std::setprecision(8);
        for (std::size_t i = 0; i < res.loss_curve.size(); ++i) {
            out << i + 1 << ',' << res.loss_curve[i] << '\n';
        }
    }
    const auto m = estimation_metrics(res.params, eval.observations());
    write_key_values(output("vbc_eval.csv"), {{"mse", m.mse},
                                              {"px_mae", m.px_mae},
                                              {"px_mse", m.px_mse},
                                              {"theta_mae_deg", m.theta_mae_deg},
                                              {"n", static_cast<double>(m.n)}});
    log() << "  held-out px MAE " << m.px_mae << " m, theta MAE " << m.theta_mae_deg << " deg\n";
    commit();
}

void Run::solve_grid() {
    begin("solve-grid");
    const Sensor sensor = cfg_.sensor();
    const EstimatorParams est = load_estimator(require("estimator.vfmw", "train-vbc"), cfg_.camera.lateral_offset);
    auto vol = open_out(output("brt_volumes.csv"));
    vol << "env,volume,volume_pos,volume_neg\n" << std::setprecision(8);
    for (const EnvParams& d : cfg_.tube_envs()) {
        const std::string tag = condition_tag(d);
        const PolicyTable table = precompute_policy(cfg_.grid, d, [&](const State& x, const EnvParams& e) {
            return closed_loop_policy(x, e, sensor, est, cfg_.plant);
        });
        save_policy_table(output("policy_" + tag + ".vfpt"), table);
        const GridValue gv = solve_hjbvi(cfg_.grid, table, cfg_.plant, cfg_.horizon);
        save_grid_value(output("grid_" + tag + ".vfgv"), gv);
        vol << to_string(d) << ',' << brt_volume(gv) << ',' << brt_volume_side(gv, 1) << ','
            << brt_volume_side(gv, -1) << '\n';
        log() << "  " << to_string(d) << " BRT volume " << brt_volume(gv) << '\n';
    }
    vol.close();
    commit();
}

void Run::train_nrt() {
    begin("train-nrt");
    PolicyCache cache;
    std::vector<GridValue> grids;
    for (const EnvParams& d : cfg_.tube_envs()) {
        const std::string tag = condition_tag(d);
        cache.add(load_policy_table(require("policy_" + tag + ".vfpt", "solve-grid")));
        grids.push_back(load_grid_value(require("grid_" + tag + ".vfgv", "solve-grid")));
    }
    NrtHyper hyper = cfg_.nrt;
    hyper.horizon = cfg_.horizon;
    const auto res = reachguard::train_nrt([&](const State& x, const EnvParams& d) { return cache(x, d); }, cfg_.grid,
                               cfg_.tube_envs(), cfg_.plant, hyper);
    save_checkpoint(output("nrt.vfmw"), to_checkpoint(res.params));
    {
        auto out = open_out(output("nrt_loss.csv"));
        out << "block,total,ham,init\n" << std::setprecision(8);
        for (std::size_t i = 0; i < res.history.size(); ++i) {
            const auto& h = res.history[i];
            out << i << ',' << h.total << ',' << h.ham << ',' << h.init << '\n';
        }
    }
    // Fidelity is checked against the float-rounded network that was saved.
    const ValueNet saved = value_net_from_checkpoint(to_checkpoint(res.params));
    auto out = open_out(output("nrt_fidelity.csv"));
    out << "env,sign_agreement,compared,ic_mae\n" << std::setprecision(8);
    for (const GridValue& gv : grids) {
        const auto f = nrt_fidelity(saved, gv, cfg_.plant, 5000, derive_seed(cfg_.stage_seed("nrt-fidelity"),
                                                                            condition_tag(gv.env)));
        out << to_string(gv.env) << ',' << f.sign_agreement << ',' << f.compared << ',' << f.ic_mae << '\n';
        log() << "  " << to_string(gv.env) << " sign agreement " << f.sign_agreement << ", IC MAE " << f.ic_mae
              << '\n';
    }
    out.close();
    commit();
}

void Run::mine() {
    begin("mine");
    const Sensor sensor = cfg_.sensor();
    const ValueNet vn = value_net_from_checkpoint(load_checkpoint(require("nrt.vfmw", "train-nrt")));
    const EstimatorParams est = load_estimator(require("estimator.vfmw", "train-vbc"), cfg_.camera.lateral_offset);
    const TubeQuery tube = [&](const State& x, const EnvParams& d) { return nrt_member(vn, x, d); };
    const LabelingReport lab =
        sample_and_label(cfg_.mining.samples, cfg_.grid, cfg_.tube_envs(), sensor, tube, cfg_.stage_seed("mine"));

    // Detector splits: four sixths training, one sixth each for calibration
    // and test.
    const Dataset& all = lab.data;
    std::vector<std::size_t> idx(all.records.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng split_rng(cfg_.stage_seed("mine-split"));
    std::shuffle(idx.begin(), idx.end(), split_rng);
    const std::size_t n = idx.size();
    const std::size_t n_cal = n / 6;
    const std::size_t n_test = n / 6;
    const std::size_t n_train = n - n_cal - n_test;
    save_dataset(output("fd_train.vfmd"), subset(all, idx, 0, n_train));
    save_dataset(output("fd_cal.vfmd"), subset(all, idx, n_train, n_train + n_cal));
    save_dataset(output("fd_test.vfmd"), subset(all, idx, n_train + n_cal, n));

    // Failure traces start from tube-positive states on the runway.
    std::vector<SeedState> seeds;
    for (const auto& r : all.records) {
        if (r.label == 1 && !in_failure(*r.obs.state, cfg_.plant)) {
            seeds.push_back({*r.obs.state, *r.obs.env});
        }
    }
    MiningResult mined = mine_failure_traces(seeds, sensor, est, cfg_.plant, cfg_.horizon);
    const std::size_t failing = mined.traces.size();
    const double disagreement = mined.disagreement_fraction();
    if (mined.traces.size() > cfg_.mining.max_traces) {
        mined.traces.resize(cfg_.mining.max_traces);
    }
    const fs::path traces_dir = dir_ / "traces";
    fs::remove_all(traces_dir);
    export_traces(traces_dir, mined.traces);
    for (const auto& e : fs::recursive_directory_iterator(traces_dir)) {
        if (e.is_regular_file()) {
            output(fs::relative(e.path(), dir_).generic_string());
        }
    }
    // Images seen up to the first failure; alternate traces go to the
    // retraining and evaluation sets.
    std::vector<LabeledObservation> fail_train;
    std::vector<LabeledObservation> fail_eval;
    for (std::size_t t = 0; t < mined.traces.size(); ++t) {
        const auto& tr = mined.traces[t];
        const std::size_t last = std::min(tr.first_failure_step, tr.observations.size() - 1);
        for (std::size_t i = 0; i <= last; ++i) {
            (t % 2 == 0 ? fail_train : fail_eval).push_back({tr.observations[i], 1});
        }
    }
    save_dataset(output("failures_train.vfmd"), make_dataset(std::move(fail_train), true));
    save_dataset(output("failures_eval.vfmd"), make_dataset(std::move(fail_eval), true));

    // Prediction-error labels as a baseline against the tube labels.
    const auto obs = all.observations();
    const auto pe = prediction_error_labels(obs, est, cfg_.mining.error_threshold);
    std::size_t pe_pos = 0;
    std::size_t both = 0;
    std::size_t agree = 0;
    for (std::size_t i = 0; i < pe.size(); ++i) {
        pe_pos += pe[i];
        both += pe[i] && all.records[i].label;
        agree += pe[i] == all.records[i].label;
    }
    write_key_values(output("mining_report.csv"),
                     {{"samples", static_cast<double>(all.records.size())},
                      {"positives", static_cast<double>(lab.positives)},
                      {"skipped", static_cast<double>(lab.skipped)},
                      {"trace_seeds", static_cast<double>(seeds.size())},
                      {"failing_seeds", static_cast<double>(failing)},
                      {"traces", static_cast<double>(mined.traces.size())},
                      {"disagreements", static_cast<double>(mined.disagreements.size())},
                      {"disagreement_fraction", disagreement},
                      {"prediction_error_positives", static_cast<double>(pe_pos)},
                      {"prediction_error_and_tube", static_cast<double>(both)},
                      {"label_agreement", pe.empty() ? 0.0 : static_cast<double>(agree) / pe.size()}});
    log() << "  " << lab.positives << " of " << all.records.size() << " samples in the tube; " << failing
          << " failing seeds, " << mined.disagreements.size() << " disagreements\n";
    commit();
}

void Run::train_fd() {
    begin("train-fd");
    const Dataset train = load_dataset(require("fd_train.vfmd", "mine"));
    const auto res = reachguard::train_fd(train, cfg_.fd.train, cfg_.fd.hidden);
    save_checkpoint(output("fd.vfmw"), to_checkpoint(res.params.net));
    auto out = open_out(output("fd_loss.csv"));
    out << "epoch,loss\n" << std::setprecision(8);
    for (std::size_t i = 0; i < res.loss_curve.size(); ++i) {
        out << i + 1 << ',' << res.loss_curve[i] << '\n';
    }
    out.close();
    log() << "  final loss " << (res.loss_curve.empty() ? 0.0 : res.loss_curve.back()) << '\n';
    commit();
}

void Run::calibrate(const StageOptions& opts) {
    begin("calibrate");
    const double alpha = opts.alpha.value_or(cfg_.fd.alpha);
    const FdParams fd = load_fd(require("fd.vfmw", "train-fd"));
    const fs::path cal_path = require("fd_cal.vfmd", "mine");
    Dataset cal = load_dataset(cal_path);
    if (opts.privileged_positives) {
        const Dataset test = load_dataset(require("fd_test.vfmd", "mine"));
        for (const auto& r : test.records) {
            if (r.label == 1) {
                cal.records.push_back(r);
            }
        }
    }
    const CalibrationResult c = reachguard::calibrate(fd, cal, alpha);
    if (c.degenerate()) {
        throw ConfigError("calibrate: " + std::to_string(c.n) + " positive calibration scores at alpha " +
                          std::to_string(alpha) + " need rank k = " + std::to_string(c.k) +
                          " > n; q_hat degenerates to 1 (every observation flagged). Raise alpha or add positives.");
    }
    auto out = open_out(output("calibration.txt"));
    write_calibration_record(out, c, build_timestamp(), sha256_file(cal_path));
    out.close();
    log() << "  q_hat " << c.q_hat << " from " << c.n << " positives (k = " << c.k << ")\n";
    commit();
}

void Run::eval_fd() {
    begin("eval-fd");
    const FdParams fd = load_fd(require("fd.vfmw", "train-fd"));
    std::ifstream rec(require("calibration.txt", "calibrate"));
    const CalibrationResult c = read_calibration_record(rec);
    const Dataset test = load_dataset(require("fd_test.vfmd", "mine"));
    const auto scores = fd_scores(fd, test.observations());
    std::vector<std::uint8_t> labels;
    for (const auto& r : test.records) {
        labels.push_back(r.label);
    }
    {
        auto out = open_out(output("fd_metrics.csv"));
        write_metrics_csv(out, evaluate_scores(scores, test, c.q_hat));
    }
    {
        auto out = open_out(output("roc.csv"));
        write_roc_csv(out, roc_sweep(scores, labels));
    }
    // Naive threshold against the conformal one.
    auto out = open_out(output("fd_thresholds.csv"));
    out << "threshold,q_hat,recall,accuracy,fpr\n" << std::setprecision(8);
    for (const auto& [name, q] : {std::pair<std::string, double>{"naive", 0.5}, {"conformal", c.q_hat}}) {
        const GroupMetrics m = evaluate_scores(scores, test, q).back();
        out << name << ',' << q << ',' << m.recall.value_or(std::nan("")) << ',' << m.accuracy << ','
            << m.fpr.value_or(std::nan("")) << '\n';
        log() << "  " << name << " q_hat " << q << ": recall " << m.recall.value_or(std::nan("")) << ", accuracy "
              << m.accuracy << '\n';
    }
    out.close();
    commit();
}

void Run::fallback_eval(const StageOptions& opts) {
    begin("fallback-eval");
    const Sensor sensor = cfg_.sensor();
    const EstimatorParams est = load_estimator(require("estimator.vfmw", "train-vbc"), cfg_.camera.lateral_offset);
    const FdParams fd = load_fd(require("fd.vfmw", "train-fd"));
    std::ifstream rec(require("calibration.txt", "calibrate"));
    const CalibrationResult c = read_calibration_record(rec);
    const PipelineSpec spec{&sensor, &est, make_fd_detector(fd, c.q_hat), cfg_.fallback.mode,
                            cfg_.stage_seed("fallback-eval")};
    const auto lattice = fallback_lattice(cfg_);
    std::vector<UnsafeRow> rows;
    std::optional<UnsafeReport> bare;
    if (opts.compare) {
        bare = empirical_unsafe_fraction(ControllerKind::bare, lattice, spec, cfg_.plant, cfg_.horizon);
        rows.insert(rows.end(), bare->rows.begin(), bare->rows.end());
    }
    const UnsafeReport piped = empirical_unsafe_fraction(ControllerKind::pipeline, lattice, spec, cfg_.plant,
                                                         cfg_.horizon);
    rows.insert(rows.end(), piped.rows.begin(), piped.rows.end());
    {
        auto out = open_out(output("fallback_comparison.csv"));
        write_comparison_csv(out, rows);
    }
    {
        auto out = open_out(output("fallback_unsafe.csv"));
        write_comparison_csv(out, rows, false);
    }
    for (const auto& r : rows) {
        log() << "  " << r.controller << ' ' << r.env << ": unsafe " << r.unsafe_fraction << " (" << r.n
              << " starts, " << std::lround(r.steps_per_sec) << " steps/s)\n";
    }
    if (bare) {
        auto out = open_out(output("fallback_summary.csv"));
        out << "env,bare,pipeline,relative_reduction\n" << std::setprecision(8);
        for (const auto& env : {to_string(cfg_.benchmark), std::string("all")}) {
            const UnsafeRow* b = find_row(*bare, env);
            const UnsafeRow* p = find_row(piped, env);
            if (!b || !p) {
                continue;
            }
            const double red = b->unsafe_fraction > 0.0 ? 1.0 - p->unsafe_fraction / b->unsafe_fraction : std::nan("");
            out << env << ',' << b->unsafe_fraction << ',' << p->unsafe_fraction << ',' << red << '\n';
            log() << "  " << env << " relative reduction " << red << '\n';
        }
    }
    commit();
}

void Run::retrain() {
    begin("retrain");
    const Sensor sensor = cfg_.sensor();
    const EstimatorParams est = load_estimator(require("estimator.vfmw", "train-vbc"), cfg_.camera.lateral_offset);
    const Dataset corpus = load_dataset(require("corpus.vfmd", "render"));
    const Dataset eval = load_dataset(require("eval.vfmd", "render"));
    const Dataset fail_train = load_dataset(require("failures_train.vfmd", "mine"));
    const Dataset fail_eval = load_dataset(require("failures_eval.vfmd", "mine"));
    const std::string tag = condition_tag(cfg_.benchmark);
    const GridValue before = load_grid_value(require("grid_" + tag + ".vfgv", "solve-grid"));
    if (fail_train.records.empty() || fail_eval.records.empty()) {
        throw ReachError("retrain: mining produced too few failure traces to retrain on and evaluate");
    }
    std::vector<LabeledObservation> merged;
    merged.reserve(corpus.records.size() + fail_train.records.size());
    for (const auto& r : corpus.records) {
        merged.push_back({r.obs, 0});
    }
    for (const auto& r : fail_train.records) {
        merged.push_back({r.obs, 1});
    }
    const Dataset augmented =
        upsample(make_dataset(std::move(merged), true), cfg_.vbc.upsample_fraction, cfg_.stage_seed("upsample"));
    const RetrainResult res = incremental_retrain(est, augmented.observations(), cfg_.vbc.retrain,
                                                  fail_eval.observations(), eval.observations());
    save_estimator(output("estimator_retrained.vfmw"), res.params);

    const PolicyTable table = precompute_policy(cfg_.grid, cfg_.benchmark, [&](const State& x, const EnvParams& e) {
        return closed_loop_policy(x, e, sensor, res.params, cfg_.plant);
    });
    const GridValue after = solve_hjbvi(cfg_.grid, table, cfg_.plant, cfg_.horizon);
    save_grid_value(output("grid_retrained_" + tag + ".vfgv"), after);
    const double v0 = brt_volume(before);
    const double v1 = brt_volume(after);
    write_key_values(output("retrain_report.csv"),
                     {{"augmented_size", static_cast<double>(augmented.records.size())},
                      {"augmented_failure_fraction",
                       static_cast<double>(augmented.positives()) / static_cast<double>(augmented.records.size())},
                      {"brt_volume_before", v0},
                      {"brt_volume_after", v1},
                      {"failure_mse_before", res.failure_before.mse},
                      {"failure_mse_after", res.failure_after.mse},
                      {"nominal_mse_before", res.nominal_before.mse},
                      {"nominal_mse_after", res.nominal_after.mse},
                      {"failure_px_mae_before", res.failure_before.px_mae},
                      {"failure_px_mae_after", res.failure_after.px_mae}});
    log() << "  BRT volume " << v0 << " -> " << v1 << "; failure MSE " << res.failure_before.mse << " -> "
          << res.failure_after.mse << "; nominal MSE " << res.nominal_before.mse << " -> " << res.nominal_after.mse
          << '\n';
    commit();
}

void Run::report() {
    begin("report");
    const auto& ax = cfg_.grid.axes;
    const std::size_t nx = ax[0].count;
    const std::size_t ny = ax[1].count;
    const std::size_t nt = ax[2].count;
    const std::size_t j110 = nearest_node(ax[1], 110.0);
    const double b = cfg_.plant.half_width;
    const std::string bench_tag = condition_tag(cfg_.benchmark);
    require("grid_" + bench_tag + ".vfgv", "solve-grid");

    // Rows are heading nodes, columns cross-track nodes.
    std::vector<double> l(nx * nt);
    for (std::size_t k = 0; k < nt; ++k) {
        for (std::size_t i = 0; i < nx; ++i) {
            l[k * nx + i] = signed_distance(State{ax[0].node(i), ax[1].node(j110), ax[2].node(k)}, cfg_.plant);
        }
    }
    write_value_pgm(output("report/l_py110.pgm"), l, nx, nt, b);

    std::optional<ValueNet> vn;
    if (fs::exists(dir_ / "nrt.vfmw")) {
        vn = value_net_from_checkpoint(load_checkpoint(require("nrt.vfmw", "train-nrt")));
    }
    auto diff = open_out(output("report/slice_diff.csv"));
    diff << "env,py,mean_abs_diff\n" << std::setprecision(8);
    for (const EnvParams& d : cfg_.tube_envs()) {
        const std::string tag = condition_tag(d);
        if (!fs::exists(dir_ / ("grid_" + tag + ".vfgv"))) {
            continue;
        }
        const GridValue gv = load_grid_value(require("grid_" + tag + ".vfgv", "solve-grid"));
        std::vector<double> g(nx * nt);
        std::vector<double> nn(nx * nt);
        double mad = 0.0;
        for (std::size_t k = 0; k < nt; ++k) {
            for (std::size_t i = 0; i < nx; ++i) {
                g[k * nx + i] = gv.values[cfg_.grid.index(i, j110, k)];
                if (vn) {
                    const State x{ax[0].node(i), ax[1].node(j110), ax[2].node(k)};
                    nn[k * nx + i] = nrt_value(*vn, x, d, cfg_.horizon);
                    mad += std::abs(nn[k * nx + i] - g[k * nx + i]);
                }
            }
        }
        write_value_pgm(output("report/value_" + tag + "_py110.pgm"), g, nx, nt, b);
        if (vn) {
            write_value_pgm(output("report/nrt_" + tag + "_py110.pgm"), nn, nx, nt, b);
            diff << to_string(d) << ',' << ax[1].node(j110) << ',' << mad / static_cast<double>(nx * nt) << '\n';
        }
    }
    diff.close();

    if (fs::exists(dir_ / "estimator.vfmw")) {
        const Sensor sensor = cfg_.sensor();
        const EstimatorParams est = load_estimator(require("estimator.vfmw", "train-vbc"), cfg_.camera.lateral_offset);
        const GridValue gv = load_grid_value(dir_ / ("grid_" + bench_tag + ".vfgv"));
        const Policy policy = make_vbc_policy(sensor, est, cfg_.plant);
        const std::size_t k0 = nearest_node(ax[2], 0.0);
        std::vector<double> plane(nx * ny);
        for (std::size_t j = 0; j < ny; ++j) {
            for (std::size_t i = 0; i < nx; ++i) {
                plane[j * nx + i] = gv.values[cfg_.grid.index(i, j, k0)];
            }
        }
        std::vector<bool> mark(nx * ny, false);
        auto out = open_out(output("report/trajectories.csv"));
        out << "traj,t,px,py,theta_deg,u,v,in_failure\n" << std::setprecision(8);
        std::size_t id = 0;
        for (double px0 : {-0.6 * b, -0.3 * b, 0.0, 0.3 * b, 0.6 * b}) {
            const State x0{px0, ax[1].min + 10.0, 0.0};
            const Trajectory tr = rollout(x0, policy, cfg_.benchmark, cfg_.horizon, cfg_.plant);
            for (const auto& s : tr.samples) {
                out << id << ',' << s.t << ',' << s.x.px << ',' << s.x.py << ',' << rad_to_deg(s.x.theta) << ','
                    << s.u << ',' << s.v << ',' << (s.in_failure ? 1 : 0) << '\n';
                if (cfg_.grid.contains(s.x)) {
                    mark[nearest_node(ax[1], s.x.py) * nx + nearest_node(ax[0], s.x.px)] = true;
                }
            }
            ++id;
        }
        out.close();
        write_value_pgm(output("report/trajectories_" + bench_tag + "_theta0.pgm"), plane, nx, ny, b, mark);
    }
    if (fs::exists(dir_ / "roc.csv")) {
        require("roc.csv", "eval-fd");
        fs::copy_file(dir_ / "roc.csv", output("report/roc.csv"), fs::copy_options::overwrite_existing);
    }
    commit();
}

void Run::run_stage(const std::string& name, const StageOptions& opts) {
    if (name == "render") {
        render();
    } else if (name == "train-vbc") {
        train_vbc();
    } else if (name == "solve-grid") {
        solve_grid();
    } else if (name == "train-nrt") {
        train_nrt();
    } else if (name == "mine") {
        mine();
    } else if (name == "train-fd") {
        train_fd();
    } else if (name == "calibrate") {
        calibrate(opts);
    } else if (name == "eval-fd") {
        eval_fd();
    } else if (name == "fallback-eval") {
        fallback_eval(opts);
    } else if (name == "retrain") {
        retrain();
    } else if (name == "report") {
        report();
    } else {
        throw ConfigError("unknown stage '" + name + "'");
    }
}

void Run::run_all(const StageOptions& opts) {
    for (const auto& s : stage_names()) {
        run_stage(s, opts);
    }
}

}  // namespace reachguard
