#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "reachguard/common.hpp"
#include "reachguard/config.hpp"
#include "reachguard/pipeline.hpp"

using namespace reachguard;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitMissing = 3;
constexpr int kExitDivergence = 4;

const std::map<std::string, std::string> kStageHelp{
    {"render", "Render the estimator training and held-out corpora"},
    {"train-vbc", "Train the pixel-to-state estimator"},
    {"solve-grid", "Solve the closed-loop tube on the grid for each condition"},
    {"train-nrt", "Fit the condition-parameterised value network"},
    {"mine", "Label samples by the tube and mine failure traces"},
    {"train-fd", "Train the failure detector"},
    {"calibrate", "Conformal calibration of the detector threshold"},
    {"eval-fd", "Detector metrics, ROC and threshold comparison"},
    {"fallback-eval", "Unsafe fraction of the switched pipeline"},
    {"retrain", "Retrain the estimator on mined failures and re-solve"},
    {"report", "Value slices, trajectories and plots"},
};

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reachability analysis of a vision-based taxiing controller"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
    StageOptions opts;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON configuration; defaults apply when omitted");
        sub->add_option("--out", out_dir, "Run directory (overrides config output)");
        sub->add_option("--seed", seed, "Global seed");
        sub->add_option("overrides", overrides, "key=value overrides, e.g. nrt.iterations=500");
    };

    std::vector<CLI::App*> subs;
    for (const auto& name : stage_names()) {
        CLI::App* sub = app.add_subcommand(name, kStageHelp.at(name));
        add_common(sub);
        if (name == "calibrate") {
            sub->add_option("--alpha", opts.alpha, "Miscoverage level");
            sub->add_flag("--privileged-positives", opts.privileged_positives,
                          "Also calibrate on the test split's positives");
        }
        if (name == "fallback-eval") {
            sub->add_flag("--compare", opts.compare, "Also roll out the bare VBC");
        }
        subs.push_back(sub);
    }
    CLI::App* all = app.add_subcommand("all", "Run every stage in order");
    add_common(all);
    all->add_option("--alpha", opts.alpha, "Miscoverage level");
    all->add_flag("--compare", opts.compare, "Also roll out the bare VBC");
    CLI::App* show = app.add_subcommand("show-config", "Print the effective configuration");
    add_common(show);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        std::string text = config_path.empty() ? std::string("{}") : read_text(config_path);
        if (seed) {
            overrides.push_back("seed=" + std::to_string(*seed));
        }
        if (!out_dir.empty()) {
            overrides.push_back("output=\"" + out_dir + "\"");
        }
        apply_overrides(text, overrides);
        const PipelineConfig cfg = parse_config(text);
        if (show->parsed()) {
            std::cout << dump_config(cfg) << '\n';
            return 0;
        }
        Run run(cfg, cfg.output, &std::cout);
        if (all->parsed()) {
            run.run_all(opts);
            return 0;
        }
        for (CLI::App* sub : subs) {
            if (sub->parsed()) {
                run.run_stage(sub->get_name(), opts);
            }
        }
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const MissingPrerequisite& e) {
        std::cerr << "missing prerequisite: " << e.what() << '\n';
        return kExitMissing;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
