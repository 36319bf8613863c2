#include "reachguard/mining.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "reachguard/parallel.hpp"

namespace reachguard {

TubeQuery grid_tube(const std::vector<GridValue>& grids) {
    return [&grids](const State& x, const EnvParams& d) {
        for (const auto& g : grids) {
            if (g.env == d) {
                return value_at(g, x) <= 0.0;
            }
        }
        throw MissingPrerequisite("grid tube: no grid for " + to_string(d));
    };
}

LabelingReport sample_and_label(std::size_t n, const GridSpec& bounds, const std::vector<EnvParams>& envs,
                                const Sensor& sensor, const TubeQuery& tube, std::uint64_t seed) {
    if (n == 0) {
        throw std::invalid_argument("sample_and_label: n must be positive");
    }
    if (envs.empty()) {
        throw std::invalid_argument("sample_and_label: no environments");
    }
    // Draws are made serially so the sample set does not depend on workers.
    Rng rng(seed);
    std::vector<SeedState> draws(n);
    for (auto& s : draws) {
        s.x = {uniform(rng, bounds.axes[0].min, bounds.axes[0].max), uniform(rng, bounds.axes[1].min, bounds.axes[1].max),
               uniform(rng, bounds.axes[2].min, bounds.axes[2].max)};
        s.d = envs[std::uniform_int_distribution<std::size_t>(0, envs.size() - 1)(rng)];
    }
    std::vector<LabeledObservation> records(n);
    std::vector<char> keep(n, 1);
    parallel_for(n, [&](std::size_t i) {
        try {
            records[i].label = tube(draws[i].x, draws[i].d) ? 1 : 0;
        } catch (const OutOfBoundsError&) {
            keep[i] = 0;
            return;
        }
        records[i].obs = sensor.render(draws[i].x, draws[i].d);
    });
    LabelingReport report;
    std::vector<LabeledObservation> kept;
    kept.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (keep[i]) {
            report.positives += records[i].label;
            kept.push_back(std::move(records[i]));
        } else {
            ++report.skipped;
        }
    }
    report.data = make_dataset(std::move(kept), true);
    return report;
}

double MiningResult::disagreement_fraction() const {
    const std::size_t total = traces.size() + disagreements.size();
    return total ? static_cast<double>(disagreements.size()) / static_cast<double>(total) : 0.0;
}

MiningResult mine_failure_traces(const std::vector<SeedState>& seeds, const Sensor& sensor,
                                 const EstimatorParams& estimator, const PlantConfig& cfg, double horizon) {
    const Policy policy = make_vbc_policy(sensor, estimator, cfg);
    std::vector<Trajectory> trajs(seeds.size());
    parallel_for(seeds.size(), [&](std::size_t i) { trajs[i] = rollout(seeds[i].x, policy, seeds[i].d, horizon, cfg); });
    MiningResult out;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (!trajs[i].first_failure_index) {
            out.disagreements.push_back(seeds[i]);
            continue;
        }
        FailureTrace tr;
        tr.seed = seeds[i];
        tr.first_failure_step = *trajs[i].first_failure_index;
        tr.observations.reserve(trajs[i].samples.size());
        for (const auto& s : trajs[i].samples) {
            tr.observations.push_back(sensor.render(s.x, seeds[i].d));
        }
        tr.trajectory = std::move(trajs[i]);
        out.traces.push_back(std::move(tr));
    }
    return out;
}

std::vector<std::uint8_t> prediction_error_labels(const std::vector<Observation>& obs,
                                                  const std::vector<Estimate>& estimates, double threshold) {
    if (obs.size() != estimates.size()) {
        throw DimensionError("prediction_error_labels: one estimate per observation required");
    }
    std::vector<std::uint8_t> labels(obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i) {
        if (!obs[i].state) {
            throw std::invalid_argument("prediction_error_labels: observation without ground-truth state");
        }
        const double ex = estimates[i].px_hat - obs[i].state->px;
        const double et = estimates[i].theta_hat - obs[i].state->theta;
        labels[i] = std::hypot(ex, et) > threshold ? 1 : 0;
    }
    return labels;
}

std::vector<std::uint8_t> prediction_error_labels(const std::vector<Observation>& obs, const EstimatorParams& estimator,
                                                  double threshold) {
    return prediction_error_labels(obs, estimate_batch(obs, estimator), threshold);
}

Dataset upsample(const Dataset& data, double target_fraction, std::uint64_t seed) {
    if (!(target_fraction > 0.0 && target_fraction < 1.0)) {
        throw std::invalid_argument("upsample: target fraction must lie in (0, 1)");
    }
    std::vector<std::size_t> failures;
    for (std::size_t i = 0; i < data.records.size(); ++i) {
        if (data.records[i].label) {
            failures.push_back(i);
        }
    }
    const std::size_t safe = data.records.size() - failures.size();
    if (failures.empty() || safe == 0) {
        throw std::invalid_argument("upsample: both classes must be present");
    }
    // Smallest f with f / (f + safe) >= target.
    const auto needed = static_cast<std::size_t>(std::ceil(target_fraction * static_cast<double>(safe) / (1.0 - target_fraction) - 1e-9));
    std::vector<LabeledObservation> out = data.records;
    for (std::size_t k = failures.size(); k < needed; ++k) {
        out.push_back(data.records[failures[k % failures.size()]]);
    }
    Rng rng(seed);
    std::shuffle(out.begin(), out.end(), rng);
    Dataset ds = data;
    ds.records = std::move(out);
    return ds;
}

void export_traces(const std::filesystem::path& dir, const std::vector<FailureTrace>& traces) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.csv");
    if (!manifest) {
        throw ReachError("cannot write " + (dir / "manifest.csv").string());
    }
    manifest << "trace,file,px0,py0,theta0_deg,d1,d2,runway_id,steps,first_failure_step,first_failure_time\n";
    for (std::size_t i = 0; i < traces.size(); ++i) {
        const FailureTrace& tr = traces[i];
        std::vector<LabeledObservation> recs;
        recs.reserve(tr.observations.size());
        for (std::size_t s = 0; s < tr.observations.size(); ++s) {
            recs.push_back({tr.observations[s], static_cast<std::uint8_t>(tr.trajectory.samples[s].in_failure ? 1 : 0)});
        }
        const std::string file = "trace_" + std::to_string(i) + ".vfmd";
        save_dataset(dir / file, make_dataset(std::move(recs), true));
        manifest << i << ',' << file << ',' << tr.seed.x.px << ',' << tr.seed.x.py << ',' << rad_to_deg(tr.seed.x.theta)
                 << ',' << to_string(tr.seed.d.d1) << ',' << to_string(tr.seed.d.d2) << ','
                 << static_cast<int>(tr.seed.d.runway_id) << ',' << tr.observations.size() << ','
                 << tr.first_failure_step << ',' << tr.trajectory.first_failure_time.value_or(-1.0) << '\n';
    }
}

}  // namespace reachguard
