#pragma once

// Scene sets, measurement protocols and the training loops for the learned
// estimators. The diffusion and recurrent models draw their minibatches the
// same way so that their training budgets are directly comparable.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "semg/baselines.hpp"
#include "semg/diffusion.hpp"
#include "semg/error.hpp"
#include "semg/rf_env.hpp"
#include "semg/rng.hpp"
#include "semg/uav_mission.hpp"

namespace semg {

struct Scene {
    Environment env;
    SnrMap truth;
    UnitMap truth_unit;
};

inline Scene make_scene(const EnvConfig& base, std::uint64_t env_seed) {
    EnvConfig c = base;
    c.seed = env_seed;
    Scene s;
    s.env = build_environment(c);
    s.truth = ground_truth_map(s.env);
    s.truth_unit = to_unit(s.truth, c);
    return s;
}

/// Scenes for environment seeds first, first + 1, ..., first + count - 1.
inline std::vector<Scene> make_scenes(const EnvConfig& base, std::uint64_t first_seed, int count) {
    std::vector<Scene> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(make_scene(base, first_seed + static_cast<std::uint64_t>(i)));
    return out;
}

/// How a measurement pass is flown. "lawnmower" uses a fixed spacing and
/// energy share; "mixed" draws both per mission, spacing uniform in
/// [min_spacing, max_spacing] and rho uniform in [min_rho, max_rho].
struct MeasurementProtocol {
    std::string kind = "lawnmower";
    int spacing = 4;
    double rho = 1.0;
    int min_spacing = 1;
    int max_spacing = 8;
    double min_rho = 0.0;
    double max_rho = 1.0;
    double noise_sigma_db = 1.0;

    void validate() const {
        if (kind != "lawnmower" && kind != "mixed") throw ConfigError("protocol: kind must be lawnmower or mixed");
        if (spacing < 1 || min_spacing < 1 || max_spacing < min_spacing) throw ConfigError("protocol: bad spacing");
        if (!(rho >= 0.0 && rho <= 1.0 && min_rho >= 0.0 && max_rho <= 1.0 && min_rho <= max_rho))
            throw ConfigError("protocol: rho outside [0, 1]");
        if (!(noise_sigma_db >= 0.0)) throw ConfigError("protocol: noise sigma must be >= 0");
    }
};

inline MissionResult fly_protocol(const Scene& scene, const MeasurementProtocol& p, const EnergyModel& em, Rng& rng) {
    int spacing = p.spacing;
    double rho = p.rho;
    if (p.kind == "mixed") {
        spacing = static_cast<int>(rng.uniform_int(p.min_spacing, p.max_spacing));
        rho = rng.uniform(p.min_rho, p.max_rho);
    }
    spacing = std::min(spacing, scene.truth.height);
    const Trajectory traj = plan_lawnmower(scene.truth.width, scene.truth.height, spacing);
    return execute_mission(scene.truth, traj, em, rho, p.noise_sigma_db, rng);
}

/// Frozen evaluation measurements: scene i is flown with Rng(seed, measurement, i).
inline std::vector<MeasurementSet> frozen_measurements(std::span<const Scene> scenes, const MeasurementProtocol& p,
                                                       const EnergyModel& em, std::uint64_t seed) {
    std::vector<MeasurementSet> out;
    out.reserve(scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        Rng rng(seed, Stream::measurement, i);
        out.push_back(fly_protocol(scenes[i], p, em, rng).measurements);
    }
    return out;
}

/// Mean of the trailing `window` values ending at index `at` (inclusive).
inline double smoothed(std::span<const double> series, std::size_t at, std::size_t window = 50) {
    require(at < series.size() && window > 0, "smoothed: index out of range");
    const std::size_t begin = at + 1 >= window ? at + 1 - window : 0;
    double s = 0.0;
    for (std::size_t i = begin; i <= at; ++i) s += series[i];
    return s / static_cast<double>(at + 1 - begin);
}

/// Draws training minibatches: uniform scene choice, then a fresh mission.
class MinibatchSource {
  public:
    MinibatchSource(std::span<const Scene> scenes, MeasurementProtocol protocol, EnergyModel em, std::uint64_t seed)
        : scenes_(scenes), protocol_(std::move(protocol)), em_(em), pick_(seed, Stream::data), meas_(seed, Stream::measurement) {
        if (scenes_.empty()) throw ConfigError("training: no training scenes");
        protocol_.validate();
    }

    struct Item {
        const Scene* scene;
        MeasurementSet measurements;
    };

    std::vector<Item> next(int batch_size) {
        std::vector<Item> items;
        items.reserve(static_cast<std::size_t>(batch_size));
        for (int b = 0; b < batch_size; ++b) {
            const auto idx = static_cast<std::size_t>(pick_.uniform_int(0, static_cast<std::int64_t>(scenes_.size()) - 1));
            items.push_back({&scenes_[idx], fly_protocol(scenes_[idx], protocol_, em_, meas_).measurements});
        }
        return items;
    }

  private:
    std::span<const Scene> scenes_;
    MeasurementProtocol protocol_;
    EnergyModel em_;
    Rng pick_;
    Rng meas_;
};

using StepCallback = std::function<void(int step, double loss)>;

/// Runs `config.train_steps` noise-prediction steps. The callback fires after
/// every step with the 1-based step index.
inline std::vector<double> train_diffusion(DiffusionEstimator& est, std::span<const Scene> scenes,
                                           const MeasurementProtocol& protocol, const EnergyModel& em,
                                           const StepCallback& on_step = {}) {
    const auto& cfg = est.config;
    MinibatchSource source(scenes, protocol, em, cfg.seed);
    AdamState adam(est.params.size(), cfg.learning_rate);
    Rng rng(cfg.seed, Stream::diffusion);
    const EnvConfig& env = scenes.front().env.config;
    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(cfg.train_steps));
    for (int step = 1; step <= cfg.train_steps; ++step) {
        const auto items = source.next(cfg.batch_size);
        std::vector<Conditioning> conds;
        conds.reserve(items.size());
        for (const auto& it : items) conds.push_back(make_conditioning(it.measurements, env));
        std::vector<TrainingSample> batch;
        for (std::size_t i = 0; i < items.size(); ++i) batch.push_back({items[i].scene->truth_unit.values, &conds[i]});
        const double loss = train_step(est.params, adam, batch, est.schedule, cfg.embed_dim, rng, DenoiserHead::from(cfg));
        losses.push_back(loss);
        if (on_step) on_step(step, loss);
    }
    return losses;
}

struct RecurrentTrainConfig {
    int batch_size = 32;
    int train_steps = 5000;
    double learning_rate = 1e-3;
    std::uint64_t seed = 1;
};

inline std::vector<double> train_recurrent(RecurrentModel& model, std::span<const Scene> scenes,
                                           const MeasurementProtocol& protocol, const EnergyModel& em,
                                           const RecurrentTrainConfig& cfg, const StepCallback& on_step = {}) {
    MinibatchSource source(scenes, protocol, em, cfg.seed);
    AdamState adam(model.size(), cfg.learning_rate);
    const EnvConfig& env = scenes.front().env.config;
    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(cfg.train_steps));
    for (int step = 1; step <= cfg.train_steps; ++step) {
        const auto items = source.next(cfg.batch_size);
        std::vector<Sequence> seqs;
        std::vector<std::span<const double>> targets;
        for (const auto& it : items) {
            seqs.push_back(make_sequence(it.measurements, env));
            targets.push_back(it.scene->truth_unit.values);
        }
        const double loss = recurrent_train_step(model, adam, seqs, targets);
        losses.push_back(loss);
        if (on_step) on_step(step, loss);
    }
    return losses;
}

/// Mean over scenes of the masked RMSE (unobserved cells) of the diffusion
/// estimate; each scene's sampling stream is Rng(seed, diffusion, i).
inline double evaluate_diffusion(const DiffusionEstimator& est, std::span<const Scene> scenes,
                                 std::span<const MeasurementSet> meas, std::uint64_t seed, int n_avg,
                                 std::vector<double>* per_scene = nullptr) {
    require(scenes.size() == meas.size() && !scenes.empty(), "evaluate: scenes/measurements mismatch");
    const EnvConfig& env = scenes.front().env.config;
    std::vector<Conditioning> conds;
    for (const auto& m : meas) conds.push_back(make_conditioning(m, env));
    std::vector<Rng> rngs;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        Rng scene_rng(seed, Stream::diffusion, i);
        for (int k = 0; k < n_avg; ++k) rngs.emplace_back(scene_rng.next_u64());
    }
    const auto maps = average_chains(est, conds, env, rngs, n_avg);
    double total = 0.0;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const double r = masked_rmse(maps[i], scenes[i].truth, meas[i].mask);
        if (per_scene) per_scene->push_back(r);
        total += r;
    }
    return total / static_cast<double>(scenes.size());
}

template <class Estimator>
double evaluate_baseline(std::span<const Scene> scenes, std::span<const MeasurementSet> meas, Estimator&& estimate,
                         std::vector<double>* per_scene = nullptr) {
    require(scenes.size() == meas.size() && !scenes.empty(), "evaluate: scenes/measurements mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const double r = masked_rmse(estimate(scenes[i], meas[i]), scenes[i].truth, meas[i].mask);
        if (per_scene) per_scene->push_back(r);
        total += r;
    }
    return total / static_cast<double>(scenes.size());
}

}  // namespace semg
