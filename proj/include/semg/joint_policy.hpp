#pragma once

// Joint estimation/transmission optimization. An action fixes the share of
// energy spent measuring (rho) and the sweep density; the objective is the
// payload delivered from the cell the estimate ranks best. Optimizers: a
// diffusion policy trained by softmax-weighted denoising regression, a
// one-step DDPG agent, uniform random search and an exhaustive grid.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <tuple>
#include <vector>

#include "semg/diffusion.hpp"
#include "semg/error.hpp"
#include "semg/nn.hpp"
#include "semg/training.hpp"
#include "semg/uav_mission.hpp"

namespace semg {

struct Action {
    double rho = 0.0;
    double spacing_u = 0.0;
};

struct Objective {
    double rate_bits = 0.0;
    double est_diff_db = 0.0;
};

struct ObjectiveConfig {
    EnergyModel energy;
    double bandwidth_hz = 1e6;
    double noise_sigma_db = 1.0;
    int n_avg = 4;
    int max_spacing = 8;

    void validate() const {
        energy.validate();
        if (!(bandwidth_hz > 0.0)) throw ConfigError("objective: bandwidth must be > 0");
        if (!(noise_sigma_db >= 0.0)) throw ConfigError("objective: noise sigma must be >= 0");
        if (n_avg <= 0 || max_spacing < 1) throw ConfigError("objective: n_avg and max_spacing must be positive");
    }
};

/// Maps spacing_u in [0, 1] onto a row spacing in {1, ..., max_spacing}.
inline int spacing_from_u(double u, int max_spacing = 8) {
    u = std::clamp(u, 0.0, 1.0);
    return 1 + static_cast<int>(std::floor(u * (max_spacing - 1) + 0.5));
}

/// Row-major argmax; ties resolve to the smallest index.
inline int serving_cell(const GridMap& estimate) {
    int best = 0;
    for (std::size_t i = 1; i < estimate.size(); ++i)
        if (estimate.values[i] > estimate.values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    return best;
}

inline double shannon_payload_bits(double transmission_j, double tx_power_w, double bandwidth_hz, double snr_db) {
    const double seconds = transmission_j / tx_power_w;
    return seconds * bandwidth_hz * std::log2(1.0 + std::pow(10.0, snr_db / 10.0));
}

inline double mean_abs_diff(const GridMap& a, const GridMap& b) {
    require(a.size() == b.size() && a.size() > 0, "mean_abs_diff: grid mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.values[i] - b.values[i]);
    return s / static_cast<double>(a.size());
}

/// Energy the transmission phase may draw at share rho. Estimation energy the
/// mission leaves unspent is not handed over, so rho = 1 transmits nothing.
inline double transmission_allocation_j(double rho, const EnergyModel& em) { return (1.0 - rho) * em.total_budget_j; }

inline Objective objective_from_estimate(double rho, const GridMap& estimate, const SnrMap& truth,
                                         const ObjectiveConfig& cfg) {
    const int cell = serving_cell(estimate);
    Objective o;
    o.rate_bits = shannon_payload_bits(transmission_allocation_j(rho, cfg.energy), cfg.energy.tx_power_w, cfg.bandwidth_hz,
                                       truth.values[static_cast<std::size_t>(cell)]);
    o.est_diff_db = mean_abs_diff(estimate, truth);
    if (!std::isfinite(o.rate_bits) || !std::isfinite(o.est_diff_db)) throw NumericError("objective: non-finite value");
    return o;
}

/// Flies the action's mission, estimates the map, and scores the serving cell.
inline Objective evaluate_objective(const Action& action, const Scene& scene, const DiffusionEstimator& est,
                                    const ObjectiveConfig& cfg, Rng& rng) {
    cfg.validate();
    if (!(action.rho >= 0.0 && action.rho <= 1.0 && action.spacing_u >= 0.0 && action.spacing_u <= 1.0))
        throw ConfigError("objective: action outside [0, 1]^2");
    const int spacing = std::min(spacing_from_u(action.spacing_u, cfg.max_spacing), scene.truth.height);
    const Trajectory traj = plan_lawnmower(scene.truth.width, scene.truth.height, spacing);
    const MissionResult mission = execute_mission(scene.truth, traj, cfg.energy, action.rho, cfg.noise_sigma_db, rng);
    const SnrMap estimate = estimate_map(est, mission.measurements, scene.env.config, rng, cfg.n_avg);
    return objective_from_estimate(action.rho, estimate, scene.truth, cfg);
}

/// Best achievable payload for one scene at energy share rho (serving cell =
/// true argmax); used to normalize rewards.
inline double oracle_payload_bits(const Scene& scene, const ObjectiveConfig& cfg, double rho) {
    return shannon_payload_bits(transmission_allocation_j(rho, cfg.energy), cfg.energy.tx_power_w, cfg.bandwidth_hz,
                                scene.truth.values[static_cast<std::size_t>(serving_cell(scene.truth))]);
}

struct EvalRequest {
    Action action;
    std::size_t scene = 0;
};

/// Deterministic, memoized objective over a fixed scene set. For scene i and
/// spacing s the sensor noise comes from Rng(seed, measurement, i * 64 + s),
/// so a shorter mission measures a prefix of a longer one; the estimate is
/// keyed by (scene, spacing, samples taken) and sampled from streams derived
/// from that key. Equal keys therefore share one estimate.
class ScenarioEvaluator {
  public:
    ScenarioEvaluator(std::span<const Scene> scenes, const DiffusionEstimator& est, ObjectiveConfig cfg,
                      std::uint64_t seed, bool oracle_estimates = false)
        : scenes_(scenes), est_(est), cfg_(cfg), seed_(seed), oracle_(oracle_estimates) {
        cfg_.validate();
        if (scenes_.empty()) throw ConfigError("evaluator: empty scene set");
    }

    std::size_t scene_count() const { return scenes_.size(); }
    const Scene& scene(std::size_t i) const { return scenes_[i]; }
    const ObjectiveConfig& config() const { return cfg_; }
    /// Number of (action, scene) objective evaluations requested so far.
    std::size_t evaluations() const { return evaluations_; }
    std::size_t cache_size() const { return cache_.size(); }

    std::vector<Objective> evaluate(std::span<const EvalRequest> requests) {
        struct Pending {
            MissionResult mission;
            Key key;
            double rho;
        };
        std::vector<Pending> pending;
        pending.reserve(requests.size());
        std::vector<Key> misses;
        std::map<Key, std::size_t> miss_index;
        std::vector<const MeasurementSet*> miss_meas;
        for (const auto& r : requests) {
            if (!(r.action.rho >= 0.0 && r.action.rho <= 1.0 && r.action.spacing_u >= 0.0 && r.action.spacing_u <= 1.0))
                throw ConfigError("evaluator: action outside [0, 1]^2");
            require(r.scene < scenes_.size(), "evaluator: scene index out of range");
            const Scene& sc = scenes_[r.scene];
            const int spacing = std::min(spacing_from_u(r.action.spacing_u, cfg_.max_spacing), sc.truth.height);
            Rng noise(seed_, Stream::measurement, r.scene * 64 + static_cast<std::uint64_t>(spacing));
            MissionResult mission = execute_mission(sc.truth, trajectory(sc, spacing), cfg_.energy, r.action.rho,
                                                    cfg_.noise_sigma_db, noise);
            const Key key{r.scene, spacing, mission.measurements.count()};
            pending.push_back({std::move(mission), key, r.action.rho});
        }
        for (const auto& p : pending)
            if (!cache_.contains(p.key) && !miss_index.contains(p.key)) {
                miss_index.emplace(p.key, misses.size());
                misses.push_back(p.key);
                miss_meas.push_back(&p.mission.measurements);
            }
        fill_cache(misses, miss_meas);

        std::vector<Objective> out;
        out.reserve(requests.size());
        for (const auto& p : pending) {
            const Entry& e = cache_.at(p.key);
            const Scene& sc = scenes_[std::get<0>(p.key)];
            Objective o;
            o.rate_bits = shannon_payload_bits(transmission_allocation_j(p.rho, cfg_.energy), cfg_.energy.tx_power_w,
                                               cfg_.bandwidth_hz, sc.truth.values[static_cast<std::size_t>(e.serving_cell)]);
            o.est_diff_db = e.est_diff_db;
            if (!std::isfinite(o.rate_bits)) throw NumericError("evaluator: non-finite rate");
            out.push_back(o);
        }
        evaluations_ += requests.size();
        return out;
    }

    /// Mean payload of each action over every scene in the set.
    std::vector<double> mean_rates(std::span<const Action> actions) {
        std::vector<EvalRequest> req;
        req.reserve(actions.size() * scenes_.size());
        for (const auto& a : actions)
            for (std::size_t s = 0; s < scenes_.size(); ++s) req.push_back({a, s});
        const auto obj = evaluate(req);
        std::vector<double> out(actions.size(), 0.0);
        for (std::size_t i = 0; i < actions.size(); ++i) {
            for (std::size_t s = 0; s < scenes_.size(); ++s) out[i] += obj[i * scenes_.size() + s].rate_bits;
            out[i] /= static_cast<double>(scenes_.size());
        }
        return out;
    }

    double mean_rate(const Action& a) { return mean_rates(std::span<const Action>(&a, 1)).front(); }

  private:
    using Key = std::tuple<std::size_t, int, std::size_t>;
    struct Entry {
        int serving_cell = 0;
        double est_diff_db = 0.0;
    };

    const Trajectory& trajectory(const Scene& sc, int spacing) {
        auto it = trajectories_.find(spacing);
        if (it == trajectories_.end())
            it = trajectories_.emplace(spacing, plan_lawnmower(sc.truth.width, sc.truth.height, spacing)).first;
        return it->second;
    }

    void fill_cache(const std::vector<Key>& keys, const std::vector<const MeasurementSet*>& meas) {
        constexpr std::size_t kChunk = 64;
        for (std::size_t begin = 0; begin < keys.size(); begin += kChunk) {
            const std::size_t end = std::min(keys.size(), begin + kChunk);
            std::vector<Conditioning> conds;
            std::vector<Rng> rngs;
            for (std::size_t k = begin; k < end; ++k) {
                const auto& [scene, spacing, count] = keys[k];
                conds.push_back(make_conditioning(*meas[k], scenes_[scene].env.config));
                Rng key_rng(seed_, Stream::diffusion, (scene << 32) ^ (static_cast<std::uint64_t>(spacing) << 24) ^ count);
                for (int c = 0; c < cfg_.n_avg; ++c) rngs.emplace_back(key_rng.next_u64());
            }
            std::vector<SnrMap> maps;
            if (oracle_) {
                for (std::size_t k = begin; k < end; ++k) maps.push_back(scenes_[std::get<0>(keys[k])].truth);
            } else {
                maps = average_chains(est_, conds, scenes_.front().env.config, rngs, cfg_.n_avg);
            }
            for (std::size_t k = begin; k < end; ++k) {
                const SnrMap& m = maps[k - begin];
                cache_.emplace(keys[k], Entry{serving_cell(m), mean_abs_diff(m, scenes_[std::get<0>(keys[k])].truth)});
            }
        }
    }

    std::span<const Scene> scenes_;
    const DiffusionEstimator& est_;
    ObjectiveConfig cfg_;
    std::uint64_t seed_;
    bool oracle_;
    std::size_t evaluations_ = 0;
    std::map<Key, Entry> cache_;
    std::map<int, Trajectory> trajectories_;
};

// ---------------------------------------------------------------------------
// Diffusion policy

/// Softmax of standardized objectives: w_i ~ exp(z_i / tau), z = (J - mean) / std.
/// Uniform when all objectives coincide.
inline std::vector<double> softmax_weights(std::span<const double> objectives, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("softmax: temperature must be > 0");
    const std::size_t n = objectives.size();
    require(n > 0, "softmax: no objectives");
    for (double j : objectives)
        if (!std::isfinite(j)) throw NumericError("softmax: non-finite objective");
    const double mean = std::accumulate(objectives.begin(), objectives.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double j : objectives) var += (j - mean) * (j - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    std::vector<double> w(n, 1.0 / static_cast<double>(n));
    if (!(sd > 0.0)) return w;
    double zmax = -INFINITY;
    for (std::size_t i = 0; i < n; ++i) zmax = std::max(zmax, (objectives[i] - mean) / sd);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = std::exp(((objectives[i] - mean) / sd - zmax) / temperature);
        total += w[i];
    }
    for (auto& v : w) v /= total;
    return w;
}

struct PolicyConfig {
    int candidates = 16;
    double temperature = 0.5;
    int iterations = 30;
    int eval_scenarios = 4;
    int timesteps = 50;
    double beta_start = 1e-4;
    double beta_end = 0.2;
    int embed_dim = 16;
    std::vector<int> hidden = {64, 64};
    int update_steps = 20;
    double learning_rate = 1e-3;
    std::uint64_t seed = 1;

    void validate() const {
        if (candidates < 2) throw ConfigError("policy: need at least 2 candidates");
        if (!(temperature > 0.0)) throw ConfigError("policy: temperature must be > 0");
        if (iterations < 0 || eval_scenarios < 1 || update_steps < 0) throw ConfigError("policy: bad iteration counts");
        if (embed_dim <= 0 || embed_dim % 2) throw ConfigError("policy: embed_dim must be positive and even");
    }
};

/// Reverse diffusion over the 2-D action, encoded as u = 2a - 1.
class DiffusionPolicy {
  public:
    explicit DiffusionPolicy(const PolicyConfig& cfg)
        : cfg_(cfg), schedule_(make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)) {
        cfg_.validate();
        std::vector<int> sizes{2 + cfg.embed_dim};
        sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
        sizes.push_back(2);
        params_ = Params::initialized(NetSpec(sizes, Activation::smooth_gated), derive_seed(cfg.seed, Stream::policy, 1));
        adam_ = AdamState(params_.size(), cfg.learning_rate);
    }

    const PolicyConfig& config() const { return cfg_; }
    const Params& params() const { return params_; }
    const NoiseSchedule& schedule() const { return schedule_; }

    std::vector<Action> sample(int n, Rng& rng) const {
        Matrix x(2, n);
        for (int c = 0; c < n; ++c)
            for (int d = 0; d < 2; ++d) x(d, c) = rng.normal();
        Matrix input(2 + cfg_.embed_dim, n);
        std::vector<double> emb(static_cast<std::size_t>(cfg_.embed_dim));
        for (int t = schedule_.T; t >= 1; --t) {
            time_embedding(t, cfg_.embed_dim, emb.data());
            for (int c = 0; c < n; ++c) {
                input(0, c) = x(0, c);
                input(1, c) = x(1, c);
                for (int k = 0; k < cfg_.embed_dim; ++k) input(2 + k, c) = emb[static_cast<std::size_t>(k)];
            }
            const Matrix eps = forward(params_, input);
            const double coef = schedule_.beta[t] / std::sqrt(1.0 - schedule_.alpha_bar[t]);
            const double inv = 1.0 / std::sqrt(schedule_.alpha[t]);
            const double sigma = std::sqrt(schedule_.beta[t]);
            for (int c = 0; c < n; ++c)
                for (int d = 0; d < 2; ++d) {
                    double v = (x(d, c) - coef * eps(d, c)) * inv;
                    if (t > 1) v += sigma * rng.normal();
                    x(d, c) = v;
                }
        }
        if (!x.allFinite()) throw NumericError("policy: non-finite action sample");
        std::vector<Action> out(static_cast<std::size_t>(n));
        for (int c = 0; c < n; ++c) {
            out[static_cast<std::size_t>(c)].rho = (std::clamp(x(0, c), -1.0, 1.0) + 1.0) * 0.5;
            out[static_cast<std::size_t>(c)].spacing_u = (std::clamp(x(1, c), -1.0, 1.0) + 1.0) * 0.5;
        }
        return out;
    }

    /// Weighted denoising regression: minimizes sum_i w_i |eps - eps_pred(q_sample(a_i, t, eps), t)|^2 / 2.
    /// Returns the loss of the last optimizer step.
    double update(std::span<const Action> actions, std::span<const double> weights, Rng& rng) {
        require(actions.size() == weights.size() && !actions.empty(), "policy update: size mismatch");
        const auto n = static_cast<Eigen::Index>(actions.size());
        double loss = 0.0;
        for (int step = 0; step < cfg_.update_steps; ++step) {
            Matrix input(2 + cfg_.embed_dim, n);
            Matrix eps(2, n);
            for (Eigen::Index c = 0; c < n; ++c) {
                const int t = static_cast<int>(rng.uniform_int(1, schedule_.T));
                const double a = std::sqrt(schedule_.alpha_bar[t]);
                const double s = std::sqrt(1.0 - schedule_.alpha_bar[t]);
                const auto& act = actions[static_cast<std::size_t>(c)];
                const double u[2] = {2.0 * act.rho - 1.0, 2.0 * act.spacing_u - 1.0};
                for (int d = 0; d < 2; ++d) {
                    eps(d, c) = rng.normal();
                    input(d, c) = a * u[d] + s * eps(d, c);
                }
                time_embedding(t, cfg_.embed_dim, input.col(c).data() + 2);
            }
            ForwardCache cache;
            const Matrix pred = forward(params_, input, &cache);
            Matrix diff = pred - eps;
            loss = 0.0;
            for (Eigen::Index c = 0; c < n; ++c) {
                const double w = weights[static_cast<std::size_t>(c)];
                loss += w * diff.col(c).squaredNorm() / 2.0;
                diff.col(c) *= w;  // d/d pred of w |diff|^2 / 2 is w * diff
            }
            if (!std::isfinite(loss)) throw TrainingError("policy update: non-finite loss");
            Vector grads = Vector::Zero(static_cast<Eigen::Index>(params_.size()));
            backward(params_, cache, diff, grads);
            adam_step(params_, grads, adam_);
        }
        return loss;
    }

  private:
    PolicyConfig cfg_;
    NoiseSchedule schedule_;
    Params params_;
    AdamState adam_;
};

struct IterationStats {
    double best_j = 0.0;   // best candidate of this iteration
    double mean_j = 0.0;
    double incumbent_j = 0.0;  // best over all iterations so far
    Action incumbent;
};

/// One generate / evaluate / weight / update round. Each candidate's J is its
/// mean payload over the evaluator's scenes.
inline IterationStats gdm_policy_iterate(DiffusionPolicy& policy, ScenarioEvaluator& evaluator, Rng& rng,
                                         IterationStats previous = {.best_j = -INFINITY, .mean_j = 0.0, .incumbent_j = -INFINITY, .incumbent = {}}) {
    const auto actions = policy.sample(policy.config().candidates, rng);
    const auto j = evaluator.mean_rates(actions);
    const auto w = softmax_weights(j, policy.config().temperature);
    policy.update(actions, w, rng);
    IterationStats s = previous;
    const auto best = static_cast<std::size_t>(std::max_element(j.begin(), j.end()) - j.begin());
    s.best_j = j[best];
    s.mean_j = std::accumulate(j.begin(), j.end(), 0.0) / static_cast<double>(j.size());
    if (j[best] > s.incumbent_j) {
        s.incumbent_j = j[best];
        s.incumbent = actions[best];
    }
    return s;
}

struct PolicyRun {
    std::vector<IterationStats> history;
    Action best_action;
    double best_j = 0.0;
};

inline PolicyRun run_gdm_policy(const PolicyConfig& cfg, ScenarioEvaluator& evaluator) {
    DiffusionPolicy policy(cfg);
    Rng rng(cfg.seed, Stream::policy);
    PolicyRun run;
    IterationStats s{.best_j = -INFINITY, .mean_j = 0.0, .incumbent_j = -INFINITY, .incumbent = {}};
    for (int it = 0; it < cfg.iterations; ++it) {
        s = gdm_policy_iterate(policy, evaluator, rng, s);
        run.history.push_back(s);
    }
    run.best_action = s.incumbent;
    run.best_j = s.incumbent_j;
    return run;
}

// ---------------------------------------------------------------------------
// Baselines

struct SearchResult {
    Action best_action;
    double best_j = -INFINITY;
    std::vector<double> history;  // J of each evaluated action
};

inline SearchResult random_search(ScenarioEvaluator& evaluator, int budget, Rng& rng) {
    if (budget < 1) throw ConfigError("random search: budget must be >= 1");
    std::vector<Action> actions(static_cast<std::size_t>(budget));
    for (auto& a : actions) {
        a.rho = rng.uniform();
        a.spacing_u = rng.uniform();
    }
    SearchResult r;
    r.history = evaluator.mean_rates(actions);
    for (std::size_t i = 0; i < actions.size(); ++i)
        if (r.history[i] > r.best_j) {
            r.best_j = r.history[i];
            r.best_action = actions[i];
        }
    return r;
}

struct GridRow {
    double rho = 0.0;
    double spacing_u = 0.0;
    int spacing = 1;
    double rate_bits = 0.0;
    double est_diff_db = 0.0;
};

struct GridResult {
    Action best_action;
    double best_j = -INFINITY;
    std::vector<GridRow> table;
};

inline GridResult exhaustive_grid(ScenarioEvaluator& evaluator, std::span<const double> rho_grid,
                                  std::span<const double> spacing_grid) {
    if (rho_grid.empty() || spacing_grid.empty()) throw ConfigError("grid: empty rho or spacing grid");
    std::vector<EvalRequest> req;
    for (double r : rho_grid)
        for (double s : spacing_grid)
            for (std::size_t i = 0; i < evaluator.scene_count(); ++i) req.push_back({{r, s}, i});
    const auto obj = evaluator.evaluate(req);
    GridResult g;
    std::size_t k = 0;
    for (double r : rho_grid)
        for (double s : spacing_grid) {
            GridRow row{r, s, spacing_from_u(s, evaluator.config().max_spacing), 0.0, 0.0};
            for (std::size_t i = 0; i < evaluator.scene_count(); ++i, ++k) {
                row.rate_bits += obj[k].rate_bits;
                row.est_diff_db += obj[k].est_diff_db;
            }
            row.rate_bits /= static_cast<double>(evaluator.scene_count());
            row.est_diff_db /= static_cast<double>(evaluator.scene_count());
            if (row.rate_bits > g.best_j) {
                g.best_j = row.rate_bits;
                g.best_action = {r, s};
            }
            g.table.push_back(row);
        }
    return g;
}

struct SweepRow {
    double rho = 0.0;
    double est_diff_db = 0.0;
    double est_diff_std = 0.0;
    double rate_bits = 0.0;
    double rate_std = 0.0;
};

/// Mean and spread of est_diff_db and rate_bits at each rho, over every
/// (scene, repetition) pair. Repetition r uses evaluator seed derive_seed(seed, policy, r).
inline std::vector<SweepRow> sweep_energy_fraction(std::span<const double> rho_grid, int spacing,
                                                   std::span<const Scene> scenes, const DiffusionEstimator& est,
                                                   const ObjectiveConfig& cfg, int repetitions, std::uint64_t seed) {
    if (scenes.empty()) throw ConfigError("sweep: empty environment set");
    if (rho_grid.empty() || !std::is_sorted(rho_grid.begin(), rho_grid.end()))
        throw ConfigError("sweep: rho grid must be non-empty and ascending");
    if (repetitions < 1) throw ConfigError("sweep: repetitions must be >= 1");
    if (spacing < 1 || spacing > cfg.max_spacing) throw ConfigError("sweep: spacing outside [1, max_spacing]");
    const double spacing_u = cfg.max_spacing > 1 ? static_cast<double>(spacing - 1) / (cfg.max_spacing - 1) : 0.0;
    const std::size_t nr = rho_grid.size();
    std::vector<std::vector<double>> diffs(nr), rates(nr);
    for (int rep = 0; rep < repetitions; ++rep) {
        ScenarioEvaluator ev(scenes, est, cfg, derive_seed(seed, Stream::policy, static_cast<std::uint64_t>(rep)));
        std::vector<EvalRequest> req;
        for (double r : rho_grid)
            for (std::size_t i = 0; i < scenes.size(); ++i) req.push_back({{r, spacing_u}, i});
        const auto obj = ev.evaluate(req);
        for (std::size_t k = 0; k < nr; ++k)
            for (std::size_t i = 0; i < scenes.size(); ++i) {
                diffs[k].push_back(obj[k * scenes.size() + i].est_diff_db);
                rates[k].push_back(obj[k * scenes.size() + i].rate_bits);
            }
    }
    auto mean_sd = [](const std::vector<double>& v) {
        const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double q = 0.0;
        for (double x : v) q += (x - m) * (x - m);
        return std::pair{m, std::sqrt(q / static_cast<double>(v.size()))};
    };
    std::vector<SweepRow> rows;
    for (std::size_t k = 0; k < nr; ++k) {
        const auto [dm, ds] = mean_sd(diffs[k]);
        const auto [rm, rs] = mean_sd(rates[k]);
        rows.push_back({rho_grid[k], dm, ds, rm, rs});
    }
    return rows;
}

/// Spearman rank correlation (average ranks for ties).
inline double spearman(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size() && a.size() >= 2, "spearman: need two equal-length series");
    auto ranks = [](std::span<const double> v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](auto i, auto j) { return v[i] < v[j]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size();) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}


// ---------------------------------------------------------------------------
// DDPG baseline. Each episode is one step: observe a coarse summary of the
// scene, choose an action, receive the normalized payload, terminate.

struct DdpgConfig {
    int episodes = 1920;
    int parallel = 16;          // episodes per round; evaluated as one batch
    int updates_per_round = 16;
    int batch_size = 64;
    int warmup = 64;
    int replay_capacity = 10000;
    std::vector<int> hidden = {64, 64};
    double actor_lr = 1e-3;
    double critic_lr = 1e-3;
    double tau = 0.005;
    double discount = 0.99;
    double noise_sigma = 0.1;  // decays linearly to zero over the run
    std::uint64_t seed = 1;

    void validate() const {
        if (episodes < 1 || parallel < 1 || batch_size < 1 || replay_capacity < batch_size)
            throw ConfigError("ddpg: bad episode/batch/replay sizes");
        if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("ddpg: tau must be in (0, 1]");
        if (!(noise_sigma >= 0.0)) throw ConfigError("ddpg: noise sigma must be >= 0");
    }
};

/// Mean and standard deviation of the unit-scale map on a 4x4 probe lattice.
inline std::array<double, 2> scene_state(const Scene& scene) {
    const UnitMap& u = scene.truth_unit;
    double s = 0.0, q = 0.0;
    for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 4; ++i) {
            const double v = u.at((2 * i + 1) * u.width / 8, (2 * j + 1) * u.height / 8);
            s += v;
            q += v * v;
        }
    const double m = s / 16.0;
    return {m, std::sqrt(std::max(0.0, q / 16.0 - m * m))};
}

struct Transition {
    std::array<double, 2> state;
    Action action;
    double reward = 0.0;
    bool done = true;
};

struct DdpgResult {
    Action best_action;             // highest-reward action taken
    double best_episode_reward = -INFINITY;
    std::vector<double> rewards;    // per-episode normalized reward
    std::vector<Action> final_actions;  // deterministic actor action for each evaluator scene
};

class DdpgAgent {
  public:
    explicit DdpgAgent(const DdpgConfig& cfg) : cfg_(cfg), rng_(cfg.seed, Stream::exploration) {
        cfg_.validate();
        std::vector<int> a{2}, c{4};
        a.insert(a.end(), cfg.hidden.begin(), cfg.hidden.end());
        c.insert(c.end(), cfg.hidden.begin(), cfg.hidden.end());
        a.push_back(2);
        c.push_back(1);
        actor_ = Params::initialized(NetSpec(a, Activation::rectifier), derive_seed(cfg.seed, Stream::init, 11));
        critic_ = Params::initialized(NetSpec(c, Activation::rectifier), derive_seed(cfg.seed, Stream::init, 12));
        actor_target_ = actor_;
        critic_target_ = critic_;
        actor_adam_ = AdamState(actor_.size(), cfg.actor_lr);
        critic_adam_ = AdamState(critic_.size(), cfg.critic_lr);
    }

    Action act(const std::array<double, 2>& state) const { return act_with(actor_, state); }

    const std::vector<Transition>& replay() const { return replay_; }

    void remember(const Transition& t) {
        if (replay_.size() < static_cast<std::size_t>(cfg_.replay_capacity)) {
            replay_.push_back(t);
        } else {
            replay_[next_slot_] = t;
        }
        next_slot_ = (next_slot_ + 1) % static_cast<std::size_t>(cfg_.replay_capacity);
    }

    /// One critic and one actor update on a uniform minibatch, then soft target updates.
    void learn() {
        if (replay_.size() < static_cast<std::size_t>(std::max(cfg_.warmup, cfg_.batch_size))) return;
        const Eigen::Index n = cfg_.batch_size;
        Matrix sa(4, n);
        Vector y(n);
        for (Eigen::Index c = 0; c < n; ++c) {
            const auto& t = replay_[static_cast<std::size_t>(rng_.uniform_int(0, static_cast<std::int64_t>(replay_.size()) - 1))];
            sa(0, c) = t.state[0];
            sa(1, c) = t.state[1];
            sa(2, c) = t.action.rho;
            sa(3, c) = t.action.spacing_u;
            y(c) = t.reward;
            if (!t.done) {
                const Action next = act_with(actor_target_, t.state);
                Matrix in(4, 1);
                in << t.state[0], t.state[1], next.rho, next.spacing_u;
                y(c) += cfg_.discount * forward(critic_target_, in)(0, 0);
            }
        }
        ForwardCache cc;
        const Matrix q = forward(critic_, sa, &cc);
        Matrix dq = (q.row(0).transpose() - y).transpose() * (2.0 / static_cast<double>(n));
        Vector cg = Vector::Zero(static_cast<Eigen::Index>(critic_.size()));
        backward(critic_, cc, dq, cg);
        adam_step(critic_, cg, critic_adam_);

        // actor: ascend Q(s, sigmoid(actor(s)))
        Matrix s = sa.topRows(2);
        ForwardCache ac;
        const Matrix pre = forward(actor_, s, &ac);
        const Matrix a = pre.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
        Matrix sa2(4, n);
        sa2.topRows(2) = s;
        sa2.bottomRows(2) = a;
        ForwardCache qc;
        forward(critic_, sa2, &qc);
        Matrix dout = Matrix::Constant(1, n, -1.0 / static_cast<double>(n));
        Vector unused = Vector::Zero(static_cast<Eigen::Index>(critic_.size()));
        Matrix din;
        backward(critic_, qc, dout, unused, &din);
        Matrix dpre = din.bottomRows(2).cwiseProduct(a.cwiseProduct((1.0 - a.array()).matrix()));
        Vector ag = Vector::Zero(static_cast<Eigen::Index>(actor_.size()));
        backward(actor_, ac, dpre, ag);
        adam_step(actor_, ag, actor_adam_);

        soft_update(actor_target_, actor_);
        soft_update(critic_target_, critic_);
    }

    DdpgResult run(ScenarioEvaluator& evaluator) {
        const ObjectiveConfig& oc = evaluator.config();
        const double hi_db = evaluator.scene(0).env.config.snr_hi_db;
        const double j_max = shannon_payload_bits(oc.energy.total_budget_j, oc.energy.tx_power_w, oc.bandwidth_hz, hi_db);
        Rng pick(cfg_.seed, Stream::data, 99);
        DdpgResult r;
        for (int begin = 0; begin < cfg_.episodes; begin += cfg_.parallel) {
            const int end = std::min(cfg_.episodes, begin + cfg_.parallel);
            std::vector<EvalRequest> req;
            std::vector<std::array<double, 2>> states;
            for (int e = begin; e < end; ++e) {
                const auto scene = static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(evaluator.scene_count()) - 1));
                const auto st = scene_state(evaluator.scene(scene));
                const double sigma = cfg_.noise_sigma * (1.0 - static_cast<double>(e) / cfg_.episodes);
                Action a = act(st);
                a.rho = std::clamp(a.rho + sigma * rng_.normal(), 0.0, 1.0);
                a.spacing_u = std::clamp(a.spacing_u + sigma * rng_.normal(), 0.0, 1.0);
                req.push_back({a, scene});
                states.push_back(st);
            }
            const auto obj = evaluator.evaluate(req);
            for (std::size_t k = 0; k < req.size(); ++k) {
                const double reward = obj[k].rate_bits / j_max;
                remember({states[k], req[k].action, reward, true});
                r.rewards.push_back(reward);
                if (reward > r.best_episode_reward) {
                    r.best_episode_reward = reward;
                    r.best_action = req[k].action;
                }
            }
            for (int u = 0; u < cfg_.updates_per_round; ++u) learn();
        }
        for (std::size_t i = 0; i < evaluator.scene_count(); ++i) r.final_actions.push_back(act(scene_state(evaluator.scene(i))));
        return r;
    }

  private:
    static Action act_with(const Params& actor, const std::array<double, 2>& state) {
        Matrix in(2, 1);
        in << state[0], state[1];
        const Matrix out = forward(actor, in);
        return {1.0 / (1.0 + std::exp(-out(0, 0))), 1.0 / (1.0 + std::exp(-out(1, 0)))};
    }

    void soft_update(Params& target, const Params& online) const {
        Vector& t = target.mutable_values();
        t = (1.0 - cfg_.tau) * t + cfg_.tau * online.values();
    }

    DdpgConfig cfg_;
    Rng rng_;
    Params actor_, critic_, actor_target_, critic_target_;
    AdamState actor_adam_, critic_adam_;
    std::vector<Transition> replay_;
    std::size_t next_slot_ = 0;
};

/// Best mean payload DDPG reaches: the better of its best explored action and
/// its final deterministic policy, both scored over every evaluator scene.
inline double ddpg_best_j(const DdpgResult& r, ScenarioEvaluator& evaluator) {
    const double explored = evaluator.mean_rate(r.best_action);
    std::vector<EvalRequest> req;
    for (std::size_t i = 0; i < r.final_actions.size(); ++i) req.push_back({r.final_actions[i], i});
    const auto obj = evaluator.evaluate(req);
    double final_j = 0.0;
    for (const auto& o : obj) final_j += o.rate_bits;
    final_j /= static_cast<double>(obj.size());
    return std::max(explored, final_j);
}

}  // namespace semg
