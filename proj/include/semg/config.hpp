#pragma once

// Experiment configuration: one JSON document with a section per subsystem,
// plus `section.key=value` overrides. Every section is read through a field
// visitor so parsing, validation of unknown keys and the resolved dump stay in
// sync.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "semg/baselines.hpp"
#include "semg/diffusion.hpp"
#include "semg/error.hpp"
#include "semg/files.hpp"
#include "semg/joint_policy.hpp"
#include "semg/rf_env.hpp"
#include "semg/training.hpp"
#include "semg/uav_mission.hpp"

namespace semg {

using nlohmann::json;

struct DataConfig {
    std::uint64_t train_first_seed = 100000;
    int train_envs = 2000;
    std::uint64_t eval_first_seed = 900000;
    int eval_envs = 16;
};

struct RecurrentConfig {
    int hidden = 64;
    GateVariant variant = GateVariant::gru;
    int batch_size = 32;
    int train_steps = 5000;
    double learning_rate = 1e-3;
};

struct SweepConfig {
    std::vector<double> rho_grid = {0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45,
                                    0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9};
    int spacing = 1;
    int envs = 20;
    int repetitions = 3;
};

struct GridConfig {
    std::vector<double> rho = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
    std::vector<double> spacing_u = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::string checkpoint;  // estimator checkpoint; empty means train inline where allowed
};

struct ExperimentConfig {
    RunConfig run;
    EnvConfig env;
    EnergyModel energy;
    MeasurementProtocol protocol;  // Case 1 measurements
    MeasurementProtocol estimator_protocol{.kind = "mixed"};  // estimator used by the Case 2 experiments
    DiffusionConfig diffusion;
    RecurrentConfig recurrent;
    DataConfig data;
    ObjectiveConfig objective;
    PolicyConfig policy;
    DdpgConfig ddpg;
    SweepConfig sweep;
    GridConfig grid;
    int random_budget = 480;

    ObjectiveConfig objective_with_energy() const {
        ObjectiveConfig o = objective;
        o.energy = energy;
        return o;
    }
};

namespace detail {

class Reader {
  public:
    Reader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
        if (!j_.is_object()) throw ConfigError("config: section '" + section_ + "' must be an object");
    }
    template <class T>
    void operator()(const char* key, T& dst) {
        known_.insert(key);
        if (!j_.contains(key)) return;
        try {
            if constexpr (std::is_same_v<T, Activation>) dst = activation_from_string(j_.at(key).get<std::string>());
            else if constexpr (std::is_same_v<T, GateVariant>) dst = gate_variant_from_string(j_.at(key).get<std::string>());
            else dst = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError("config: bad value for " + section_ + "." + key + ": " + e.what());
        }
    }
    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!known_.contains(k)) throw ConfigError("config: unknown key " + section_ + "." + k);
    }

  private:
    const json& j_;
    std::string section_;
    std::set<std::string> known_;
};

class Writer {
  public:
    template <class T>
    void operator()(const char* key, T& v) {
        if constexpr (std::is_same_v<T, Activation> || std::is_same_v<T, GateVariant>) j[key] = to_string(v);
        else j[key] = v;
    }
    json j = json::object();
};

template <class V> void fields(V& v, RunConfig& c) { v("seed", c.seed); v("checkpoint", c.checkpoint); }

template <class V> void fields(V& v, EnvConfig& c) {
    v("width_cells", c.width_cells); v("height_cells", c.height_cells); v("cell_size_m", c.cell_size_m);
    v("n_transmitters", c.n_transmitters); v("tx_power_dbm", c.tx_power_dbm);
    v("path_loss_exponent", c.path_loss_exponent); v("ref_loss_db", c.ref_loss_db); v("ref_distance_m", c.ref_distance_m);
    v("shadowing_sigma_db", c.shadowing_sigma_db); v("shadowing_corr_cells", c.shadowing_corr_cells);
    v("noise_floor_dbm", c.noise_floor_dbm); v("snr_lo_db", c.snr_lo_db); v("snr_hi_db", c.snr_hi_db);
}

template <class V> void fields(V& v, EnergyModel& c) {
    v("fly_j_per_m", c.fly_j_per_m); v("sense_j_per_sample", c.sense_j_per_sample);
    v("tx_power_w", c.tx_power_w); v("total_budget_j", c.total_budget_j);
}

template <class V> void fields(V& v, MeasurementProtocol& c) {
    v("kind", c.kind); v("spacing", c.spacing); v("rho", c.rho); v("min_spacing", c.min_spacing);
    v("max_spacing", c.max_spacing); v("min_rho", c.min_rho); v("max_rho", c.max_rho); v("noise_sigma_db", c.noise_sigma_db);
}

template <class V> void fields(V& v, DiffusionConfig& c) {
    v("timesteps", c.timesteps); v("beta_start", c.beta_start); v("beta_end", c.beta_end); v("embed_dim", c.embed_dim);
    v("hidden", c.hidden); v("activation", c.activation); v("batch_size", c.batch_size); v("train_steps", c.train_steps);
    v("learning_rate", c.learning_rate); v("n_avg", c.n_avg); v("checkpoint_every", c.checkpoint_every);
    v("parameterization", c.parameterization); v("loss_weighting", c.loss_weighting); v("snr_gamma", c.snr_gamma);
}

template <class V> void fields(V& v, RecurrentConfig& c) {
    v("hidden", c.hidden); v("variant", c.variant); v("batch_size", c.batch_size); v("train_steps", c.train_steps);
    v("learning_rate", c.learning_rate);
}

template <class V> void fields(V& v, DataConfig& c) {
    v("train_first_seed", c.train_first_seed); v("train_envs", c.train_envs);
    v("eval_first_seed", c.eval_first_seed); v("eval_envs", c.eval_envs);
}

template <class V> void fields(V& v, ObjectiveConfig& c) {
    v("bandwidth_hz", c.bandwidth_hz); v("noise_sigma_db", c.noise_sigma_db); v("n_avg", c.n_avg); v("max_spacing", c.max_spacing);
}

template <class V> void fields(V& v, PolicyConfig& c) {
    v("candidates", c.candidates); v("temperature", c.temperature); v("iterations", c.iterations);
    v("eval_scenarios", c.eval_scenarios); v("timesteps", c.timesteps); v("beta_start", c.beta_start);
    v("beta_end", c.beta_end); v("embed_dim", c.embed_dim); v("hidden", c.hidden); v("update_steps", c.update_steps);
    v("learning_rate", c.learning_rate);
}

template <class V> void fields(V& v, DdpgConfig& c) {
    v("episodes", c.episodes); v("parallel", c.parallel); v("updates_per_round", c.updates_per_round);
    v("batch_size", c.batch_size); v("warmup", c.warmup); v("replay_capacity", c.replay_capacity); v("hidden", c.hidden);
    v("actor_lr", c.actor_lr); v("critic_lr", c.critic_lr); v("tau", c.tau); v("discount", c.discount);
    v("noise_sigma", c.noise_sigma);
}

template <class V> void fields(V& v, SweepConfig& c) {
    v("rho_grid", c.rho_grid); v("spacing", c.spacing); v("envs", c.envs); v("repetitions", c.repetitions);
}

template <class V> void fields(V& v, GridConfig& c) { v("rho", c.rho); v("spacing_u", c.spacing_u); }

struct RandomSection {
    int* budget;
};
template <class V> void fields(V& v, RandomSection& c) { v("budget", *c.budget); }

/// Applies `f(name, section)` to every section of the config.
template <class F>
void for_each_section(ExperimentConfig& c, F&& f) {
    RandomSection rnd{&c.random_budget};
    f("run", c.run);
    f("env", c.env);
    f("energy", c.energy);
    f("protocol", c.protocol);
    f("estimator_protocol", c.estimator_protocol);
    f("diffusion", c.diffusion);
    f("recurrent", c.recurrent);
    f("data", c.data);
    f("objective", c.objective);
    f("policy", c.policy);
    f("ddpg", c.ddpg);
    f("sweep", c.sweep);
    f("grid", c.grid);
    f("random_search", rnd);
}

}  // namespace detail

inline json config_to_json(ExperimentConfig c) {
    json out = json::object();
    detail::for_each_section(c, [&](const char* name, auto& section) {
        detail::Writer w;
        detail::fields(w, section);
        out[name] = w.j;
    });
    return out;
}

/// Sets run.seed and copies it to every subsystem that owns a seed.
inline void apply_master_seed(ExperimentConfig& c, std::uint64_t seed) {
    c.run.seed = seed;
    c.diffusion.seed = seed;
    c.policy.seed = seed;
    c.ddpg.seed = seed;
}

inline void validate(const ExperimentConfig& c) {
    c.env.validate();
    c.energy.validate();
    c.protocol.validate();
    c.estimator_protocol.validate();
    c.diffusion.validate();
    c.objective_with_energy().validate();
    c.policy.validate();
    c.ddpg.validate();
    if (c.recurrent.hidden <= 0 || c.recurrent.batch_size <= 0 || c.recurrent.train_steps < 0 || !(c.recurrent.learning_rate > 0.0))
        throw ConfigError("recurrent: invalid sizes or learning rate");
    if (c.data.train_envs < 1 || c.data.eval_envs < 1) throw ConfigError("data: environment counts must be >= 1");
    if (c.sweep.envs < 1 || c.sweep.repetitions < 1) throw ConfigError("sweep: envs and repetitions must be >= 1");
    if (c.random_budget < 1) throw ConfigError("random_search: budget must be >= 1");
}

inline ExperimentConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    ExperimentConfig c;
    std::set<std::string> sections;
    detail::for_each_section(c, [&](const char* name, auto& section) {
        sections.insert(name);
        if (!j.contains(name)) return;
        detail::Reader r(j.at(name), name);
        detail::fields(r, section);
        r.finish();
    });
    for (const auto& [k, v] : j.items())
        if (!sections.contains(k)) throw ConfigError("config: unknown section '" + k + "'");
    apply_master_seed(c, c.run.seed);
    validate(c);
    return c;
}

inline json parse_config_text(std::string_view text) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: cannot parse JSON: ") + e.what());
    }
}

/// Applies `section.key=value`; the value is read as JSON when it parses as
/// such and as a plain string otherwise.
inline void apply_override(json& j, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
    const std::string path(assignment.substr(0, eq));
    const std::string raw(assignment.substr(eq + 1));
    const auto dot = path.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == path.size() || path.find('.', dot + 1) != std::string::npos)
        throw ConfigError("override key '" + path + "' must be section.key");
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    j[path.substr(0, dot)][path.substr(dot + 1)] = value;
}

/// Loads the file (empty path: defaults only), then applies overrides in order.
inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    json j = path.empty() ? json::object() : parse_config_text(read_text_file(path));
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    for (const auto& o : overrides) apply_override(j, o);
    return config_from_json(j);
}

}  // namespace semg
