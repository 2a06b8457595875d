#pragma once

// Experiment driver. Each run writes into a fresh `<experiment>-<seed>-<UTC
// timestamp>` directory and finishes with manifest.json (written through a
// temporary file and a rename). Inputs such as checkpoints are loaded before
// the directory is created, so a missing artifact leaves nothing behind.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "semg/baselines.hpp"
#include "semg/config.hpp"
#include "semg/diffusion.hpp"
#include "semg/io.hpp"
#include "semg/joint_policy.hpp"
#include "semg/training.hpp"

namespace semg {

namespace fs = std::filesystem;

inline constexpr int kManifestSchemaVersion = 1;

inline const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names{"gen-env", "train-est", "eval-est", "compare-baselines", "sweep-energy",
                                                "train-policy"};
    return names;
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Exit status for an exception escaping an experiment.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const MissingArtifactError*>(&e) || dynamic_cast<const LoadError*>(&e)) return 3;
    if (dynamic_cast<const NumericError*>(&e)) return 4;
    return 1;
}

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

/// Creates `<root>/<experiment>-<seed>-<stamp>`, appending -1, -2, ... if taken.
inline fs::path create_run_dir(const fs::path& root, const std::string& experiment, std::uint64_t seed,
                               const std::string& stamp) {
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw IoError("cannot create output root '" + root.string() + "': " + ec.message());
    const std::string base = experiment + "-" + std::to_string(seed) + "-" + stamp;
    for (int k = 0;; ++k) {
        const fs::path p = root / (k == 0 ? base : base + "-" + std::to_string(k));
        if (fs::create_directory(p, ec)) return p;
        if (ec) throw IoError("cannot create run directory '" + p.string() + "': " + ec.message());
    }
}

struct RunOutcome {
    fs::path dir;
    json manifest;
};

/// Shared state while an experiment runs.
class RunContext {
  public:
    RunContext(std::string experiment, ExperimentConfig cfg, fs::path dir)
        : experiment_(std::move(experiment)), cfg_(std::move(cfg)), dir_(std::move(dir)),
          start_(std::chrono::steady_clock::now()) {}

    const ExperimentConfig& config() const { return cfg_; }
    const fs::path& dir() const { return dir_; }
    fs::path file(const std::string& name) const { return dir_ / name; }
    void note(const std::string& key, json value) { notes_[key] = std::move(value); }

    json finish() {
        const json resolved = config_to_json(cfg_);
        json m;
        m["schema_version"] = kManifestSchemaVersion;
        m["experiment"] = experiment_;
        m["config"] = resolved;
        m["config_hash"] = hex64(fnv1a64(resolved.dump()));
        m["seeds"] = {{"master", cfg_.run.seed},
                      {"diffusion", cfg_.diffusion.seed},
                      {"policy", cfg_.policy.seed},
                      {"ddpg", cfg_.ddpg.seed},
                      {"recurrent", cfg_.run.seed},
                      {"evaluation", cfg_.run.seed},
                      {"train_env_first", cfg_.data.train_first_seed},
                      {"eval_env_first", cfg_.data.eval_first_seed}};
        if (!notes_.empty()) m["notes"] = notes_;
        std::vector<std::string> files{"manifest.json"};
        for (const auto& e : fs::recursive_directory_iterator(dir_))
            if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir_).generic_string());
        std::sort(files.begin(), files.end());
        files.erase(std::unique(files.begin(), files.end()), files.end());
        m["files"] = files;
        m["duration_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        const fs::path tmp = dir_ / ".manifest.json.tmp";
        write_text_file(tmp.string(), m.dump(2) + "\n");
        std::error_code ec;
        fs::rename(tmp, dir_ / "manifest.json", ec);
        if (ec) throw IoError("cannot finalize manifest: " + ec.message());
        return m;
    }

  private:
    std::string experiment_;
    ExperimentConfig cfg_;
    fs::path dir_;
    std::chrono::steady_clock::time_point start_;
    json notes_ = json::object();
};

using Logger = std::function<void(const std::string&)>;

namespace detail {

inline std::vector<Scene> eval_scenes(const ExperimentConfig& c, int count) {
    return make_scenes(c.env, c.data.eval_first_seed, count);
}

inline void check_env_matches(const DiffusionEstimator& est, const EnvConfig& env) {
    if (est.width != env.width_cells || est.height != env.height_cells)
        throw ConfigError("checkpoint grid " + std::to_string(est.width) + "x" + std::to_string(est.height) +
                          " does not match env grid");
}

inline std::optional<DiffusionEstimator> load_checkpoint_if_set(const ExperimentConfig& c) {
    if (c.run.checkpoint.empty()) return std::nullopt;
    if (!fs::exists(c.run.checkpoint)) throw MissingArtifactError("checkpoint '" + c.run.checkpoint + "' not found");
    DiffusionEstimator est = deserialize_estimator(read_text_file(c.run.checkpoint));
    check_env_matches(est, c.env);
    return est;
}

/// Trains an estimator on `protocol`, logging losses to loss_csv when given.
inline DiffusionEstimator train_inline(const ExperimentConfig& c, const MeasurementProtocol& protocol, RunContext& ctx,
                                       const Logger& log, const std::string& loss_csv) {
    const auto scenes = make_scenes(c.env, c.data.train_first_seed, c.data.train_envs);
    DiffusionEstimator est(c.diffusion, c.env.width_cells, c.env.height_cells);
    log("training estimator for " + std::to_string(c.diffusion.train_steps) + " steps");
    const auto losses = train_diffusion(est, scenes, protocol, c.energy, [&](int step, double loss) {
        if (step % 500 == 0) log("  step " + std::to_string(step) + " loss " + format_fixed(loss));
    });
    CsvTable t({"step", "loss", "smoothed_loss"});
    for (std::size_t i = 0; i < losses.size(); ++i)
        t.add({static_cast<std::int64_t>(i + 1), losses[i], smoothed(losses, i)});
    t.write(ctx.file(loss_csv));
    write_text_file(ctx.file("estimator.semg-ckpt").string(), serialize_estimator(est));
    return est;
}

inline void gen_env(RunContext& ctx, const Logger&) {
    const auto& c = ctx.config();
    const Scene s = make_scene(c.env, c.run.seed);
    write_text_file(ctx.file("snr_map.csv").string(), format_map_csv(s.truth));
    export_pgm(s.truth, c.env, ctx.file("snr_map.pgm"));
    CsvTable t({"index", "x_m", "y_m", "tx_power_dbm"});
    for (std::size_t i = 0; i < s.env.transmitters.size(); ++i) {
        const auto& tx = s.env.transmitters[i];
        t.add({static_cast<std::int64_t>(i), tx.x_m, tx.y_m, tx.tx_power_dbm});
    }
    t.write(ctx.file("transmitters.csv"));
}

inline void train_est(RunContext& ctx, const Logger& log) {
    const auto& c = ctx.config();
    const auto train = make_scenes(c.env, c.data.train_first_seed, c.data.train_envs);
    const auto eval = eval_scenes(c, c.data.eval_envs);
    const auto meas = frozen_measurements(eval, c.protocol, c.energy, c.run.seed);
    DiffusionEstimator est(c.diffusion, c.env.width_cells, c.env.height_cells);
    CsvTable eval_table({"step", "masked_rmse_db"});
    std::vector<double> losses;
    log("training estimator for " + std::to_string(c.diffusion.train_steps) + " steps");
    losses = train_diffusion(est, train, c.protocol, c.energy, [&](int step, double) {
        const bool last = step == c.diffusion.train_steps;
        if (c.diffusion.checkpoint_every > 0 && (step % c.diffusion.checkpoint_every == 0 || last)) {
            char name[48];
            std::snprintf(name, sizeof name, "estimator_step%06d.semg-ckpt", step);
            write_text_file(ctx.file(name).string(), serialize_estimator(est));
            const double rmse = evaluate_diffusion(est, eval, meas, c.run.seed, c.diffusion.n_avg);
            eval_table.add({static_cast<std::int64_t>(step), rmse});
            log("  step " + std::to_string(step) + " held-out masked RMSE " + format_fixed(rmse) + " dB");
        }
    });
    CsvTable t({"step", "loss", "smoothed_loss"});
    for (std::size_t i = 0; i < losses.size(); ++i)
        t.add({static_cast<std::int64_t>(i + 1), losses[i], smoothed(losses, i)});
    t.write(ctx.file("loss.csv"));
    eval_table.write(ctx.file("eval.csv"));
    write_text_file(ctx.file("estimator.semg-ckpt").string(), serialize_estimator(est));
}

inline void eval_est(RunContext& ctx, const DiffusionEstimator& est, const Logger& log) {
    const auto& c = ctx.config();
    const auto eval = eval_scenes(c, c.data.eval_envs);
    const auto meas = frozen_measurements(eval, c.protocol, c.energy, c.run.seed);
    std::vector<double> per_scene;
    const double mean = evaluate_diffusion(est, eval, meas, c.run.seed, c.diffusion.n_avg, &per_scene);
    CsvTable t({"env_seed", "measured_cells", "masked_rmse_db"});
    for (std::size_t i = 0; i < eval.size(); ++i)
        t.add({static_cast<std::int64_t>(eval[i].env.config.seed), static_cast<std::int64_t>(meas[i].count()), per_scene[i]});
    t.write(ctx.file("eval.csv"));
    Rng rng(c.run.seed, Stream::diffusion, 1u << 20);
    const SnrMap first = estimate_map(est, meas.front(), c.env, rng, c.diffusion.n_avg);
    write_text_file(ctx.file("estimate_env0.csv").string(), format_map_csv(first));
    export_pgm(first, c.env, ctx.file("estimate_env0.pgm"));
    export_pgm(eval.front().truth, c.env, ctx.file("truth_env0.pgm"));
    write_text_file(ctx.file("measurements_env0.csv").string(), format_measurements_csv(meas.front()));
    ctx.note("mean_masked_rmse_db", mean);
    log("mean held-out masked RMSE " + format_fixed(mean) + " dB");
}

inline void compare_baselines(RunContext& ctx, std::optional<DiffusionEstimator> loaded, const Logger& log) {
    const auto& c = ctx.config();
    DiffusionEstimator est = loaded ? std::move(*loaded) : train_inline(c, c.protocol, ctx, log, "diffusion_loss.csv");
    const auto train = make_scenes(c.env, c.data.train_first_seed, c.data.train_envs);
    RecurrentModel gru(RecurrentSpec{3, c.recurrent.hidden, c.recurrent.variant, c.env.cells()}, c.run.seed);
    log("training recurrent baseline for " + std::to_string(c.recurrent.train_steps) + " steps");
    const auto rl = train_recurrent(gru, train, c.protocol, c.energy,
                                    {c.recurrent.batch_size, c.recurrent.train_steps, c.recurrent.learning_rate, c.run.seed});
    CsvTable rlt({"step", "loss", "smoothed_loss"});
    for (std::size_t i = 0; i < rl.size(); ++i) rlt.add({static_cast<std::int64_t>(i + 1), rl[i], smoothed(rl, i)});
    rlt.write(ctx.file("recurrent_loss.csv"));

    const auto eval = eval_scenes(c, c.data.eval_envs);
    const auto meas = frozen_measurements(eval, c.protocol, c.energy, c.run.seed);
    std::vector<double> d, r, idw, mf;
    evaluate_diffusion(est, eval, meas, c.run.seed, c.diffusion.n_avg, &d);
    evaluate_baseline(eval, meas, [&](const Scene&, const MeasurementSet& m) { return recurrent_predict(gru, m, c.env); }, &r);
    evaluate_baseline(eval, meas, [&](const Scene&, const MeasurementSet& m) { return idw_interpolate(m, c.env.cell_size_m); }, &idw);
    evaluate_baseline(eval, meas, [&](const Scene&, const MeasurementSet& m) { return mean_fill(m, c.env.cell_size_m); }, &mf);
    CsvTable per({"env_seed", "diffusion", "recurrent", "idw", "mean_fill"});
    for (std::size_t i = 0; i < eval.size(); ++i)
        per.add({static_cast<std::int64_t>(eval[i].env.config.seed), d[i], r[i], idw[i], mf[i]});
    per.write(ctx.file("per_env_rmse.csv"));
    CsvTable summary({"method", "mean_masked_rmse_db", "std_masked_rmse_db"});
    auto add = [&](const char* name, const std::vector<double>& v) {
        const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double q = 0.0;
        for (double x : v) q += (x - m) * (x - m);
        summary.add({std::string(name), m, std::sqrt(q / static_cast<double>(v.size()))});
        log(std::string("  ") + name + " " + format_fixed(m) + " dB");
    };
    add("diffusion", d);
    add("recurrent", r);
    add("idw", idw);
    add("mean_fill", mf);
    summary.write(ctx.file("comparison.csv"));
}

inline void sweep_energy(RunContext& ctx, std::optional<DiffusionEstimator> loaded, const Logger& log) {
    const auto& c = ctx.config();
    DiffusionEstimator est = loaded ? std::move(*loaded) : train_inline(c, c.estimator_protocol, ctx, log, "estimator_loss.csv");
    const auto scenes = eval_scenes(c, c.sweep.envs);
    log("sweeping " + std::to_string(c.sweep.rho_grid.size()) + " energy fractions over " + std::to_string(scenes.size()) +
        " environments");
    const auto rows = sweep_energy_fraction(c.sweep.rho_grid, c.sweep.spacing, scenes, est, c.objective_with_energy(),
                                            c.sweep.repetitions, c.run.seed);
    CsvTable t({"rho", "est_diff_db", "rate_bits", "est_diff_std_db", "rate_std_bits"});
    std::vector<double> rho, diff;
    for (const auto& r : rows) {
        t.add({r.rho, r.est_diff_db, r.rate_bits, r.est_diff_std, r.rate_std});
        rho.push_back(r.rho);
        diff.push_back(r.est_diff_db);
    }
    t.write(ctx.file("sweep.csv"));
    if (rows.size() >= 2) ctx.note("spearman_rho_vs_est_diff", spearman(rho, diff));
}

inline json action_json(const Action& a, int max_spacing) {
    return {{"rho", a.rho}, {"spacing_u", a.spacing_u}, {"spacing", spacing_from_u(a.spacing_u, max_spacing)}};
}

inline void train_policy(RunContext& ctx, std::optional<DiffusionEstimator> loaded, const Logger& log) {
    const auto& c = ctx.config();
    DiffusionEstimator est = loaded ? std::move(*loaded) : train_inline(c, c.estimator_protocol, ctx, log, "estimator_loss.csv");
    const auto scenes = eval_scenes(c, c.policy.eval_scenarios);
    const ObjectiveConfig oc = c.objective_with_energy();
    const int ms = oc.max_spacing;

    log("diffusion policy: " + std::to_string(c.policy.iterations) + " iterations");
    ScenarioEvaluator gdm_ev(scenes, est, oc, c.run.seed);
    const PolicyRun gdm = run_gdm_policy(c.policy, gdm_ev);
    CsvTable gh({"iteration", "best_j", "mean_j", "incumbent_j", "incumbent_rho", "incumbent_spacing_u"});
    for (std::size_t i = 0; i < gdm.history.size(); ++i) {
        const auto& s = gdm.history[i];
        gh.add({static_cast<std::int64_t>(i + 1), s.best_j, s.mean_j, s.incumbent_j, s.incumbent.rho, s.incumbent.spacing_u});
    }
    gh.write(ctx.file("gdm_history.csv"));

    log("DDPG: " + std::to_string(c.ddpg.episodes) + " episodes");
    ScenarioEvaluator ddpg_ev(scenes, est, oc, c.run.seed);
    DdpgAgent agent(c.ddpg);
    const DdpgResult dr = agent.run(ddpg_ev);
    const double ddpg_j = ddpg_best_j(dr, ddpg_ev);
    CsvTable dc({"episode", "reward"});
    for (std::size_t i = 0; i < dr.rewards.size(); ++i) dc.add({static_cast<std::int64_t>(i + 1), dr.rewards[i]});
    dc.write(ctx.file("ddpg_curve.csv"));

    ScenarioEvaluator rs_ev(scenes, est, oc, c.run.seed);
    Rng rs_rng(c.run.seed, Stream::exploration, 7);
    const SearchResult rs = random_search(rs_ev, c.random_budget, rs_rng);

    ScenarioEvaluator grid_ev(scenes, est, oc, c.run.seed);
    const GridResult grid = exhaustive_grid(grid_ev, c.grid.rho, c.grid.spacing_u);
    CsvTable gt({"rho", "spacing_u", "spacing", "rate_bits", "est_diff_db"});
    for (const auto& r : grid.table) gt.add({r.rho, r.spacing_u, static_cast<std::int64_t>(r.spacing), r.rate_bits, r.est_diff_db});
    gt.write(ctx.file("grid.csv"));

    json best = json::array();
    best.push_back({{"method", "gdm"}, {"best_action", action_json(gdm.best_action, ms)}, {"best_j", gdm.best_j},
                    {"evaluations", gdm_ev.evaluations()}});
    best.push_back({{"method", "ddpg"}, {"best_action", action_json(dr.best_action, ms)}, {"best_j", ddpg_j},
                    {"evaluations", ddpg_ev.evaluations()}});
    best.push_back({{"method", "random_search"}, {"best_action", action_json(rs.best_action, ms)}, {"best_j", rs.best_j},
                    {"evaluations", rs_ev.evaluations()}});
    best.push_back({{"method", "exhaustive_grid"}, {"best_action", action_json(grid.best_action, ms)}, {"best_j", grid.best_j},
                    {"evaluations", grid_ev.evaluations()}});
    json doc = {{"seed", c.run.seed}, {"config_hash", hex64(fnv1a64(config_to_json(c).dump()))}, {"methods", best}};
    write_text_file(ctx.file("best_actions.json").string(), doc.dump(2) + "\n");
    ctx.note("policy_state", "the diffusion policy is state-free; it optimizes the mean over the evaluation scenarios");
    for (const auto& m : best) log("  " + m["method"].get<std::string>() + " best J " + format_fixed(m["best_j"].get<double>(), 0));
}

}  // namespace detail

/// Runs one experiment and returns the output directory and manifest. Throws
/// the library's typed errors; see exit_code_for.
inline RunOutcome run_experiment(const std::string& experiment, const ExperimentConfig& cfg, const fs::path& out_root,
                                 const Logger& log = [](const std::string&) {}) {
    const auto& names = experiment_names();
    if (std::find(names.begin(), names.end(), experiment) == names.end())
        throw std::invalid_argument("unknown experiment '" + experiment + "'");
    validate(cfg);

    std::optional<DiffusionEstimator> loaded;
    if (experiment == "eval-est" && cfg.run.checkpoint.empty())
        throw MissingArtifactError("eval-est needs run.checkpoint (an estimator checkpoint)");
    if (experiment != "gen-env" && experiment != "train-est") loaded = detail::load_checkpoint_if_set(cfg);

    const fs::path dir = create_run_dir(out_root, experiment, cfg.run.seed, utc_timestamp());
    RunContext ctx(experiment, cfg, dir);
    try {
        if (experiment == "gen-env") detail::gen_env(ctx, log);
        else if (experiment == "train-est") detail::train_est(ctx, log);
        else if (experiment == "eval-est") detail::eval_est(ctx, *loaded, log);
        else if (experiment == "compare-baselines") detail::compare_baselines(ctx, std::move(loaded), log);
        else if (experiment == "sweep-energy") detail::sweep_energy(ctx, std::move(loaded), log);
        else detail::train_policy(ctx, std::move(loaded), log);
        json m = ctx.finish();
        return {dir, std::move(m)};
    } catch (...) {
        std::error_code ec;
        fs::remove_all(dir, ec);  // a failed run leaves no directory behind
        throw;
    }
}

}  // namespace semg
