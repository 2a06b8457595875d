// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fails.
// `semg_acceptance 1 2 8` runs a subset.

#include <sys/wait.h>
#include <unistd.h>

#include <bit>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "semg/experiments.hpp"

using namespace semg;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int d = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", d, v);
    return buf;
}

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void progress(const std::string& s) {
    std::fprintf(stderr, "  .. %s\n", s.c_str());
    std::fflush(stderr);
}

// ---------------------------------------------------------------------------
// 1. diffusion core

Verdict diffusion_core() {
    std::string d;
    bool ok = true;
    const DiffusionConfig dc;
    const auto s = make_schedule(dc);
    double worst = 0.0;
    for (int t = 1; t <= s.T; ++t) {
        long double log_prod = 0.0L;
        for (int k = 1; k <= t; ++k) {
            const long double beta = 1e-4L + (0.02L - 1e-4L) * (k - 1) / 199.0L;
            log_prod += std::log1p(-beta);
        }
        worst = std::max(worst, std::abs(s.alpha_bar[t] - static_cast<double>(std::exp(log_prod))));
    }
    ok &= worst <= 1e-12;
    d += "alpha_bar max err " + fmt_g(worst);

    Rng rng(2024);
    const std::vector<double> x0(20000, 0.3);
    for (int t : {1, s.T / 2, s.T}) {
        std::vector<double> eps(x0.size());
        for (auto& e : eps) e = rng.normal();
        const auto x = q_sample(x0, t, eps, s);
        double m = 0.0, q = 0.0;
        for (double v : x) m += v;
        m /= static_cast<double>(x.size());
        for (double v : x) q += (v - m) * (v - m);
        const double ratio = q / static_cast<double>(x.size()) / (1.0 - s.alpha_bar[t]);
        ok &= std::abs(ratio - 1.0) <= 0.05;
        d += "; var ratio t=" + std::to_string(t) + " " + fmt(ratio);
    }

    EnvConfig env;
    const auto scene = make_scene(env, 31337);
    Rng mr(5);
    const auto m = execute_mission(scene.truth, plan_lawnmower(32, 32, 4), EnergyModel{}, 1.0, 1.0, mr).measurements;
    const auto cond = make_conditioning(m, env);
    const DiffusionEstimator est(dc, 32, 32);
    Rng sr(6);
    const auto u = sample_conditional(est.params, cond, est.schedule, dc.embed_dim, sr, 32, 32, DenoiserHead::from(dc));
    std::size_t mismatched = 0, observed = 0;
    for (std::size_t i = 0; i < u.size(); ++i)
        if (cond.mask[i] != 0.0) {
            ++observed;
            if (u.values[i] != cond.obs[i]) ++mismatched;
        }
    ok &= mismatched == 0 && observed == m.count();
    d += "; conditioning " + std::to_string(observed - mismatched) + "/" + std::to_string(observed) + " observed cells exact";
    return {ok, d};
}

// ---------------------------------------------------------------------------
// 2. gradient fidelity

Verdict gradients() {
    bool ok = true;
    std::string d;
    auto check = [&](const std::string& name, const gradcheck::Result& r) {
        ok &= r.max_rel_error < 1e-4 && r.probes >= 100;
        if (!d.empty()) d += "; ";
        d += name + " " + fmt_g(r.max_rel_error) + " over " + std::to_string(r.probes);
        if (r.skipped_kinks) d += " (" + std::to_string(r.skipped_kinks) + " kink probes redrawn)";
    };
    const DiffusionConfig dc;
    check("estimator denoiser", gradcheck::dense(Params::initialized(denoiser_spec(1024, dc), 1), 4, 100, 11));
    const RecurrentModel gru(RecurrentSpec{3, 64, GateVariant::gru, 1024}, 2);
    check("recurrent baseline", gradcheck::recurrent(gru, gradcheck::random_sequences(4, 24, 12), 100, 13));
    const DiffusionPolicy policy{PolicyConfig{}};
    check("policy denoiser", gradcheck::dense(policy.params(), 8, 100, 14));
    check("ddpg actor", gradcheck::dense(Params::initialized(NetSpec({2, 64, 64, 2}, Activation::rectifier), 3), 8, 100, 15));
    check("ddpg critic", gradcheck::dense(Params::initialized(NetSpec({4, 64, 64, 1}, Activation::rectifier), 4), 8, 100, 16));
    return {ok, d};
}

// ---------------------------------------------------------------------------
// 3 and 4. Case 1 training runs, shared

struct Case1Run {
    std::vector<double> losses;
    double first_ckpt_rmse = 0.0;
    double final_ckpt_rmse = 0.0;
    double diffusion = 0.0;
    double recurrent = 0.0;
    double mean_fill = 0.0;
    double seconds = 0.0;
};

class Case1 {
  public:
    const Case1Run& run(std::uint64_t seed) {
        if (auto it = runs_.find(seed); it != runs_.end()) return it->second;
        ExperimentConfig c;
        apply_master_seed(c, seed);
        if (train_.empty()) {
            progress("building " + std::to_string(c.data.train_envs) + " training scenes");
            train_ = make_scenes(c.env, c.data.train_first_seed, c.data.train_envs);
            eval_ = make_scenes(c.env, c.data.eval_first_seed, c.data.eval_envs);
        }
        const auto t0 = std::chrono::steady_clock::now();
        const auto meas = frozen_measurements(eval_, c.protocol, c.energy, seed);
        Case1Run r;
        DiffusionEstimator est(c.diffusion, c.env.width_cells, c.env.height_cells);
        bool first = true;
        r.losses = train_diffusion(est, train_, c.protocol, c.energy, [&](int step, double) {
            if (step % c.diffusion.checkpoint_every != 0 && step != c.diffusion.train_steps) return;
            const double rmse = evaluate_diffusion(est, eval_, meas, seed, c.diffusion.n_avg);
            if (first) r.first_ckpt_rmse = rmse;
            first = false;
            r.final_ckpt_rmse = rmse;
        });
        r.diffusion = r.final_ckpt_rmse;
        progress("seed " + std::to_string(seed) + " diffusion " + fmt(r.diffusion) + " dB");
        RecurrentModel gru(RecurrentSpec{3, c.recurrent.hidden, c.recurrent.variant, c.env.cells()}, seed);
        train_recurrent(gru, train_, c.protocol, c.energy,
                        {c.recurrent.batch_size, c.diffusion.train_steps, c.recurrent.learning_rate, seed});
        r.recurrent = evaluate_baseline(eval_, meas, [&](const Scene&, const MeasurementSet& m) {
            return recurrent_predict(gru, m, c.env);
        });
        r.mean_fill = evaluate_baseline(eval_, meas, [&](const Scene&, const MeasurementSet& m) {
            return mean_fill(m, c.env.cell_size_m);
        });
        r.seconds = seconds_since(t0);
        progress("seed " + std::to_string(seed) + " recurrent " + fmt(r.recurrent) + " dB, mean fill " + fmt(r.mean_fill) +
                 " dB (" + fmt(r.seconds, 0) + " s)");
        return runs_.emplace(seed, std::move(r)).first->second;
    }

  private:
    std::vector<Scene> train_, eval_;
    std::map<std::uint64_t, Case1Run> runs_;
};

Verdict training_trend(Case1& case1) {
    bool ok = true;
    std::string d;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto& r = case1.run(seed);
        const double early = smoothed(r.losses, 99), late = smoothed(r.losses, 4999);
        const bool pass = late < 0.5 * early && r.final_ckpt_rmse < r.first_ckpt_rmse;
        ok &= pass;
        d += (seed > 1 ? "; " : "") + std::string("seed ") + std::to_string(seed) + ": loss " + fmt(early) + " -> " +
             fmt(late) + ", rmse " + fmt(r.first_ckpt_rmse, 2) + " -> " + fmt(r.final_ckpt_rmse, 2) + " dB";
    }
    return {ok, d};
}

Verdict case1_comparison(Case1& case1) {
    int beats_recurrent = 0;
    bool beats_fill = true;
    std::string d;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto& r = case1.run(seed);
        if (r.diffusion <= r.recurrent) ++beats_recurrent;
        beats_fill &= r.diffusion < 0.8 * r.mean_fill;
        d += (seed > 1 ? "; " : "") + std::string("seed ") + std::to_string(seed) + ": " + fmt(r.diffusion, 2) + " vs rnn " +
             fmt(r.recurrent, 2) + " vs fill " + fmt(r.mean_fill, 2);
    }
    d += "; diffusion <= recurrent in " + std::to_string(beats_recurrent) + "/5";
    return {beats_recurrent >= 4 && beats_fill, d};
}

// ---------------------------------------------------------------------------
// 5 and 6. Case 2, one estimator trained on mixed missions

class Case2Estimator {
  public:
    const DiffusionEstimator& get() {
        if (!est_) {
            ExperimentConfig c;
            const auto t0 = std::chrono::steady_clock::now();
            const auto train = make_scenes(c.env, c.data.train_first_seed, c.data.train_envs);
            DiffusionEstimator est(c.diffusion, c.env.width_cells, c.env.height_cells);
            train_diffusion(est, train, c.estimator_protocol, c.energy);
            est_ = std::move(est);
            progress("case 2 estimator trained (" + fmt(seconds_since(t0), 0) + " s)");
        }
        return *est_;
    }
    bool ready() const { return est_.has_value(); }

  private:
    std::optional<DiffusionEstimator> est_;
};

Verdict tradeoff(Case2Estimator& case2) {
    ExperimentConfig c;
    const auto scenes = make_scenes(c.env, c.data.eval_first_seed, c.sweep.envs);
    const auto rows = sweep_energy_fraction(c.sweep.rho_grid, c.sweep.spacing, scenes, case2.get(),
                                            c.objective_with_energy(), c.sweep.repetitions, c.run.seed);
    std::vector<double> rho, diff;
    for (const auto& r : rows) {
        rho.push_back(r.rho);
        diff.push_back(r.est_diff_db);
    }
    const double sp = spearman(rho, diff);
    bool decreasing = true;
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i - 1].rho >= 0.5 && !(rows[i].rate_bits < rows[i - 1].rate_bits)) decreasing = false;
    std::size_t best = 0;
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].rate_bits > rows[best].rate_bits) best = i;
    const double rho_star = rows[best].rho;
    const bool interior = rho_star > 0.0 && rho_star < 0.9;
    std::string d = "spearman " + fmt(sp) + "; rate strictly decreasing for rho >= 0.5: " + (decreasing ? "yes" : "no") +
                    "; rho* " + fmt(rho_star, 2) + " (" + std::to_string(scenes.size()) + " envs x " +
                    std::to_string(c.sweep.repetitions) + " reps)";
    return {sp <= -0.8 && decreasing && interior, d};
}

Verdict optimizer(Case2Estimator& case2) {
    int beats_ddpg = 0;
    bool near_grid = true;
    std::string d;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        ExperimentConfig c;
        apply_master_seed(c, seed);
        const auto scenes = make_scenes(c.env, c.data.eval_first_seed, c.policy.eval_scenarios);
        const ObjectiveConfig oc = c.objective_with_energy();
        ScenarioEvaluator gdm_ev(scenes, case2.get(), oc, seed), ddpg_ev(scenes, case2.get(), oc, seed),
            grid_ev(scenes, case2.get(), oc, seed);
        const auto gdm = run_gdm_policy(c.policy, gdm_ev);
        DdpgAgent agent(c.ddpg);
        const auto dr = agent.run(ddpg_ev);
        const std::size_t ddpg_evals = ddpg_ev.evaluations();
        const double ddpg = ddpg_best_j(dr, ddpg_ev);
        const auto grid = exhaustive_grid(grid_ev, c.grid.rho, c.grid.spacing_u);
        const double gap = (grid.best_j - gdm.best_j) / grid.best_j;
        near_grid &= gap <= 0.05;
        if (gdm.best_j >= ddpg) ++beats_ddpg;
        d += (seed > 1 ? "; " : "") + std::string("seed ") + std::to_string(seed) + ": gdm " + fmt_g(gdm.best_j) +
             " (gap " + fmt(100.0 * gap, 2) + "%) ddpg " + fmt_g(ddpg) + " evals " + std::to_string(gdm_ev.evaluations()) +
             "/" + std::to_string(ddpg_evals);
        progress("optimizer seed " + std::to_string(seed) + " done");
    }
    d += "; gdm >= ddpg in " + std::to_string(beats_ddpg) + "/5";
    return {near_grid && beats_ddpg >= 3, d};
}

// ---------------------------------------------------------------------------
// 7. determinism through the command line

struct Proc {
    int code = -1;
    std::string out;
};

Proc run_cli(const std::string& args) {
    const std::string cmd = std::string(SEMG_CLI_PATH) + " " + args + " -q 2>/dev/null";
    Proc p;
    FILE* f = ::popen(cmd.c_str(), "r");
    if (!f) return p;
    char buf[512];
    while (std::fgets(buf, sizeof buf, f)) p.out += buf;
    const int status = ::pclose(f);
    p.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    while (!p.out.empty() && p.out.back() == '\n') p.out.pop_back();
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Verdict determinism() {
    const fs::path root = fs::temp_directory_path() / ("semg_accept_" + std::to_string(::getpid()));
    fs::remove_all(root);
    const std::string smoke = std::string("--config ") + SEMG_SOURCE_DIR + "/configs/smoke.json --seed 5";
    bool ok = true;
    std::string d;
    std::string ckpt;
    int csvs = 0;
    for (const auto& exp : experiment_names()) {
        std::string extra = exp == "gen-env" || exp == "train-est" ? "" : " run.checkpoint=" + ckpt;
        const Proc a = run_cli(exp + " " + smoke + extra + " --out " + (root / "a").string());
        const Proc b = run_cli(exp + " " + smoke + extra + " --out " + (root / "b").string());
        if (a.code != 0 || b.code != 0) {
            ok = false;
            d += exp + " exited " + std::to_string(a.code) + "/" + std::to_string(b.code) + "; ";
            continue;
        }
        if (exp == "train-est") ckpt = a.out + "/estimator.semg-ckpt";
        std::set<std::string> names;
        for (const auto& e : fs::directory_iterator(a.out)) names.insert(e.path().filename().string());
        for (const auto& e : fs::directory_iterator(b.out)) names.insert(e.path().filename().string());
        for (const auto& n : names) {
            const bool compared = n.ends_with(".csv") || n.ends_with(".pgm") || n.ends_with(".semg-ckpt") || n == "best_actions.json";
            if (!compared) continue;
            if (n.ends_with(".csv")) ++csvs;
            if (!fs::exists(fs::path(a.out) / n) || !fs::exists(fs::path(b.out) / n) ||
                slurp(fs::path(a.out) / n) != slurp(fs::path(b.out) / n)) {
                ok = false;
                d += exp + "/" + n + " differs; ";
            }
        }
    }
    d += std::to_string(experiment_names().size()) + " experiments, " + std::to_string(csvs) + " CSVs compared";

    // checkpoint round trip at the value level
    bool exact = false;
    if (!ckpt.empty()) {
        const std::string text = slurp(ckpt);
        const auto est = deserialize_estimator(text);
        const auto again = deserialize_estimator(serialize_estimator(est));
        exact = serialize_estimator(est) == text && again.params.size() == est.params.size();
        for (Eigen::Index i = 0; exact && i < est.params.values().size(); ++i)
            exact = again.params.values()[i] == est.params.values()[i];
    }
    RecurrentModel gru(RecurrentSpec{3, 16, GateVariant::gru, 64}, 9);
    Rng rng(1);
    for (Eigen::Index i = 0; i < gru.mutable_values().size(); ++i) gru.mutable_values()[i] = rng.normal() * 1e-3 / 3.0;
    const auto gru_back = RecurrentModel::deserialize(gru.serialize(), gru.spec());
    exact = exact && (gru_back.values().array() == gru.values().array()).all();
    ok &= exact;
    d += std::string("; checkpoint round trip ") + (exact ? "exact" : "NOT exact");
    fs::remove_all(root);
    return {ok, d};
}

// ---------------------------------------------------------------------------
// 8. oracle checks

Verdict oracles(Case2Estimator& case2) {
    bool ok = true;
    std::string d;
    // IDW against a direct double loop in metres
    Rng rng(808);
    MeasurementSet m(32, 32);
    while (m.count() < 60) m.add(static_cast<int>(rng.uniform_int(0, 1023)), rng.uniform(-20.0, 60.0));
    const SnrMap est = idw_interpolate(m, 10.0);
    double worst = 0.0;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            double num = 0.0, den = 0.0, exact = NAN;
            for (int c = 0; c < 1024; ++c) {
                if (!m.mask[c]) continue;
                const double dx = 10.0 * (x - c % 32), dy = 10.0 * (y - c / 32);
                const double d2 = dx * dx + dy * dy;
                if (d2 == 0.0) exact = m.cell_values_db[c];
                else {
                    num += m.cell_values_db[c] / d2;
                    den += 1.0 / d2;
                }
            }
            const double oracle = std::isnan(exact) ? num / den : exact;
            worst = std::max(worst, std::abs(est.at(x, y) - oracle));
        }
    ok &= worst <= 1e-9;
    d += "idw max err " + fmt_g(worst);

    ExperimentConfig c;
    const auto scenes = make_scenes(c.env, c.data.eval_first_seed, c.policy.eval_scenarios);
    const DiffusionEstimator untrained(c.diffusion, 32, 32);
    const DiffusionEstimator& e = case2.ready() ? case2.get() : untrained;
    const ObjectiveConfig oc = c.objective_with_energy();
    ScenarioEvaluator g1(scenes, e, oc, 77), g2(scenes, e, oc, 77);
    const auto t1 = exhaustive_grid(g1, c.grid.rho, c.grid.spacing_u);
    const auto t2 = exhaustive_grid(g2, c.grid.rho, c.grid.spacing_u);
    bool same = t1.table.size() == t2.table.size();
    for (std::size_t i = 0; same && i < t1.table.size(); ++i)
        same = std::bit_cast<std::uint64_t>(t1.table[i].rate_bits) == std::bit_cast<std::uint64_t>(t2.table[i].rate_bits) &&
               std::bit_cast<std::uint64_t>(t1.table[i].est_diff_db) == std::bit_cast<std::uint64_t>(t2.table[i].est_diff_db);
    ok &= same;
    d += std::string("; grid table (") + std::to_string(t1.table.size()) + " rows) " + (same ? "bit-identical" : "differs");

    bool zero = true;
    int checked = 0;
    for (int sp = 1; sp <= 8; ++sp) {
        const double u = (sp - 1) / 7.0;
        for (std::size_t i = 0; i < scenes.size(); ++i) {
            Rng r(i, Stream::policy, static_cast<std::uint64_t>(sp));
            zero &= evaluate_objective({1.0, u}, scenes[i], e, oc, r).rate_bits == 0.0;
            ++checked;
        }
        zero &= g1.mean_rate({1.0, u}) == 0.0;
    }
    ok &= zero;
    d += "; rho = 1 rate exactly 0 in " + std::string(zero ? "all " : "NOT all ") + std::to_string(checked) + " missions";
    return {ok, d};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    auto wanted = [&](int n) { return only.empty() || only.contains(n); };

    Case1 case1;
    Case2Estimator case2;
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"diffusion core", diffusion_core},
        {"gradient fidelity", gradients},
        {"case 1 training trend", [&] { return training_trend(case1); }},
        {"case 1 estimator comparison", [&] { return case1_comparison(case1); }},
        {"case 2 energy trade-off", [&] { return tradeoff(case2); }},
        {"case 2 optimizer", [&] { return optimizer(case2); }},
        {"determinism", determinism},
        {"oracle checks", [&] { return oracles(case2); }},
    };
    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int n = static_cast<int>(k + 1);
        if (!wanted(n)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = criteria[k].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        if (!v.pass) ++failed;
        std::printf("criterion %d %s: %s [%s] (%.1f s)\n", n, v.pass ? "PASS" : "FAIL", criteria[k].first.c_str(),
                    v.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
