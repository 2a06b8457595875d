#pragma once

// Conditional denoising diffusion over flattened unit-scale SNR maps. The
// denoiser sees [x_t, mask, masked observations, time embedding] and predicts
// the injected noise; sampling runs the ancestral reverse chain and re-imposes
// the observed cells (suitably noised) after every step.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semg/error.hpp"
#include "semg/nn.hpp"
#include "semg/rf_env.hpp"
#include "semg/rng.hpp"
#include "semg/uav_mission.hpp"

namespace semg {

struct DiffusionConfig {
    int timesteps = 200;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int embed_dim = 16;
    std::vector<int> hidden = {512, 512};
    Activation activation = Activation::smooth_gated;
    int batch_size = 32;
    int train_steps = 5000;
    double learning_rate = 1e-3;
    int n_avg = 4;
    int checkpoint_every = 500;
    /// What the dense network outputs: the noise itself ("eps") or the clean
    /// map ("x0"), from which the noise estimate follows in closed form.
    std::string parameterization = "x0";
    /// Per-timestep weight on the noise MSE: "none" or "min_snr"
    /// (min(SNR_t, gamma) / SNR_t with SNR_t = alpha_bar_t / (1 - alpha_bar_t)).
    std::string loss_weighting = "min_snr";
    double snr_gamma = 5.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (timesteps < 2) throw ConfigError("diffusion: T must be >= 2");
        if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
            throw ConfigError("diffusion: betas must satisfy 0 < start <= end < 1");
        if (embed_dim <= 0 || embed_dim % 2 != 0) throw ConfigError("diffusion: embed_dim must be positive and even");
        if (batch_size <= 0 || train_steps < 0 || n_avg <= 0) throw ConfigError("diffusion: batch/steps/n_avg invalid");
        if (!(learning_rate > 0.0)) throw ConfigError("diffusion: learning rate must be > 0");
        for (int h : hidden)
            if (h <= 0) throw ConfigError("diffusion: hidden sizes must be positive");
        if (parameterization != "eps" && parameterization != "x0")
            throw ConfigError("diffusion: parameterization must be eps or x0");
        if (loss_weighting != "none" && loss_weighting != "min_snr")
            throw ConfigError("diffusion: loss_weighting must be none or min_snr");
        if (!(snr_gamma > 0.0)) throw ConfigError("diffusion: snr_gamma must be > 0");
    }
};

/// How raw network outputs become noise predictions, and how the training
/// loss weights each timestep.
struct DenoiserHead {
    bool predicts_x0 = true;
    bool min_snr = false;
    double gamma = 5.0;

    static DenoiserHead from(const DiffusionConfig& c) {
        return {c.parameterization == "x0", c.loss_weighting == "min_snr", c.snr_gamma};
    }

    /// d(eps_pred)/d(output); eps_pred = offset(x_t) + slope * output.
    double slope(double alpha_bar) const {
        return predicts_x0 ? -std::sqrt(alpha_bar) / std::sqrt(1.0 - alpha_bar) : 1.0;
    }
    double offset_scale(double alpha_bar) const { return predicts_x0 ? 1.0 / std::sqrt(1.0 - alpha_bar) : 0.0; }
    double weight(double alpha_bar) const {
        if (!min_snr) return 1.0;
        const double snr = alpha_bar / (1.0 - alpha_bar);
        return std::min(snr, gamma) / snr;
    }
};

/// Index 0 holds the t = 0 convention (beta = 0, alpha = alpha_bar = 1);
/// indices 1..T are the diffusion steps.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
};

inline NoiseSchedule make_schedule(int timesteps, double beta_start, double beta_end) {
    if (timesteps < 2) throw ConfigError("schedule: T must be >= 2");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw ConfigError("schedule: betas must satisfy 0 < start <= end < 1");
    NoiseSchedule s;
    s.T = timesteps;
    s.beta.assign(timesteps + 1, 0.0);
    s.alpha.assign(timesteps + 1, 1.0);
    s.alpha_bar.assign(timesteps + 1, 1.0);
    for (int t = 1; t <= timesteps; ++t) {
        s.beta[t] = beta_start + (beta_end - beta_start) * static_cast<double>(t - 1) / (timesteps - 1);
        s.alpha[t] = 1.0 - s.beta[t];
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    }
    return s;
}

inline NoiseSchedule make_schedule(const DiffusionConfig& c) {
    return make_schedule(c.timesteps, c.beta_start, c.beta_end);
}

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
inline std::vector<double> q_sample(std::span<const double> x0, int t, std::span<const double> eps,
                                    const NoiseSchedule& s) {
    require(t >= 0 && t <= s.T, "q_sample: timestep out of range");
    require(x0.size() == eps.size(), "q_sample: eps must match x0");
    const double a = std::sqrt(s.alpha_bar[t]);
    const double b = std::sqrt(1.0 - s.alpha_bar[t]);
    std::vector<double> out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

/// Sinusoidal embedding: sin(t w_i) for the first half, cos(t w_i) for the
/// second, w_i = 10000^(-i / half).
inline void time_embedding(int t, int dim, double* out) {
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double w = std::exp(-std::log(10000.0) * i / half);
        out[i] = std::sin(t * w);
        out[half + i] = std::cos(t * w);
    }
}

inline std::vector<double> time_embedding(int t, int dim) {
    std::vector<double> e(dim);
    time_embedding(t, dim, e.data());
    return e;
}

inline NetSpec denoiser_spec(int cells, const DiffusionConfig& c) {
    std::vector<int> sizes{3 * cells + c.embed_dim};
    sizes.insert(sizes.end(), c.hidden.begin(), c.hidden.end());
    sizes.push_back(cells);
    return NetSpec(sizes, c.activation);
}

/// Observation side of the denoiser input, in unit scale.
struct Conditioning {
    std::vector<double> mask;  // 0/1 per cell
    std::vector<double> obs;   // clamped unit value where masked, 0 elsewhere

    std::size_t cells() const { return mask.size(); }
};

inline Conditioning make_conditioning(const MeasurementSet& m, const EnvConfig& env) {
    Conditioning c;
    c.mask.assign(m.cells(), 0.0);
    c.obs.assign(m.cells(), 0.0);
    for (int cell : m.order) {
        c.mask[cell] = 1.0;
        c.obs[cell] = std::clamp(to_unit(m.cell_values_db[cell], env), -1.0, 1.0);
    }
    return c;
}

struct TrainingSample {
    std::span<const double> x0;  // ground truth unit map
    const Conditioning* cond = nullptr;
};

/// Writes one ConditionedInput column: [x_t | mask | obs | embedding(t)].
inline void fill_denoiser_input(Eigen::Ref<Vector> col, std::span<const double> x_t, const Conditioning& c, int t,
                                int embed_dim) {
    const auto n = static_cast<Eigen::Index>(x_t.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        col[i] = x_t[static_cast<std::size_t>(i)];
        col[n + i] = c.mask[static_cast<std::size_t>(i)];
        col[2 * n + i] = c.obs[static_cast<std::size_t>(i)];
    }
    time_embedding(t, embed_dim, col.data() + 3 * n);
}

/// One optimizer step of noise-prediction training on a minibatch.
/// Returns the mean squared error between predicted and injected noise.
inline double train_step(Params& params, AdamState& adam, std::span<const TrainingSample> batch,
                         const NoiseSchedule& schedule, int embed_dim, Rng& rng, const DenoiserHead& head = {false, false, 5.0}) {
    require(!batch.empty(), "train_step: empty batch");
    const auto cells = batch.front().x0.size();
    const auto B = static_cast<Eigen::Index>(batch.size());
    require(params.spec().input_size() == static_cast<int>(3 * cells) + embed_dim, "train_step: denoiser input size");

    Matrix input(params.spec().input_size(), B);
    Matrix eps(static_cast<Eigen::Index>(cells), B);
    Matrix offset(static_cast<Eigen::Index>(cells), B);
    std::vector<double> slope(static_cast<std::size_t>(B)), weight(static_cast<std::size_t>(B));
    std::vector<double> e(cells);
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto& s = batch[static_cast<std::size_t>(b)];
        require(s.x0.size() == cells && s.cond && s.cond->cells() == cells, "train_step: inconsistent sample");
        const int t = static_cast<int>(rng.uniform_int(1, schedule.T));
        for (auto& v : e) v = rng.normal();
        const auto xt = q_sample(s.x0, t, e, schedule);
        fill_denoiser_input(input.col(b), xt, *s.cond, t, embed_dim);
        const double ab = schedule.alpha_bar[t];
        const double off = head.offset_scale(ab);
        for (std::size_t i = 0; i < cells; ++i) {
            eps(static_cast<Eigen::Index>(i), b) = e[i];
            offset(static_cast<Eigen::Index>(i), b) = off * xt[i];
        }
        slope[static_cast<std::size_t>(b)] = head.slope(ab);
        weight[static_cast<std::size_t>(b)] = head.weight(ab);
    }
    ForwardCache cache;
    const Matrix out = forward(params, input, &cache);
    Matrix diff = offset - eps;
    for (Eigen::Index b = 0; b < B; ++b) diff.col(b) += slope[static_cast<std::size_t>(b)] * out.col(b);
    const double n = static_cast<double>(diff.size());
    double loss = 0.0;
    for (Eigen::Index b = 0; b < B; ++b) loss += weight[static_cast<std::size_t>(b)] * diff.col(b).squaredNorm();
    loss /= n;
    if (!std::isfinite(loss)) throw TrainingError("train_step: non-finite loss at optimizer step " + std::to_string(adam.step + 1));
    for (Eigen::Index b = 0; b < B; ++b)
        diff.col(b) *= 2.0 / n * weight[static_cast<std::size_t>(b)] * slope[static_cast<std::size_t>(b)];
    Vector grads = Vector::Zero(static_cast<Eigen::Index>(params.size()));
    backward(params, cache, diff, grads);
    adam_step(params, grads, adam);
    return loss;
}

namespace detail {

/// Remaining layers of a dense net starting from the first pre-activation.
inline Matrix forward_tail(const Params& params, Matrix z) {
    const NetSpec& spec = params.spec();
    Matrix a;
    for (std::size_t l = 0;; ++l) {
        const Activation act = spec.activation(l);
        a = act == Activation::identity ? std::move(z) : Matrix(z.unaryExpr([act](double v) { return activate(act, v); }));
        if (l + 1 == spec.n_layers()) return a;
        z = params.weight(l + 1) * a;
        z.colwise() += params.bias(l + 1);
    }
}

}  // namespace detail

/// Draws one conditional sample per entry of `conds`, each from its own RNG.
/// The first-layer contribution of the (constant) mask and observation blocks
/// is computed once per chain.
inline std::vector<UnitMap> sample_conditional_batch(const Params& params, std::span<const Conditioning> conds,
                                                     const NoiseSchedule& schedule, int embed_dim,
                                                     std::span<Rng> rngs, int width, int height,
                                                     const DenoiserHead& head = {false, false, 5.0}) {
    require(conds.size() == rngs.size(), "sample: one RNG per chain required");
    if (!params.all_finite()) throw GenerationError("sample: denoiser parameters are not finite");
    const auto cells = static_cast<Eigen::Index>(width) * height;
    require(params.spec().input_size() == 3 * cells + embed_dim, "sample: denoiser does not match grid");
    const auto B = static_cast<Eigen::Index>(conds.size());
    if (B == 0) return {};

    const auto w1 = params.weight(0);
    Matrix cond_in(2 * cells, B);
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto& c = conds[static_cast<std::size_t>(b)];
        require(static_cast<Eigen::Index>(c.cells()) == cells, "sample: conditioning size mismatch");
        for (Eigen::Index i = 0; i < cells; ++i) {
            cond_in(i, b) = c.mask[static_cast<std::size_t>(i)];
            cond_in(cells + i, b) = c.obs[static_cast<std::size_t>(i)];
        }
    }
    Matrix cond_pre = w1.middleCols(cells, 2 * cells) * cond_in;
    cond_pre.colwise() += params.bias(0);

    Matrix x(cells, B);
    for (Eigen::Index b = 0; b < B; ++b)
        for (Eigen::Index i = 0; i < cells; ++i) x(i, b) = rngs[static_cast<std::size_t>(b)].normal();

    auto replace_observed = [&](int t) {
        const double a = std::sqrt(schedule.alpha_bar[t]);
        const double s = std::sqrt(1.0 - schedule.alpha_bar[t]);
        for (Eigen::Index b = 0; b < B; ++b) {
            const auto& c = conds[static_cast<std::size_t>(b)];
            auto& rng = rngs[static_cast<std::size_t>(b)];
            for (Eigen::Index i = 0; i < cells; ++i)
                if (c.mask[static_cast<std::size_t>(i)] != 0.0)
                    x(i, b) = t == 0 ? c.obs[static_cast<std::size_t>(i)] : a * c.obs[static_cast<std::size_t>(i)] + s * rng.normal();
        }
    };
    replace_observed(schedule.T);

    Vector emb(embed_dim);
    for (int t = schedule.T; t >= 1; --t) {
        time_embedding(t, embed_dim, emb.data());
        Matrix z = w1.leftCols(cells) * x + cond_pre;
        z.colwise() += w1.rightCols(embed_dim) * emb;
        const Matrix out = detail::forward_tail(params, std::move(z));
        const double eps_off = head.offset_scale(schedule.alpha_bar[t]);
        const double eps_slope = head.slope(schedule.alpha_bar[t]);
        const double coef = schedule.beta[t] / std::sqrt(1.0 - schedule.alpha_bar[t]);
        const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha[t]);
        const double sigma = std::sqrt(schedule.beta[t]);
        for (Eigen::Index b = 0; b < B; ++b) {
            auto& rng = rngs[static_cast<std::size_t>(b)];
            for (Eigen::Index i = 0; i < cells; ++i) {
                const double eps_pred = eps_off * x(i, b) + eps_slope * out(i, b);
                double v = (x(i, b) - coef * eps_pred) * inv_sqrt_alpha;
                if (t > 1) v += sigma * rng.normal();
                x(i, b) = v;
            }
        }
        replace_observed(t - 1);
    }
    if (!x.allFinite()) throw GenerationError("sample: reverse chain produced non-finite values");

    std::vector<UnitMap> out;
    out.reserve(static_cast<std::size_t>(B));
    for (Eigen::Index b = 0; b < B; ++b) {
        UnitMap m(width, height);
        const auto& c = conds[static_cast<std::size_t>(b)];
        for (Eigen::Index i = 0; i < cells; ++i) {
            const auto k = static_cast<std::size_t>(i);
            m.values[k] = c.mask[k] != 0.0 ? c.obs[k] : std::clamp(x(i, b), -1.0, 1.0);
        }
        out.push_back(std::move(m));
    }
    return out;
}

inline UnitMap sample_conditional(const Params& params, const Conditioning& cond, const NoiseSchedule& schedule,
                                  int embed_dim, Rng& rng, int width, int height,
                                  const DenoiserHead& head = {false, false, 5.0}) {
    auto maps = sample_conditional_batch(params, std::span<const Conditioning>(&cond, 1), schedule, embed_dim,
                                         std::span<Rng>(&rng, 1), width, height, head);
    return std::move(maps.front());
}

/// Trained denoiser plus everything needed to run it on a given grid.
struct DiffusionEstimator {
    DiffusionConfig config;
    NoiseSchedule schedule;
    Params params;
    int width = 0;
    int height = 0;

    DiffusionEstimator() = default;
    DiffusionEstimator(const DiffusionConfig& c, int w, int h)
        : config(c), schedule(make_schedule(c)), params(Params::initialized(denoiser_spec(w * h, c), c.seed)), width(w), height(h) {
        c.validate();
    }
};

inline nlohmann::json to_json(const DiffusionConfig& c) {
    nlohmann::json j;
    j["timesteps"] = c.timesteps;
    j["beta_start"] = c.beta_start;
    j["beta_end"] = c.beta_end;
    j["embed_dim"] = c.embed_dim;
    j["hidden"] = c.hidden;
    j["activation"] = to_string(c.activation);
    j["batch_size"] = c.batch_size;
    j["train_steps"] = c.train_steps;
    j["learning_rate"] = c.learning_rate;
    j["n_avg"] = c.n_avg;
    j["checkpoint_every"] = c.checkpoint_every;
    j["parameterization"] = c.parameterization;
    j["loss_weighting"] = c.loss_weighting;
    j["snr_gamma"] = c.snr_gamma;
    j["seed"] = c.seed;
    return j;
}

/// Reads the keys present in `j` over `base`; unknown keys are rejected.
inline DiffusionConfig diffusion_config_from_json(const nlohmann::json& j, DiffusionConfig c = {}) {
    if (!j.is_object()) throw ConfigError("diffusion: config section must be an object");
    try {
        for (const auto& [k, v] : j.items()) {
            if (k == "timesteps") c.timesteps = v.get<int>();
            else if (k == "beta_start") c.beta_start = v.get<double>();
            else if (k == "beta_end") c.beta_end = v.get<double>();
            else if (k == "embed_dim") c.embed_dim = v.get<int>();
            else if (k == "hidden") c.hidden = v.get<std::vector<int>>();
            else if (k == "activation") c.activation = activation_from_string(v.get<std::string>());
            else if (k == "batch_size") c.batch_size = v.get<int>();
            else if (k == "train_steps") c.train_steps = v.get<int>();
            else if (k == "learning_rate") c.learning_rate = v.get<double>();
            else if (k == "n_avg") c.n_avg = v.get<int>();
            else if (k == "checkpoint_every") c.checkpoint_every = v.get<int>();
            else if (k == "parameterization") c.parameterization = v.get<std::string>();
            else if (k == "loss_weighting") c.loss_weighting = v.get<std::string>();
            else if (k == "snr_gamma") c.snr_gamma = v.get<double>();
            else if (k == "seed") c.seed = v.get<std::uint64_t>();
            else throw ConfigError("diffusion: unknown key '" + k + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("diffusion: bad value: ") + e.what());
    }
    c.validate();
    return c;
}

inline std::string serialize_estimator(const DiffusionEstimator& est) {
    nlohmann::json header;
    header["kind"] = "diffusion";
    header["net"] = net_spec_json(est.params.spec());
    header["seed"] = est.params.seed();
    header["diffusion"] = to_json(est.config);
    header["width"] = est.width;
    header["height"] = est.height;
    return serialize_checkpoint(header, est.params.values());
}

inline DiffusionEstimator deserialize_estimator(std::string_view text) {
    const Checkpoint ck = parse_checkpoint(text);
    if (ck.header.value("kind", "") != "diffusion") throw LoadError("checkpoint: not a diffusion estimator");
    DiffusionConfig cfg;
    int w = 0, h = 0;
    try {
        cfg = diffusion_config_from_json(ck.header.at("diffusion"));
        w = ck.header.at("width").get<int>();
        h = ck.header.at("height").get<int>();
    } catch (const std::exception& e) {
        throw LoadError(std::string("checkpoint: bad estimator header: ") + e.what());
    }
    if (w <= 0 || h <= 0) throw LoadError("checkpoint: bad grid size");
    DiffusionEstimator est(cfg, w, h);
    est.params = deserialize_params_values(ck, denoiser_spec(w * h, cfg));
    return est;
}

/// Averages groups of n_avg chains (request-major, one RNG per chain) in unit
/// scale and converts to dB. Observed cells are copied from the conditioning.
inline std::vector<SnrMap> average_chains(const DiffusionEstimator& est, std::span<const Conditioning> conds,
                                          const EnvConfig& env, std::span<Rng> chain_rngs, int n_avg) {
    if (n_avg <= 0) throw ConfigError("estimate: n_avg must be positive");
    require(chain_rngs.size() == conds.size() * static_cast<std::size_t>(n_avg), "estimate: one RNG per chain");
    std::vector<Conditioning> chains;
    chains.reserve(chain_rngs.size());
    for (const auto& c : conds)
        for (int k = 0; k < n_avg; ++k) chains.push_back(c);
    const auto samples = sample_conditional_batch(est.params, chains, est.schedule, est.config.embed_dim, chain_rngs,
                                                  est.width, est.height, DenoiserHead::from(est.config));
    std::vector<SnrMap> out;
    out.reserve(conds.size());
    for (std::size_t r = 0; r < conds.size(); ++r) {
        UnitMap mean(est.width, est.height);
        for (int k = 0; k < n_avg; ++k) {
            const auto& s = samples[r * n_avg + k];
            for (std::size_t i = 0; i < mean.size(); ++i) mean.values[i] += s.values[i];
        }
        for (std::size_t i = 0; i < mean.size(); ++i)
            mean.values[i] = conds[r].mask[i] != 0.0 ? conds[r].obs[i] : mean.values[i] / n_avg;
        out.push_back(from_unit(mean, env));
    }
    return out;
}

/// Mean of n_avg conditional samples per measurement set, in dB. Chain k of
/// request r draws from Rng(rng.next_u64()), seeds taken in request-major order.
inline std::vector<SnrMap> estimate_maps(const DiffusionEstimator& est, std::span<const Conditioning> conds,
                                         const EnvConfig& env, Rng& rng, int n_avg) {
    if (n_avg <= 0) throw ConfigError("estimate: n_avg must be positive");
    std::vector<Rng> rngs;
    rngs.reserve(conds.size() * n_avg);
    for (std::size_t i = 0; i < conds.size() * static_cast<std::size_t>(n_avg); ++i) rngs.emplace_back(rng.next_u64());
    return average_chains(est, conds, env, rngs, n_avg);
}

inline SnrMap estimate_map(const DiffusionEstimator& est, const MeasurementSet& m, const EnvConfig& env, Rng& rng,
                           int n_avg) {
    const Conditioning c = make_conditioning(m, env);
    return std::move(estimate_maps(est, std::span<const Conditioning>(&c, 1), env, rng, n_avg).front());
}

/// RMSE in dB over cells where `exclude_mask` is 0; over all cells when the
/// mask is absent.
inline double masked_rmse(const GridMap& estimate, const GridMap& truth,
                          std::span<const std::uint8_t> exclude_mask = {}) {
    require(estimate.width == truth.width && estimate.height == truth.height, "masked_rmse: grid mismatch");
    require(exclude_mask.empty() || exclude_mask.size() == truth.size(), "masked_rmse: mask size mismatch");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (!exclude_mask.empty() && exclude_mask[i]) continue;
        const double d = estimate.values[i] - truth.values[i];
        sum += d * d;
        ++n;
    }
    if (n == 0) throw UndefinedResultError("masked_rmse: no cells to evaluate");
    return std::sqrt(sum / static_cast<double>(n));
}

}  // namespace semg
