#pragma once

// Synthetic RF scenes: transmitters over a rectangular grid, log-distance
// path loss with spatially correlated log-normal shadowing, and the
// ground-truth SNR map the estimators try to recover.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "semg/error.hpp"
#include "semg/rng.hpp"

namespace semg {

struct EnvConfig {
    int width_cells = 32;
    int height_cells = 32;
    double cell_size_m = 10.0;
    int n_transmitters = 3;
    double tx_power_dbm = 20.0;
    double path_loss_exponent = 3.0;
    double ref_loss_db = 40.0;
    double ref_distance_m = 1.0;
    double shadowing_sigma_db = 6.0;
    double shadowing_corr_cells = 3.0;
    double noise_floor_dbm = -100.0;
    double snr_lo_db = -20.0;
    double snr_hi_db = 60.0;
    std::uint64_t seed = 0;

    int cells() const { return width_cells * height_cells; }

    void validate() const {
        if (width_cells <= 0 || height_cells <= 0) throw ConfigError("env: grid dimensions must be positive");
        if (!(cell_size_m > 0.0)) throw ConfigError("env: cell_size_m must be > 0");
        if (n_transmitters <= 0) throw ConfigError("env: n_transmitters must be positive");
        if (!(path_loss_exponent > 0.0)) throw ConfigError("env: path_loss_exponent must be > 0");
        if (!(ref_distance_m > 0.0)) throw ConfigError("env: ref_distance_m must be > 0");
        if (!(shadowing_sigma_db >= 0.0)) throw ConfigError("env: shadowing_sigma_db must be >= 0");
        if (!(shadowing_corr_cells >= 0.0)) throw ConfigError("env: shadowing_corr_cells must be >= 0");
        if (!(snr_lo_db < snr_hi_db)) throw ConfigError("env: snr clamp requires lo < hi");
        if (!std::isfinite(tx_power_dbm) || !std::isfinite(ref_loss_db) || !std::isfinite(noise_floor_dbm))
            throw ConfigError("env: non-finite power parameter");
    }
};

struct Transmitter {
    double x_m = 0.0;
    double y_m = 0.0;
    double tx_power_dbm = 0.0;
};

/// Row-major grid of doubles; cell (x, y) lives at index y * width + x.
struct GridMap {
    int width = 0;
    int height = 0;
    std::vector<double> values;

    GridMap() = default;
    GridMap(int w, int h, double fill = 0.0) : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

    std::size_t size() const { return values.size(); }
    double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// SNR in dB per cell.
struct SnrMap : GridMap {
    double cell_size_m = 1.0;
    SnrMap() = default;
    SnrMap(int w, int h, double cell, double fill = 0.0) : GridMap(w, h, fill), cell_size_m(cell) {}
};

/// SNR rescaled so that the clamp range maps onto [-1, 1].
struct UnitMap : GridMap {
    using GridMap::GridMap;
};

struct Environment {
    EnvConfig config;
    std::vector<Transmitter> transmitters;
    GridMap shadow_db;
};

inline double path_loss_db(double distance_m, const EnvConfig& config) {
    const double d = std::max(distance_m, config.ref_distance_m);
    return config.ref_loss_db + 10.0 * config.path_loss_exponent * std::log10(d / config.ref_distance_m);
}

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma_cells) {
    if (sigma_cells <= 0.0) return {1.0};
    const int radius = static_cast<int>(std::ceil(3.0 * sigma_cells));
    std::vector<double> k(2 * radius + 1);
    for (int i = -radius; i <= radius; ++i) k[i + radius] = std::exp(-0.5 * (i * i) / (sigma_cells * sigma_cells));
    return k;
}

}  // namespace detail

/// Zero-mean Gaussian field with per-cell standard deviation sigma_db and
/// correlation set by a separable Gaussian kernel. The white field is drawn on
/// a padded grid so every output cell sees the full kernel support.
inline GridMap shadowing_field(const EnvConfig& config) {
    GridMap out(config.width_cells, config.height_cells, 0.0);
    if (config.shadowing_sigma_db == 0.0) return out;

    const auto kernel = detail::gaussian_kernel(config.shadowing_corr_cells);
    const int r = static_cast<int>(kernel.size() / 2);
    const int pw = config.width_cells + 2 * r;
    const int ph = config.height_cells + 2 * r;

    Rng rng(config.seed, Stream::shadowing);
    std::vector<double> white(static_cast<std::size_t>(pw) * ph);
    for (auto& v : white) v = rng.normal();

    // Horizontal pass (valid columns only), then vertical pass.
    std::vector<double> tmp(static_cast<std::size_t>(config.width_cells) * ph, 0.0);
    for (int y = 0; y < ph; ++y)
        for (int x = 0; x < config.width_cells; ++x) {
            double s = 0.0;
            for (int k = 0; k <= 2 * r; ++k) s += kernel[k] * white[static_cast<std::size_t>(y) * pw + x + k];
            tmp[static_cast<std::size_t>(y) * config.width_cells + x] = s;
        }
    double energy = 0.0;
    for (double k : kernel) energy += k * k;
    // Separable kernel: the 2-D kernel energy is the product of the 1-D ones.
    const double scale = config.shadowing_sigma_db / energy;
    for (int y = 0; y < config.height_cells; ++y)
        for (int x = 0; x < config.width_cells; ++x) {
            double s = 0.0;
            for (int k = 0; k <= 2 * r; ++k) s += kernel[k] * tmp[static_cast<std::size_t>(y + k) * config.width_cells + x];
            out.at(x, y) = s * scale;
        }
    return out;
}

inline Environment build_environment(const EnvConfig& config) {
    config.validate();
    Environment env;
    env.config = config;
    Rng rng(config.seed, Stream::environment);
    const double w = config.width_cells * config.cell_size_m;
    const double h = config.height_cells * config.cell_size_m;
    env.transmitters.reserve(config.n_transmitters);
    for (int i = 0; i < config.n_transmitters; ++i) {
        Transmitter t;
        t.x_m = rng.uniform(0.0, w);
        t.y_m = rng.uniform(0.0, h);
        t.tx_power_dbm = config.tx_power_dbm;
        env.transmitters.push_back(t);
    }
    env.shadow_db = shadowing_field(config);
    return env;
}

inline double cell_center_m(int index, double cell_size_m) { return (index + 0.5) * cell_size_m; }

/// SNR before clamping: transmitter powers summed in mW over the noise floor.
inline SnrMap unclamped_snr_map(const Environment& env) {
    const auto& c = env.config;
    SnrMap map(c.width_cells, c.height_cells, c.cell_size_m);
    for (int y = 0; y < c.height_cells; ++y)
        for (int x = 0; x < c.width_cells; ++x) {
            const double cx = cell_center_m(x, c.cell_size_m);
            const double cy = cell_center_m(y, c.cell_size_m);
            double total_mw = 0.0;
            for (const auto& t : env.transmitters) {
                const double d = std::hypot(cx - t.x_m, cy - t.y_m);
                const double rx_dbm = t.tx_power_dbm - path_loss_db(d, c) - env.shadow_db.at(x, y);
                total_mw += std::pow(10.0, rx_dbm / 10.0);
            }
            map.at(x, y) = 10.0 * std::log10(total_mw) - c.noise_floor_dbm;
        }
    return map;
}

inline SnrMap ground_truth_map(const Environment& env) {
    SnrMap map = unclamped_snr_map(env);
    for (auto& v : map.values) v = std::clamp(v, env.config.snr_lo_db, env.config.snr_hi_db);
    return map;
}

inline double to_unit(double db, const EnvConfig& c) {
    return 2.0 * (db - c.snr_lo_db) / (c.snr_hi_db - c.snr_lo_db) - 1.0;
}

inline double from_unit(double u, const EnvConfig& c) {
    u = std::clamp(u, -1.0, 1.0);
    return c.snr_lo_db + (u + 1.0) * 0.5 * (c.snr_hi_db - c.snr_lo_db);
}

inline UnitMap to_unit(const SnrMap& map, const EnvConfig& c) {
    UnitMap out(map.width, map.height);
    std::transform(map.values.begin(), map.values.end(), out.values.begin(), [&](double v) { return to_unit(v, c); });
    return out;
}

inline SnrMap from_unit(const UnitMap& unit, const EnvConfig& c) {
    SnrMap out(unit.width, unit.height, c.cell_size_m);
    std::transform(unit.values.begin(), unit.values.end(), out.values.begin(), [&](double u) { return from_unit(u, c); });
    return out;
}

}  // namespace semg
