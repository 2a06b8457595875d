#pragma once

// UAV kinematics and the energy ledger. The UAV flies a cell path at constant
// speed, samples SNR every few cells, and stops as soon as the next step would
// push flight + sensing energy past its estimation share rho * budget. The
// rest of the budget is reserved for data transmission.

#include <cmath>
#include <cstdint>
#include <vector>

#include "semg/error.hpp"
#include "semg/rf_env.hpp"
#include "semg/rng.hpp"

namespace semg {

struct EnergyModel {
    double fly_j_per_m = 20.0;
    double sense_j_per_sample = 5.0;
    double tx_power_w = 40.0;
    double total_budget_j = 200000.0;

    void validate() const {
        if (!(fly_j_per_m > 0.0) || !(sense_j_per_sample > 0.0) || !(tx_power_w > 0.0) || !(total_budget_j > 0.0))
            throw ConfigError("energy model: all parameters must be strictly positive");
    }
};

struct Cell {
    int x = 0;
    int y = 0;
    friend bool operator==(const Cell&, const Cell&) = default;
};

struct Trajectory {
    std::vector<Cell> waypoints;
    int sample_every_cells = 1;
};

/// Sparse SNR observations. `cell_values_db` is indexed by cell and is only
/// meaningful where `mask` is set; `order` lists masked cells in visit order.
struct MeasurementSet {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> mask;
    std::vector<double> cell_values_db;
    std::vector<int> order;

    MeasurementSet() = default;
    MeasurementSet(int w, int h)
        : width(w), height(h), mask(static_cast<std::size_t>(w) * h, 0), cell_values_db(static_cast<std::size_t>(w) * h, 0.0) {}

    std::size_t cells() const { return mask.size(); }
    std::size_t count() const { return order.size(); }
    bool empty() const { return order.empty(); }

    /// Records a sample; repeated visits to a cell keep the first value.
    void add(int cell, double value_db) {
        if (mask[cell]) return;
        mask[cell] = 1;
        cell_values_db[cell] = value_db;
        order.push_back(cell);
    }
};

struct EnergyLedger {
    double flight_j = 0.0;
    double sensing_j = 0.0;
    double transmission_j = 0.0;

    double estimation_j() const { return flight_j + sensing_j; }
    double total_j() const { return flight_j + sensing_j + transmission_j; }
};

struct MissionResult {
    MeasurementSet measurements;
    EnergyLedger ledger;
    /// Number of waypoints reached before the energy cut-off.
    std::size_t waypoints_reached = 0;
};

/// Boustrophedon sweep over rows 0, spacing, 2*spacing, ... starting at (0,0).
/// Waypoints are the swept-row cells; the move between rows is a straight
/// flight of `spacing` cells with no samples on the way.
inline Trajectory plan_lawnmower(int width, int height, int row_spacing_cells, int sample_every_cells = 1) {
    if (width <= 0 || height <= 0) throw ConfigError("lawnmower: grid dimensions must be positive");
    if (row_spacing_cells < 1 || row_spacing_cells > height)
        throw ConfigError("lawnmower: row spacing must lie in [1, height]");
    if (sample_every_cells < 1) throw ConfigError("lawnmower: sample_every_cells must be >= 1");
    Trajectory traj;
    traj.sample_every_cells = sample_every_cells;
    bool left_to_right = true;
    for (int row = 0; row < height; row += row_spacing_cells) {
        for (int i = 0; i < width; ++i) traj.waypoints.push_back({left_to_right ? i : width - 1 - i, row});
        left_to_right = !left_to_right;
    }
    return traj;
}

/// Flies `traj` over the ground truth map, measuring truth + N(0, sigma^2) dB.
inline MissionResult execute_mission(const SnrMap& truth, const Trajectory& traj, const EnergyModel& em,
                                     double est_fraction, double meas_noise_sigma_db, Rng& rng) {
    em.validate();
    if (!(est_fraction >= 0.0 && est_fraction <= 1.0)) throw ConfigError("mission: rho must lie in [0, 1]");
    if (!(meas_noise_sigma_db >= 0.0)) throw ConfigError("mission: measurement sigma must be >= 0");
    if (traj.waypoints.empty()) throw ConfigError("mission: empty trajectory");
    if (traj.sample_every_cells < 1) throw ConfigError("mission: sample_every_cells must be >= 1");

    MissionResult out;
    out.measurements = MeasurementSet(truth.width, truth.height);
    const double limit = est_fraction * em.total_budget_j;
    double spent = 0.0;
    for (std::size_t k = 0; k < traj.waypoints.size(); ++k) {
        const Cell c = traj.waypoints[k];
        if (c.x < 0 || c.y < 0 || c.x >= truth.width || c.y >= truth.height)
            throw ConfigError("mission: waypoint outside grid");
        double fly = 0.0;
        if (k > 0) {
            const Cell p = traj.waypoints[k - 1];
            fly = em.fly_j_per_m * truth.cell_size_m * std::hypot(double(c.x - p.x), double(c.y - p.y));
        }
        const bool sample = k % static_cast<std::size_t>(traj.sample_every_cells) == 0;
        const double sense = sample ? em.sense_j_per_sample : 0.0;
        if (spent + fly + sense > limit) break;
        spent += fly + sense;
        out.ledger.flight_j += fly;
        out.ledger.sensing_j += sense;
        out.waypoints_reached = k + 1;
        if (sample) {
            const double noise = meas_noise_sigma_db > 0.0 ? meas_noise_sigma_db * rng.normal() : 0.0;
            out.measurements.add(c.y * truth.width + c.x, truth.at(c.x, c.y) + noise);
        }
    }
    out.ledger.transmission_j = em.total_budget_j - out.ledger.flight_j - out.ledger.sensing_j;
    return out;
}

inline MissionResult execute_mission(const Environment& env, const Trajectory& traj, const EnergyModel& em,
                                     double est_fraction, double meas_noise_sigma_db, Rng& rng) {
    return execute_mission(ground_truth_map(env), traj, em, est_fraction, meas_noise_sigma_db, rng);
}

}  // namespace semg
