#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "semg/rf_env.hpp"
#include "semg/uav_mission.hpp"

using namespace semg;

namespace {

SnrMap truth_map(std::uint64_t seed, int w = 32, int h = 32) {
    EnvConfig c;
    c.width_cells = w;
    c.height_cells = h;
    c.seed = seed;
    return ground_truth_map(build_environment(c));
}

}  // namespace

TEST(Lawnmower, FullCoverageSpacingOne) {
    const auto t = plan_lawnmower(4, 4, 1);
    ASSERT_EQ(t.waypoints.size(), 16u);
    std::set<std::pair<int, int>> cells;
    for (const auto& c : t.waypoints) cells.insert({c.x, c.y});
    EXPECT_EQ(cells.size(), 16u);
    EXPECT_EQ(t.waypoints.front(), (Cell{0, 0}));
}

TEST(Lawnmower, AlternateRows) {
    const auto t = plan_lawnmower(4, 4, 2);
    const std::vector<Cell> expected{{0, 0}, {1, 0}, {2, 0}, {3, 0}, {3, 2}, {2, 2}, {1, 2}, {0, 2}};
    EXPECT_EQ(t.waypoints, expected);
}

TEST(Lawnmower, DefaultGridSpacingFourEnumeration) {
    const auto t = plan_lawnmower(32, 32, 4);
    std::vector<Cell> expected;
    for (int r = 0; r < 8; ++r)
        for (int i = 0; i < 32; ++i) expected.push_back({r % 2 == 0 ? i : 31 - i, 4 * r});
    EXPECT_EQ(t.waypoints, expected);
    double length = 0.0;
    for (std::size_t k = 1; k < t.waypoints.size(); ++k)
        length += std::hypot(t.waypoints[k].x - t.waypoints[k - 1].x, t.waypoints[k].y - t.waypoints[k - 1].y);
    EXPECT_DOUBLE_EQ(length, 8 * 31 + 7 * 4);  // row moves plus inter-row moves
}

TEST(Lawnmower, SpacingBounds) {
    EXPECT_THROW(plan_lawnmower(4, 4, 5), ConfigError);
    EXPECT_THROW(plan_lawnmower(4, 4, 0), ConfigError);
    EXPECT_NO_THROW(plan_lawnmower(4, 4, 4));
    EXPECT_EQ(plan_lawnmower(4, 4, 4).waypoints.size(), 4u);
}

TEST(Mission, ZeroRhoIsEmpty) {
    const auto truth = truth_map(1);
    Rng rng(1);
    const auto r = execute_mission(truth, plan_lawnmower(32, 32, 4), EnergyModel{}, 0.0, 1.0, rng);
    EXPECT_TRUE(r.measurements.empty());
    EXPECT_EQ(r.ledger.flight_j, 0.0);
    EXPECT_EQ(r.ledger.sensing_j, 0.0);
    EXPECT_EQ(r.ledger.transmission_j, EnergyModel{}.total_budget_j);
}

TEST(Mission, NoiselessFullSweepMatchesTruth) {
    const auto truth = truth_map(2, 16, 16);
    Rng rng(2);
    const auto r = execute_mission(truth, plan_lawnmower(16, 16, 1), EnergyModel{}, 1.0, 0.0, rng);
    ASSERT_EQ(r.measurements.count(), 256u);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        EXPECT_EQ(r.measurements.mask[i], 1);
        EXPECT_EQ(r.measurements.cell_values_db[i], truth.values[i]);
    }
}

// Step-by-step energy accounting, written independently of execute_mission.
static std::size_t reachable_waypoints(const std::vector<Cell>& path, double cell_m, const EnergyModel& em, double rho) {
    double spent = 0.0;
    for (std::size_t k = 0; k < path.size(); ++k) {
        double step = em.sense_j_per_sample;
        if (k > 0) {
            const double dx = path[k].x - path[k - 1].x, dy = path[k].y - path[k - 1].y;
            step += em.fly_j_per_m * cell_m * std::sqrt(dx * dx + dy * dy);
        }
        if (spent + step > rho * em.total_budget_j) return k;
        spent += step;
    }
    return path.size();
}

TEST(Mission, TruncationMatchesEnumeration) {
    const auto truth = truth_map(3);
    const EnergyModel em;
    const auto traj = plan_lawnmower(32, 32, 4);
    for (double rho : {0.05, 0.2, 0.5, 0.9}) {
        Rng rng(3);
        const auto r = execute_mission(truth, traj, em, rho, 1.0, rng);
        const auto expected = reachable_waypoints(traj.waypoints, 10.0, em, rho);
        EXPECT_EQ(r.waypoints_reached, expected) << "rho " << rho;
        EXPECT_EQ(r.measurements.count(), expected) << "rho " << rho;
    }
    // rho = 0.2 stops part way through the sweep.
    Rng rng(3);
    EXPECT_LT(execute_mission(truth, traj, em, 0.2, 1.0, rng).waypoints_reached, traj.waypoints.size());
}

TEST(Mission, FirstUnvisitedWaypointWouldOverflow) {
    const auto truth = truth_map(4);
    const EnergyModel em;
    const auto traj = plan_lawnmower(32, 32, 2);
    for (double rho : {0.1, 0.33, 0.5}) {  // the full spacing-2 sweep costs 107760 J
        Rng rng(4);
        const auto r = execute_mission(truth, traj, em, rho, 0.0, rng);
        ASSERT_LT(r.waypoints_reached, traj.waypoints.size());
        const auto& a = traj.waypoints[r.waypoints_reached - 1];
        const auto& b = traj.waypoints[r.waypoints_reached];
        const double next = em.fly_j_per_m * 10.0 * std::hypot(b.x - a.x, b.y - a.y) + em.sense_j_per_sample;
        EXPECT_LE(r.ledger.estimation_j(), rho * em.total_budget_j);
        EXPECT_GT(r.ledger.estimation_j() + next, rho * em.total_budget_j);
    }
}

TEST(Mission, EnergyConservation) {
    const auto truth = truth_map(5);
    const auto traj = plan_lawnmower(32, 32, 3);
    for (int i = 0; i <= 20; ++i) {
        Rng rng(5);
        const double rho = i / 20.0;
        const auto r = execute_mission(truth, traj, EnergyModel{}, rho, 1.0, rng);
        EXPECT_NEAR(r.ledger.total_j(), EnergyModel{}.total_budget_j, 1e-9);
        EXPECT_GE(r.ledger.transmission_j, 0.0);
    }
}

TEST(Mission, CoverageMonotoneInRho) {
    const auto truth = truth_map(6);
    const auto traj = plan_lawnmower(32, 32, 1);
    std::size_t prev = 0;
    for (int i = 0; i <= 50; ++i) {
        Rng rng(6);
        const auto n = execute_mission(truth, traj, EnergyModel{}, i / 50.0, 1.0, rng).measurements.count();
        EXPECT_GE(n, prev);
        prev = n;
    }
}

TEST(Mission, SampleEveryOtherCell) {
    const auto truth = truth_map(7);
    Rng rng(7);
    const auto r = execute_mission(truth, plan_lawnmower(32, 32, 4, 2), EnergyModel{}, 1.0, 0.0, rng);
    EXPECT_EQ(r.measurements.count(), 128u);
    EXPECT_DOUBLE_EQ(r.ledger.sensing_j, 128 * 5.0);
}

TEST(Mission, NoiseStatistics) {
    const auto truth = truth_map(8, 16, 16);
    const auto traj = plan_lawnmower(16, 16, 1);
    double s = 0.0, q = 0.0;
    int n = 0;
    for (int rep = 0; rep < 100; ++rep) {
        Rng rng(8, Stream::measurement, static_cast<std::uint64_t>(rep));
        const auto r = execute_mission(truth, traj, EnergyModel{}, 1.0, 2.0, rng);
        for (int c : r.measurements.order) {
            const double d = r.measurements.cell_values_db[c] - truth.values[c];
            s += d;
            q += d * d;
            ++n;
        }
    }
    EXPECT_NEAR(s / n, 0.0, 0.05);
    EXPECT_NEAR(std::sqrt(q / n), 2.0, 0.05);
}

TEST(Mission, DeterministicGivenStream) {
    const auto truth = truth_map(9);
    Rng a(11), b(11);
    const auto traj = plan_lawnmower(32, 32, 4);
    const auto ra = execute_mission(truth, traj, EnergyModel{}, 0.7, 1.0, a);
    const auto rb = execute_mission(truth, traj, EnergyModel{}, 0.7, 1.0, b);
    EXPECT_EQ(ra.measurements.cell_values_db, rb.measurements.cell_values_db);
    EXPECT_EQ(ra.measurements.order, rb.measurements.order);
}

TEST(Mission, InvalidInputs) {
    const auto truth = truth_map(10);
    Rng rng(1);
    const auto traj = plan_lawnmower(32, 32, 4);
    EXPECT_THROW(execute_mission(truth, traj, EnergyModel{}, 1.5, 1.0, rng), ConfigError);
    EXPECT_THROW(execute_mission(truth, traj, EnergyModel{}, -0.1, 1.0, rng), ConfigError);
    EnergyModel bad;
    bad.tx_power_w = 0.0;
    EXPECT_THROW(execute_mission(truth, traj, bad, 0.5, 1.0, rng), ConfigError);
}

TEST(MeasurementSet, RepeatVisitKeepsFirstValue) {
    MeasurementSet m(4, 4);
    m.add(5, 1.0);
    m.add(5, 2.0);
    EXPECT_EQ(m.count(), 1u);
    EXPECT_EQ(m.cell_values_db[5], 1.0);
}
