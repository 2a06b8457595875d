#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "semg/config.hpp"
#include "semg/io.hpp"

using namespace semg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("semg_io_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    const fs::path p = dir / name;
    fs::remove(p);
    return p;
}

std::vector<std::string> lines_of(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

}  // namespace

TEST(Pgm, LevelsExample) {
    GridMap m(4, 1);
    m.values = {-20.0, 20.0, 60.0, -20.0};
    EXPECT_EQ(format_pgm(m, -20.0, 60.0), "P2\n4 1\n255\n0 128 255 0\n");
}

TEST(Pgm, ConstantMaps) {
    for (double v : {-20.0, -50.0}) {
        const std::string s = format_pgm(GridMap(3, 2, v), -20.0, 60.0);
        EXPECT_EQ(s, "P2\n3 2\n255\n0 0 0\n0 0 0\n");
    }
    EXPECT_EQ(format_pgm(GridMap(2, 2, 60.0), -20.0, 60.0), "P2\n2 2\n255\n255 255\n255 255\n");
    EXPECT_EQ(format_pgm(GridMap(1, 1, 99.0), -20.0, 60.0), "P2\n1 1\n255\n255\n");
}

TEST(Pgm, RoundHalfUp) {
    // 255 * 0.5 / 255 = 0.5 grey step
    EXPECT_EQ(pgm_level(0.5, 0.0, 255.0), 1);
    EXPECT_EQ(pgm_level(0.49, 0.0, 255.0), 0);
    EXPECT_THROW(format_pgm(GridMap(1, 1), 1.0, 1.0), ContractViolation);
}

TEST(Pgm, ExportWritesFile) {
    const auto p = scratch("map.pgm");
    SnrMap m(2, 1, 10.0);
    m.values = {-20.0, 60.0};
    export_pgm(m, EnvConfig{}, p);
    EXPECT_EQ(lines_of(p), (std::vector<std::string>{"P2", "2 1", "255", "0 255"}));
}

TEST(Csv, FixedFormatting) {
    EXPECT_EQ(format_fixed(1.5), "1.500000");
    EXPECT_EQ(format_fixed(-0.0000001), "0.000000");
    EXPECT_EQ(format_fixed(-2.25, 2), "-2.25");
    EXPECT_EQ(format_fixed(1e10), "10000000000.000000");
    EXPECT_THROW(format_fixed(std::nan("")), NumericError);
    EXPECT_EQ(csv_field(CsvValue{1.5}), "1.500000");
    EXPECT_EQ(csv_field(CsvValue{std::int64_t{-7}}), "-7");
}

TEST(Csv, Quoting) {
    EXPECT_EQ(csv_field(CsvValue{std::string("plain")}), "plain");
    EXPECT_EQ(csv_field(CsvValue{std::string("a,b")}), "\"a,b\"");
    EXPECT_EQ(csv_field(CsvValue{std::string("say \"hi\"")}), "\"say \"\"hi\"\"\"");
    EXPECT_EQ(csv_field(CsvValue{std::string("two\nlines")}), "\"two\nlines\"");
    EXPECT_EQ(csv_line({std::string("x"), 2.0, std::int64_t{3}}), "x,2.000000,3\n");
}

TEST(Csv, AppendWritesHeaderOnce) {
    const auto p = scratch("metrics.csv");
    const std::vector<std::string> h{"step", "loss"};
    append_metrics(p, h, {std::int64_t{1}, 1.5});
    EXPECT_EQ(lines_of(p), (std::vector<std::string>{"step,loss", "1,1.500000"}));
    for (int i = 2; i <= 10; ++i) append_metrics(p, h, {std::int64_t{i}, 0.5});
    const auto lines = lines_of(p);
    ASSERT_EQ(lines.size(), 11u);
    EXPECT_EQ(lines[10], "10,0.500000");
}

TEST(Csv, AppendRejectsMismatch) {
    const auto p = scratch("bad.csv");
    EXPECT_THROW(append_metrics(p, {"a", "b"}, {1.0}), ContractViolation);
    EXPECT_FALSE(fs::exists(p));
    append_metrics(p, {"a", "b"}, {1.0, 2.0});
    EXPECT_THROW(append_metrics(p, {"a", "c"}, {1.0, 2.0}), ContractViolation);
    EXPECT_EQ(lines_of(p).size(), 2u);
}

TEST(Csv, Table) {
    CsvTable t({"rho", "rate_bits"});
    t.add({0.1, 2.0});
    t.add({0.2, 1.0});
    EXPECT_EQ(t.rows(), 2u);
    EXPECT_EQ(t.str(), "rho,rate_bits\n0.100000,2.000000\n0.200000,1.000000\n");
    EXPECT_THROW(t.add({1.0}), ContractViolation);
}

TEST(Csv, MapAndMeasurements) {
    GridMap m(2, 2);
    m.values = {1.0, 2.0, 3.0, 4.25};
    EXPECT_EQ(format_map_csv(m), "1.000000,2.000000\n3.000000,4.250000\n");
    MeasurementSet s(3, 2);
    s.add(5, 7.0);
    s.add(1, -1.0);
    EXPECT_EQ(format_measurements_csv(s), "cell_x,cell_y,order_index,value_db\n2,1,0,7.000000\n1,0,1,-1.000000\n");
}

TEST(Config, DefaultsRoundTrip) {
    const ExperimentConfig c;
    const auto j = config_to_json(c);
    const auto back = config_from_json(j);
    EXPECT_EQ(config_to_json(back).dump(), j.dump());
    EXPECT_EQ(back.env.width_cells, 32);
    EXPECT_EQ(back.diffusion.timesteps, 200);
}

TEST(Config, UnknownKeysRejected) {
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"env": {"widht_cells": 4}})")), ConfigError);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"enviroment": {}})")), ConfigError);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"env": 3})")), ConfigError);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"([1, 2])")), ConfigError);
    EXPECT_THROW(parse_config_text("{not json"), ConfigError);
}

TEST(Config, ValidationErrors) {
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"env": {"width_cells": 0}})")), ConfigError);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"env": {"width_cells": "wide"}})")), ConfigError);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"policy": {"temperature": 0}})")), ConfigError);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"random_search": {"budget": 0}})")), ConfigError);
}

TEST(Config, OverridesAndMasterSeed) {
    nlohmann::json j = nlohmann::json::object();
    apply_override(j, "env.width_cells=16");
    apply_override(j, "run.seed=9");
    apply_override(j, "run.checkpoint=/tmp/x.semg-ckpt");
    apply_override(j, "sweep.rho_grid=[0.1,0.2]");
    const auto c = config_from_json(j);
    EXPECT_EQ(c.env.width_cells, 16);
    EXPECT_EQ(c.run.checkpoint, "/tmp/x.semg-ckpt");
    EXPECT_EQ(c.sweep.rho_grid, (std::vector<double>{0.1, 0.2}));
    EXPECT_EQ(c.diffusion.seed, 9u);
    EXPECT_EQ(c.policy.seed, 9u);
    EXPECT_EQ(c.ddpg.seed, 9u);
    EXPECT_THROW(apply_override(j, "noequals"), ConfigError);
    EXPECT_THROW(apply_override(j, "flat=1"), ConfigError);
    EXPECT_THROW(apply_override(j, "a.b.c=1"), ConfigError);
}

TEST(Config, ShippedFilesLoad) {
    for (const char* name : {"default.json", "smoke.json"}) {
        const auto c = load_config(std::string(SEMG_SOURCE_DIR) + "/configs/" + name, {});
        EXPECT_EQ(c.env.width_cells, 32) << name;
    }
    const auto d = load_config(std::string(SEMG_SOURCE_DIR) + "/configs/default.json", {});
    EXPECT_EQ(config_to_json(d).dump(), config_to_json(ExperimentConfig{}).dump());
    EXPECT_THROW(load_config("/nonexistent/semg.json", {}), MissingArtifactError);
}
