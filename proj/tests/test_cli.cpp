#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "bfl/commands.hpp"
#include "json.hpp"

using namespace bfl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / "bfl_cli_test" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

run_config small_config(const fs::path& out) {
    return resolve_config({}, {{"out", nlohmann::json(out.string()).dump()},
                               {"grid.n_side", "11"},
                               {"geometry.spiral.m", "24"},
                               {"dataset.count", "12"}});
}

struct proc_result {
    int code;
    std::string out, err;
};

proc_result run_tool(const std::string& args, const fs::path& dir) {
    const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = std::string(BFL_TOOL_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WEXITSTATUS(status), io::read_text(out), io::read_text(err)};
}

} // namespace

TEST(Config, DefaultsValidateAndHashIsStable) {
    const auto a = resolve_config({}, {});
    EXPECT_EQ(a.n_side, 21u);
    EXPECT_EQ(a.train.batch_size, 64u);
    EXPECT_EQ(a.hash(), resolve_config({}, {}).hash());
    EXPECT_NE(a.hash(), resolve_config({}, {{"grid.n_side", "11"}}).hash());
    EXPECT_EQ(a.hash(), resolve_config({}, {{"out", "\"elsewhere\""}}).hash());
    EXPECT_EQ(run_config::from_json(a.to_json()).to_json(), a.to_json());
}

TEST(Config, UnknownKeysAreRejected) {
    const auto dir = scratch("unknown");
    io::write_text(dir / "c.json", R"({"grid": {"n_sides": 5}})");
    try {
        resolve_config(dir / "c.json", {});
        FAIL();
    } catch (const parameter_error& e) {
        EXPECT_NE(std::string(e.what()).find("grid.n_sides"), std::string::npos);
    }
    EXPECT_THROW(resolve_config({}, {{"nope", "1"}}), parameter_error);
    io::write_text(dir / "s.json", R"({"scene": {"sources": [{"x": 0.1, "q": 2}]}})");
    EXPECT_THROW(resolve_config(dir / "s.json", {}), parameter_error);
    io::write_text(dir / "bad.json", "{ not json");
    EXPECT_THROW(resolve_config(dir / "bad.json", {}), format_error);
}

TEST(Config, FlagBeatsFileBeatsDefault) {
    const auto dir = scratch("precedence");
    io::write_text(dir / "c.json", R"({"grid": {"n_side": 15, "extent": 0.5}, "scene": {"snr_db": 10}})");
    const auto from_file = resolve_config(dir / "c.json", {});
    EXPECT_EQ(from_file.n_side, 15u);
    EXPECT_EQ(from_file.extent, 0.5);
    EXPECT_EQ(from_file.z, 2.5);
    EXPECT_EQ(from_file.snr_db, 10.0);
    const auto flagged = resolve_config(dir / "c.json", {{"grid.n_side", "9"}, {"solver.method", "damas"}});
    EXPECT_EQ(flagged.n_side, 9u);
    EXPECT_EQ(flagged.extent, 0.5);
    EXPECT_EQ(flagged.method, "damas");
    EXPECT_THROW(resolve_config({}, {{"solver.method", "clean"}}), parameter_error);
    EXPECT_THROW(resolve_config({}, {{"train.split_fraction", "1.5"}}), parameter_error);
}

TEST(Commands, SimulateThenSolveDasHasZeroBias) {
    const auto dir = scratch("solve");
    auto cfg = small_config(dir / "sim");
    cfg.sources = {{0.2, -0.4, 1.0, 0.0}};
    const auto sim = cmd_simulate(cfg);
    EXPECT_TRUE(fs::exists(dir / "sim" / "config.json"));
    EXPECT_TRUE(fs::exists(dir / "sim" / "artifacts.json"));
    cfg.out = (dir / "solve").string();
    cfg.input_csm = sim.csm_path.string();
    for (const char* m : {"das", "damas", "damas-fista"}) {
        cfg.method = m;
        const auto r = cmd_solve(cfg);
        EXPECT_NEAR(r.report.delta_l, 0.0, 1e-12) << m;
        EXPECT_TRUE(fs::exists(r.map_csv));
        EXPECT_TRUE(fs::exists(r.map_pgm));
    }
    const auto rep = nlohmann::json::parse(io::read_text(dir / "solve" / "report.json"));
    EXPECT_EQ(rep.at(0).at("method"), "damas-fista");
    EXPECT_EQ(load_index(dir / "solve").config_hash, cfg.hash());
}

TEST(Commands, SolveRefusesCsmFromAnotherGrid) {
    const auto dir = scratch("mismatch");
    auto cfg = small_config(dir / "sim");
    const auto sim = cmd_simulate(cfg);
    auto other = cfg;
    other.n_side = 9;
    other.out = (dir / "solve").string();
    other.input_csm = sim.csm_path.string();
    EXPECT_THROW(cmd_solve(other), format_error);
}

TEST(Commands, DatasetTwiceGivesIdenticalManifest) {
    const auto dir = scratch("dataset");
    auto cfg = small_config(dir / "a");
    cmd_dataset(cfg);
    cfg.out = (dir / "b").string();
    cmd_dataset(cfg);
    EXPECT_EQ(io::read_text(dir / "a" / "dataset" / "manifest.json"), io::read_text(dir / "b" / "dataset" / "manifest.json"));
}

TEST(Commands, TrainEvalAndImagePipeline) {
    const auto dir = scratch("pipeline");
    auto cfg = small_config(dir / "data");
    cmd_dataset(cfg);
    cfg.input_dataset = (dir / "data" / "dataset").string();
    cfg.train.epochs = 2;
    cfg.train.batch_size = 4;
    cfg.out = (dir / "train").string();
    const auto tr = cmd_train(cfg);
    EXPECT_EQ(tr.history.size(), 3u);
    EXPECT_TRUE(fs::exists(dir / "train" / "checkpoint.netp"));
    EXPECT_TRUE(fs::exists(dir / "train" / "checkpoint.netp.json"));
    const auto loss_csv = io::read_text(dir / "train" / "loss.csv");
    EXPECT_EQ(loss_csv.rfind("epoch,train_loss,val_loss,wall_time\n", 0), 0u);

    cfg.out = (dir / "eval").string();
    cfg.input_checkpoint = (dir / "train" / "checkpoint.netp").string();
    const auto ev = cmd_eval(cfg);
    ASSERT_EQ(ev.size(), 4u);
    const auto csv = io::read_text(dir / "eval" / "eval.csv");
    EXPECT_NE(csv.find("\nnet,"), std::string::npos);

    // a checkpoint from a different geometry is refused
    auto other = cfg;
    other.spiral_m = 20;
    other.out = (dir / "eval2").string();
    EXPECT_THROW(cmd_eval(other), format_error);

    cfg.out = (dir / "img").string();
    cfg.method = "das";
    cfg.input_csm.clear();
    const auto s = cmd_solve(cfg);
    cfg.input_map = s.map_csv.string();
    const auto pgm = cmd_image(cfg);
    EXPECT_EQ(io::read_text(pgm), io::read_text(s.map_pgm));
}

TEST(Tool, ErrorsAreJsonOnStderr) {
    const auto dir = scratch("tool");
    auto r = run_tool("solve --csm " + (dir / "missing.csm").string() + " --out " + dir.string(), dir);
    EXPECT_NE(r.code, 0);
    const auto j = nlohmann::json::parse(r.err);
    EXPECT_EQ(j.at("error"), "format_error");
    EXPECT_NE(j.at("path").get<std::string>().find("missing.csm"), std::string::npos);

    r = run_tool("solve --set grid.bogus=1 --out " + dir.string(), dir);
    EXPECT_NE(r.code, 0);
    EXPECT_EQ(nlohmann::json::parse(r.err).at("error"), "parameter_error");

    r = run_tool("frobnicate", dir);
    EXPECT_NE(r.code, 0);
    EXPECT_EQ(nlohmann::json::parse(r.err).at("error"), "usage_error");
}

TEST(Tool, SolveFromFlagsWritesOutputs) {
    const auto dir = scratch("tool_ok");
    const auto r = run_tool("solve --method das --seed 3 --set grid.n_side=9 --set geometry.spiral.m=16 --out " +
                                dir.string(),
                            dir);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("delta_l=0"), std::string::npos);
    const auto cfg = nlohmann::json::parse(io::read_text(dir / "config.json"));
    EXPECT_EQ(cfg.at("config").at("seed"), 3);
    EXPECT_EQ(cfg.at("config").at("grid").at("n_side"), 9);
    EXPECT_TRUE(fs::exists(dir / "map.pgm"));
}
