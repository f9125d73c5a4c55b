#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Sandbox {
    fs::path dir;
    Sandbox() {
        dir = fs::temp_directory_path() / ("ductnav_cli_" + std::to_string(::getpid()) + "_" +
                                           ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Sandbox() { fs::remove_all(dir); }

    fs::path write(const std::string& name, const std::string& text) const {
        const auto p = dir / name;
        std::ofstream(p) << text;
        return p;
    }
};

int run(const std::string& args) {
    const std::string cmd = std::string(DUCTNAV_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count_lines(const fs::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string l; std::getline(in, l);) ++n;
    return n;
}

const char* kTinyPpo = R"([run]
iterations = 2
checkpoint_every = 1
[duct]
n_segments = 2
max_bend_deg = 0
[ppo]
n_envs = 4
horizon = 16
hidden = 16,16
)";

}  // namespace

TEST(cli, generate_is_deterministic_with_defaults) {
    Sandbox s;
    ASSERT_EQ(run("generate --seed 7 --obj --out " + (s.dir / "a").string()), 0);
    ASSERT_EQ(run("generate --seed 7 --out " + (s.dir / "b").string()), 0);
    const auto a = slurp(s.dir / "a" / "duct_seed7.json");
    EXPECT_EQ(a, slurp(s.dir / "b" / "duct_seed7.json"));
    const auto j = nlohmann::json::parse(a);
    EXPECT_EQ(j["segments"].size(), 7u);
    EXPECT_EQ(j["waypoints"].size(), 7u);
    EXPECT_EQ(j["radius"].get<double>(), 0.25);
    EXPECT_TRUE(fs::exists(s.dir / "a" / "duct_seed7.obj"));
}

TEST(cli, config_errors_exit_2) {
    Sandbox s;
    const auto bad = s.write("bad.ini", "[ppo]\nhorizn = 3\n");
    EXPECT_EQ(run("train --config " + bad.string() + " --out " + (s.dir / "r").string()), 2);
    EXPECT_EQ(run("train --config " + (s.dir / "missing.ini").string()), 2);
    EXPECT_EQ(run("train --algo td3"), 2);
    EXPECT_EQ(run("frobnicate"), 2);
}

TEST(cli, io_errors_exit_3) {
    Sandbox s;
    EXPECT_EQ(run("eval --checkpoint " + (s.dir / "nope.bin").string()), 3);
    const auto junk = s.write("junk.bin", "not a checkpoint");
    EXPECT_EQ(run("export-traj --checkpoint " + junk.string() + " --out " + (s.dir / "t.csv").string()), 3);
}

TEST(cli, train_eval_export_round_trip) {
    Sandbox s;
    const auto cfg = s.write("tiny.ini", kTinyPpo);
    const auto run_dir = s.dir / "run";
    ASSERT_EQ(run("train --config " + cfg.string() + " --seed 3 --out " + run_dir.string()), 0);
    EXPECT_EQ(count_lines(run_dir / "stats.csv"), 3u);
    EXPECT_TRUE(fs::exists(run_dir / "checkpoints" / "ckpt_000002.bin"));
    EXPECT_TRUE(fs::exists(run_dir / "config.ini"));

    // rerun into a second directory: identical stats
    const auto run2 = s.dir / "run2";
    ASSERT_EQ(run("train --config " + cfg.string() + " --seed 3 --out " + run2.string()), 0);
    EXPECT_EQ(slurp(run_dir / "stats.csv"), slurp(run2 / "stats.csv"));

    // resolved config replays the run
    const auto run3 = s.dir / "run3";
    ASSERT_EQ(run("train --config " + (run_dir / "config.ini").string() + " --out " + run3.string()), 0);
    EXPECT_EQ(slurp(run_dir / "stats.csv"), slurp(run3 / "stats.csv"));

    const auto ev = s.dir / "eval";
    ASSERT_EQ(run("eval --checkpoint " + run_dir.string() + " --episodes 3 --trajectories --out " + ev.string()), 0);
    EXPECT_EQ(count_lines(ev / "eval_report.csv"), 3u);  // header + 2 checkpoints
    EXPECT_EQ(count_lines(ev / "eval_episodes.csv"), 7u);
    EXPECT_TRUE(fs::exists(ev / "traj_iter2_seed1000.csv"));

    // a config that differs from the checkpoint's is rejected
    const auto other = s.write("other.ini", std::string(kTinyPpo) + "[env]\nmax_steps = 99\n");
    EXPECT_EQ(run("eval --config " + other.string() + " --checkpoint " + run_dir.string()), 2);
    EXPECT_EQ(run("eval --config " + (run_dir / "config.ini").string() + " --seed 0 --episodes 1 --checkpoint " +
                  (run_dir / "checkpoints" / "ckpt_000002.bin").string()),
              0);

    const auto traj = s.dir / "traj.csv";
    ASSERT_EQ(run("export-traj --checkpoint " + (run_dir / "checkpoints" / "ckpt_000002.bin").string() +
                  " --seed 1000 --out " + traj.string()),
              0);
    EXPECT_GE(count_lines(traj), 2u);
    EXPECT_EQ(slurp(traj), slurp(ev / "traj_iter2_seed1000.csv"));
}

TEST(cli, sac_run_records_positive_alpha) {
    Sandbox s;
    const auto cfg = s.write("sac.ini", R"([run]
algo = sac
iterations = 2
[duct]
n_segments = 2
[sac]
n_envs = 2
hidden = 8
batch = 16
warmup = 16
steps_per_iteration = 10
gradient_steps = 1
lr_constant = true
lr_initial = 0.0003
)");
    ASSERT_EQ(run("train --config " + cfg.string() + " --out " + (s.dir / "r").string()), 0);
    std::ifstream in(s.dir / "r" / "stats.csv");
    std::string header, row;
    std::getline(in, header);
    EXPECT_NE(header.find("alpha"), std::string::npos);
    int rows = 0;
    while (std::getline(in, row)) {
        std::stringstream ss(row);
        std::string c;
        for (int i = 0; i <= 8; ++i) std::getline(ss, c, ',');
        EXPECT_GT(std::stod(c), 0.0);
        ++rows;
    }
    EXPECT_EQ(rows, 2);
}
