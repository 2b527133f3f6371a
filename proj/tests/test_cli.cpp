#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

#include "mpk/image.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
};

Outcome run(const std::string& args) {
    const std::string cmd = std::string(MPK_CLI_PATH) + " " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    Outcome r;
    if (!pipe) return r;
    char buf[4096];
    std::size_t n = 0;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / "mpk_cli_tests" / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

/// Small model and short schedule so the CLI tests run quickly.
fs::path small_config(const fs::path& dir) {
    const fs::path cfg = dir / "run.cfg";
    std::ofstream os(cfg);
    os << "[paths]\noutput_dir = " << (dir / "out").string() << "\ndata_dir = " << (dir / "images").string()
       << "\npatches = " << (dir / "out" / "synth.mpk").string() << "\n"
       << "[model]\nF = 8\nN = 8\nM = 4\nG = 8\nT = 8\n"
       << "[trainer]\nbatch_size = 32\nstage1 = 40\nstage2 = 40\nstage3 = 40\nstage4 = 40\nstage5 = 40\ncheckpoint_every = 25\n"
       << "[hmc]\nn_leapfrog = 10\n"
       << "[preprocess]\npatch_size = 4\npatches_per_image = 200\n"
       << "[synth]\ncount = 400\n";
    return cfg;
}

void write_images(const fs::path& dir) {
    fs::create_directories(dir);
    for (int k = 0; k < 2; ++k) {
        mpk::Raster r{24, 20, 1, std::vector<double>(24 * 20)};
        for (std::size_t i = 0; i < r.data.size(); ++i)
            r.data[i] = static_cast<double>((i * (7 + k) + i / 24 * 13) % 256) / 255.0;
        mpk::write_pnm(dir / ("img" + std::to_string(k) + ".pgm"), r);
    }
}

} // namespace

TEST(Cli, PreprocessEmptyDirectoryIsDataError) {
    const fs::path d = fresh_dir("empty");
    const fs::path cfg = small_config(d);
    fs::create_directories(d / "images");
    EXPECT_EQ(run("--config " + cfg.string() + " preprocess").code, 2);
}

TEST(Cli, PreprocessIsDeterministic) {
    const fs::path d = fresh_dir("pre");
    const fs::path cfg = small_config(d);
    write_images(d / "images");
    const Outcome a = run("--config " + cfg.string() + " preprocess");
    ASSERT_EQ(a.code, 0) << a.out;
    EXPECT_NE(a.out.find("retained variance"), std::string::npos);
    const std::string first = slurp(d / "out" / "synth.mpk");
    ASSERT_FALSE(first.empty());
    ASSERT_EQ(run("--config " + cfg.string() + " preprocess").code, 0);
    EXPECT_EQ(slurp(d / "out" / "synth.mpk"), first);
    ASSERT_EQ(run("--config " + cfg.string() + " --seed 9 preprocess").code, 0);
    EXPECT_NE(slurp(d / "out" / "synth.mpk"), first);
}

TEST(Cli, CheckPassesAndInjectedBugFails) {
    const Outcome ok = run("check");
    EXPECT_EQ(ok.code, 0) << ok.out;
    EXPECT_EQ(ok.out.find("FAIL"), std::string::npos);
    EXPECT_EQ(run("check --inject-gradient-bug").code, 1);
    const Outcome js = run("--json check");
    ASSERT_EQ(js.code, 0);
    const auto j = nlohmann::json::parse(js.out);
    EXPECT_TRUE(j.at("passed").get<bool>());
    ASSERT_EQ(j.at("checks").size(), 3u);
    EXPECT_EQ(j.at("checks")[0].at("name"), "gradient check");
}

TEST(Cli, TrainSynthExportAndErrors) {
    const fs::path d = fresh_dir("train");
    const std::string cfg = "--config " + small_config(d).string();
    EXPECT_EQ(run(cfg + " train").code, 4); // no patch file yet
    ASSERT_EQ(run(cfg + " synth").code, 0);

    const Outcome t = run(cfg + " --iterations 100 train");
    ASSERT_EQ(t.code, 0) << t.out;
    EXPECT_NE(t.out.find("stage boundaries: 40 80 120 160 200"), std::string::npos) << t.out;
    EXPECT_NE(t.out.find("stage 3 (phase-Q) from iteration 80"), std::string::npos) << t.out;
    EXPECT_NE(t.out.find("finished at iteration 100"), std::string::npos);
    const std::string metrics = slurp(d / "out" / "metrics.csv");
    EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 101);

    // Raw-space export needs a whitening file; the whitened domain does not.
    EXPECT_EQ(run(cfg + " export --what C").code, 4);
    for (const char* what : {"C", "W", "P-groups", "Q-groups", "R-groups", "amplitude", "phase"}) {
        const Outcome e = run(cfg + " export --whitened --what " + what);
        EXPECT_EQ(e.code, 0) << what;
        EXPECT_EQ(slurp(d / "out" / (std::string(what) + ".ppm")).substr(0, 2), "P6") << what;
    }
    EXPECT_EQ(run(cfg + " export --whitened --what nonsense").code, 2);
    EXPECT_EQ(run(cfg + " --json sample").code, 0);

    // Model D that disagrees with the patch file.
    std::ofstream(d / "run.cfg", std::ios::app) << "[model]\nD = 10\n";
    EXPECT_EQ(run(cfg + " train").code, 3);
    EXPECT_EQ(run("--config " + (d / "missing.cfg").string() + " train").code, 2);
}

TEST(Cli, ResumeMatchesUninterruptedRun) {
    const fs::path a = fresh_dir("resume_a");
    const fs::path b = fresh_dir("resume_b");
    const std::string ca = "--config " + small_config(a).string();
    const std::string cb = "--config " + small_config(b).string();
    ASSERT_EQ(run(ca + " synth").code, 0);
    ASSERT_EQ(run(cb + " synth").code, 0);
    ASSERT_EQ(run(ca + " --iterations 130 train").code, 0);
    ASSERT_EQ(run(cb + " --iterations 60 train").code, 0);
    const fs::path ck = b / "out" / "checkpoint.mpk";
    ASSERT_EQ(run(cb + " --iterations 130 --resume " + ck.string() + " train").code, 0);
    EXPECT_EQ(slurp(a / "out" / "checkpoint.mpk"), slurp(ck));
    EXPECT_EQ(slurp(a / "out" / "metrics.csv"), slurp(b / "out" / "metrics.csv"));
}
