// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace {

namespace fs = std::filesystem;

struct Result {
    int code = -1;
    std::string out;
};

fs::path workdir() {
    const fs::path d = fs::temp_directory_path() / "qsl_unit_cli";
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Result qsl(const std::string& args) {
    const fs::path log = workdir() / "last.log";
    const std::string cmd = std::string("\"") + QSL_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

fs::path write(const std::string& name, const std::string& text) {
    const fs::path p = workdir() / name;
    std::ofstream(p) << text;
    return p;
}

const char* kSmall = R"({"workload":{"L":16,"d":8,"T":12},"calib":{"epochs":2,"samples":3},"ssar":{"rank":4}})";

TEST(Cli, RunWithDefaultConfigWritesErrorsCsv) {
    const fs::path out = workdir() / "default_run";
    fs::remove_all(out);
    const auto r = qsl(std::string("run --config \"") + QSL_DEFAULT_CONFIG + "\" --out \"" + out.string() + "\"");
    ASSERT_EQ(r.code, 0) << r.out;
    const std::string csv = slurp(out / "errors.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,mode,frob_err,psnr");
    EXPECT_TRUE(fs::exists(out / "summary.json"));
}

TEST(Cli, CalibrateThenRunThenReport) {
    const fs::path cfg = write("small.json", kSmall);
    const fs::path cal = workdir() / "cal.json", trace = workdir() / "trace.csv", out = workdir() / "small_run";
    fs::remove_all(out);
    auto r = qsl("calibrate --config " + cfg.string() + " --out " + cal.string() + " --loss-trace " + trace.string());
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(slurp(trace).substr(0, 36), "iter,l_quant,l_global,l_local,total\n");
    r = qsl("run --config " + cfg.string() + " --calib " + cal.string() + " --out " + out.string() + " --export");
    ASSERT_EQ(r.code, 0) << r.out;
    for (const char* f : {"spectrum.csv", "alignment.csv", "cache_ssar.json", "cache_ssar.bin", "mask.json"}) {
        EXPECT_TRUE(fs::exists(out / f)) << f;
    }
    r = qsl("report --in " + out.string() + " --format json");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("\"mode\": \"ssar\""), std::string::npos) << r.out;
    r = qsl("report --in " + out.string() + " --format csv");
    EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "mode,steps,mean_frob,mean_psnr");
}

TEST(Cli, RunsAreByteIdentical) {
    const fs::path cfg = write("small.json", kSmall);
    const fs::path a = workdir() / "det_a", b = workdir() / "det_b";
    fs::remove_all(a);
    fs::remove_all(b);
    ASSERT_EQ(qsl("run --config " + cfg.string() + " --out " + a.string()).code, 0);
    ASSERT_EQ(qsl("run --config " + cfg.string() + " --out " + b.string()).code, 0);
    EXPECT_EQ(slurp(a / "errors.csv"), slurp(b / "errors.csv"));
    EXPECT_FALSE(slurp(a / "errors.csv").empty());
}

TEST(Cli, MissingConfigExitsOneWithPath) {
    const auto r = qsl("run --config /no/such/qsl_config.json --out " + (workdir() / "x").string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("/no/such/qsl_config.json"), std::string::npos) << r.out;
}

TEST(Cli, UnknownFlagExitsOneWithUsage) {
    const auto r = qsl("run --config a.json --out b --bogus");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("--bogus"), std::string::npos) << r.out;
    EXPECT_EQ(qsl("").code, 1);
    EXPECT_EQ(qsl("frobnicate").code, 1);
}

TEST(Cli, InvalidConfigExitsOne) {
    const fs::path cfg = write("bad.json", R"({"workload":{"L":"many"}})");
    const auto r = qsl("calibrate --config " + cfg.string() + " --out " + (workdir() / "x.json").string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("workload.L"), std::string::npos) << r.out;
}

TEST(Cli, NumericalFailureExitsTwo) {
    const fs::path cfg = write("diverge.json", R"({"calib":{"lr_scale":1e4,"lr_affine":1e4,"lr_decay":"constant"}})");
    const auto r = qsl("calibrate --config " + cfg.string() + " --out " + (workdir() / "x.json").string());
    EXPECT_EQ(r.code, 2) << r.out;
}

TEST(Cli, SweepWritesTable) {
    const fs::path cfg = write("small.json", kSmall);
    const fs::path grid = write("grid.json", R"({"ssar.rank":[1,4]})");
    const fs::path table = workdir() / "table.csv";
    const auto r = qsl("sweep --config " + cfg.string() + " --grid " + grid.string() + " --out " + table.string());
    ASSERT_EQ(r.code, 0) << r.out;
    const std::string csv = slurp(table);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
    EXPECT_EQ(csv.rfind("ssar.rank,status", 0), 0u);
}

}  // namespace
