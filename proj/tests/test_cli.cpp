#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mdnn/checkpoint.hpp"
#include "mdnn/model.hpp"
#include "mdnn/run_config.hpp"
#include "test_util.hpp"

using namespace mdnn;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string err;
};

RunResult run_cli(const std::string& args, const fs::path& dir) {
    const fs::path err = dir / "stderr.txt";
    const std::string cmd = std::string(MDNN_CLI_PATH) + " " + args + " > " + (dir / "stdout.txt").string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(err);
    r.err.assign(std::istreambuf_iterator<char>(in), {});
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

nlohmann::json fixture_config() {
    std::ifstream in(std::string(MDNN_CONFIG_DIR) + "/fixture.json");
    auto j = nlohmann::json::parse(in);
    for (auto& t : j["tasks"])
        for (const char* key : {"train_images", "train_labels", "test_images", "test_labels"})
            t[key] = (fs::path(MDNN_CONFIG_DIR) / t[key].get<std::string>()).lexically_normal().string();
    return j;
}

fs::path write_config(const fs::path& dir, const nlohmann::json& j, const std::string& name = "config.json") {
    const fs::path p = dir / name;
    std::ofstream(p) << j.dump(2);
    return p;
}

bool same_tree(const fs::path& a, const fs::path& b) {
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(a)) {
        if (slurp(e.path()) != slurp(b / e.path().filename())) return false;
        ++files;
    }
    return files > 0 && files == static_cast<std::size_t>(std::distance(fs::directory_iterator(b), {}));
}

std::size_t line_count(const fs::path& p) {
    const std::string s = slurp(p);
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

} // namespace

TEST(Cli, FixtureTrainWritesAllArtifacts) {
    const auto dir = test::temp_dir("cli_train");
    const auto cfg = write_config(dir, fixture_config());
    const auto start = std::chrono::steady_clock::now();
    const auto r = run_cli("train --config " + cfg.string() + " --out " + (dir / "run").string(), dir);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_LT(seconds, 60.0);
    for (const char* f : {"checkpoint/model.json", "checkpoint/layer0_x_phi.f64", "checkpoint/layer1_y_a.f64",
                          "reports/curves.csv", "reports/confusion_x.csv", "reports/confusion_y.csv",
                          "reports/energy_x.csv", "reports/energy_y.csv"})
        EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
    EXPECT_EQ(line_count(dir / "run/reports/curves.csv"), 1u + 2u * 2u);
    EXPECT_EQ(line_count(dir / "run/reports/confusion_x.csv"), 10u);
    const auto ck = load_checkpoint((dir / "run/checkpoint").string());
    EXPECT_EQ(ck.model.n(), 16u);
    EXPECT_EQ(ck.model.layers.size(), 2u);
}

TEST(Cli, RerunWithSameSeedIsByteIdentical) {
    const auto dir = test::temp_dir("cli_determinism");
    const auto cfg = write_config(dir, fixture_config());
    ASSERT_EQ(run_cli("train --config " + cfg.string() + " --out " + (dir / "a").string(), dir).code, 0);
    ASSERT_EQ(run_cli("train --config " + cfg.string() + " --out " + (dir / "b").string() + " --workers 3", dir).code, 0);
    ASSERT_EQ(run_cli("train --config " + cfg.string() + " --out " + (dir / "c").string() + " --seed 9", dir).code, 0);
    EXPECT_TRUE(same_tree(dir / "a/checkpoint", dir / "b/checkpoint"));
    EXPECT_TRUE(same_tree(dir / "a/reports", dir / "b/reports"));
    EXPECT_NE(slurp(dir / "a/checkpoint/layer0_x_phi.f64"), slurp(dir / "c/checkpoint/layer0_x_phi.f64"));
}

TEST(Cli, ZeroWavelengthIsAConfigError) {
    const auto dir = test::temp_dir("cli_bad_wavelength");
    auto j = fixture_config();
    j["optics"]["wavelength"] = 0.0;
    const auto r = run_cli("train --config " + write_config(dir, j).string(), dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("wavelength"), std::string::npos) << r.err;
}

TEST(Cli, ConfigErrorsNameTheField) {
    const auto dir = test::temp_dir("cli_bad_fields");
    auto j = fixture_config();
    j["network"]["gap"] = -1.0;
    auto r = run_cli("train --config " + write_config(dir, j).string(), dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("network.gaps"), std::string::npos) << r.err;

    j = fixture_config();
    j["tasks"][1]["train_images"] = "/nonexistent/file";
    r = run_cli("train --config " + write_config(dir, j).string(), dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("tasks[1].train_images"), std::string::npos) << r.err;

    j = fixture_config();
    j["train"]["batch_size"] = 0;
    r = run_cli("train --config " + write_config(dir, j).string(), dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("train.batch_size"), std::string::npos) << r.err;

    std::ofstream(dir / "broken.json") << "{ not json";
    EXPECT_EQ(run_cli("train --config " + (dir / "broken.json").string(), dir).code, 2);
    EXPECT_EQ(run_cli("train", dir).code, 2);
    EXPECT_EQ(run_cli("frobnicate --config x", dir).code, 2);
}

TEST(Cli, EvalIsRepeatableAndRefusesMismatchedLibrary) {
    const auto dir = test::temp_dir("cli_eval");
    const auto cfg = write_config(dir, fixture_config());
    const std::string base = "--config " + cfg.string() + " --out " + (dir / "run").string();
    ASSERT_EQ(run_cli("train " + base, dir).code, 0);
    ASSERT_EQ(run_cli("synth-library --steps 64 --out " + (dir / "lib.csv").string(), dir).code, 0);
    fs::remove_all(dir / "run/reports");

    ASSERT_EQ(run_cli("eval " + base + " --library " + (dir / "lib.csv").string(), dir).code, 0);
    fs::rename(dir / "run/reports", dir / "first");
    ASSERT_EQ(run_cli("eval " + base + " --library " + (dir / "lib.csv").string(), dir).code, 0);
    EXPECT_TRUE(same_tree(dir / "first", dir / "run/reports"));
    for (const char* f : {"confusion_phase_x.csv", "confusion_crosstalk_y.csv", "percent_error_x.csv",
                          "energy_phase_y.csv", "eval_summary.csv"})
        EXPECT_TRUE(fs::exists(dir / "first" / f)) << f;

    std::string lib = slurp(dir / "lib.csv");
    lib.replace(lib.find("wavelength_nm=532"), 17, "wavelength_nm=633");
    std::ofstream(dir / "lib633.csv") << lib;
    const auto r = run_cli("eval " + base + " --library " + (dir / "lib633.csv").string(), dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("wavelength"), std::string::npos) << r.err;
}

TEST(Cli, EvalRefusesCheckpointWithDifferentOptics) {
    const auto dir = test::temp_dir("cli_eval_mismatch");
    const auto cfg = write_config(dir, fixture_config());
    ASSERT_EQ(run_cli("train --config " + cfg.string() + " --out " + (dir / "run").string(), dir).code, 0);
    auto j = fixture_config();
    j["optics"]["pitch"] = 350e-9;
    const auto other = write_config(dir, j, "other.json");
    const auto r = run_cli("eval --config " + other.string() + " --checkpoint " + (dir / "run/checkpoint").string() +
                               " --out " + (dir / "eval").string(),
                           dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("pitch"), std::string::npos) << r.err;
}

TEST(Cli, TrainedFixtureRoutesADigitThreeToRegionThree) {
    // Train on the 50-sample fixture until it is fitted, then evaluate on the
    // same samples and read the first "3" back from its intensity dump.
    const auto dir = test::temp_dir("cli_digit3");
    auto j = fixture_config();
    j["tasks"].erase(1);
    j["tasks"][0]["test_images"] = j["tasks"][0]["train_images"];
    j["tasks"][0]["test_labels"] = j["tasks"][0]["train_labels"];
    j["eval"]["pgm_samples"] = 50;
    const auto cfg = write_config(dir, j);
    const std::string base = "--config " + cfg.string() + " --out " + (dir / "run").string();
    ASSERT_EQ(run_cli("train " + base + " --epochs 60", dir).code, 0);
    ASSERT_EQ(run_cli("eval " + base, dir).code, 0);

    // Item 7 is the first "3" in the fixture.
    fs::path pgm;
    for (const auto& e : fs::directory_iterator(dir / "run/reports"))
        if (e.path().filename().string().starts_with("intensity_x_7_label3_")) pgm = e.path();
    ASSERT_FALSE(pgm.empty());
    const std::string bytes = slurp(pgm);
    const std::string header = "P5\n16 16\n65535\n";
    ASSERT_EQ(bytes.substr(0, header.size()), header);
    std::vector<double> I(256);
    for (std::size_t i = 0; i < 256; ++i) {
        const auto hi = static_cast<unsigned char>(bytes[header.size() + 2 * i]);
        const auto lo = static_cast<unsigned char>(bytes[header.size() + 2 * i + 1]);
        I[i] = hi * 256.0 + lo;
    }
    const auto e = region_energies(I, 16, 400e-9, default_layout(16, 10));
    EXPECT_EQ(predict(e.energies), 3);
}

TEST(Cli, RealizeWritesOneRowPerCell) {
    const auto dir = test::temp_dir("cli_realize");
    const auto cfg = write_config(dir, fixture_config());
    ASSERT_EQ(run_cli("train --config " + cfg.string() + " --out " + (dir / "run").string(), dir).code, 0);
    ASSERT_EQ(run_cli("synth-library --steps 64 --out " + (dir / "lib.csv").string(), dir).code, 0);
    const std::string args = "realize --config " + cfg.string() + " --checkpoint " + (dir / "run/checkpoint").string() +
                             " --library " + (dir / "lib.csv").string() + " --out ";
    ASSERT_EQ(run_cli(args + (dir / "a").string(), dir).code, 0);
    ASSERT_EQ(run_cli(args + (dir / "b").string(), dir).code, 0);
    EXPECT_TRUE(same_tree(dir / "a", dir / "b"));
    EXPECT_EQ(line_count(dir / "a/layout_layer0.csv"), 1u + 256u);
    EXPECT_EQ(line_count(dir / "a/layout_layer1.csv"), 1u + 256u);

    // Mean |dphi| stays below half the library phase spacing.
    std::istringstream report(slurp(dir / "a/realization_report.csv"));
    std::string line;
    std::getline(report, line);
    int rows = 0;
    while (std::getline(report, line)) {
        std::vector<std::string> cols;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
        ASSERT_EQ(cols.size(), 6u);
        EXPECT_LT(std::stod(cols[3]), 0.5 * two_pi / 63.0);
        ++rows;
    }
    EXPECT_EQ(rows, 4);
}

TEST(Cli, DemoBifocalReportsBothFoci) {
    const auto dir = test::temp_dir("cli_bifocal");
    auto j = fixture_config();
    j["bifocal"]["n"] = 96;
    const auto cfg = write_config(dir, j);
    ASSERT_EQ(run_cli("demo-bifocal --config " + cfg.string() + " --out " + (dir / "bf").string(), dir).code, 0);
    EXPECT_TRUE(fs::exists(dir / "bf/focal_x.pgm"));
    EXPECT_TRUE(fs::exists(dir / "bf/focal_y.pgm"));
    std::istringstream report(slurp(dir / "bf/bifocal_report.csv"));
    std::string line;
    std::getline(report, line);
    EXPECT_EQ(line, "channel,designed_x,designed_y,designed_z,peak_x,peak_y,peak_intensity,cross_ratio");
    int rows = 0;
    while (std::getline(report, line)) {
        std::vector<double> v;
        std::stringstream ss(line.substr(2));
        for (std::string c; std::getline(ss, c, ',');) v.push_back(std::stod(c));
        ASSERT_EQ(v.size(), 7u);
        EXPECT_LE(std::abs(v[3] - v[0]), 400e-9 * 1.0001);
        EXPECT_LE(std::abs(v[4] - v[1]), 400e-9 * 1.0001);
        EXPECT_LT(v[6], 0.2);
        ++rows;
    }
    EXPECT_EQ(rows, 2);
}

TEST(Configs, ShippedConfigsParse) {
    for (const char* name : {"paper.json", "desk.json", "fig5_binary.json", "fixture.json"}) {
        const RunConfig rc = load_run_config(std::string(MDNN_CONFIG_DIR) + "/" + name);
        EXPECT_NO_THROW(rc.make_network()) << name;
        EXPECT_FALSE(rc.tasks.empty()) << name;
    }
    const RunConfig paper = load_run_config(std::string(MDNN_CONFIG_DIR) + "/paper.json");
    EXPECT_EQ(paper.optics.wavelength, 532e-9);
    EXPECT_EQ(paper.optics.pitch, 400e-9);
    EXPECT_EQ(paper.gaps, (std::vector<double>{0.0, 100e-6, 100e-6, 100e-6}));
    EXPECT_EQ(paper.train.batch_size, 10u);
    EXPECT_EQ(paper.train.learning_rate, 0.1);
    const RunConfig fig5 = load_run_config(std::string(MDNN_CONFIG_DIR) + "/fig5_binary.json");
    EXPECT_EQ(fig5.tasks[1].labels, (std::vector<int>{0, 7}));
    EXPECT_EQ(fig5.tasks[1].task.detector.classes(), 2u);
    EXPECT_TRUE(fig5.tasks[0].task.binarize_threshold.has_value());
}
