#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rslab/bench.hpp"

namespace rslab::bench {
namespace {

namespace fs = std::filesystem;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::path(testing::TempDir()) / ("rslab_bench_" + std::string(testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write_config(const std::string& name, const std::string& text) {
    const auto p = dir_ / name;
    std::ofstream(p, std::ios::binary) << text;
    return p;
  }

  int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " \"" RSLAB_BENCH_CLI "\" " + args + " 2>" + (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string stderr_text() const { return read_file(dir_ / "stderr.txt"); }

  fs::path dir_;
};

struct CsvRow {
  std::vector<std::string> cells;
};

std::vector<CsvRow> parse_csv(const std::string& text) {
  std::vector<CsvRow> rows;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    CsvRow r;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) r.cells.push_back(cell);
    if (!line.empty() && line.back() == ',') r.cells.emplace_back();
    rows.push_back(r);
  }
  return rows;
}

const CsvRow* find_row(const std::vector<CsvRow>& rows, const std::string& scheme, const std::string& metric) {
  for (const auto& r : rows)
    if (r.cells.size() == 8 && r.cells[1] == scheme && r.cells[4] == metric) return &r;
  return nullptr;
}

const char* kCounterexample = R"({
  "experiment": "diagnose",
  "seed": 5,
  "schemes": ["systematic", "multinomial"],
  "replicates": 20000,
  "weights": [0.125, 0.125, 0.125, 0.625]
})";

TEST_F(CliTest, DiagnoseReportsSystematicCounterexample) {
  const auto cfg = write_config("c.json", kCounterexample);
  ASSERT_EQ(run("diagnose --config " + cfg.string() + " --out " + (dir_ / "out").string()), 0) << stderr_text();
  const auto rows = parse_csv(read_file(dir_ / "out" / "results.csv"));
  ASSERT_FALSE(rows.empty());
  EXPECT_EQ(rows[0].cells,
            (std::vector<std::string>{"experiment", "scheme", "N", "aggregate", "metric", "value", "se", "seed"}));
  const auto* cov = find_row(rows, "systematic", "cov_1_3");
  ASSERT_NE(cov, nullptr);
  // #1 and #3 are both 1 or both 0, each with probability 1/2.
  EXPECT_NEAR(std::stod(cov->cells[5]), 0.25, 4.0 * std::stod(cov->cells[6]) + 1e-4);
  EXPECT_EQ(cov->cells[2], "4");
  EXPECT_EQ(cov->cells[7], "5");
  const auto* mcov = find_row(rows, "multinomial", "cov_1_2");
  ASSERT_NE(mcov, nullptr);
  EXPECT_NEAR(std::stod(mcov->cells[5]), -4.0 * 0.125 * 0.125, 4.0 * std::stod(mcov->cells[6]));
  EXPECT_EQ(std::stod(find_row(rows, "systematic", "support_violations")->cells[5]), 0.0);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(rows[i].cells.size(), 8u);
}

TEST_F(CliTest, OutputIsSortedAndUsesLfEndings) {
  const auto cfg = write_config("c.json", kCounterexample);
  ASSERT_EQ(run("diagnose --config " + cfg.string() + " --out " + (dir_ / "out").string()), 0);
  const auto text = read_file(dir_ / "out" / "results.csv");
  EXPECT_EQ(text.find('\r'), std::string::npos);
  EXPECT_EQ(text.back(), '\n');
  const auto rows = parse_csv(text);
  for (std::size_t i = 2; i < rows.size(); ++i) {
    const auto& a = rows[i - 1].cells;
    const auto& b = rows[i].cells;
    const auto ka = std::make_tuple(a[0], a[1], std::stoull(a[2]), a[3], a[4]);
    const auto kb = std::make_tuple(b[0], b[1], std::stoull(b[2]), b[3], b[4]);
    EXPECT_LT(ka, kb);
  }
}

TEST_F(CliTest, RerunsAreByteIdenticalForAnyJobCount) {
  const auto cfg = write_config("c.json", R"({"seed": 3, "schemes": ["ssp", "ordered_stratified"],
    "replicates": 3000, "random_systems": {"count": 2, "particles": 9}})");
  ASSERT_EQ(run("diagnose --config " + cfg.string() + " --out " + (dir_ / "a").string()), 0);
  ASSERT_EQ(run("diagnose --config " + cfg.string() + " --out " + (dir_ / "b").string() + " --jobs 3"), 0);
  EXPECT_EQ(read_file(dir_ / "a" / "results.csv"), read_file(dir_ / "b" / "results.csv"));
  EXPECT_EQ(read_file(dir_ / "a" / "meta.json"), read_file(dir_ / "b" / "meta.json"));
}

TEST_F(CliTest, MetaRecordsHashAndSeed) {
  const auto cfg = write_config("c.json", kCounterexample);
  ASSERT_EQ(run("diagnose --config " + cfg.string() + " --out " + (dir_ / "out").string()), 0);
  const auto meta = Json::parse(read_file(dir_ / "out" / "meta.json"));
  EXPECT_EQ(meta["seed"].get<std::uint64_t>(), 5u);
  char expected[40];
  std::snprintf(expected, sizeof expected, "fnv1a64:%016" PRIx64, fnv1a64(kCounterexample));
  EXPECT_EQ(meta["config_hash"].get<std::string>(), expected);
  EXPECT_TRUE(meta["versions"].contains("rslab"));
}

TEST_F(CliTest, ConfigErrorsExitWithTwo) {
  const std::map<std::string, std::string> bad = {
      {"one_replicate", R"({"seed": 1, "schemes": ["systematic"], "replicates": 1, "weights": [1, 1]})"},
      {"no_seed", R"({"schemes": ["systematic"], "weights": [1, 1]})"},
      {"unknown_key", R"({"seed": 1, "schemes": ["systematic"], "weights": [1, 1], "colour": "red"})"},
      {"nested_unknown", R"({"seed": 1, "schemes": ["ssp"], "random_systems": {"count": 2, "size": 3}})"},
      {"bad_scheme", R"({"seed": 1, "schemes": ["bogus"], "weights": [1, 1]})"},
      {"negative_weight", R"({"seed": 1, "schemes": ["ssp"], "weights": [1, -1]})"},
      {"not_json", R"({"seed": 1,)"},
      {"wrong_experiment", R"({"experiment": "rate", "seed": 1, "schemes": ["ssp"], "weights": [1, 1]})"},
  };
  for (const auto& [name, text] : bad) {
    const auto cfg = write_config(name + ".json", text);
    EXPECT_EQ(run("diagnose --config " + cfg.string() + " --out " + (dir_ / name).string()), 2) << name;
    EXPECT_FALSE(fs::exists(dir_ / name / "results.csv")) << name;
  }
  EXPECT_EQ(run("diagnose --config " + (dir_ / "missing.json").string()), 2);
  EXPECT_EQ(run("frobnicate --config x"), 2);
  const auto ok = write_config("ok.json", kCounterexample);
  EXPECT_EQ(run("diagnose --config " + ok.string() + " --format xml"), 2);
}

TEST_F(CliTest, ConfigErrorNamesTheField) {
  const auto cfg = write_config(
      "c.json", R"({"seed": 1, "schemes": ["ssp"], "n_grid": [8, 16], "model": {"dim": 2, "alpha": 0.4, "horizn": 3}})");
  EXPECT_EQ(run("pf-oracle --config " + cfg.string() + " --out " + (dir_ / "o").string()), 2);
  EXPECT_NE(stderr_text().find("model.horizn"), std::string::npos) << stderr_text();
}

TEST_F(CliTest, NumericalFailureExitsWithThree) {
  {
    std::ofstream obs(dir_ / "obs.csv");
    obs << "1e300\n1e300\n";
  }
  const auto cfg = write_config("c.json", R"({"seed": 1, "schemes": ["multinomial"], "replicates": 2,
    "n_grid": [8], "model": {"kind": "bootstrap", "dim": 1, "horizon": 2, "alpha": 0.5,
    "observations": ")" + (dir_ / "obs.csv").string() + R"("}})");
  EXPECT_EQ(run("pf-oracle --config " + cfg.string() + " --out " + (dir_ / "o").string()), 3);
  EXPECT_NE(stderr_text().find("pf-oracle"), std::string::npos);
}

TEST_F(CliTest, PfVarianceWithTwoReplicatesAndOneScheme) {
  const auto cfg = write_config("c.json", R"({"seed": 4, "schemes": ["stratified"], "replicates": 2,
    "n_grid": [16], "model": {"dim": 2, "horizon": 5, "alpha": 0.4}})");
  ASSERT_EQ(run("pf-variance --config " + cfg.string() + " --out " + (dir_ / "o").string()), 0) << stderr_text();
  const auto rows = parse_csv(read_file(dir_ / "o" / "results.csv"));
  EXPECT_NE(find_row(rows, "stratified", "var_loglik_t5"), nullptr);
  EXPECT_NE(find_row(rows, "stratified", "mean_loglik_t1"), nullptr);
}

TEST_F(CliTest, PfVarianceEmitsRatios) {
  const auto cfg = write_config("c.json", R"({"seed": 4, "schemes": ["stratified", "ordered_stratified"],
    "replicates": 20, "n_grid": [64], "model": {"dim": 2, "horizon": 6, "alpha": 0.4}, "record_times": [3, 6]})");
  ASSERT_EQ(run("pf-variance --config " + cfg.string() + " --out " + (dir_ / "o").string()), 0) << stderr_text();
  const auto rows = parse_csv(read_file(dir_ / "o" / "results.csv"));
  const auto* ratio = find_row(rows, "stratified/ordered_stratified", "var_ratio_t6");
  const auto* a = find_row(rows, "stratified", "var_loglik_t6");
  const auto* b = find_row(rows, "ordered_stratified", "var_loglik_t6");
  ASSERT_TRUE(ratio && a && b);
  EXPECT_DOUBLE_EQ(std::stod(ratio->cells[5]), std::stod(a->cells[5]) / std::stod(b->cells[5]));
  EXPECT_EQ(find_row(rows, "stratified", "var_loglik_t5"), nullptr);
}

TEST_F(CliTest, JsonFormatAndEnvironmentOutputDirectory) {
  const auto cfg = write_config("c.json", kCounterexample);
  const auto env_dir = dir_ / "from_env";
  ASSERT_EQ(run("diagnose --config " + cfg.string() + " --format json", "RSLAB_OUT_DIR=" + env_dir.string()), 0)
      << stderr_text();
  const auto rows = Json::parse(read_file(env_dir / "results.json"));
  ASSERT_TRUE(rows.is_array());
  bool found = false;
  for (const auto& r : rows)
    if (r["scheme"] == "systematic" && r["metric"] == "cov_1_3") {
      found = true;
      EXPECT_NEAR(r["value"].get<double>(), 0.25, 1e-3);
    }
  EXPECT_TRUE(found);
  // --out wins over the environment.
  ASSERT_EQ(run("diagnose --config " + cfg.string() + " --out " + (dir_ / "flag").string(),
                "RSLAB_OUT_DIR=" + env_dir.string()),
            0);
  EXPECT_TRUE(fs::exists(dir_ / "flag" / "results.csv"));
}

TEST(ConfigParsing, DefaultsAndValidation) {
  const auto cfg = parse_config(R"({"seed": 9, "schemes": ["ssp", "deterministic_alpha:0.3"], "n_grid": [4, 8, 16, 32],
    "test_functions": ["tanh", "l1_half"]})",
                                "rate");
  EXPECT_EQ(cfg.experiment, "rate");
  EXPECT_EQ(cfg.schemes[1].alpha, 0.3);
  EXPECT_EQ(cfg.replicates, 1000u);
  EXPECT_EQ(cfg.format, "csv");
  EXPECT_THROW(parse_config(R"({"seed": 9, "schemes": ["ssp"], "n_grid": [4, 8, 16]})", "rate"), Error);
  EXPECT_THROW(parse_config(R"({"seed": 9, "schemes": ["ssp"], "n_grid": [4, 8, 8, 16]})", "rate"), Error);
  EXPECT_THROW(parse_config(R"({"seed": -1, "schemes": ["ssp"]})", "diagnose"), Error);
  EXPECT_THROW(parse_config(R"({"seed": 1, "schemes": ["ssp"], "test_functions": ["cosh"]})", "diagnose"), Error);
  EXPECT_THROW(parse_config(R"({"seed": 1, "schemes": ["ssp"], "n_grid": [8], "model": {"dim": 5, "alpha": 0.9}})",
                            "pf-oracle"),
               Error);
}

TEST(ConfigParsing, Fnv1aReferenceValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(ResultFormatting, SeventeenDigitsRoundTrip) {
  const double v = 0.1 + 0.2;
  EXPECT_EQ(std::stod(format_double(v)), v);
  ResultRow row{"rate", "ssp", 8, "all", "slope_tanh", v, std::nullopt, 1};
  EXPECT_EQ(to_csv({row}), "experiment,scheme,N,aggregate,metric,value,se,seed\nrate,ssp,8,all,slope_tanh," +
                               format_double(v) + ",,1\n");
}

}  // namespace
}  // namespace rslab::bench
