#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) ++n;
  return n;
}

class Cli : public ::testing::Test {
 protected:
  static fs::path dir;

  static int run(const std::string& args, std::string* err = nullptr) {
    const fs::path err_file = dir / "stderr.txt";
    const std::string cmd = std::string(LFIT_CLI_PATH) + " " + args + " > " + (dir / "stdout.txt").string() + " 2> " +
                            err_file.string();
    const int status = std::system(cmd.c_str());
    if (err) *err = slurp(err_file);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / ("lfit_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    write(dir / "gen.json", R"({"synthetic": {"series_count": 3, "length": 80, "noise_covariates": 1}, "seed": 4})");
    write(dir / "short.json", R"({"synthetic": {"series_count": 3, "length": 14, "noise_covariates": 1}, "seed": 4})");
    write(dir / "other.json", R"({"synthetic": {"series_count": 3, "length": 80, "noise_covariates": 0}, "seed": 4})");
    write(dir / "train.json", R"({"data": {"csv": "data/data.csv", "schema": "data/schema.json"},
                                  "scenario": "MT-MPC-PK-EV", "seed": 2, "stride": 2,
                                  "model": {"encoder_length": 8, "horizon": 3, "d_model": 8, "heads": 2,
                                            "quantiles": [0.1, 0.5, 0.9]},
                                  "train": {"max_epochs": 2, "batch_size": 16}})");
    ASSERT_EQ(run("generate --config " + (dir / "gen.json").string() + " --out " + (dir / "data").string()), 0);
    ASSERT_EQ(run("generate --config " + (dir / "short.json").string() + " --out " + (dir / "short").string()), 0);
    ASSERT_EQ(run("generate --config " + (dir / "other.json").string() + " --out " + (dir / "other").string()), 0);
    ASSERT_EQ(run("train --config " + (dir / "train.json").string() + " --out " + (dir / "run").string()), 0);
  }

  static void TearDownTestSuite() { fs::remove_all(dir); }

  static std::string data_args(const std::string& set = "data") {
    return " --data " + (dir / set / "data.csv").string() + " --schema " + (dir / set / "schema.json").string() +
           " --model " + (dir / "run" / "model.lfit").string();
  }
};

fs::path Cli::dir;

TEST_F(Cli, GenerateWritesConfiguredRows) {
  EXPECT_EQ(count_lines(dir / "data" / "data.csv"), 3u * 80u + 1u);
  const auto meta = nlohmann::json::parse(slurp(dir / "data" / "metadata.json"));
  EXPECT_EQ(meta.at("drivers").size(), 3u);
}

TEST_F(Cli, GenerateIsByteIdenticalForSameSeed) {
  ASSERT_EQ(run("generate --config " + (dir / "gen.json").string() + " --out " + (dir / "data2").string()), 0);
  EXPECT_EQ(slurp(dir / "data" / "data.csv"), slurp(dir / "data2" / "data.csv"));
  EXPECT_EQ(slurp(dir / "data" / "statics.csv"), slurp(dir / "data2" / "statics.csv"));
}

TEST_F(Cli, TrainWritesModelAndManifest) {
  EXPECT_TRUE(fs::exists(dir / "run" / "model.lfit"));
  const auto manifest = nlohmann::json::parse(slurp(dir / "run" / "manifest.json"));
  EXPECT_TRUE(manifest.contains("model_file"));
  EXPECT_TRUE(manifest.contains("inputs"));
}

TEST_F(Cli, RetrainGivesIdenticalModelFile) {
  ASSERT_EQ(run("train --config " + (dir / "train.json").string() + " --out " + (dir / "run2").string()), 0);
  EXPECT_EQ(slurp(dir / "run" / "model.lfit"), slurp(dir / "run2" / "model.lfit"));
}

TEST_F(Cli, InvalidScenarioIsUsageError) {
  std::string err;
  EXPECT_EQ(run("train --config " + (dir / "train.json").string() + " --scenario XX-YY --out " +
                    (dir / "bad").string(),
                &err),
            2);
  EXPECT_NE(err.find("XX-YY"), std::string::npos);
}

TEST_F(Cli, UnknownOptionIsUsageError) {
  EXPECT_EQ(run("train --bogus"), 2);
  EXPECT_EQ(run(""), 2);
}

TEST_F(Cli, ForecastRowsCoverSeriesHorizonQuantiles) {
  ASSERT_EQ(run("forecast" + data_args() + " --out " + (dir / "fc").string()), 0);
  EXPECT_EQ(count_lines(dir / "fc" / "forecasts.csv"), 3u * 3u * 3u + 1u);
  ASSERT_EQ(run("forecast" + data_args() + " --horizon 5 --out " + (dir / "fc5").string()), 0);
  EXPECT_EQ(count_lines(dir / "fc5" / "forecasts.csv"), 3u * 5u * 3u + 1u);
}

TEST_F(Cli, ForecastIsDeterministic) {
  ASSERT_EQ(run("forecast" + data_args() + " --out " + (dir / "fa").string()), 0);
  ASSERT_EQ(run("forecast" + data_args() + " --out " + (dir / "fb").string()), 0);
  EXPECT_EQ(slurp(dir / "fa" / "forecasts.csv"), slurp(dir / "fb" / "forecasts.csv"));
}

TEST_F(Cli, SchemaMismatchIsReported) {
  std::string err;
  EXPECT_EQ(run("forecast" + data_args("other") + " --out " + (dir / "mm").string(), &err), 1);
  EXPECT_NE(err.find("lfit: error:"), std::string::npos);
  EXPECT_GT(err.size(), 20u);
}

TEST_F(Cli, ExplainWritesNormalizedImportanceAndSquareAttention) {
  ASSERT_EQ(run("explain" + data_args() + " --out " + (dir / "ex").string()), 0);
  std::ifstream in(dir / "ex" / "importance.csv");
  std::string line;
  std::getline(in, line);
  std::map<std::string, double> totals;
  while (std::getline(in, line)) {
    std::stringstream row(line);
    std::string group;
    std::string channel;
    std::string mean;
    std::getline(row, group, ',');
    std::getline(row, channel, ',');
    std::getline(row, mean, ',');
    totals[group] += std::stod(mean);
  }
  ASSERT_FALSE(totals.empty());
  for (const auto& [group, total] : totals) EXPECT_NEAR(total, 1.0, 1e-6) << group;

  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(dir / "ex" / "attention")) {
    ++files;
    std::ifstream att(entry.path());
    std::size_t rows = 0;
    for (std::string r; std::getline(att, r);) {
      ++rows;
      EXPECT_EQ(static_cast<std::size_t>(std::count(r.begin(), r.end(), ',')), 10u);
    }
    EXPECT_EQ(rows, 11u);
  }
  EXPECT_GT(files, 0u);

  ASSERT_EQ(run("explain" + data_args() + " --out " + (dir / "ex2").string()), 0);
  EXPECT_EQ(slurp(dir / "ex" / "importance.csv"), slurp(dir / "ex2" / "importance.csv"));
}

TEST_F(Cli, EvaluateBaselineColumnsOnlyWithFlag) {
  ASSERT_EQ(run("evaluate" + data_args() + " --out " + (dir / "ev").string()), 0);
  ASSERT_EQ(run("evaluate" + data_args() + " --baseline --out " + (dir / "evb").string()), 0);
  const std::string plain = slurp(dir / "ev" / "metrics.csv");
  const std::string with = slurp(dir / "evb" / "metrics.csv");
  EXPECT_EQ(plain.find("baseline_mae"), std::string::npos);
  EXPECT_NE(with.find("baseline_mae"), std::string::npos);
  EXPECT_EQ(plain.substr(0, plain.find('\n')), "target,step,count,mae,rmse,mape,smape");
}

TEST_F(Cli, TooShortSeriesIsDataError) {
  std::string err;
  EXPECT_EQ(run("evaluate" + data_args("short") + " --out " + (dir / "es").string(), &err), 1);
  EXPECT_NE(err.find("long enough"), std::string::npos);
}

TEST_F(Cli, MissingModelIsUsageError) {
  EXPECT_EQ(run("evaluate --data " + (dir / "data" / "data.csv").string() + " --schema " +
                (dir / "data" / "schema.json").string()),
            2);
}

}  // namespace
