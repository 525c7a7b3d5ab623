#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "adsnn/cli.hpp"
#include "adsnn/conv_layers.hpp"

using namespace adsnn;
using namespace adsnn::cli;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "adsnn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("adsnn_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

}  // namespace

TEST_CASE("an empty config yields the defaults") {
  const RunConfig c = parse_config_text("{}");
  CHECK(c.train.epochs == 100);
  CHECK(c.folds == 5);
  CHECK(c.budget == 12);
  CHECK(c.steps == 30);
  CHECK(c.model.width_multiplier == 1.0);
  CHECK_FALSE(c.data.has_value());
}

TEST_CASE("config keys are checked and misspellings get suggestions") {
  try {
    parse_config_text(R"({"epcohs": 3})");
    FAIL("accepted an unknown key");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("did you mean 'epochs'") != std::string::npos);
  }
  CHECK(suggest_key("batchsize") == "batch_size");
  CHECK_FALSE(suggest_key("completely_unrelated").has_value());
  CHECK(edit_distance("kitten", "sitting") == 3);
  CHECK_THROWS_AS(parse_config_text(R"({"epochs": -1})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[1, 2]"), ConfigError);
}

TEST_CASE("parse errors report line and column") {
  try {
    parse_config_text("{\n  \"epochs\": 3,\n  \"folds\": }\n");
    FAIL("accepted bad JSON");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("config values round-trip through the file loader") {
  const fs::path dir = scratch("cfg");
  fs::create_directories(dir);
  write(dir / "c.json", R"({"epochs": 7, "learning_rate": 0.05, "width_multiplier": 0.5, "seed": 11,
                            "space": [{"name": "filters_1", "lower": 8, "upper": 16}]})");
  const RunConfig c = load_config(dir / "c.json");
  CHECK(c.train.epochs == 7);
  CHECK(c.train.learning_rate == 0.05);
  CHECK(c.model.width_multiplier == 0.5);
  CHECK(c.seed == 11);
  REQUIRE(c.space.has_value());
  CHECK(c.space->size() == 1);
  CHECK_THROWS_AS(load_config(dir / "missing.json"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("flags override config file values") {
  const fs::path dir = scratch("override");
  fs::create_directories(dir);
  write(dir / "c.json", R"({"width_multiplier": 0.5, "input_size": 64})");
  const auto r = invoke({"cost", "--config", (dir / "c.json").string(), "--width", "0.25"});
  REQUIRE(r.code == kOk);
  ModelConfig m;
  m.input_size = 64;
  m.width_multiplier = 0.25;
  CHECK(r.out == cost_table_csv(m));
  fs::remove_all(dir);
}

TEST_CASE("cost table agrees with the cost model") {
  const std::string csv = cost_table_csv(ModelConfig{});
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "layer,type,kernel,in_channels,out_channels,input_size,standard_cost,dws_cost,reduction,reduction_exact");
  std::size_t rows = 0;
  bool saw_worked_example = false;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream s(line);
    for (std::string cell; std::getline(s, cell, ',');) cells.push_back(cell);
    REQUIRE(cells.size() == 10);
    conv::CostParams p;
    p.kernel_size = std::stoll(cells[2]);
    p.in_channels = std::stoll(cells[3]);
    p.out_channels = std::stoll(cells[4]);
    p.input_size = std::stoll(cells[5]);
    p.output_size = p.input_size;
    CHECK(std::stoll(cells[6]) == conv::cost_standard(p));
    CHECK(std::stoll(cells[7]) == conv::cost_dws(p));
    const Rational r = conv::cost_reduction(p);
    CHECK(cells[9] == std::to_string(r.numerator()) + "/" + std::to_string(r.denominator()));
    if (p.in_channels == 32 && p.out_channels == 64 && p.input_size == 112) saw_worked_example = true;
    ++rows;
  }
  CHECK(rows == 14);
  CHECK(saw_worked_example);
}

TEST_CASE("usage errors exit with 1") {
  CHECK(invoke({}).code == kUsage);
  CHECK(invoke({"bogus"}).code == kUsage);
  CHECK(invoke({"train", "--epochs", "many"}).code == kUsage);
  CHECK(invoke({"train"}).code == kUsage);
  CHECK(invoke({"--version"}).code == kOk);
}

TEST_CASE("a missing dataset exits with 2 and writes nothing") {
  const fs::path out = scratch("missing_out");
  const auto r = invoke({"train", "--data", (fs::temp_directory_path() / "adsnn_no_such_dir").string(), "--out",
                         out.string()});
  CHECK(r.code == kData);
  CHECK(r.err.find("data error") != std::string::npos);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("train on a toy dataset writes the artifact set") {
  const fs::path data = scratch("toy");
  const fs::path out = scratch("toy_run");
  REQUIRE(invoke({"synth", "--out", data.string(), "--per-class", "4", "--size", "32", "--seed", "3"}).code == kOk);
  const std::vector<std::string> args{"train", "--data", data.string(), "--out", out.string(), "--epochs", "1",
                                      "--folds", "2", "--input-size", "32", "--width", "0.25", "--batch-size",
                                      "8", "--seed", "5", "--threads", "1"};
  const auto r = invoke(args);
  REQUIRE(r.code == kOk);
  for (const char* name : {"metrics.csv", "report.txt", "history_fold1.csv", "history_fold2.csv", "model_fold1.adsnn",
                           "model.adsnn", "manifest.json", "timings.json"}) {
    CHECK_MESSAGE(fs::exists(out / name), name);
  }
  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  CHECK(manifest["command"] == "train");
  CHECK(manifest["config"]["seed"] == 5);
  CHECK(manifest["config"]["epochs"] == 1);
  CHECK(manifest["artifacts"].contains("model.adsnn"));
  CHECK(slurp(out / "report.txt").find("accuracy") != std::string::npos);

  const fs::path again = scratch("toy_run2");
  auto args2 = args;
  args2[4] = again.string();
  REQUIRE(invoke(args2).code == kOk);
  CHECK(slurp(out / "manifest.json") == slurp(again / "manifest.json"));

  const fs::path eval_out = scratch("toy_eval");
  const auto e = invoke({"eval", "--model", (out / "model.adsnn").string(), "--data", data.string(), "--out",
                         eval_out.string()});
  CHECK(e.code == kOk);
  CHECK(fs::exists(eval_out / "confusion.csv"));

  for (const auto& p : {data, out, again, eval_out}) fs::remove_all(p);
}
