#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

#include "cace/cace.h"

namespace {

std::string take(char* s) {
  std::string out(s);
  cace_string_free(s);
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream b;
  b << in.rdbuf();
  return b.str();
}

const char* kFixture = CACE_TEST_DATA_DIR "/wald_fixture.csv";

}  // namespace

TEST_CASE("version string") { CHECK(std::strlen(cace_version()) > 0); }

TEST_CASE("load, summarize and estimate through the C interface") {
  cace_dataset* ds = nullptr;
  REQUIRE(cace_dataset_load_csv(kFixture, "continuous", nullptr, &ds) == CACE_OK);
  CHECK(cace_dataset_size(ds) == 4);

  char* text = nullptr;
  REQUIRE(cace_dataset_summary_json(ds, &text) == CACE_OK);
  const auto summary = nlohmann::json::parse(take(text));
  CHECK(summary.is_object());

  REQUIRE(cace_estimate_json(ds, R"({"method":"wald"})", &text) == CACE_OK);
  const auto est = nlohmann::json::parse(take(text));
  CHECK(est["point"].get<double>() == doctest::Approx(2.0));
  CHECK(est["method"] == "wald");

  CHECK(cace_estimate_json(ds, R"({"method":"tsri"})", &text) == CACE_ERR_DATA);
  CHECK(std::string(cace_last_error()).find("tsri requires binary outcome") != std::string::npos);
  CHECK(cace_estimate_json(ds, R"({"method":"wald","colour":1})", &text) == CACE_ERR_USAGE);
  CHECK(cace_estimate_json(ds, "not json", &text) == CACE_ERR_USAGE);
  cace_dataset_free(ds);
}

TEST_CASE("parse errors map to status codes") {
  cace_dataset* ds = nullptr;
  const std::string bad = "id,z,d,y\n1,0,1,2\n2,1,1,0\n";
  CHECK(cace_dataset_parse_csv(bad.data(), bad.size(), "continuous", nullptr, &ds) == CACE_ERR_DATA);
  CHECK(ds == nullptr);
  const std::string ok = "id,z,d,y\n1,1,1,2\n2,0,0,0\n";
  CHECK(cace_dataset_parse_csv(ok.data(), ok.size(), "ordinal", nullptr, &ds) == CACE_ERR_USAGE);
  CHECK(cace_dataset_load_csv("/nonexistent.csv", "continuous", nullptr, &ds) == CACE_ERR_DATA);
}

TEST_CASE("column map and CSV write") {
  const std::string text = "pid,arm,rx,out,age\n1,1,1,2,30\n2,1,0,1,40\n3,0,0,0,50\n";
  cace_dataset* ds = nullptr;
  REQUIRE(cace_dataset_parse_csv(text.data(), text.size(), "continuous",
                                 R"({"id":"pid","z":"arm","d":"rx","y":"out","covariates":["age"]})", &ds) == CACE_OK);
  const auto path = std::filesystem::temp_directory_path() / "cace_capi_roundtrip.csv";
  REQUIRE(cace_dataset_write_csv(ds, path.string().c_str()) == CACE_OK);
  CHECK(slurp(path).find("id,z,d,y,age") != std::string::npos);
  cace_dataset_free(ds);
}

TEST_CASE("simulate, replicate and summarize") {
  const auto dir = std::filesystem::temp_directory_path() / "cace_capi";
  std::filesystem::create_directories(dir);
  const char* scenario = R"({"name":"tiny","n":200,"replications":3,"seed":4})";
  const auto sim = (dir / "sim.csv").string();
  REQUIRE(cace_simulate_csv(scenario, 0, -1, 0, 1, sim.c_str()) == CACE_OK);
  CHECK(slurp(sim).find("x2") != std::string::npos);
  CHECK(cace_simulate_csv(scenario, 3, -1, 0, 0, sim.c_str()) == CACE_ERR_USAGE);

  const auto res = (dir / "res.csv").string();
  REQUIRE(cace_replicate_csv(scenario, R"({"methods":["tsls"]})", res.c_str(), nullptr) == CACE_OK);
  CHECK(slurp(res).find(",tsls,") != std::string::npos);

  const auto tidy = (dir / "tidy.csv").string();
  const char* inputs[] = {res.c_str()};
  REQUIRE(cace_summarize_csv(inputs, 1, tidy.c_str()) == CACE_OK);
  CHECK(slurp(tidy).find("tiny,tsls,coverage") != std::string::npos);
}
