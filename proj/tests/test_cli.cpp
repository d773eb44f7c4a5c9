#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream b;
  b << in.rdbuf();
  return b.str();
}

Run run(const std::string& args) {
  const auto out = std::filesystem::path("cli_stdout.txt");
  const auto err = std::filesystem::path("cli_stderr.txt");
  const std::string cmd = std::string(CACE_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

const std::string kFixture = std::string(CACE_TEST_DATA_DIR) + "/wald_fixture.csv";

}  // namespace

TEST_CASE("wald on the four-row fixture") {
  const auto r = run("estimate --data " + kFixture + " --method wald");
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["point"].get<double>() == doctest::Approx(2.0));
  CHECK(j["estimand"] == "risk-or-mean-difference");
  CHECK(j.contains("config_hash"));
}

TEST_CASE("several methods give an array") {
  const auto r = run("estimate --data " + kFixture + " --method wald,tsls");
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  REQUIRE(j.is_array());
  CHECK(j.size() == 2);
  CHECK(j[1]["point"].get<double>() == doctest::Approx(2.0));
}

TEST_CASE("tsri on a continuous outcome is a data error") {
  const auto r = run("estimate --data " + kFixture + " --method tsri");
  CHECK(r.code == 2);
  CHECK(r.err.find("tsri requires binary outcome") != std::string::npos);
}

TEST_CASE("usage errors exit 1") {
  CHECK(run("estimate --data " + kFixture + " --method nope").code == 1);
  CHECK(run("estimate --method wald").code == 1);
  CHECK(run("frobnicate").code == 1);
  CHECK(run("--version").code == 0);
}

TEST_CASE("replicate is byte-identical across runs") {
  {
    std::ofstream s("cli_scenario.txt");
    s << "name = cli\nn = 200\nreplications = 3\nseed = 11\n";
  }
  const std::string args = "replicate --scenario cli_scenario.txt --methods tsls,smc-mic --m 3 --iterations 10";
  REQUIRE(run(args + " --out cli_a.csv").code == 0);
  REQUIRE(run(args + " --out cli_b.csv --threads 2").code == 0);
  CHECK(slurp("cli_a.csv") == slurp("cli_b.csv"));
  CHECK(slurp("cli_a.csv").rfind("# tool_version=", 0) == 0);

  REQUIRE(run("summarize cli_a.csv --out cli_tidy.csv").code == 0);
  CHECK(slurp("cli_tidy.csv").find("cli,smc-mic,bias") != std::string::npos);
}

TEST_CASE("simulate then estimate") {
  {
    std::ofstream s("cli_sim.json");
    s << R"({"n":300,"seed":5,"missing_y":"mar20"})";
  }
  REQUIRE(run("simulate --scenario cli_sim.json --out cli_sim.csv").code == 0);
  const auto r = run("estimate --data cli_sim.csv --method tsls --aux x2 --m 5");
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(r.out)["m"] == 5);
  CHECK(run("estimate --data cli_missing.csv --method wald").code == 2);
}
