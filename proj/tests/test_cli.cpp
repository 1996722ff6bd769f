#include <gtest/gtest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string cli() {
  const char* p = std::getenv("GEOVAR_CLI");
  return p ? p : "";
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("geovar_cli_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Runs the CLI with the given arguments; env is a prefix such as "GEOVAR_OUT_DIR=x".
int run(const std::string& args, const std::string& env = "GEOVAR_OUT_DIR=") {
  const std::string cmd = "env " + env + " '" + cli() + "' " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

json load(const fs::path& p) { return json::parse(slurp(p)); }

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string l;
  std::getline(in, l);
  return l;
}

const json* find_criterion(const json& doc, const std::string& name) {
  for (const auto& c : doc["criteria"])
    if (c["name"] == name) return &c;
  return nullptr;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    if (cli().empty()) GTEST_SKIP() << "GEOVAR_CLI not set";
  }
};

}  // namespace

TEST_F(Cli, HelpAndMissingSubcommand) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("no-such-command"), 2);
}

TEST_F(Cli, VerifyVariationExample) {
  const fs::path d = scratch("vv");
  ASSERT_EQ(run("verify-variation --model h2 --samples 100 --seed 7 --closed_form_samples 50 --out " + d.string()), 0);
  const json doc = load(d / "verify-variation.json");
  EXPECT_EQ(doc["experiment"], "verify-variation");
  EXPECT_TRUE(doc["pass"].get<bool>());
  EXPECT_EQ(doc["config"]["seed"], "7");
  // each criterion once, with a boolean and a margin
  std::set<std::string> names;
  for (const auto& c : doc["criteria"]) {
    EXPECT_TRUE(names.insert(c["name"].get<std::string>()).second);
    EXPECT_TRUE(c["pass"].is_boolean());
    EXPECT_GE(c["margin"].get<double>(), 0.0);
  }
  for (const char* n : {"h2.second_variation_vs_normal_coords", "h2.third_variation_vs_normal_coords",
                        "h2.analytic_vs_finite_differences", "h2.closed_form_rr", "h2.closed_form_rs"})
    EXPECT_TRUE(names.count(n)) << n;
  EXPECT_EQ(first_line(d / "verify_variation.csv"), "# schema=1");
  EXPECT_EQ(first_line(d / "closed_form_h2.csv"), "# schema=1");
}

TEST_F(Cli, EmptyOrZeroSampleCountIsConfigError) {
  const fs::path d = scratch("empty");
  EXPECT_EQ(run("lemma2d --samples '' --out " + d.string()), 2);
  EXPECT_EQ(run("lemma2d --samples 0 --out " + d.string()), 2);
  EXPECT_EQ(run("lemma2d --samples ten --out " + d.string()), 2);
  EXPECT_FALSE(fs::exists(d / "lemma2d.json"));
}

TEST_F(Cli, BadValuesAreConfigErrors) {
  const fs::path d = scratch("bad");
  EXPECT_EQ(run("verify-variation --model spinch --out " + d.string()), 2);
  EXPECT_EQ(run("verify-variation --model k7 --out " + d.string()), 2);
  EXPECT_EQ(run("toponogov --T 5,,8 --out " + d.string()), 2);
  EXPECT_EQ(run("oio-scan --phase cubic --out " + d.string()), 2);
  EXPECT_EQ(run("lattice-count --l1 0.3 --l2 0.3 --separation 0.2 --out " + d.string()), 2);
  EXPECT_EQ(run("lemma2d --bogus 1 --out " + d.string()), 2);
}

TEST_F(Cli, ConfigFileSectionsAndFlagPrecedence) {
  const fs::path d = scratch("cfg");
  write(d / "run.cfg",
        "# comment\n[common]\nseed = 11\n\n[lemma3d]\nsamples = 20  # trailing comment\nrho_max = 6\n"
        "[lemma2d]\nsamples = 5\n");
  ASSERT_EQ(run("lemma3d --config " + (d / "run.cfg").string() + " --rho_max 7 --out " + d.string()), 0);
  const json doc = load(d / "lemma3d.json");
  EXPECT_EQ(doc["config"]["seed"], "11");
  EXPECT_EQ(doc["config"]["samples"], "20");
  EXPECT_EQ(doc["config"]["rho_max"], "7");
  EXPECT_EQ(doc["counts"]["samples"], 20);
}

TEST_F(Cli, ConfigFileRejectsUnknownKeysAndSections) {
  const fs::path d = scratch("cfgbad");
  write(d / "key.cfg", "[lemma3d]\nsamples = 20\ncolour = red\n");
  EXPECT_EQ(run("lemma3d --config " + (d / "key.cfg").string() + " --out " + d.string()), 2);
  // a typo in a section that is not being run is still reported
  write(d / "other.cfg", "[lemma3d]\nsamples = 20\n[toponogov]\nRR = 1\n");
  EXPECT_EQ(run("lemma3d --config " + (d / "other.cfg").string() + " --out " + d.string()), 2);
  write(d / "section.cfg", "[lemma4d]\nsamples = 20\n");
  EXPECT_EQ(run("lemma3d --config " + (d / "section.cfg").string() + " --out " + d.string()), 2);
  write(d / "common.cfg", "[common]\nsamples = 20\n");
  EXPECT_EQ(run("lemma3d --config " + (d / "common.cfg").string() + " --out " + d.string()), 2);
  write(d / "syntax.cfg", "[lemma3d\nsamples = 20\n");
  EXPECT_EQ(run("lemma3d --config " + (d / "syntax.cfg").string() + " --out " + d.string()), 2);
  EXPECT_EQ(run("lemma3d --config " + (d / "missing.cfg").string() + " --out " + d.string()), 2);
}

TEST_F(Cli, OutputDirectoryFromEnvironment) {
  const fs::path d = scratch("env"), env = d / "from_env", flag = d / "from_flag";
  write(d / "run.cfg", "[common]\nout = " + (d / "from_file").string() + "\n");
  ASSERT_EQ(run("lemma3d --samples 5 --config " + (d / "run.cfg").string(), "GEOVAR_OUT_DIR=" + env.string()), 0);
  EXPECT_TRUE(fs::exists(env / "lemma3d.json"));
  EXPECT_FALSE(fs::exists(d / "from_file"));
  ASSERT_EQ(run("lemma3d --samples 5 --out " + flag.string(), "GEOVAR_OUT_DIR=" + env.string()), 0);
  EXPECT_TRUE(fs::exists(flag / "lemma3d.json"));
}

TEST_F(Cli, JsonIsIdenticalForAnyThreadCount) {
  const fs::path a = scratch("det1"), b = scratch("det3");
  for (const std::string cmd : {"lemma2d --samples 400 --seed 5", "verify-variation --samples 30 --closed_form_samples 30",
                                "toponogov --samples 200 --T 5"}) {
    ASSERT_EQ(run(cmd + " --threads 1 --out " + a.string()), 0) << cmd;
    ASSERT_EQ(run(cmd + " --threads 3 --out " + b.string()), 0) << cmd;
  }
  for (const char* f : {"lemma2d.json", "verify-variation.json", "toponogov.json", "lemma2d.csv", "toponogov.csv"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  EXPECT_EQ(slurp(a / "lemma2d.json").find("wall"), std::string::npos);
}

TEST_F(Cli, CriterionViolationExitsOne) {
  const fs::path d = scratch("viol");
  EXPECT_EQ(run("verify-variation --model e2 --samples 5 --tol3 1e-300 --out " + d.string()), 1);
  const json doc = load(d / "verify-variation.json");
  EXPECT_FALSE(doc["pass"].get<bool>());
  const json* c = find_criterion(doc, "e2.third_variation_vs_normal_coords");
  ASSERT_NE(c, nullptr);
  EXPECT_FALSE((*c)["pass"].get<bool>());
  EXPECT_LT((*c)["margin"].get<double>(), 0.0);
}

TEST_F(Cli, ModuleErrorsAreRecorded) {
  const fs::path d = scratch("err");
  EXPECT_EQ(run("oio-scan --phase rs --lambda 1e7,1e8 --out " + d.string()), 1);
  const json doc = load(d / "oio-scan.json");
  ASSERT_EQ(doc["errors"].size(), 1u);
  EXPECT_NE(doc["errors"][0]["message"].get<std::string>().find("memory_budget"), std::string::npos);
}

TEST_F(Cli, PlotDataAndSchemas) {
  const fs::path d = scratch("plots");
  ASSERT_EQ(run("oio-scan --lambda 10^1.5,10^2 --out " + d.string()), 0);
  ASSERT_EQ(run("growth --max_order 3 --rho 2,4,6 --samples 3 --out " + d.string()), 0);
  ASSERT_EQ(run("lattice-count --word_length 5 --tau 8 --k_hi 6 --out " + d.string()), 0);
  ASSERT_EQ(run("kernel-sum --T 8,12 --grid 5 --out " + d.string()), 0);
  ASSERT_EQ(run("rauch --samples 5 --jacobi_samples 2 --out " + d.string()), 0);
  ASSERT_EQ(run("isolation --samples 2 --grid 20 --out " + d.string()), 0);
  for (const char* f : {"oio_plot_rs.csv", "oio_plot_rs2.csv", "growth_plot_h2_order3.csv", "lattice_plot.csv"}) {
    std::ifstream in(d / f);
    std::string l1, l2, l3;
    std::getline(in, l1);
    std::getline(in, l2);
    std::getline(in, l3);
    EXPECT_EQ(l1, "# schema=1") << f;
    EXPECT_EQ(l2, "x,y") << f;
    EXPECT_NE(l3.find(','), std::string::npos) << f;
  }
  int csvs = 0;
  for (const auto& e : fs::directory_iterator(d))
    if (e.path().extension() == ".csv") {
      ++csvs;
      EXPECT_EQ(first_line(e.path()), "# schema=1") << e.path();
    }
  EXPECT_GE(csvs, 12);
  const std::string decay = slurp(d / "oio_decay.csv");
  EXPECT_NE(decay.find("phase,lambda,N,norm,bound,ratio"), std::string::npos);
  const std::string elements = slurp(d / "lattice_elements.csv");
  EXPECT_NE(elements.find("word,trace,displacement,in_tube"), std::string::npos);
}

TEST_F(Cli, LatticeCountReportsWordsAndDyadicTable) {
  const fs::path d = scratch("lattice");
  ASSERT_EQ(run("lattice-count --word_length 6 --k_hi 8 --out " + d.string()), 0);
  const json doc = load(d / "lattice-count.json");
  const auto& table = doc["results"]["cyclic_dyadic"]["table"];
  ASSERT_EQ(table.size(), 7u);  // k = 2..8
  for (const auto& row : table) EXPECT_EQ(row["count"].get<long>(), 1L << row["k"].get<int>());
  const std::string words = slurp(d / "lattice_words.csv");
  EXPECT_NE(words.find("\n6,972\n"), std::string::npos);  // 4*3^5
}
