#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("rrf_cli_" + std::to_string(std::rand()) + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }

  Result run(const std::string& args, const std::string& env = {}) const {
    const std::string cmd = env + " \"" RRF_CLI_PATH "\" --root \"" + dir.string() + "\" " + args + " >\"" +
                            (dir / "stdout").string() + "\" 2>\"" + (dir / "stderr").string() + "\"";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(dir / "stdout");
    r.err = slurp(dir / "stderr");
    return r;
  }

  json read(const std::string& rel) const { return json::parse(slurp(dir / rel)); }
};

}  // namespace

TEST_CASE("help and usage errors") {
  Workspace w;
  CHECK(w.run("--help").code == 0);
  const auto bad = w.run("layout --no-such-flag");
  CHECK(bad.code == 1);
  CHECK(bad.err.rfind("error: ", 0) == 0);
  CHECK(w.run("").code == 1);
}

TEST_CASE("layout subcommand") {
  Workspace w;
  const auto r = w.run("layout --w 28 --stride 14 --exclude-corners --out layout.json");
  REQUIRE(r.code == 0);
  const auto j = w.read("layout.json");
  CHECK(j.at("K") == 33);
  CHECK(j.at("layout").at("positions").size() == 33);
  CHECK(j.at("fingerprint") == "a7ca560e8c6794eb");
  CHECK(j.at("mirror").at("class_count") == 20);
  CHECK(j.at("shape_plan").at("feature") == json::array({33, 512}));
  CHECK(j.at("config").at("subcommand") == "layout");

  const auto keep = w.run("layout --w 56 --stride 28 --keep-corners --out l9.json");
  REQUIRE(keep.code == 0);
  CHECK(w.read("l9.json").at("mirror").at("class_count") == 6);

  const auto bad = w.run("layout --w 30 --stride 14");
  CHECK(bad.code == 1);
  CHECK(bad.err.rfind("error: layout: ", 0) == 0);
}

TEST_CASE("generate, verify and sim on a noise-free benchmark") {
  Workspace w;
  REQUIRE(w.run("--seed 3 generate --out b --ids 6 --train-ids 4 --imgs 3 --sigma 0 --dim 16").code == 0);
  CHECK(fs::exists(w.dir / "b/pairs.csv"));
  CHECK(fs::exists(w.dir / "b/emb_28/manifest.json"));

  REQUIRE(w.run("verify --manifest b/emb_28/manifest.json --pairs b/pairs.csv --out r.json").code == 0);
  CHECK(w.read("r.json").at("mean_accuracy") == 1.0);

  REQUIRE(w.run("sim --manifest b/emb_28/manifest.json --a e002_00 --b e002_01 --out s").code == 0);
  const auto s = w.read("s/breakdown.json");
  CHECK(s.at("global_score").get<double>() == doctest::Approx(1.0).epsilon(1e-12));
  for (const char* f : {"contributions.csv", "heatmap_a.csv", "heatmap_b.csv", "heatmap_a.pgm", "heatmap_b.pgm"})
    CHECK(fs::exists(w.dir / "s" / f));

  const auto missing = w.run("sim --manifest b/emb_28/manifest.json --a e002_00 --b nobody --out s2");
  CHECK(missing.code == 1);
  CHECK(missing.err.find("missing_ids") != std::string::npos);

  CHECK(w.run("verify --manifest b/emb_28/manifest.json --pairs b/pairs.csv --mode region_based --out r2.json")
            .code == 1);
}

TEST_CASE("fit, region verification and combination") {
  Workspace w;
  REQUIRE(w.run("--seed 5 generate --out b --ids 6 --train-ids 6 --imgs 3 --sigma 0.5 --dim 16").code == 0);
  REQUIRE(w.run("--seed 5 generate --out b --ids 6 --train-ids 6 --imgs 3 --sigma 0.5 --dim 16 "
                "--w 56 --stride 28 --no-embed")
              .code == 0);
  REQUIRE(w.run("--seed 5 embed --bench b --out b/emb_56 --w 56 --stride 28 --dim 16").code == 0);
  REQUIRE(w.run("fit --manifest b/emb_28/manifest.json --pairs b/train_pairs.csv --out m.json").code == 0);
  const auto m = w.read("m.json");
  CHECK(m.at("K") == 33);
  CHECK(m.at("weights").size() == 33);

  REQUIRE(w.run("verify --manifest b/emb_28/manifest.json --pairs b/pairs.csv --mode region_based "
                "--model m.json --out r.json")
              .code == 0);
  CHECK(w.read("r.json").at("folds").size() == 10);

  REQUIRE(w.run("combine --source b/emb_28/manifest.json,region_based,m.json --source b/emb_56/manifest.json "
                "--pairs b/pairs.csv --calib-pairs b/train_pairs.csv --method learned_logistic --out c.json")
              .code == 0);
  const auto c = w.read("c.json");
  CHECK(c.at("reports").size() == 3);
  CHECK(c.at("reports")[2].at("name") == "combined");

  // a model for a different K is rejected
  const auto bad = w.run("verify --manifest b/emb_56/manifest.json --pairs b/pairs.csv --mode region_based "
                         "--model m.json --out r3.json");
  CHECK(bad.code == 1);
}

TEST_CASE("seed from the environment and reruns are byte-identical") {
  Workspace w;
  REQUIRE(w.run("generate --out b --ids 4 --train-ids 2 --imgs 2 --folds 2 --dim 8", "RRF_SEED=9").code == 0);
  const auto first = slurp(w.dir / "b/emb_28/e001_01.rrfe");
  const auto pairs = slurp(w.dir / "b/pairs.csv");
  REQUIRE(w.run("--seed 9 generate --out b --ids 4 --train-ids 2 --imgs 2 --folds 2 --dim 8").code == 0);
  CHECK(slurp(w.dir / "b/emb_28/e001_01.rrfe") == first);
  CHECK(slurp(w.dir / "b/pairs.csv") == pairs);
  REQUIRE(w.run("--seed 10 generate --out b --ids 4 --train-ids 2 --imgs 2 --folds 2 --dim 8").code == 0);
  CHECK(slurp(w.dir / "b/emb_28/e001_01.rrfe") != first);
  CHECK(w.run("generate --out b2", "RRF_SEED=abc").code == 1);
}
