#include <doctest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "mtbd/fixtures.hpp"
#include "mtbd/model.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = mtbd::cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Fresh scratch directory per test case.
struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() / ("mtbd_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

json read_json(const std::string& path) { return json::parse(mtbd::read_file(path)); }

const std::string kNm = MTBD_DATA_DIR "/params_nm_v1.json";

}  // namespace

TEST_CASE("discretize the four-sample example") {
  Scratch s;
  mtbd::write_file(s / "x.txt", "1\n2\n3\n4\n");
  const Run r = run({"discretize", "--samples", s / "x.txt", "--n", "2", "--out-dir", s / "d"});
  REQUIRE(r.code == 0);
  const json ts = read_json(s / "d/type_space.json");
  CHECK(ts.at("boundaries") == json{2.5});
  CHECK(ts.at("values") == json{1.5, 3.5});
  const json meta = read_json(s / "d/metadata.json");
  CHECK(meta.at("command") == "discretize");
  CHECK(meta.at("inputs").contains(s / "x.txt"));
}

TEST_CASE("usage errors exit with 1") {
  Scratch s;
  Run r = run({"bogus"});
  CHECK(r.code == 1);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(run({}).code == 1);
  CHECK(run({"discretize", "--no-such-flag", "1"}).code == 1);
  CHECK(run({"discretize", "--n", "two"}).code == 1);
  CHECK(run({"discretize", "--samples", s / "missing.txt", "--out-dir", s / "d"}).code == 1);
  CHECK(!fs::exists(s / "d"));
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"simulate", "--params", kNm, "--mode", "sideways", "--out-dir", s / "m"}).code == 1);
}

TEST_CASE("config files: schema, unknown keys and flag overrides") {
  Scratch s;
  mtbd::write_file(s / "x.txt", "1 2 3 4 5 6");
  mtbd::write_file(s / "bad_key.json", R"({"schema":"mtbd.config/1","n":2,"bins":3})");
  mtbd::write_file(s / "bad_schema.json", R"({"schema":"mtbd.config/0","n":2})");
  mtbd::write_file(s / "bad_type.json", R"({"schema":"mtbd.config/1","n":-2})");
  mtbd::write_file(s / "other.json", R"({"schema":"mtbd.config/1","command":"infer"})");
  for (const char* f : {"bad_key.json", "bad_schema.json", "bad_type.json", "other.json"})
    CHECK(run({"discretize", "--config", s / f, "--samples", s / "x.txt", "--out-dir", s / "o"}).code == 1);

  json cfg{{"schema", "mtbd.config/1"}, {"samples", s / "x.txt"}, {"n", 2}, {"out_dir", s / "a"}};
  mtbd::write_file(s / "c.json", cfg.dump());
  REQUIRE(run({"discretize", "--config", s / "c.json", "--n", "3"}).code == 0);
  const json eff = read_json(s / "a/config.json");
  CHECK(eff.at("n") == 3);
  CHECK(read_json(s / "a/type_space.json").at("values").size() == 3);

  // Effective config equals the input plus defaults.
  json expected = json::parse(mtbd::cli::default_config("discretize"));
  expected["samples"] = s / "x.txt";
  expected["out_dir"] = s / "a";
  expected["n"] = 3;
  expected["threads"] = eff.at("threads");
  CHECK(eff == expected);

  // Feeding the effective config back reproduces it.
  REQUIRE(run({"discretize", "--config", s / "a/config.json"}).code == 0);
  CHECK(read_json(s / "a/config.json") == eff);
}

TEST_CASE("simulate, loglik, infer and ppc") {
  Scratch s;
  REQUIRE(run({"simulate", "--params", kNm, "--n-trees", "6", "--seed", "4", "--threads", "1", "--out-dir",
               s / "sim"})
              .code == 0);
  // Thread count does not change results.
  REQUIRE(run({"simulate", "--params", kNm, "--n-trees", "6", "--seed", "4", "--threads", "3", "--out-dir",
               s / "sim3"})
              .code == 0);
  for (int i = 0; i < 6; ++i) {
    const std::string f = "/tree_000" + std::to_string(i) + ".json";
    CHECK(mtbd::read_file(s / "sim" + f) == mtbd::read_file(s / "sim3" + f));
  }
  const json manifest = read_json(s / "sim/manifest.json");
  CHECK(manifest.at("replicates").size() == 6);
  CHECK(manifest.at("replicates")[0].contains("rejections"));

  REQUIRE(run({"loglik", "--trees", s / "sim/manifest.json", "--params", kNm, "--mode", "direct", "--out-dir",
               s / "ll"})
              .code == 0);
  const std::string csv = mtbd::read_file(s / "ll/loglik.csv");
  CHECK(csv.rfind("tree,mode,log_q_root,log_survival,log_conditional\n0,direct,", 0) == 0);
  CHECK(csv.find("\ntotal,direct,") != std::string::npos);

  REQUIRE(run({"infer", "--trees", s / "sim/manifest.json", "--iterations", "200", "--burn-in", "100", "--seed", "9",
               "--out-dir", s / "inf"})
              .code == 0);
  const json summary = read_json(s / "inf/summary.json");
  CHECK(summary.contains("acceptance"));
  // Re-running from the recorded config reproduces the chain exactly.
  REQUIRE(run({"infer", "--config", s / "inf/config.json", "--out-dir", s / "inf2"}).code == 0);
  CHECK(mtbd::read_file(s / "inf/chain.csv") == mtbd::read_file(s / "inf2/chain.csv"));

  REQUIRE(run({"ppc", "--trees", s / "sim/manifest.json", "--chain", s / "inf/chain.csv", "--draws", "5",
               "--out-dir", s / "ppc"})
              .code == 0);
  CHECK(read_json(s / "ppc/ppc.json").at("replicates").size() == 5);
}

TEST_CASE("approx and exact totals agree without type changes") {
  Scratch s;
  mtbd::Params p = mtbd::fixtures::no_misspecification_truth();
  p.delta = 0.0;
  mtbd::write_file(s / "p.json", mtbd::params_to_json(p));
  REQUIRE(run({"simulate", "--params", s / "p.json", "--n-trees", "5", "--t-total", "4", "--out-dir", s / "sim"}).code == 0);
  double totals[2];
  const char* modes[2] = {"exact", "approx"};
  for (int m = 0; m < 2; ++m) {
    const std::string dir = s / modes[m];
    REQUIRE(run({"loglik", "--trees", s / "sim/manifest.json", "--params", s / "p.json", "--mode", modes[m],
                 "--out-dir", dir})
                .code == 0);
    const std::string csv = mtbd::read_file(dir + "/loglik.csv");
    const auto at = csv.find("total,");
    std::string row = csv.substr(at);
    row = row.substr(row.find(',', 6) + 1);
    totals[m] = std::stod(row.substr(0, row.find(',')));
  }
  CHECK(std::abs(totals[0] - totals[1]) < 1e-6);
}

TEST_CASE("numerical failures exit with 2") {
  Scratch s;
  mtbd::Params p = mtbd::fixtures::no_misspecification_truth();
  p.mu = 5.0;
  p.rho = {0.01};
  mtbd::write_file(s / "p.json", mtbd::params_to_json(p));
  const Run r = run({"simulate", "--params", s / "p.json", "--n-trees", "3", "--rejection-budget", "2", "--out-dir",
                     s / "sim"});
  CHECK(r.code == 2);
  CHECK(r.err.find("rejection budget") != std::string::npos);
}

TEST_CASE("ratemat estimates a generator") {
  Scratch s;
  mtbd::write_file(s / "ts.json", mtbd::type_space_to_json(mtbd::TypeSpace({-1.0, 0.5}, {-0.2})));
  REQUIRE(run({"ratemat", "--type-space", s / "ts.json", "--chains", "40", "--duration", "3", "--out-dir",
               s / "r"})
              .code == 0);
  const mtbd::SquareMatrix g = mtbd::matrix_from_json(mtbd::read_file(s / "r/gamma.json"));
  REQUIRE(g.size() == 2);
  CHECK(g(0, 1) >= 0.0);
  CHECK(g(1, 0) > 0.0);
  CHECK(g(1, 1) == doctest::Approx(-g(1, 0)));
}

TEST_CASE("small studies write their reports") {
  Scratch s;
  REQUIRE(run({"study", "conditioning", "--replicates", "2", "--ladder", "1,3", "--iterations", "300", "--out-dir",
               s / "c"})
              .code == 0);
  CHECK(fs::exists(s / "c/medians.csv"));
  CHECK(read_json(s / "c/study_summary.json").at("per_n").size() == 2);

  REQUIRE(run({"study", "nm", "--sets", "1", "--trees-per-set", "3", "--iterations", "200", "--ppc-draws", "3",
               "--out-dir", s / "nm"})
              .code == 0);
  for (const char* f : {"set0_trees.json", "set0_chain.csv", "set0_summary.json", "set0_ppc.json",
                        "study_summary.json", "metadata.json"})
    CHECK(fs::exists(s / ("nm/" + std::string(f))));
  CHECK(run({"study", "nope", "--out-dir", s / "x"}).code == 1);
}
