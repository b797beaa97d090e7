#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "shiftlab/cli.hpp"
#include "shiftlab/errors.hpp"

using namespace shiftlab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kMarket = R"("model": {"family": "constant", "r": 0.03, "mu": 0.10, "sigma": 0.25, "b": 0.0, "rho": 0.0})";

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("shiftlab_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::string& command, const fs::path& dir, const std::string& config,
        std::vector<std::string> extra = {}) {
  fs::path cfg = dir / "config.json";
  std::ofstream(cfg) << config;
  std::vector<std::string> args = {command, "--config", cfg.string(), "--out",
                                   (dir / "out").string()};
  args.insert(args.end(), extra.begin(), extra.end());
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string small_grid() {
  return R"("grid": {"t0": 0.5, "T": 1.5, "nt": 40, "x_min": 0.2, "x_max": 2.2, "nx": 21, "ny": 9, "y_center": 0.0})";
}

}  // namespace

TEST_CASE("check-identities exit codes") {
  fs::path d = scratch("ident");
  SUBCASE("default suite with the expected witness failure") {
    Run r = run("check-identities", d, "{}");
    CHECK(r.code == kExitOk);
    json rep = json::parse(slurp(d / "out" / "identities.json"));
    CHECK(rep["summary"]["EQ1"].contains("residual_median"));
    CHECK(rep["unexpected_failures"] == 0);
    CHECK(fs::exists(d / "out" / "manifest.json"));
  }
  SUBCASE("non-product members are not held to the cross formula") {
    Run r = run("check-identities", d,
                R"({"identities": {"functions": ["x_plus_y2"], "identities": ["EQ9"], "expect_fail": []}})");
    CHECK(r.code == kExitOk);
  }
  SUBCASE("an expected failure that passes") {
    Run r = run("check-identities", d,
                R"({"identities": {"functions": ["exp_xy"], "identities": ["EQ9"],
                    "expect_fail": [{"function": "exp_xy", "identity": "EQ9"}]}})");
    CHECK(r.code == kExitExpectedFailureMissing);
  }
  SUBCASE("an unexpected failure") {
    Run r = run("check-identities", d,
                R"({"identities": {"functions": ["exp_xy"], "identities": ["EQ2"], "tolerance": 1e-15, "expect_fail": []}})");
    CHECK(r.code == kExitNumerical);
    CHECK(r.err.find("exp_xy") != std::string::npos);
  }
}

TEST_CASE("validation happens before anything is written") {
  fs::path d = scratch("valid");
  SUBCASE("correlation outside (-1, 1)") {
    Run r = run("check-identities", d,
                R"({"model": {"family": "constant", "r": 0.03, "mu": 0.1, "sigma": 0.25, "b": 0, "rho": 1.5}})");
    CHECK(r.code == kExitValidation);
    CHECK_FALSE(fs::exists(d / "out"));
  }
  SUBCASE("unknown keys") {
    Run r = run("solve-fd", d, std::string("{") + kMarket + R"(, "utility": {"family": "log"}, "colour": 1})");
    CHECK(r.code == kExitValidation);
    CHECK(r.err.find("colour") != std::string::npos);
    r = run("solve-fd", d, std::string("{") + kMarket +
                               R"(, "utility": {"family": "log", "gama": 0.5}})");
    CHECK(r.code == kExitValidation);
    CHECK(r.err.find("gama") != std::string::npos);
  }
  SUBCASE("missing blocks and malformed JSON") {
    CHECK(run("solve-fd", d, std::string("{") + kMarket + "}").code == kExitValidation);
    CHECK(run("solve-fd", d, "{not json").code == kExitValidation);
    CHECK_FALSE(fs::exists(d / "out"));
  }
  SUBCASE("incompatible policy and utility") {
    Run r = run("compare", d,
                std::string("{") + kMarket + R"(, "utility": {"family": "log"},
                "sim": {"paths": 200, "steps": 16, "t0": 0.5, "T": 1.5},
                "compare": {"policies": ["merton_exponential", "zero"]}})");
    CHECK(r.code == kExitValidation);
  }
  SUBCASE("bad command-line flags") {
    std::ostringstream out, err;
    CHECK(run_cli({"solve-fd"}, out, err) == kExitValidation);
    CHECK(run_cli({"bogus", "--config", "x"}, out, err) == kExitValidation);
  }
  SUBCASE("parse_run_config names the offending key") {
    try {
      parse_run_config(R"({"sim": {"paths": 10, "steps": 16, "t0": 0.5, "T": 1.5}})");
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("paths") != std::string::npos);
    }
  }
}

TEST_CASE("solve-fd") {
  fs::path d = scratch("fd");
  SUBCASE("writes surfaces and passing diagnostics") {
    Run r = run("solve-fd", d,
                std::string("{") + kMarket + R"(, "utility": {"family": "power", "gamma": 0.5}, )" +
                    small_grid() + "}");
    CHECK(r.code == kExitOk);
    for (const char* f : {"value.csv", "policy.csv", "diagnostics.json", "manifest.json"})
      CHECK(fs::exists(d / "out" / f));
    json diag = json::parse(slurp(d / "out" / "diagnostics.json"));
    CHECK(diag["pass"] == true);
  }
  SUBCASE("no excess return gives a zero policy") {
    Run r = run("solve-fd", d,
                R"({"model": {"family": "constant", "r": 0.03, "mu": 0.03, "sigma": 0.25, "b": 0, "rho": 0},
                    "utility": {"family": "log"},
                    "solver": {"max_residual": 1e-2}, )" + small_grid() + "}");
    // Pure wealth advection is upwinded, so the central-difference residual
    // sits at O(dx); the default bound is meant for diffusive problems.
    CHECK(r.code == kExitOk);
    std::istringstream in(slurp(d / "out" / "policy.csv"));
    std::string line;
    std::getline(in, line);
    CHECK(line == "t,x,y,pi");
    long rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      CHECK(std::stod(line.substr(line.rfind(',') + 1)) == 0.0);
    }
    CHECK(rows == 41 * 21 * 9);
  }
  SUBCASE("unstable explicit step") {
    Run r = run("solve-fd", d,
                std::string("{") + kMarket + R"(, "utility": {"family": "power", "gamma": 0.5},
                "grid": {"t0": 0.5, "T": 1.5, "nt": 4, "x_min": 0.2, "x_max": 2.2, "nx": 41, "ny": 41, "y_center": 0.0},
                "solver": {"scheme": "explicit"}})");
    CHECK(r.code == kExitNumerical);
    CHECK(r.err.find("CFL") != std::string::npos);
    CHECK_FALSE(fs::exists(d / "out"));
  }
}

TEST_CASE("reduce-ode") {
  fs::path d = scratch("ode");
  SUBCASE("without correlation both portfolios agree") {
    Run r = run("reduce-ode", d,
                std::string("{") + kMarket + R"(, "utility": {"family": "exponential", "alpha": 1.0},
                "reduce": {"t": 1.0, "x": 1.0, "y": 1.0}})");
    CHECK(r.code == kExitOk);
    json rep = json::parse(slurp(d / "out" / "pi_report.json"));
    double printed = rep["policy"]["pi_printed"];
    double root = rep["policy"]["pi_foc_root"];
    CHECK(std::isfinite(printed));
    CHECK(printed == doctest::Approx(root));
    CHECK(rep["policy"]["hedging_term"].get<double>() == 0.0);
    CHECK(slurp(d / "out" / "ode.csv").rfind("beta,W,residual\n", 0) == 0);
  }
  SUBCASE("oscillating coupling") {
    const char* dir = std::getenv("SHIFTLAB_CONFIG_DIR");
    REQUIRE(dir != nullptr);
    Run r = run("reduce-ode", d, slurp(fs::path(dir) / "reduce_oscillating.json"));
    CHECK(r.code == kExitNumerical);
    CHECK(r.err.find("100 iterations") != std::string::npos);
  }
  SUBCASE("singular coefficient reports its bracket") {
    Run r = run("reduce-ode", d,
                R"({"model": {"family": "constant", "r": 0.03, "mu": 0.1, "sigma": 0.25, "b": 0, "rho": -0.9},
                    "reduce": {"t": 1.0, "x": 0.5, "y": 1.0, "c": 1.0, "pi": 10.0, "beta_lo": 0.5, "beta_hi": 1.0}})");
    CHECK(r.code == kExitNumerical);
    CHECK(r.err.find("bracket") != std::string::npos);
  }
}

TEST_CASE("compare") {
  fs::path d = scratch("cmp");
  std::string cfg = std::string("{") + kMarket + R"(, "utility": {"family": "power", "gamma": 0.5},
      "sim": {"paths": 4000, "steps": 16, "seed": 3, "t0": 0.5, "T": 1.5, "x0": 1.0, "y0": 0.0},
      "compare": {"policies": ["zero", "zero", "merton_power"]}})";
  Run r = run("compare", d, cfg);
  REQUIRE(r.code == kExitOk);
  json rep = json::parse(slurp(d / "out" / "comparison.json"));
  const json& first = rep["differences"][0];
  CHECK(first["first"] == "zero");
  CHECK(first["second"] == "zero");
  CHECK(first["difference"].get<double>() == 0.0);
  CHECK(first["std_error"].get<double>() == 0.0);
  CHECK(rep["ranking"][0] == "merton_power");
  CHECK(slurp(d / "out" / "ranking.csv").rfind("rank,policy,estimate,std_error,ci_lo,ci_hi\n", 0) == 0);

  SUBCASE("identical runs are byte-identical and the manifest matches") {
    fs::path d2 = scratch("cmp2");
    REQUIRE(run("compare", d2, cfg, {"--threads", "3"}).code == kExitOk);
    for (const char* f : {"comparison.json", "ranking.csv", "manifest.json"})
      CHECK(slurp(d / "out" / f) == slurp(d2 / "out" / f));
    json manifest = json::parse(slurp(d / "out" / "manifest.json"));
    for (const auto& entry : manifest["files"]) {
      std::string body = slurp(d / "out" / entry["file"].get<std::string>());
      CHECK(entry["sha256"] == sha256_hex(body));
      CHECK(entry["bytes"] == body.size());
    }
  }
  SUBCASE("seed override changes the estimates") {
    fs::path d3 = scratch("cmp3");
    REQUIRE(run("compare", d3, cfg, {"--seed-override", "4"}).code == kExitOk);
    CHECK(slurp(d / "out" / "comparison.json") != slurp(d3 / "out" / "comparison.json"));
  }
}

TEST_CASE("simulate") {
  fs::path d = scratch("sim");
  Run r = run("simulate", d,
              std::string("{") + kMarket + R"(, "utility": {"family": "log"},
              "sim": {"paths": 200, "steps": 16, "t0": 0.5, "T": 1.5},
              "simulate": {"policy": "zero", "dump_paths": true}})");
  CHECK(r.code == kExitOk);
  json rep = json::parse(slurp(d / "out" / "sim_report.json"));
  CHECK(rep.dump().find("estimate") != std::string::npos);
  CHECK(fs::exists(d / "out" / "paths.csv"));
}

TEST_CASE("sha256 of known inputs") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("shipped configs parse") {
  const char* dir = std::getenv("SHIFTLAB_CONFIG_DIR");
  REQUIRE(dir != nullptr);
  long n = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    CHECK_NOTHROW(parse_run_config(slurp(entry.path())));
    ++n;
  }
  CHECK(n >= 5);
}
