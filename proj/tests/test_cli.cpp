#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(LITENS_BIN) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {};
  RunResult r;
  char buf[4096];
  while (std::size_t got = std::fread(buf, 1, sizeof buf, pipe)) {
    r.output.append(buf, got);
  }
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("litens_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path find_subdir(const fs::path& root, const std::string& prefix) {
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && entry.path().filename().string().starts_with(prefix)) {
      return entry.path();
    }
  }
  return {};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("help exits zero") {
  const RunResult r = run_cli("--help");
  CHECK(r.code == 0);
  CHECK(r.output.find("gen-data") != std::string::npos);
  CHECK(r.output.find("train") != std::string::npos);
  CHECK(r.output.find("eval") != std::string::npos);
  CHECK(r.output.find("reproduce") != std::string::npos);
}

TEST_CASE("gen-data is deterministic and writes n rows") {
  const fs::path a = fresh_dir("gen_a");
  const fs::path b = fresh_dir("gen_b");
  const std::string common = "gen-data --experiment case1 --n 60 --seed 4 --out ";
  CHECK(run_cli(common + a.string()).code == 0);
  CHECK(run_cli(common + b.string()).code == 0);

  const fs::path da = find_subdir(a, "gen-data-case1-");
  const fs::path db = find_subdir(b, "gen-data-case1-");
  REQUIRE(!da.empty());
  REQUIRE(!db.empty());
  CHECK(da.filename() == db.filename());  // same config, same hash

  const std::string csv_a = slurp(da / "dataset.csv");
  const std::string csv_b = slurp(db / "dataset.csv");
  CHECK(csv_a == csv_b);
  CHECK(count_lines(csv_a) == 61);  // header plus one row per point
  CHECK(fs::exists(da / "dataset.provenance.json"));
}

TEST_CASE("unknown experiment exits 2") {
  const fs::path out = fresh_dir("gen_bad");
  const RunResult r =
      run_cli("gen-data --experiment nope --n 10 --seed 1 --out " + out.string());
  CHECK(r.code == 2);
  CHECK(r.output.find("usage error") != std::string::npos);
  CHECK(r.output.find("nope") != std::string::npos);
}

TEST_CASE("train writes one model per member plus history and config") {
  const fs::path out = fresh_dir("train_art");
  const RunResult r = run_cli(
      "train --experiment case1 --n 120 --seed 3 --M 2 --hidden 8 --epochs 2 "
      "--batch-size 64 --out " +
      out.string());
  CHECK(r.code == 0);

  const fs::path dir = find_subdir(out, "train-case1-");
  REQUIRE(!dir.empty());
  CHECK(fs::exists(dir / "model_0.json"));
  CHECK(fs::exists(dir / "model_1.json"));
  CHECK(!fs::exists(dir / "model_2.json"));
  CHECK(fs::exists(dir / "history.csv"));
  CHECK(fs::exists(dir / "config.cfg"));

  const std::string cfg = slurp(dir / "config.cfg");
  CHECK(cfg.find("experiment=case1") != std::string::npos);
  CHECK(cfg.find("M=2") != std::string::npos);
}

TEST_CASE("baseline trains a single unregularized model") {
  const fs::path out = fresh_dir("train_base");
  const RunResult r = run_cli(
      "train --experiment case1 --baseline --n 120 --seed 3 --hidden 8 "
      "--epochs 1 --batch-size 64 --out " +
      out.string());
  CHECK(r.code == 0);
  const fs::path dir = find_subdir(out, "train-case1-");
  REQUIRE(!dir.empty());
  CHECK(fs::exists(dir / "model_0.json"));
  CHECK(!fs::exists(dir / "model_1.json"));
  const std::string cfg = slurp(dir / "config.cfg");
  CHECK(cfg.find("lambda=0") != std::string::npos);
}

TEST_CASE("eval produces report and grid artifacts") {
  const fs::path out = fresh_dir("eval_ok");
  REQUIRE(run_cli(
              "train --experiment case1 --n 120 --seed 3 --M 2 --hidden 8 "
              "--epochs 1 --batch-size 64 --out " +
              out.string())
              .code == 0);
  const fs::path models = find_subdir(out, "train-case1-");
  REQUIRE(!models.empty());

  const RunResult r = run_cli(
      "eval --experiment case1 --n 100 --seed 3 --n-eval 200 "
      "--grid-resolution 8 --models " +
      models.string() + " --out " + out.string());
  CHECK(r.code == 0);
  const fs::path dir = find_subdir(out, "eval-case1-");
  REQUIRE(!dir.empty());
  CHECK(fs::exists(dir / "report.json"));
  CHECK(fs::exists(dir / "report.csv"));
  CHECK(fs::exists(dir / "grid_model_0.csv"));
  CHECK(fs::exists(dir / "grid_model_1.csv"));
}

TEST_CASE("eval dimension mismatch exits 4") {
  const fs::path out = fresh_dir("eval_dim");
  REQUIRE(run_cli(
              "train --experiment case1 --n 120 --seed 3 --M 2 --hidden 8 "
              "--epochs 1 --batch-size 64 --out " +
              out.string())
              .code == 0);
  const fs::path models = find_subdir(out, "train-case1-");
  REQUIRE(!models.empty());

  const RunResult r = run_cli(
      "eval --experiment toy8d --n 200 --seed 1 --n-eval 50 "
      "--grid-resolution 4 --projection-samples 4 --models " +
      models.string() + " --out " + out.string());
  CHECK(r.code == 4);
  CHECK(r.output.find("shape mismatch") != std::string::npos);
}

TEST_CASE("eval without models exits 2") {
  const fs::path out = fresh_dir("eval_nomodels");
  const RunResult r =
      run_cli("eval --experiment case1 --n 100 --seed 3 --out " + out.string());
  CHECK(r.code == 2);
  CHECK(r.output.find("usage error") != std::string::npos);
}

TEST_CASE("overflowing features exit 3 with an epoch diagnostic") {
  const fs::path out = fresh_dir("train_nan");
  const fs::path csv = out / "huge.csv";
  {
    std::ofstream f(csv);
    f << "x0,x1,y\n";
    for (int i = 0; i < 16; ++i) {
      f << "1.7e308,1.7e308," << (i % 2) << "\n";
    }
  }
  const RunResult r = run_cli(
      "train --experiment csv --csv " + csv.string() +
      " --M 2 --hidden 8,8 --activation softplus --epochs 1 --batch-size 16 "
      "--lambda 0.1 --lr 0.001 --seed 1 --out " +
      out.string());
  CHECK(r.code == 3);
  CHECK(r.output.find("numerical failure") != std::string::npos);
  CHECK(r.output.find("epoch") != std::string::npos);
}

TEST_CASE("config file values yield to explicit flags") {
  const fs::path out = fresh_dir("cfg_prec");
  const fs::path cfg = out / "run.cfg";
  {
    std::ofstream f(cfg);
    f << "experiment=case1\n";
    f << "n=150\n";
    f << "seed=9\n";
  }

  const fs::path a = fresh_dir("cfg_prec_a");
  REQUIRE(run_cli("gen-data --config " + cfg.string() + " --out " + a.string())
              .code == 0);
  const fs::path da = find_subdir(a, "gen-data-case1-");
  REQUIRE(!da.empty());
  CHECK(count_lines(slurp(da / "dataset.csv")) == 151);

  const fs::path b = fresh_dir("cfg_prec_b");
  REQUIRE(run_cli("gen-data --config " + cfg.string() + " --n 80 --out " +
                  b.string())
              .code == 0);
  const fs::path db = find_subdir(b, "gen-data-case1-");
  REQUIRE(!db.empty());
  CHECK(count_lines(slurp(db / "dataset.csv")) == 81);
}

TEST_CASE("unknown reproduce target exits 2") {
  const fs::path out = fresh_dir("rep_bad");
  const RunResult r = run_cli("reproduce nonsense --out " + out.string());
  CHECK(r.code == 2);
  CHECK(r.output.find("usage error") != std::string::npos);
}
