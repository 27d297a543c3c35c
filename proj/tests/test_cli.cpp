#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "adwm/backbone.hpp"
#include "adwm/cacw.hpp"

namespace fs = std::filesystem;
using adwm::Index;

namespace {

const fs::path& work() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "adwm_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

struct Run {
  int code;
  std::string out;
};

Run run(const std::string& args) {
  const fs::path log = work() / "last_output.txt";
  const std::string cmd = "cd '" + work().string() + "' && ADWM_THREADS=1 '" ADWM_CLI "' " + args + " > '" +
                          log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::ostringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return files;
}

std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

void ensure_data() {
  static bool done = false;
  if (done) return;
  REQUIRE(run("gen-data --out data --count 8 --size 32 32 --bands 4 --seed 3").code == 0);
  done = true;
}

const char* kSmall = "--channels 6 --blocks 3 --epochs 2 --batch-size 4 --val-fraction 0.25";

}  // namespace

TEST_CASE("gen-data") {
  Run r = run("gen-data --out g1 --count 8 --size 64 64 --bands 4 --seed 11");
  CHECK(r.code == 0);
  CHECK(r.out.find("manifest.txt") != std::string::npos);
  Index samples = 0;
  for (const auto& e : fs::directory_iterator(work() / "g1")) samples += e.is_directory();
  CHECK(samples == 8);
  CHECK(run("gen-data --out g2 --count 8 --size 64 64 --bands 4 --seed 11").code == 0);
  CHECK(tree(work() / "g1") == tree(work() / "g2"));

  r = run("gen-data --out g3 --count 2 --size 30 64");
  CHECK(r.code == 2);
  CHECK(r.out.find("multiples of 4") != std::string::npos);
  CHECK(run("gen-data --count 2").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("").code == 2);
  CHECK(run("--help").code == 0);
}

TEST_CASE("train is deterministic and honours config files") {
  ensure_data();
  const std::string flags = std::string(kSmall) + " --seed 4 --data data";
  REQUIRE(run("train " + flags + " --out a.ckpt --log a.csv").code == 0);
  REQUIRE(run("train " + flags + " --out b.ckpt --log b.csv").code == 0);
  CHECK(slurp(work() / "a.ckpt") == slurp(work() / "b.ckpt"));
  CHECK(slurp(work() / "a.csv") == slurp(work() / "b.csv"));
  CHECK(slurp(work() / "a.ckpt.best") == slurp(work() / "b.ckpt.best"));
  CHECK(csv_rows(work() / "a.csv").size() == 3);

  std::ofstream(work() / "train.cfg") << "# shared settings\nchannels = 6\nblocks = 3\nepochs = 5\nbatch-size = 4\n"
                                         "val-fraction = 0.25\nseed = 4\n";
  REQUIRE(run("train --config train.cfg --data data --epochs 2 --out c.ckpt --log c.csv").code == 0);
  CHECK(slurp(work() / "c.ckpt") == slurp(work() / "a.ckpt"));

  CHECK(run("train --data missing_dir --out x.ckpt").code == 2);
  CHECK(run("train --data data --out x.ckpt --variant fancy").code == 2);
  CHECK(run("train --data data --out x.ckpt --d-frac 0").code == 2);
  std::ofstream(work() / "bad.cfg") << "no-such-option = 1\n";
  CHECK(run("train --config bad.cfg --data data --out x.ckpt").code == 2);
}

TEST_CASE("train --variant all runs the four ablation arms") {
  ensure_data();
  REQUIRE(run("train --variant all --data data --out arm.ckpt --log arm.csv --trace arm_trace.csv " +
              std::string(kSmall))
              .code == 0);
  for (const char* v : {"baseline", "ifw", "cfw", "adwm"}) {
    CAPTURE(v);
    CHECK(fs::exists(work() / ("arm_" + std::string(v) + ".ckpt")));
    CHECK(fs::exists(work() / ("arm_" + std::string(v) + ".csv")));
    adwm::CheckpointInfo info;
    const adwm::PansharpenModel m = adwm::load_checkpoint(work() / ("arm_" + std::string(v) + ".ckpt"), &info);
    CHECK(adwm::to_string(m.config().variant) == v);
    CHECK(m.config().ifw_d_fraction == 0.8);
  }
  CHECK(!fs::exists(work() / "arm_trace_baseline.csv"));
  // 2 epochs x (3 layers x 6 alphas + 3 betas)
  CHECK(csv_rows(work() / "arm_trace_adwm.csv").size() == 1 + 2 * (3 * 6 + 3));
}

TEST_CASE("eval writes a report with a mean row and rejects band mismatches") {
  ensure_data();
  REQUIRE(run("train --data data --out e.ckpt " + std::string(kSmall)).code == 0);
  Run r = run("eval --model e.ckpt --data data --report e.csv --window 16");
  CHECK(r.code == 0);
  auto rows = csv_rows(work() / "e.csv");
  REQUIRE(rows.size() == 10);
  CHECK(rows.front() == std::vector<std::string>{"id", "psnr", "sam", "ergas", "q", "q2n", "flags"});
  CHECK(rows.back()[0] == "mean");
  CHECK(slurp(work() / "e.csv").find("# variant: adwm") != std::string::npos);

  CHECK(run("eval --model e.ckpt --data data --report ef.csv --window 16 --full-res").code == 0);
  rows = csv_rows(work() / "ef.csv");
  CHECK(rows.front() == std::vector<std::string>{"id", "d_lambda", "d_s", "hqnr", "flags"});

  REQUIRE(run("gen-data --out data3 --count 2 --size 32 32 --bands 3").code == 0);
  r = run("eval --model e.ckpt --data data3 --report x.csv --window 16");
  CHECK(r.code == 2);
  CHECK(r.out.find("bands") != std::string::npos);
  CHECK(run("eval --model nothing.ckpt --data data --report x.csv").code == 2);
}

TEST_CASE("diagnose emits one heatmap per block, reproducibly") {
  ensure_data();
  REQUIRE(run("train --data data --out dg.ckpt " + std::string(kSmall)).code == 0);
  REQUIRE(run("diagnose --model dg.ckpt --data data --out diag1").code == 0);
  REQUIRE(run("diagnose --model dg.ckpt --data data --out diag2").code == 0);
  const auto a = tree(work() / "diag1");
  CHECK(a == tree(work() / "diag2"));
  Index heatmaps = 0;
  for (const auto& [name, body] : a) heatmaps += name.rfind("covariance_layer", 0) == 0;
  CHECK(heatmaps == 3);
  const auto scree = csv_rows(work() / "diag1" / "scree.csv");
  for (std::size_t i = 1; i < scree.size(); ++i) {
    double sum = 0;
    for (std::size_t k = 1; k < scree[i].size(); ++k) sum += std::stod(scree[i][k]);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("compare-weighting rows and parameter counts") {
  ensure_data();
  REQUIRE(run("compare-weighting --data data --methods cacw,pool,attention,pca --out cmp.csv " + std::string(kSmall))
              .code == 0);
  const auto rows = csv_rows(work() / "cmp.csv");
  REQUIRE(rows.size() == 5);
  // C=6, N=3, d = ceil(0.8 n): IFW d=5 per layer, CFW d=3.
  const std::map<std::string, Index> expected{
      {"cacw", 3 * (5 * 6 + 2 * 5 + 1) + (3 * 3 + 2 * 3 + 1)},
      {"pool", 3 * (2 * 5 * 6 + 5 + 6) + (2 * 3 * 3 + 3 + 3)},
      {"attention", 3 * (5 * 6 + 2 * 5 + 1) + (3 * 3 + 2 * 3 + 1)},
      // PCA keeps ceil(n/2) components: 3 of 6 channels, 2 of 3 layers.
      {"pca", 3 * (5 * 3 + 2 * 5 + 1) + (3 * 2 + 2 * 3 + 1)},
  };
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CAPTURE(rows[i][0]);
    REQUIRE(expected.count(rows[i][0]) == 1);
    CHECK(std::stoll(rows[i][4]) == expected.at(rows[i][0]));
  }
  CHECK(run("compare-weighting --data data --methods cacw,svd --out x.csv").code == 2);
}

TEST_CASE("gradcheck subcommand") {
  Run r = run("gradcheck --seed 0 --seeds 2");
  CHECK(r.code == 0);
  CHECK(r.out.find("conv2d") != std::string::npos);
  CHECK(r.out.find("gradcheck: PASS") != std::string::npos);
  r = run("gradcheck --seeds 1 --corrupt covariance");
  CHECK(r.code == 3);
  CHECK(r.out.find("FAIL") != std::string::npos);
}
