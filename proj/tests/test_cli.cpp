#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "gridbayes/error.hpp"
#include "gridbayes/render.hpp"
#include "json.hpp"

#ifndef GRIDBAYES_CLI_PATH
#error "GRIDBAYES_CLI_PATH must point at the gridbayes executable"
#endif

using namespace gridbayes;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "gridbayes_test_cli";

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Run cli(const std::string& args) {
  fs::create_directories(kRoot);
  const fs::path out = kRoot / "stdout.txt", err = kRoot / "stderr.txt";
  const std::string cmd = std::string("\"") + GRIDBAYES_CLI_PATH + "\" " + args + " >\"" + out.string() +
                          "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

// 16x16 grid keeps every subcommand fast.
fs::path small_config() {
  const fs::path p = kRoot / "small.json";
  fs::create_directories(kRoot);
  std::ofstream(p) << R"({"seed": 42, "grid": {"rows": 16, "cols": 16, "cell_size": 0.5}})";
  return p;
}

// Dataset and checkpoints shared by several cases, built once.
struct Fixture {
  fs::path data;
  fs::path det_ckpt;
  fs::path prob_ckpt;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    x.data = kRoot / "data";
    fs::remove_all(x.data);
    const Run g = cli("gen --config " + small_config().string() + " --train 6 --test 3 --out " + x.data.string());
    REQUIRE_MESSAGE(g.code == 0, g.err);
    x.det_ckpt = kRoot / "det.ckpt";
    const Run t1 = cli("train --data " + x.data.string() + " --epochs 2 --out " + x.det_ckpt.string());
    REQUIRE_MESSAGE(t1.code == 0, t1.err);
    x.prob_ckpt = kRoot / "prob.ckpt";
    const Run t2 = cli("train --data " + x.data.string() + " --variant probabilistic --epochs 2 --seed 1 --out " +
                       x.prob_ckpt.string());
    REQUIRE_MESSAGE(t2.code == 0, t2.err);
    return x;
  }();
  return f;
}

struct Ppm {
  std::size_t w = 0, h = 0;
  std::vector<std::uint8_t> rgb;
};

Ppm parse_ppm(const std::string& bytes) {
  Ppm p;
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  REQUIRE(token() == "P6");
  p.w = std::stoul(token());
  p.h = std::stoul(token());
  REQUIRE(token() == "255");
  ++pos;
  p.rgb.assign(bytes.begin() + static_cast<long>(pos), bytes.end());
  REQUIRE(p.rgb.size() == p.w * p.h * 3);
  return p;
}

}  // namespace

TEST_CASE("render: colors and darkening") {
  CHECK(class_color(0) == Rgb{0, 200, 0});
  CHECK(class_color(2) == Rgb{220, 0, 0});
  CHECK_THROWS_AS(class_color(7), ConfigError);
  CHECK(darkening_factor(0.0, 4) == 1.0);
  CHECK(darkening_factor(std::log(4.0), 4) == 0.0);
  CHECK(darkening_factor(std::log(2.0), 4) == doctest::Approx(0.5));

  SUBCASE("all-unknown grid is uniformly gray") {
    const std::vector<std::uint8_t> pred(12, 3);
    const Ppm p = parse_ppm([&] {
      const auto b = render_ppm(pred, 3, 4, 4);
      return std::string(b.begin(), b.end());
    }());
    CHECK(p.w == 4);
    CHECK(p.h == 3);
    for (std::uint8_t v : p.rgb) CHECK(v == 128);
  }
  SUBCASE("maximal entropy renders black, zero entropy is untouched") {
    const std::vector<std::uint8_t> pred{0, 1, 2, 3};
    const std::vector<double> h{std::log(4.0), 0.0, std::log(4.0), 0.0};
    const auto b = render_ppm(pred, 2, 2, 4, h, 2);
    const Ppm p = parse_ppm(std::string(b.begin(), b.end()));
    CHECK(p.w == 4);
    CHECK(p.h == 4);
    // grid row 0 is drawn at the bottom of the image
    auto px = [&](std::size_t x, std::size_t y) { return &p.rgb[(y * p.w + x) * 3]; };
    for (std::size_t y = 2; y < 4; ++y)
      for (std::size_t x = 0; x < 2; ++x) CHECK((px(x, y)[0] | px(x, y)[1] | px(x, y)[2]) == 0);
    CHECK(px(2, 3)[0] == 230);  // row 0, col 1: occupied, H = 0
    CHECK(px(3, 0)[0] == 128);  // row 1, col 1: unknown
  }
}

TEST_CASE("usage errors exit with 2") {
  const Run missing = cli("gen --train 2 --test 1");
  CHECK(missing.code == 2);
  CHECK(missing.err.find("--out") != std::string::npos);
  CHECK(cli("").code == 2);
  CHECK(cli("frobnicate").code == 2);
  CHECK(cli("train --data " + kRoot.string() + " --variant bogus --out x").code != 0);
  const Run help = cli("--help");
  CHECK(help.code == 0);
  CHECK(help.out.find("train") != std::string::npos);
}

TEST_CASE("gen: counts, manifest, byte-identical reruns") {
  const fs::path a = kRoot / "gen_a", b = kRoot / "gen_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const std::string common = "gen --config " + small_config().string() + " --train 4 --test 2 --seed 7 --out ";
  REQUIRE(cli(common + a.string()).code == 0);
  REQUIRE(cli(common + b.string()).code == 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
  }
  CHECK(files == 4 + 2 + 1);
  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  CHECK(manifest["splits"]["train"].size() == 4);
  CHECK(manifest["splits"]["test"].size() == 2);

  const Run pc = cli(common + (kRoot / "gen_c").string() + " --print-config");
  CHECK(pc.code == 0);
  const auto cfg = nlohmann::json::parse(pc.out.substr(0, pc.out.find("\n}") + 2));
  CHECK(cfg["scenario"]["seed"] == 7);
  CHECK(cfg["scenario"]["grid"]["rows"] == 16);
}

TEST_CASE("train: checkpoint and history") {
  const Fixture& f = fixture();
  CHECK(fs::exists(f.det_ckpt));
  const std::string hist = slurp(fs::path(f.prob_ckpt.string() + ".history.csv"));
  CHECK(hist.rfind("epoch,loss,nll,kl,batches\n", 0) == 0);
  std::istringstream lines(hist);
  std::string line;
  std::getline(lines, line);
  int rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    REQUIRE(cols.size() == 5);
    CHECK(std::stod(cols[3]) > 0.0);
  }
  CHECK(rows == 2);

  // the deterministic history has a zero KL column
  const std::string dh = slurp(fs::path(f.det_ckpt.string() + ".history.csv"));
  CHECK(dh.find(",0,") != std::string::npos);

  // same flags, same bytes
  const fs::path again = kRoot / "det_again.ckpt";
  REQUIRE(cli("train --data " + f.data.string() + " --epochs 2 --out " + again.string()).code == 0);
  CHECK(slurp(again) == slurp(f.det_ckpt));
}

TEST_CASE("train --repeat reports mean metrics over seeds") {
  const Fixture& f = fixture();
  const fs::path out = kRoot / "rep.ckpt";
  const Run r = cli("train --data " + f.data.string() + " --epochs 1 --repeat 2 --mc-samples 2 --out " + out.string());
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(kRoot / "rep.run0.ckpt"));
  CHECK(fs::exists(kRoot / "rep.run1.ckpt"));
  const auto summary = nlohmann::json::parse(slurp(fs::path(out.string() + ".repeat.json")));
  CHECK(summary["runs"].size() == 2);
  const double m0 = summary["runs"][0]["iou"]["miou"], m1 = summary["runs"][1]["iou"]["miou"];
  CHECK(static_cast<double>(summary["mean_miou"]) == doctest::Approx((m0 + m1) / 2));
}

TEST_CASE("eval: outputs and the visibility rule") {
  const Fixture& f = fixture();
  const fs::path out = kRoot / "eval_prob";
  fs::remove_all(out);
  const Run r = cli("eval --checkpoint " + f.prob_ckpt.string() + " --data " + f.data.string() +
                    " --mc-samples 4 --out " + out.string());
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("mIoU") != std::string::npos);
  for (const char* name : {"iou.csv", "curve_epistemic.csv", "curve_aleatoric.csv", "head_density.csv", "metrics.json"})
    CHECK_MESSAGE(fs::exists(out / name), name);
  const auto m = nlohmann::json::parse(slurp(out / "metrics.json"));
  CHECK(m["scenes"] == 3);
  CHECK(m["variant"] == "probabilistic");
  CHECK(m["curves"].size() == 2);

  const Run det = cli("eval --checkpoint " + f.det_ckpt.string() + " --data " + f.data.string() + " --out " +
                      (kRoot / "eval_det").string());
  CHECK(det.code == 0);
  CHECK_FALSE(fs::exists(kRoot / "eval_det" / "head_density.csv"));

  const Run off = cli("eval --checkpoint " + f.det_ckpt.string() + " --data " + f.data.string() +
                      " --no-visible-only --out " + (kRoot / "eval_off").string());
  CHECK(off.code == 2);
  CHECK(off.err.find("observability") != std::string::npos);

  const Run missing = cli("eval --checkpoint " + (kRoot / "nope.ckpt").string() + " --data " + f.data.string() +
                          " --out " + (kRoot / "eval_x").string());
  CHECK(missing.code != 0);
}

TEST_CASE("eval rejects a corrupt checkpoint with a runtime failure") {
  const Fixture& f = fixture();
  const std::string bytes = slurp(f.det_ckpt);
  const fs::path bad = kRoot / "truncated.ckpt";
  std::ofstream(bad, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  const Run r = cli("eval --checkpoint " + bad.string() + " --data " + f.data.string() + " --out " +
                    (kRoot / "eval_bad").string());
  CHECK(r.code == 1);
  CHECK(r.err.find("corrupt checkpoint") != std::string::npos);
}

TEST_CASE("predict: CSVs and images") {
  const Fixture& f = fixture();
  const auto manifest = nlohmann::json::parse(slurp(f.data / "manifest.json"));
  const fs::path scene = f.data / manifest["splits"]["test"][0].get<std::string>();

  const fs::path det = kRoot / "pred_det";
  fs::remove_all(det);
  const Run r = cli("predict --checkpoint " + f.det_ckpt.string() + " --scene " + scene.string() + " --out " +
                    det.string() + " --scale 2");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const char* name : {"probabilities.csv", "uncertainty.csv", "prediction.ppm", "prediction_epistemic.ppm",
                           "prediction_aleatoric.ppm"})
    CHECK_MESSAGE(fs::exists(det / name), name);
  // deterministic: H_e is zero, so the epistemic image is the plain prediction
  CHECK(slurp(det / "prediction.ppm") == slurp(det / "prediction_epistemic.ppm"));
  const Ppm p = parse_ppm(slurp(det / "prediction.ppm"));
  CHECK(p.w == 32);
  CHECK(p.h == 32);

  const fs::path prob = kRoot / "pred_prob";
  fs::remove_all(prob);
  REQUIRE(cli("predict --checkpoint " + f.prob_ckpt.string() + " --scene " + scene.string() + " --mc-samples 5 --out " +
              prob.string())
              .code == 0);
  std::ifstream u(prob / "uncertainty.csv");
  std::string line;
  std::getline(u, line);
  CHECK(line == "row,col,h_p,h_a,h_e,pred");
  std::size_t rows = 0;
  while (std::getline(u, line)) ++rows;
  CHECK(rows == 16 * 16);
}
