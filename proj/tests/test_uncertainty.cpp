#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "gridbayes/error.hpp"
#include "gridbayes/uncertainty.hpp"

using namespace gridbayes;
namespace fs = std::filesystem;

namespace {

// One cell, N samples of a C-class distribution.
ProbStack cell_stack(const std::vector<std::vector<float>>& samples) {
  const std::size_t c = samples.front().size();
  std::vector<float> probs;
  for (const auto& s : samples) probs.insert(probs.end(), s.begin(), s.end());
  return ProbStack::from_samples(samples.size(), c, 1, 1, std::move(probs));
}

// Hand-rolled generator: random N in [1,64], C in {2,4}, a few cells, with a
// mix of peaked, flat and one-hot distributions.
ProbStack random_stack(std::mt19937_64& gen) {
  std::uniform_int_distribution<std::size_t> n_dist(1, 64), cells_dist(1, 6);
  const std::size_t n = n_dist(gen);
  const std::size_t c = (gen() & 1) ? 2 : 4;
  const std::size_t cells = cells_dist(gen);
  std::vector<float> probs(n * c * cells);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int style = static_cast<int>(gen() % 3);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < cells; ++i) {
      std::vector<double> p(c);
      if (style == 2 && u(gen) < 0.5) {
        p[gen() % c] = 1.0;
      } else {
        double total = 0.0;
        for (double& v : p) {
          v = style == 0 ? std::exp(8.0 * u(gen)) : u(gen);
          total += v;
        }
        for (double& v : p) v /= total;
      }
      for (std::size_t k = 0; k < c; ++k) probs[(s * c + k) * cells + i] = static_cast<float>(p[k]);
    }
  }
  return ProbStack::from_samples(n, c, 1, cells, std::move(probs));
}

NetworkConfig tiny(Variant v) {
  NetworkConfig cfg;
  cfg.variant = v;
  cfg.rows = 7;
  cfg.cols = 6;
  cfg.aspp_layers = 2;
  cfg.branch_channels = 3;
  cfg.dilations = {1, 2};
  return cfg;
}

FeatureGrid random_features(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  FeatureGrid f(rows, cols);
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float& v : f.values) v = u(gen);
  return f;
}

}  // namespace

TEST_CASE("entropy examples") {
  CHECK(entropy(std::vector<double>{1.0, 0.0, 0.0, 0.0}) == 0.0);
  CHECK(entropy(std::vector<double>{0.25, 0.25, 0.25, 0.25}) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  // -(0.7 ln 0.7 + 0.3 ln 0.3)
  CHECK(entropy(std::vector<double>{0.7, 0.3}) == doctest::Approx(0.6108643020548935).epsilon(1e-12));
}

TEST_CASE("decomposition worked examples") {
  SUBCASE("uniform, C = 4") {
    const UncertaintyMaps m = decompose(cell_stack({{0.25f, 0.25f, 0.25f, 0.25f}}));
    CHECK(m.predictive[0] == doctest::Approx(std::log(4.0)).epsilon(1e-6));
    CHECK(m.epistemic[0] == 0.0);
  }
  SUBCASE("two disagreeing one-hots") {
    const UncertaintyMaps m = decompose(cell_stack({{1.0f, 0.0f}, {0.0f, 1.0f}}));
    CHECK(m.predictive[0] == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    CHECK(m.aleatoric[0] == 0.0);
    CHECK(m.epistemic[0] == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  }
  SUBCASE("(0.8, 0.2) and (0.6, 0.4)") {
    const UncertaintyMaps m = decompose(cell_stack({{0.8f, 0.2f}, {0.6f, 0.4f}}));
    const double h1 = -(0.8 * std::log(0.8) + 0.2 * std::log(0.2));
    const double h2 = -(0.6 * std::log(0.6) + 0.4 * std::log(0.4));
    const double hp = -(0.7 * std::log(0.7) + 0.3 * std::log(0.3));
    CHECK(m.predictive[0] == doctest::Approx(hp).epsilon(1e-6));
    CHECK(m.aleatoric[0] == doctest::Approx((h1 + h2) / 2).epsilon(1e-6));
    CHECK(std::abs(m.aleatoric[0] - 0.5867) < 1e-4);
    CHECK(std::abs(m.epistemic[0] - 0.0242) < 1e-4);
    CHECK(m.predicted[0] == 0);
  }
  SUBCASE("identical samples: H_a == H_p, H_e == 0") {
    const UncertaintyMaps m = decompose(cell_stack({{0.1f, 0.6f, 0.3f}, {0.1f, 0.6f, 0.3f}, {0.1f, 0.6f, 0.3f}}));
    CHECK(m.aleatoric[0] == doctest::Approx(m.predictive[0]).epsilon(1e-12));
    CHECK(m.epistemic[0] < 1e-7);
    CHECK(m.predicted[0] == 1);
  }
  SUBCASE("one-hot samples of different classes have zero aleatoric entropy") {
    const UncertaintyMaps m = decompose(cell_stack({{0, 0, 1, 0}, {1, 0, 0, 0}, {0, 0, 1, 0}}));
    CHECK(m.aleatoric[0] == 0.0);
    CHECK(m.predicted[0] == 2);
  }
}

TEST_CASE("ProbStack validation and mean") {
  CHECK_THROWS_AS(cell_stack({{0.5f, 0.6f}}), NumericError);
  const ProbStack one = cell_stack({{0.2f, 0.8f}});
  CHECK(one.mean_prob(0, 0) == static_cast<double>(0.2f));
  CHECK(one.mean_prob(1, 0) == static_cast<double>(0.8f));
  const ProbStack three = cell_stack({{0.2f, 0.8f}, {0.4f, 0.6f}, {0.9f, 0.1f}});
  const double m0 = (static_cast<double>(0.2f) + static_cast<double>(0.4f) + static_cast<double>(0.9f)) / 3.0;
  CHECK(three.mean_prob(0, 0) == doctest::Approx(m0).epsilon(1e-15));
}

TEST_CASE("epistemic_entropy clamps within tolerance and rejects beyond") {
  const std::vector<double> hp{0.5, 0.5, 0.5}, ha{0.5 + 5e-8, 0.2, 0.5};
  const auto he = epistemic_entropy(hp, ha);
  CHECK(he[0] == 0.0);
  CHECK(he[1] == doctest::Approx(0.3));
  const std::vector<double> bad{0.5, 0.5 + 1e-6, 0.1};
  CHECK_THROWS_AS(epistemic_entropy(hp, bad), InvariantError);
  CHECK_THROWS_AS(epistemic_entropy(hp, std::vector<double>{0.1}), ConfigError);
}

TEST_CASE("property: Jensen ordering and bounds over 10^4 random stacks") {
  std::mt19937_64 gen(2024);
  std::size_t cells = 0;
  for (int t = 0; t < 10000; ++t) {
    const ProbStack s = random_stack(gen);
    const double ln_c = std::log(static_cast<double>(s.classes));
    const UncertaintyMaps m = decompose(s);
    for (std::size_t i = 0; i < s.cells(); ++i, ++cells) {
      REQUIRE(m.aleatoric[i] >= 0.0);
      REQUIRE(m.aleatoric[i] <= m.predictive[i] + kEntropyTolerance);
      REQUIRE(m.predictive[i] <= ln_c + kEntropyTolerance);
      REQUIRE(m.epistemic[i] >= -kEntropyTolerance);
      REQUIRE(m.epistemic[i] <= ln_c + kEntropyTolerance);
    }
  }
  CHECK(cells > 10000);
}

TEST_CASE("mc_predict") {
  const FeatureGrid x = random_features(7, 6, 3);
  RngStream init(8);

  SUBCASE("N = 0 is an error") {
    const auto net = Network<float>::build(tiny(Variant::kProbabilistic), init);
    RngStream rng(1);
    CHECK_THROWS_AS(mc_predict(net, x, 0, rng), ConfigError);
  }
  SUBCASE("deterministic networks collapse to one sample with zero H_e") {
    const auto net = Network<float>::build(tiny(Variant::kDeterministic), init);
    RngStream rng(1);
    const ProbStack s = mc_predict(net, x, 30, rng);
    CHECK(s.samples == 1);
    const UncertaintyMaps m = decompose(s);
    for (double h : m.epistemic) CHECK(h < 1e-7);
  }
  SUBCASE("N = 1: mean equals the sample") {
    const auto net = Network<float>::build(tiny(Variant::kProbabilistic), init);
    RngStream rng(1);
    const ProbStack s = mc_predict(net, x, 1, rng);
    for (std::size_t c = 0; c < s.classes; ++c)
      for (std::size_t i = 0; i < s.cells(); ++i) CHECK(s.mean_prob(c, i) == static_cast<double>(s.prob(0, c, i)));
  }
  SUBCASE("mean is the exact average of the stored samples") {
    for (Variant v : {Variant::kProbabilistic, Variant::kHybrid, Variant::kMcDropout}) {
      const auto net = Network<float>::build(tiny(v), init);
      RngStream rng(5);
      const ProbStack s = mc_predict(net, x, 9, rng);
      CHECK(s.samples == 9);
      for (std::size_t c = 0; c < s.classes; ++c)
        for (std::size_t i = 0; i < s.cells(); ++i) {
          double acc = 0.0;
          for (std::size_t n = 0; n < s.samples; ++n) acc += s.prob(n, c, i);
          CHECK(s.mean_prob(c, i) == doctest::Approx(acc / 9.0).epsilon(1e-15));
        }
      // samples differ for a stochastic network
      bool differ = false;
      for (std::size_t k = 0; k < s.classes * s.cells(); ++k) differ |= s.probs[k] != s.probs[k + s.classes * s.cells()];
      CHECK(differ);
    }
  }
  SUBCASE("collapsed posterior: identical samples, H_e ~ 0") {
    NetworkConfig cfg = tiny(Variant::kProbabilistic);
    cfg.init_rho = -20.0;
    const auto net = Network<float>::build(cfg, init);
    RngStream rng(2);
    const ProbStack s = mc_predict(net, x, 16, rng);
    for (std::size_t c = 0; c < s.classes; ++c)
      for (std::size_t i = 0; i < s.cells(); ++i) {
        double lo = 1.0, hi = 0.0;
        for (std::size_t n = 0; n < s.samples; ++n) {
          lo = std::min<double>(lo, s.prob(n, c, i));
          hi = std::max<double>(hi, s.prob(n, c, i));
        }
        CHECK(hi - lo < 1e-6);
      }
    for (double h : decompose(s).epistemic) CHECK(h < 1e-6);
  }
  SUBCASE("thread count does not change the result") {
    const auto net = Network<float>::build(tiny(Variant::kProbabilistic), init);
    RngStream r1(4), r2(4);
    const ProbStack a = mc_predict(net, x, 12, r1, 1);
    const ProbStack b = mc_predict(net, x, 12, r2, 3);
    CHECK(a.probs == b.probs);
    CHECK(a.mean == b.mean);
  }
  SUBCASE("grid mismatch") {
    const auto net = Network<float>::build(tiny(Variant::kProbabilistic), init);
    RngStream rng(1);
    CHECK_THROWS_AS(mc_predict(net, random_features(6, 6, 1), 2, rng), ConfigError);
  }
}

TEST_CASE("uncertainty and probability CSV") {
  const ProbStack s = ProbStack::from_samples(2, 2, 1, 2, {0.8f, 1.0f, 0.2f, 0.0f, 0.6f, 0.0f, 0.4f, 1.0f});
  const UncertaintyMaps m = decompose(s);
  const fs::path dir = fs::temp_directory_path() / "gridbayes_test_unc_csv";
  fs::create_directories(dir);
  write_uncertainty_csv(m, dir / "u.csv");
  write_probability_csv(s, dir / "p.csv");
  std::ifstream u(dir / "u.csv");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(u, line)) lines.push_back(line);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "row,col,h_p,h_a,h_e,pred");
  CHECK(lines[1].rfind("0,0,", 0) == 0);
  CHECK(lines[2].rfind("0,1,", 0) == 0);
  std::ifstream p(dir / "p.csv");
  std::getline(p, line);
  CHECK(line.rfind("row,col,p_", 0) == 0);
  fs::remove_all(dir);
}
