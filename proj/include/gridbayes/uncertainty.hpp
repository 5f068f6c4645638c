#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "gridbayes/bayes_layers.hpp"
#include "gridbayes/rng.hpp"
#include "gridbayes/scene_data.hpp"

namespace gridbayes {

inline constexpr double kEntropyTolerance = 1e-7;
inline constexpr std::size_t kDefaultMcSamples = 30;

// N sampled class distributions per cell and their average.
struct ProbStack {
  std::size_t samples = 0;
  std::size_t classes = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> probs;  // samples x classes x rows x cols
  std::vector<double> mean;  // classes x rows x cols

  std::size_t cells() const { return rows * cols; }
  float prob(std::size_t n, std::size_t c, std::size_t cell) const {
    return probs[(n * classes + c) * cells() + cell];
  }
  double mean_prob(std::size_t c, std::size_t cell) const { return mean[c * cells() + cell]; }

  // Takes ownership of the samples and computes the mean, summing in sample
  // order. Every per-cell vector must sum to 1 within 1e-6.
  static ProbStack from_samples(std::size_t samples, std::size_t classes, std::size_t rows,
                                std::size_t cols, std::vector<float> probs);
};

struct UncertaintyMaps {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> predictive;  // H_p, nats
  std::vector<double> aleatoric;   // H_a
  std::vector<double> epistemic;   // H_e = H_p - H_a
  std::vector<std::uint8_t> predicted;  // argmax of the mean
};

// Entropy of one distribution, 0 ln 0 := 0, logs floored at 1e-12.
double entropy(std::span<const double> p);

// Runs N sampled forward passes (N is forced to 1 for a network without any
// stochastic layer). Sample n draws from substream n of a seed taken from
// `rng`, so results do not depend on `threads`.
ProbStack mc_predict(const Network<float>& net, const FeatureGrid& input, std::size_t n,
                     RngStream& rng, std::size_t threads = 1);

std::vector<double> predictive_entropy(const ProbStack& stack);
std::vector<double> aleatoric_entropy(const ProbStack& stack);
// Clamps tiny negatives to 0; throws InvariantError when H_a > H_p + 1e-7.
std::vector<double> epistemic_entropy(std::span<const double> h_p, std::span<const double> h_a);

std::vector<std::uint8_t> predicted_classes(const ProbStack& stack);
UncertaintyMaps decompose(const ProbStack& stack);

// row,col,h_p,h_a,h_e,pred
void write_uncertainty_csv(const UncertaintyMaps& maps, const std::filesystem::path& path);
// row,col,p_<class>... of the mean grid
void write_probability_csv(const ProbStack& stack, const std::filesystem::path& path);

}  // namespace gridbayes
