#include "gridbayes/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "gridbayes/error.hpp"
#include "gridbayes/parallel.hpp"

namespace gridbayes {

ProbStack ProbStack::from_samples(std::size_t samples, std::size_t classes, std::size_t rows,
                                  std::size_t cols, std::vector<float> probs) {
  if (samples == 0) throw ConfigError("probability stack needs at least one sample");
  if (classes < 2) throw ConfigError("probability stack needs at least two classes");
  const std::size_t cells = rows * cols;
  if (probs.size() != samples * classes * cells) {
    throw ConfigError("probability stack: " + std::to_string(probs.size()) + " values for " +
                      std::to_string(samples) + "x" + std::to_string(classes) + "x" +
                      std::to_string(rows) + "x" + std::to_string(cols));
  }
  ProbStack s{samples, classes, rows, cols, std::move(probs), std::vector<double>(classes * cells, 0.0)};
  for (std::size_t n = 0; n < samples; ++n) {
    for (std::size_t i = 0; i < cells; ++i) {
      double total = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        const float p = s.prob(n, c, i);
        if (!(p >= 0.0f && p <= 1.0f)) {
          throw NumericError("probability stack: sample " + std::to_string(n) + " cell " +
                             std::to_string(i) + " holds " + std::to_string(p));
        }
        total += p;
      }
      if (std::abs(total - 1.0) > 1e-6) {
        throw NumericError("probability stack: sample " + std::to_string(n) + " cell " +
                           std::to_string(i) + " sums to " + std::to_string(total));
      }
    }
  }
  for (std::size_t n = 0; n < samples; ++n) {
    const float* src = s.probs.data() + n * classes * cells;
    for (std::size_t k = 0; k < classes * cells; ++k) s.mean[k] += src[k];
  }
  const double inv = 1.0 / static_cast<double>(samples);
  for (double& m : s.mean) m *= inv;
  return s;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(std::max(v, 1e-12));
  }
  return h;
}

ProbStack mc_predict(const Network<float>& net, const FeatureGrid& input, std::size_t n,
                     RngStream& rng, std::size_t threads) {
  if (n == 0) throw ConfigError("mc_predict: sample count must be >= 1");
  tune_allocator();
  const NetworkConfig& cfg = net.config();
  if (input.rows != cfg.rows || input.cols != cfg.cols ||
      input.values.size() != cfg.input_features * input.rows * input.cols) {
    throw ConfigError("mc_predict: input grid " + std::to_string(input.rows) + "x" +
                      std::to_string(input.cols) + " does not match the network's " +
                      std::to_string(cfg.rows) + "x" + std::to_string(cfg.cols));
  }
  const bool stochastic = net.has_variational_layers() || cfg.variant == Variant::kMcDropout;
  if (!stochastic) n = 1;

  const Tensor<float> x(Shape{1, cfg.input_features, cfg.rows, cfg.cols}, input.values);
  const std::size_t per_sample = cfg.classes * cfg.rows * cfg.cols;
  std::vector<float> probs(n * per_sample);
  const RngStream base(rng.next_u64());

  // A deterministic trunk draws no random numbers, so it can be shared by
  // every sample without changing what each head pass sees.
  Tensor<float> features;
  const bool shared_trunk = !net.trunk_is_stochastic();
  if (shared_trunk) {
    RngStream unused(0);
    features = net.trunk(x, WeightMode::kSample, unused);
  }
  parallel_for(n, threads, [&](std::size_t s) {
    RngStream sample_rng = base.substream(s);
    const ForwardResult<float> out = shared_trunk ? net.head(features, WeightMode::kSample, sample_rng)
                                                  : net.forward(x, WeightMode::kSample, sample_rng);
    std::copy(out.probs.values().begin(), out.probs.values().end(), probs.begin() + s * per_sample);
  });
  return ProbStack::from_samples(n, cfg.classes, cfg.rows, cfg.cols, std::move(probs));
}

std::vector<double> predictive_entropy(const ProbStack& stack) {
  std::vector<double> h(stack.cells());
  std::vector<double> p(stack.classes);
  for (std::size_t i = 0; i < stack.cells(); ++i) {
    for (std::size_t c = 0; c < stack.classes; ++c) p[c] = stack.mean_prob(c, i);
    h[i] = entropy(p);
  }
  return h;
}

std::vector<double> aleatoric_entropy(const ProbStack& stack) {
  std::vector<double> h(stack.cells(), 0.0);
  std::vector<double> p(stack.classes);
  for (std::size_t n = 0; n < stack.samples; ++n) {
    for (std::size_t i = 0; i < stack.cells(); ++i) {
      for (std::size_t c = 0; c < stack.classes; ++c) p[c] = stack.prob(n, c, i);
      h[i] += entropy(p);
    }
  }
  const double inv = 1.0 / static_cast<double>(stack.samples);
  for (double& v : h) v *= inv;
  return h;
}

std::vector<double> epistemic_entropy(std::span<const double> h_p, std::span<const double> h_a) {
  if (h_p.size() != h_a.size()) {
    throw ConfigError("epistemic_entropy: grids differ in size (" + std::to_string(h_p.size()) +
                      " vs " + std::to_string(h_a.size()) + ")");
  }
  std::vector<double> h(h_p.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double d = h_p[i] - h_a[i];
    if (d < -kEntropyTolerance || !std::isfinite(d)) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "aleatoric entropy %.9g exceeds predictive entropy %.9g at cell %zu",
                    h_a[i], h_p[i], i);
      throw InvariantError(buf);
    }
    h[i] = std::max(d, 0.0);
  }
  return h;
}

std::vector<std::uint8_t> predicted_classes(const ProbStack& stack) {
  std::vector<std::uint8_t> out(stack.cells());
  for (std::size_t i = 0; i < stack.cells(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < stack.classes; ++c) {
      if (stack.mean_prob(c, i) > stack.mean_prob(best, i)) best = c;
    }
    out[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

UncertaintyMaps decompose(const ProbStack& stack) {
  UncertaintyMaps m;
  m.rows = stack.rows;
  m.cols = stack.cols;
  m.predictive = predictive_entropy(stack);
  m.aleatoric = aleatoric_entropy(stack);
  m.epistemic = epistemic_entropy(m.predictive, m.aleatoric);
  m.predicted = predicted_classes(stack);
  return m;
}

void write_uncertainty_csv(const UncertaintyMaps& maps, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "row,col,h_p,h_a,h_e,pred\n";
  char buf[160];
  for (std::size_t r = 0; r < maps.rows; ++r) {
    for (std::size_t c = 0; c < maps.cols; ++c) {
      const std::size_t i = r * maps.cols + c;
      std::snprintf(buf, sizeof(buf), "%zu,%zu,%.9g,%.9g,%.9g,%u\n", r, c, maps.predictive[i],
                    maps.aleatoric[i], maps.epistemic[i], static_cast<unsigned>(maps.predicted[i]));
      out << buf;
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void write_probability_csv(const ProbStack& stack, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "row,col";
  for (std::size_t c = 0; c < stack.classes; ++c) {
    out << ",p_" << (c < kClassCount ? class_name(static_cast<CellClass>(c)) : std::to_string(c));
  }
  out << '\n';
  char buf[32];
  for (std::size_t r = 0; r < stack.rows; ++r) {
    for (std::size_t col = 0; col < stack.cols; ++col) {
      out << r << ',' << col;
      for (std::size_t c = 0; c < stack.classes; ++c) {
        std::snprintf(buf, sizeof(buf), ",%.9g", stack.mean_prob(c, r * stack.cols + col));
        out << buf;
      }
      out << '\n';
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace gridbayes
