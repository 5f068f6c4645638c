#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "gridbayes/autodiff.hpp"
#include "gridbayes/rng.hpp"
#include "gridbayes/tensor.hpp"

namespace testutil {

using gridbayes::Graph;
using gridbayes::RngStream;
using gridbayes::Shape;
using gridbayes::Tensor;
using gridbayes::Var;

inline Tensor<double> random_tensor(const Shape& s, RngStream& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(s);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor<float> random_tensor_f(const Shape& s, RngStream& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<float> t(s);
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Builds a scalar loss from the leaves bound to `inputs`.
using LossFn = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

struct GradCheck {
  double worst_rel = 0.0;
  std::string where;
};

inline double rel_error(double a, double n) {
  const double scale = std::max(std::abs(a), std::abs(n));
  if (scale < 1e-10) return 0.0;  // both vanish at double precision
  return std::abs(a - n) / scale;
}

// Central differences at `probes` random coordinates of every input.
inline GradCheck check_gradients(std::vector<Tensor<double>> inputs, const LossFn& loss_fn, RngStream& rng,
                                 std::size_t probes = 10, double h = 1e-4) {
  auto evaluate = [&](const std::vector<Tensor<double>>& xs) {
    Graph<double> g;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(g.leaf(x));
    return g.value(loss_fn(g, vars))[0];
  };
  Graph<double> g;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(g.leaf(x));
  const Var loss = loss_fn(g, vars);
  g.backward(loss);
  GradCheck out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double> analytic = g.grad(vars[i]);
    for (std::size_t p = 0; p < probes; ++p) {
      const std::size_t k = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(inputs[i].size()) - 1));
      std::vector<Tensor<double>> plus = inputs, minus = inputs;
      plus[i][k] += h;
      minus[i][k] -= h;
      const double numeric = (evaluate(plus) - evaluate(minus)) / (2.0 * h);
      const double e = rel_error(analytic[k], numeric);
      if (e > out.worst_rel) {
        out.worst_rel = e;
        char buf[160];
        std::snprintf(buf, sizeof(buf), "input %zu index %zu analytic %.10g numeric %.10g", i, k, analytic[k], numeric);
        out.where = buf;
      }
    }
  }
  return out;
}

// Random linear functional sum(R * x), which gives every output element a
// distinct weight in the loss.
inline Var project(Graph<double>& g, Var x, std::uint64_t seed) {
  RngStream rng(seed);
  const Tensor<double> r = random_tensor(g.value(x).shape(), rng);
  return gridbayes::sum(g, gridbayes::multiply_constant(g, x, r));
}

// Composite Simpson on KL[q || p] = int q ln(q/p) over mu +- 12 sigma.
inline double kl_quadrature(double mu, double sigma, double gamma) {
  const std::size_t n = 20000;
  const double a = mu - 12.0 * sigma, b = mu + 12.0 * sigma, h = (b - a) / n;
  auto f = [&](double w) {
    const double lq = -0.5 * std::log(2 * M_PI * sigma * sigma) - (w - mu) * (w - mu) / (2 * sigma * sigma);
    const double lp = -0.5 * std::log(2 * M_PI * gamma) - w * w / (2 * gamma);
    return std::exp(lq) * (lq - lp);
  };
  double s = f(a) + f(b);
  for (std::size_t i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

}  // namespace testutil
