#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "gridbayes/bayes_layers.hpp"
#include "gridbayes/dataset.hpp"
#include "gridbayes/metrics.hpp"
#include "gridbayes/uncertainty.hpp"
#include "json.hpp"

namespace gridbayes {

struct EvalOptions {
  std::size_t mc_samples = kDefaultMcSamples;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::size_t quantiles = 10;
  double ood_margin = 1.0;  // meters around an OOD object's surface
};

// Mean entropies near injected OOD objects versus visible free cells
// elsewhere.
struct OodStats {
  std::uint64_t ood_cells = 0;
  std::uint64_t free_cells = 0;
  double epistemic_ood = 0.0;
  double epistemic_free = 0.0;
  double aleatoric_ood = 0.0;
  double aleatoric_free = 0.0;

  double epistemic_ratio() const;
  double aleatoric_ratio() const;
};

struct EvalResult {
  std::size_t scenes = 0;
  ConfusionCounts counts;
  IouReport iou;
  PrecisionCurve epistemic;
  PrecisionCurve aleatoric;
  OodStats ood;
};

// Scene i is sampled from substream i of `opts.seed`.
EvalResult evaluate(const Network<float>& net, std::span<const Sample> samples, const GridSpec& grid,
                    const EvalOptions& opts,
                    const std::function<void(std::size_t)>& on_scene = {});

nlohmann::json to_json(const OodStats& s);
nlohmann::json to_json(const EvalResult& r);

}  // namespace gridbayes
