#include "gridbayes/evaluation.hpp"

#include <cmath>

#include "gridbayes/error.hpp"

namespace gridbayes {

using nlohmann::json;

namespace {

double safe_ratio(double a, double b) { return b > 0.0 ? a / b : (a > 0.0 ? INFINITY : 0.0); }

}  // namespace

double OodStats::epistemic_ratio() const { return safe_ratio(epistemic_ood, epistemic_free); }
double OodStats::aleatoric_ratio() const { return safe_ratio(aleatoric_ood, aleatoric_free); }

EvalResult evaluate(const Network<float>& net, std::span<const Sample> samples, const GridSpec& grid,
                    const EvalOptions& opts, const std::function<void(std::size_t)>& on_scene) {
  if (samples.empty()) throw DataError("evaluation set is empty");
  if (grid.rows != net.config().rows || grid.cols != net.config().cols) {
    throw ConfigError("evaluation grid " + std::to_string(grid.rows) + "x" + std::to_string(grid.cols) +
                      " does not match the network's " + std::to_string(net.config().rows) + "x" +
                      std::to_string(net.config().cols));
  }
  EvalResult r;
  PrecisionAccumulator epi, ale;
  const RngStream root(opts.seed);
  double he_ood = 0.0, he_free = 0.0, ha_ood = 0.0, ha_free = 0.0;

  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    RngStream rng = root.substream(i);
    const ProbStack stack = mc_predict(net, s.features, opts.mc_samples, rng, opts.threads);
    const UncertaintyMaps maps = decompose(stack);
    r.counts.merge(confusion_counts(maps.predicted, s.labels, s.weights));
    epi.add(maps.predicted, maps.epistemic, s.labels, s.weights);
    ale.add(maps.predicted, maps.aleatoric, s.labels, s.weights);

    for (std::size_t row = 0; row < grid.rows; ++row) {
      for (std::size_t col = 0; col < grid.cols; ++col) {
        const std::size_t k = row * grid.cols + col;
        if (!(s.weights.weights[k] > 0.0f)) continue;
        bool near_ood = false;
        if (!s.ood_objects.empty()) {
          const Point2 c = grid.cell_center({row, col});
          for (const OodObject& o : s.ood_objects) {
            if (std::hypot(c.x - o.x, c.y - o.y) <= o.radius + opts.ood_margin) near_ood = true;
          }
        }
        if (near_ood) {
          ++r.ood.ood_cells;
          he_ood += maps.epistemic[k];
          ha_ood += maps.aleatoric[k];
        } else if (s.labels.labels[k] == static_cast<std::uint8_t>(CellClass::kFree)) {
          ++r.ood.free_cells;
          he_free += maps.epistemic[k];
          ha_free += maps.aleatoric[k];
        }
      }
    }
    ++r.scenes;
    if (on_scene) on_scene(i);
  }
  r.iou = iou(r.counts);
  r.epistemic = epi.curve(UncertaintyKind::kEpistemic, opts.quantiles);
  r.aleatoric = ale.curve(UncertaintyKind::kAleatoric, opts.quantiles);
  if (r.ood.ood_cells > 0) {
    r.ood.epistemic_ood = he_ood / static_cast<double>(r.ood.ood_cells);
    r.ood.aleatoric_ood = ha_ood / static_cast<double>(r.ood.ood_cells);
  }
  if (r.ood.free_cells > 0) {
    r.ood.epistemic_free = he_free / static_cast<double>(r.ood.free_cells);
    r.ood.aleatoric_free = ha_free / static_cast<double>(r.ood.free_cells);
  }
  return r;
}

json to_json(const OodStats& s) {
  return json{{"ood_cells", s.ood_cells},
              {"free_cells", s.free_cells},
              {"epistemic_ood", s.epistemic_ood},
              {"epistemic_free", s.epistemic_free},
              {"aleatoric_ood", s.aleatoric_ood},
              {"aleatoric_free", s.aleatoric_free},
              {"epistemic_ratio", s.epistemic_ratio()},
              {"aleatoric_ratio", s.aleatoric_ratio()}};
}

json to_json(const EvalResult& r) {
  json counts = json::array();
  for (const ClassCounts& c : r.counts.per_class) counts.push_back(json{{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}});
  return json{{"scenes", r.scenes},
              {"visible_cells", r.counts.visible_cells},
              {"confusion", counts},
              {"iou", to_json(r.iou)},
              {"curves", {to_json(r.epistemic), to_json(r.aleatoric)}},
              {"ood", to_json(r.ood)}};
}

}  // namespace gridbayes
