#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gridbayes/bayes_layers.hpp"
#include "gridbayes/scene_data.hpp"
#include "json.hpp"

namespace gridbayes {

struct ClassCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
};

// Only cells with observability weight > 0 are counted.
struct ConfusionCounts {
  std::vector<ClassCounts> per_class;
  std::uint64_t visible_cells = 0;

  explicit ConfusionCounts(std::size_t classes = kClassCount) : per_class(classes) {}
  void merge(const ConfusionCounts& other);
};

ConfusionCounts confusion_counts(std::span<const std::uint8_t> pred, const LabelGrid& labels,
                                 const WeightGrid& weights, std::size_t classes = kClassCount);

struct IouReport {
  std::vector<double> per_class;  // 0 when TP+FP+FN == 0
  std::vector<bool> absent;       // class in neither predictions nor labels
  double miou = 0.0;              // unweighted mean over all classes
};

IouReport iou(const ConfusionCounts& counts);

enum class UncertaintyKind { kEpistemic, kAleatoric };
std::string to_string(UncertaintyKind kind);

// Per predicted class: thresholds[q] is the nearest-rank (q+1)/Q quantile of
// the uncertainty of that class's predictions; precision[q] and support[q]
// cover predictions with uncertainty <= thresholds[q]. Index 0 is the most
// certain slice, the last index covers every prediction.
struct ClassCurve {
  bool empty = true;
  std::vector<double> thresholds;
  std::vector<double> precision;
  std::vector<std::uint64_t> support;
};

struct PrecisionCurve {
  UncertaintyKind kind = UncertaintyKind::kEpistemic;
  std::size_t quantiles = 10;
  std::vector<ClassCurve> classes;
};

// Accumulates (predicted class, uncertainty, correct) over visible cells of
// any number of scenes.
class PrecisionAccumulator {
 public:
  explicit PrecisionAccumulator(std::size_t classes = kClassCount) : items_(classes) {}
  void add(std::span<const std::uint8_t> pred, std::span<const double> uncertainty,
           const LabelGrid& labels, const WeightGrid& weights);
  PrecisionCurve curve(UncertaintyKind kind, std::size_t quantiles = 10) const;
  std::size_t predictions(std::size_t cls) const { return items_.at(cls).size(); }

 private:
  struct Item {
    double uncertainty;
    bool correct;
  };
  std::vector<std::vector<Item>> items_;
};

PrecisionCurve uncertainty_precision_curve(std::span<const std::uint8_t> pred,
                                           std::span<const double> uncertainty,
                                           const LabelGrid& labels, const WeightGrid& weights,
                                           UncertaintyKind kind, std::size_t quantiles = 10);

// Spearman rank correlation with average ranks for ties; 0 when either
// side is constant.
double spearman(std::span<const double> a, std::span<const double> b);

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::uint64_t> counts;
  std::vector<double> density;  // counts / (total * bin width)
  double bin_center(std::size_t i) const;
};

Histogram histogram(std::span<const double> values, std::size_t bins = 64);

// Nearest-rank percentile, q in (0, 100].
double percentile(std::vector<double> values, double q);

struct WeightDensity {
  std::string layer;
  std::size_t count = 0;  // weights + biases of the layer
  Histogram mu;
  Histogram sigma;
  double sigma_p10 = 0.0;
  double sigma_p90 = 0.0;
};

// Histograms of posterior means and standard deviations of one variational
// layer ("head" by default).
WeightDensity weight_density_stats(const Network<float>& net, const std::string& layer = "head",
                                   std::size_t bins = 64);

nlohmann::json to_json(const IouReport& r);
nlohmann::json to_json(const PrecisionCurve& c);
nlohmann::json to_json(const WeightDensity& w);

void write_iou_csv(const IouReport& r, const std::filesystem::path& path);
void write_curve_csv(const PrecisionCurve& c, const std::filesystem::path& path);
void write_density_csv(const WeightDensity& w, const std::filesystem::path& path);

}  // namespace gridbayes
