#include "gridbayes/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "gridbayes/error.hpp"

namespace gridbayes {

using nlohmann::json;

namespace {

void check_grid(std::size_t n, const LabelGrid& labels, const WeightGrid& weights, const char* what) {
  if (labels.labels.size() != n || weights.weights.size() != n) {
    throw ConfigError(std::string(what) + ": " + std::to_string(n) + " predictions, " +
                      std::to_string(labels.labels.size()) + " labels, " +
                      std::to_string(weights.weights.size()) + " weights");
  }
}

std::string class_label(std::size_t c) {
  return c < kClassCount ? class_name(static_cast<CellClass>(c)) : std::to_string(c);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

void ConfusionCounts::merge(const ConfusionCounts& other) {
  if (other.per_class.size() != per_class.size()) {
    throw ConfigError("cannot merge confusion counts over different class sets");
  }
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    per_class[c].tp += other.per_class[c].tp;
    per_class[c].fp += other.per_class[c].fp;
    per_class[c].fn += other.per_class[c].fn;
  }
  visible_cells += other.visible_cells;
}

ConfusionCounts confusion_counts(std::span<const std::uint8_t> pred, const LabelGrid& labels,
                                 const WeightGrid& weights, std::size_t classes) {
  check_grid(pred.size(), labels, weights, "confusion_counts");
  ConfusionCounts counts(classes);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!(weights.weights[i] > 0.0f)) continue;
    const std::size_t p = pred[i], l = labels.labels[i];
    if (p >= classes || l >= classes) throw DataError("confusion_counts: class id out of range");
    ++counts.visible_cells;
    if (p == l) {
      ++counts.per_class[p].tp;
    } else {
      ++counts.per_class[p].fp;
      ++counts.per_class[l].fn;
    }
  }
  return counts;
}

IouReport iou(const ConfusionCounts& counts) {
  IouReport r;
  double total = 0.0;
  for (const ClassCounts& c : counts.per_class) {
    const std::uint64_t denom = c.tp + c.fp + c.fn;
    const double v = denom == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
    r.per_class.push_back(v);
    r.absent.push_back(denom == 0);
    total += v;
  }
  r.miou = r.per_class.empty() ? 0.0 : total / static_cast<double>(r.per_class.size());
  return r;
}

std::string to_string(UncertaintyKind kind) {
  return kind == UncertaintyKind::kEpistemic ? "epistemic" : "aleatoric";
}

void PrecisionAccumulator::add(std::span<const std::uint8_t> pred,
                               std::span<const double> uncertainty, const LabelGrid& labels,
                               const WeightGrid& weights) {
  check_grid(pred.size(), labels, weights, "uncertainty_precision_curve");
  if (uncertainty.size() != pred.size()) {
    throw ConfigError("uncertainty_precision_curve: uncertainty grid size mismatch");
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!(weights.weights[i] > 0.0f)) continue;
    if (pred[i] >= items_.size()) throw DataError("uncertainty_precision_curve: class id out of range");
    items_[pred[i]].push_back({uncertainty[i], pred[i] == labels.labels[i]});
  }
}

PrecisionCurve PrecisionAccumulator::curve(UncertaintyKind kind, std::size_t quantiles) const {
  if (quantiles == 0) throw ConfigError("precision curve needs at least one quantile");
  PrecisionCurve out;
  out.kind = kind;
  out.quantiles = quantiles;
  for (const std::vector<Item>& raw : items_) {
    ClassCurve cc;
    if (raw.empty()) {
      out.classes.push_back(cc);
      continue;
    }
    cc.empty = false;
    std::vector<Item> items = raw;
    std::stable_sort(items.begin(), items.end(),
                     [](const Item& a, const Item& b) { return a.uncertainty < b.uncertainty; });
    std::vector<std::uint64_t> correct_prefix(items.size() + 1, 0);
    for (std::size_t i = 0; i < items.size(); ++i) {
      correct_prefix[i + 1] = correct_prefix[i] + (items[i].correct ? 1 : 0);
    }
    for (std::size_t q = 1; q <= quantiles; ++q) {
      const std::size_t rank = std::max<std::size_t>(1, (q * items.size() + quantiles - 1) / quantiles);
      const double threshold = items[std::min(rank, items.size()) - 1].uncertainty;
      // every item tied with the threshold is included
      const auto end = std::upper_bound(items.begin(), items.end(), threshold,
                                        [](double t, const Item& it) { return t < it.uncertainty; });
      const auto support = static_cast<std::uint64_t>(end - items.begin());
      cc.thresholds.push_back(threshold);
      cc.support.push_back(support);
      cc.precision.push_back(static_cast<double>(correct_prefix[support]) / static_cast<double>(support));
    }
    out.classes.push_back(std::move(cc));
  }
  return out;
}

PrecisionCurve uncertainty_precision_curve(std::span<const std::uint8_t> pred,
                                           std::span<const double> uncertainty,
                                           const LabelGrid& labels, const WeightGrid& weights,
                                           UncertaintyKind kind, std::size_t quantiles) {
  PrecisionAccumulator acc;
  acc.add(pred, uncertainty, labels, weights);
  return acc.curve(kind, quantiles);
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("spearman: length mismatch");
  if (a.size() < 2) return 0.0;
  const std::vector<double> ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

double Histogram::bin_center(std::size_t i) const {
  const double w = (hi - lo) / static_cast<double>(counts.size());
  return lo + (static_cast<double>(i) + 0.5) * w;
}

Histogram histogram(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw ConfigError("histogram needs at least one bin");
  if (values.empty()) throw DataError("histogram of an empty set");
  Histogram h;
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  h.lo = *mn;
  h.hi = *mx;
  if (!(h.hi > h.lo)) {
    const double pad = std::max(std::abs(h.lo) * 1e-3, 1e-12);
    h.lo -= pad;
    h.hi += pad;
  }
  h.counts.assign(bins, 0);
  const double width = (h.hi - h.lo) / static_cast<double>(bins);
  for (double v : values) {
    auto b = static_cast<std::size_t>(std::floor((v - h.lo) / width));
    ++h.counts[std::min(b, bins - 1)];
  }
  const double total = static_cast<double>(values.size());
  for (std::uint64_t c : h.counts) h.density.push_back(static_cast<double>(c) / (total * width));
  return h;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("percentile of an empty set");
  if (!(q > 0.0 && q <= 100.0)) throw ConfigError("percentile must lie in (0, 100]");
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size()) / 100.0));
  return values[std::max<std::size_t>(rank, 1) - 1];
}

WeightDensity weight_density_stats(const Network<float>& net, const std::string& layer,
                                   std::size_t bins) {
  const ConvLayer<float>* found = nullptr;
  for (const ConvLayer<float>& l : net.conv_layers()) {
    if (l.name == layer) found = &l;
  }
  if (!found) throw ConfigError("no layer named '" + layer + "'");
  if (found->kind != ParamKind::kVariational) {
    throw ConfigError("layer '" + layer + "' has point weights; weight density needs a variational layer");
  }
  std::vector<double> mu, sigma;
  for (const VariationalParams<float>* vp : {&found->weight_vp, &found->bias_vp}) {
    for (float m : vp->mu.values()) mu.push_back(m);
    for (float r : vp->rho.values()) sigma.push_back(softplus(static_cast<double>(r)));
  }
  WeightDensity w;
  w.layer = layer;
  w.count = mu.size();
  w.mu = histogram(mu, bins);
  w.sigma = histogram(sigma, bins);
  w.sigma_p10 = percentile(sigma, 10.0);
  w.sigma_p90 = percentile(sigma, 90.0);
  return w;
}

json to_json(const IouReport& r) {
  json per_class = json::object();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    per_class[class_label(c)] = json{{"iou", r.per_class[c]}, {"absent", static_cast<bool>(r.absent[c])}};
  }
  return json{{"per_class", per_class}, {"miou", r.miou}};
}

json to_json(const PrecisionCurve& c) {
  json classes = json::object();
  for (std::size_t k = 0; k < c.classes.size(); ++k) {
    const ClassCurve& cc = c.classes[k];
    classes[class_label(k)] = json{{"empty", cc.empty},
                                   {"thresholds", cc.thresholds},
                                   {"precision", cc.precision},
                                   {"support", cc.support}};
  }
  return json{{"kind", to_string(c.kind)},
              {"quantiles", c.quantiles},
              {"order", "ascending uncertainty, most certain first"},
              {"classes", classes}};
}

json to_json(const WeightDensity& w) {
  auto hist = [](const Histogram& h) {
    return json{{"lo", h.lo}, {"hi", h.hi}, {"counts", h.counts}, {"density", h.density}};
  };
  return json{{"layer", w.layer}, {"count", w.count},  {"mu", hist(w.mu)},
              {"sigma", hist(w.sigma)}, {"sigma_p10", w.sigma_p10}, {"sigma_p90", w.sigma_p90}};
}

void write_iou_csv(const IouReport& r, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "class,iou,absent\n";
  char buf[96];
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    std::snprintf(buf, sizeof(buf), ",%.6f,%d\n", r.per_class[c], r.absent[c] ? 1 : 0);
    out << class_label(c) << buf;
  }
  std::snprintf(buf, sizeof(buf), "mean,%.6f,0\n", r.miou);
  out << buf;
}

void write_curve_csv(const PrecisionCurve& c, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "# " << to_string(c.kind) << " uncertainty, ascending: quantile 1 is the most certain slice\n";
  out << "class,quantile,threshold,precision,support\n";
  char buf[128];
  for (std::size_t k = 0; k < c.classes.size(); ++k) {
    const ClassCurve& cc = c.classes[k];
    if (cc.empty) {
      out << class_label(k) << ",,,,0\n";
      continue;
    }
    for (std::size_t q = 0; q < cc.thresholds.size(); ++q) {
      std::snprintf(buf, sizeof(buf), ",%zu,%.9g,%.6f,%llu\n", q + 1, cc.thresholds[q], cc.precision[q],
                    static_cast<unsigned long long>(cc.support[q]));
      out << class_label(k) << buf;
    }
  }
}

void write_density_csv(const WeightDensity& w, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "quantity,bin,center,count,density\n";
  char buf[128];
  for (const auto& [name, h] : {std::pair<const char*, const Histogram*>{"mu", &w.mu}, {"sigma", &w.sigma}}) {
    for (std::size_t i = 0; i < h->counts.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%s,%zu,%.9g,%llu,%.9g\n", name, i, h->bin_center(i),
                    static_cast<unsigned long long>(h->counts[i]), h->density[i]);
      out << buf;
    }
  }
}

}  // namespace gridbayes
