#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "gridbayes/error.hpp"
#include "gridbayes/metrics.hpp"

using namespace gridbayes;
namespace fs = std::filesystem;

namespace {

constexpr std::uint8_t F = 0, O = 1, M = 2, U = 3;

struct Cells {
  std::vector<std::uint8_t> pred;
  LabelGrid labels;
  WeightGrid weights;
};

Cells make_cells(std::vector<std::uint8_t> pred, std::vector<std::uint8_t> labels, std::vector<float> weights) {
  Cells c;
  c.pred = std::move(pred);
  c.labels = LabelGrid(1, labels.size());
  c.labels.labels = std::move(labels);
  c.weights = WeightGrid(1, weights.size());
  c.weights.weights = std::move(weights);
  return c;
}

Cells random_cells(std::mt19937_64& gen, std::size_t n) {
  std::vector<std::uint8_t> p(n), l(n);
  std::vector<float> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    l[i] = static_cast<std::uint8_t>(gen() % kClassCount);
    p[i] = (gen() % 3 == 0) ? static_cast<std::uint8_t>(gen() % kClassCount) : l[i];
    w[i] = (gen() % 4 == 0) ? 0.0f : static_cast<float>((gen() % 100 + 1) / 100.0);
  }
  return make_cells(std::move(p), std::move(l), std::move(w));
}

// Brute force: for class c, sort that class's visible predictions by
// uncertainty, nearest-rank threshold, count everything <= threshold.
struct Slice {
  double threshold;
  double precision;
  std::uint64_t support;
};
std::vector<Slice> brute_curve(const Cells& cells, const std::vector<double>& unc, std::uint8_t cls, std::size_t q) {
  std::vector<std::pair<double, bool>> items;
  for (std::size_t i = 0; i < cells.pred.size(); ++i) {
    if (cells.weights.weights[i] > 0.0f && cells.pred[i] == cls)
      items.emplace_back(unc[i], cells.labels.labels[i] == cls);
  }
  std::vector<Slice> out;
  if (items.empty()) return out;
  std::vector<double> sorted;
  for (const auto& it : items) sorted.push_back(it.first);
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t k = 1; k <= q; ++k) {
    std::size_t rank = 1;
    while (rank * q < k * sorted.size()) ++rank;  // smallest rank with rank/n >= k/q
    const double t = sorted[rank - 1];
    std::uint64_t sup = 0, good = 0;
    for (const auto& it : items) {
      if (it.first <= t) {
        ++sup;
        good += it.second;
      }
    }
    out.push_back({t, static_cast<double>(good) / static_cast<double>(sup), sup});
  }
  return out;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

}  // namespace

TEST_CASE("confusion counts: worked example and exclusion") {
  const Cells c = make_cells({F, O, F}, {F, F, F}, {1, 1, 1});
  const ConfusionCounts k = confusion_counts(c.pred, c.labels, c.weights);
  CHECK(k.visible_cells == 3);
  CHECK(k.per_class[F].tp == 2);
  CHECK(k.per_class[F].fp == 0);
  CHECK(k.per_class[F].fn == 1);
  CHECK(k.per_class[O].tp == 0);
  CHECK(k.per_class[O].fp == 1);
  CHECK(k.per_class[O].fn == 0);
  const IouReport r = iou(k);
  CHECK(r.per_class[F] == doctest::Approx(2.0 / 3.0));
  CHECK(r.per_class[O] == 0.0);
  CHECK_FALSE(r.absent[O]);
  CHECK(r.absent[M]);
  CHECK(r.absent[U]);
  CHECK(r.miou == doctest::Approx((2.0 / 3.0) / 4.0));

  const Cells blind = make_cells({F, O, F}, {F, F, F}, {0, 0, 0});
  const ConfusionCounts z = confusion_counts(blind.pred, blind.labels, blind.weights);
  CHECK(z.visible_cells == 0);
  for (const ClassCounts& cc : z.per_class) CHECK(cc.tp + cc.fp + cc.fn == 0);

  const Cells wrong = make_cells({F, O}, {F, F, F}, {1, 1, 1});
  CHECK_THROWS_AS(confusion_counts(wrong.pred, wrong.labels, wrong.weights), ConfigError);
}

TEST_CASE("perfect prediction gives IoU 1") {
  const Cells c = make_cells({F, O, M, U, F}, {F, O, M, U, F}, {1, 0.5f, 0.2f, 1, 1});
  const IouReport r = iou(confusion_counts(c.pred, c.labels, c.weights));
  for (double v : r.per_class) CHECK(v == 1.0);
  CHECK(r.miou == 1.0);
}

TEST_CASE("property: IoU bounds, mIoU is the plain mean, order invariance, merge") {
  std::mt19937_64 gen(99);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + gen() % 300;
    Cells c = random_cells(gen, n);
    const ConfusionCounts k = confusion_counts(c.pred, c.labels, c.weights);
    std::uint64_t visible = 0;
    for (float w : c.weights.weights) visible += w > 0.0f;
    CHECK(k.visible_cells == visible);
    std::uint64_t tp = 0;
    for (const ClassCounts& cc : k.per_class) tp += cc.tp;
    std::uint64_t fp = 0;
    for (const ClassCounts& cc : k.per_class) fp += cc.fp;
    CHECK(tp + fp == visible);

    const IouReport r = iou(k);
    double sum = 0.0;
    for (double v : r.per_class) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      sum += v;
    }
    CHECK(r.miou == sum / static_cast<double>(r.per_class.size()));

    // shuffle cells
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    Cells s = c;
    for (std::size_t i = 0; i < n; ++i) {
      s.pred[i] = c.pred[perm[i]];
      s.labels.labels[i] = c.labels.labels[perm[i]];
      s.weights.weights[i] = c.weights.weights[perm[i]];
    }
    const ConfusionCounts ks = confusion_counts(s.pred, s.labels, s.weights);
    for (std::size_t cl = 0; cl < kClassCount; ++cl) {
      CHECK(ks.per_class[cl].tp == k.per_class[cl].tp);
      CHECK(ks.per_class[cl].fp == k.per_class[cl].fp);
      CHECK(ks.per_class[cl].fn == k.per_class[cl].fn);
    }

    // merging two halves equals counting the whole
    const std::size_t half = n / 2;
    const Cells a = make_cells({c.pred.begin(), c.pred.begin() + half},
                               {c.labels.labels.begin(), c.labels.labels.begin() + half},
                               {c.weights.weights.begin(), c.weights.weights.begin() + half});
    const Cells b = make_cells({c.pred.begin() + half, c.pred.end()},
                               {c.labels.labels.begin() + half, c.labels.labels.end()},
                               {c.weights.weights.begin() + half, c.weights.weights.end()});
    ConfusionCounts m = confusion_counts(a.pred, a.labels, a.weights);
    m.merge(confusion_counts(b.pred, b.labels, b.weights));
    CHECK(m.visible_cells == k.visible_cells);
    for (std::size_t cl = 0; cl < kClassCount; ++cl) CHECK(m.per_class[cl].fn == k.per_class[cl].fn);
  }
}

TEST_CASE("precision curve: trivial and degenerate cases") {
  SUBCASE("all correct") {
    const Cells c = make_cells({F, F, O, O, O}, {F, F, O, O, O}, {1, 1, 1, 1, 1});
    const PrecisionCurve pc =
        uncertainty_precision_curve(c.pred, std::vector<double>{0.1, 0.5, 0.2, 0.3, 0.9}, c.labels, c.weights,
                                    UncertaintyKind::kEpistemic);
    CHECK(pc.quantiles == 10);
    for (std::uint8_t cl : {F, O}) {
      REQUIRE_FALSE(pc.classes[cl].empty);
      for (double p : pc.classes[cl].precision) CHECK(p == 1.0);
    }
    CHECK(pc.classes[M].empty);
    CHECK(pc.classes[M].precision.empty());
  }
  SUBCASE("constant uncertainty: every quantile equals overall precision") {
    const Cells c = make_cells({F, F, F, F, F, F, F}, {F, O, F, F, U, F, F}, {1, 1, 1, 1, 1, 1, 1});
    const PrecisionCurve pc = uncertainty_precision_curve(c.pred, std::vector<double>(7, 0.4), c.labels,
                                                          c.weights, UncertaintyKind::kAleatoric);
    const ClassCurve& f = pc.classes[F];
    for (std::size_t q = 0; q < 10; ++q) {
      CHECK(f.thresholds[q] == 0.4);
      CHECK(f.precision[q] == doctest::Approx(5.0 / 7.0));
      CHECK(f.support[q] == 7);
    }
  }
  SUBCASE("errors confined to the top decile") {
    // 100 free predictions with distinct uncertainty; the 10 most uncertain
    // contain the only 6 mistakes
    std::vector<std::uint8_t> pred(100, F), lab(100, F);
    std::vector<double> unc(100);
    for (std::size_t i = 0; i < 100; ++i) unc[i] = 0.01 * static_cast<double>((i * 37) % 100);
    for (std::size_t i = 0; i < 100; ++i)
      if (unc[i] >= 0.905 && unc[i] < 0.965) lab[i] = O;
    const Cells c = make_cells(pred, lab, std::vector<float>(100, 1.0f));
    const PrecisionCurve pc = uncertainty_precision_curve(c.pred, unc, c.labels, c.weights, UncertaintyKind::kEpistemic);
    const ClassCurve& f = pc.classes[F];
    for (std::size_t q = 0; q < 9; ++q) {
      CHECK(f.precision[q] == 1.0);
      CHECK(f.support[q] == 10 * (q + 1));
    }
    CHECK(f.precision[9] == doctest::Approx(0.94));
    CHECK(f.support[9] == 100);
  }
  SUBCASE("invisible cells do not count; zero quantiles is an error") {
    const Cells c = make_cells({F, F}, {F, O}, {1, 0});
    const PrecisionCurve pc = uncertainty_precision_curve(c.pred, std::vector<double>{0.2, 0.1}, c.labels, c.weights,
                                                          UncertaintyKind::kEpistemic);
    CHECK(pc.classes[F].support.back() == 1);
    CHECK(pc.classes[F].precision.back() == 1.0);
    CHECK_THROWS_AS(uncertainty_precision_curve(c.pred, std::vector<double>{0.2, 0.1}, c.labels, c.weights,
                                                UncertaintyKind::kEpistemic, 0),
                    ConfigError);
  }
}

TEST_CASE("property: precision curve matches a brute-force oracle") {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 1 + gen() % 400;
    const Cells c = random_cells(gen, n);
    std::vector<double> unc(n);
    const bool coarse = t % 3 == 0;  // many ties
    for (double& v : unc) v = coarse ? std::floor(u(gen) * 5.0) / 5.0 : u(gen);
    const std::size_t q = 1 + gen() % 12;
    const PrecisionCurve pc = uncertainty_precision_curve(c.pred, unc, c.labels, c.weights, UncertaintyKind::kEpistemic, q);
    REQUIRE(pc.classes.size() == kClassCount);
    for (std::uint8_t cl = 0; cl < kClassCount; ++cl) {
      const std::vector<Slice> want = brute_curve(c, unc, cl, q);
      const ClassCurve& got = pc.classes[cl];
      REQUIRE(got.empty == want.empty());
      if (want.empty()) continue;
      REQUIRE(got.thresholds.size() == q);
      for (std::size_t k = 0; k < q; ++k) {
        CHECK(got.thresholds[k] == want[k].threshold);
        CHECK(got.support[k] == want[k].support);
        CHECK(got.precision[k] == doctest::Approx(want[k].precision).epsilon(1e-12));
        CHECK(got.precision[k] >= 0.0);
        CHECK(got.precision[k] <= 1.0);
        if (k > 0) {
          CHECK(got.thresholds[k] >= got.thresholds[k - 1]);
          CHECK(got.support[k] >= got.support[k - 1]);
        }
      }
    }
  }
}

TEST_CASE("accumulating scenes equals one concatenated pass") {
  std::mt19937_64 gen(17);
  const Cells a = random_cells(gen, 120), b = random_cells(gen, 80);
  std::vector<double> ua(120), ub(80);
  for (double& v : ua) v = static_cast<double>(gen() % 1000) / 1000.0;
  for (double& v : ub) v = static_cast<double>(gen() % 1000) / 1000.0;
  PrecisionAccumulator acc;
  acc.add(a.pred, ua, a.labels, a.weights);
  acc.add(b.pred, ub, b.labels, b.weights);

  std::vector<std::uint8_t> p = a.pred, l = a.labels.labels;
  std::vector<float> w = a.weights.weights;
  std::vector<double> u = ua;
  p.insert(p.end(), b.pred.begin(), b.pred.end());
  l.insert(l.end(), b.labels.labels.begin(), b.labels.labels.end());
  w.insert(w.end(), b.weights.weights.begin(), b.weights.weights.end());
  u.insert(u.end(), ub.begin(), ub.end());
  const Cells all = make_cells(p, l, w);
  const PrecisionCurve one = uncertainty_precision_curve(all.pred, u, all.labels, all.weights, UncertaintyKind::kAleatoric);
  const PrecisionCurve two = acc.curve(UncertaintyKind::kAleatoric);
  CHECK(to_json(one) == to_json(two));
}

TEST_CASE("spearman") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  CHECK(spearman(x, std::vector<double>{2, 4, 6, 8, 100}) == doctest::Approx(1.0));
  CHECK(spearman(x, std::vector<double>{5, 4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(spearman(x, std::vector<double>{3, 3, 3, 3, 3}) == 0.0);
  // ties: ranks of b are {1, 2.5, 2.5, 4}; Pearson of (1,2,3,4) and that
  const double rb[] = {1, 2.5, 2.5, 4}, ra[] = {1, 2, 3, 4};
  double ma = 2.5, mb = 2.5, sab = 0, saa = 0, sbb = 0;
  for (int i = 0; i < 4; ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  CHECK(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{0.1, 0.5, 0.5, 0.9}) ==
        doctest::Approx(sab / std::sqrt(saa * sbb)));
  CHECK_THROWS_AS(spearman(x, std::vector<double>{1, 2}), ConfigError);
}

TEST_CASE("histogram and percentile") {
  const std::vector<double> v{0.0, 0.1, 0.2, 0.25, 0.9, 1.0};
  const Histogram h = histogram(v, 4);
  CHECK(h.lo == 0.0);
  CHECK(h.hi == 1.0);
  CHECK(h.counts == std::vector<std::uint64_t>{3, 1, 0, 2});
  double area = 0.0;
  for (double d : h.density) area += d * (h.hi - h.lo) / 4.0;
  CHECK(area == doctest::Approx(1.0));
  CHECK(h.bin_center(0) == doctest::Approx(0.125));

  const Histogram flat = histogram(std::vector<double>(10, 0.5), 64);
  std::size_t nonzero = 0;
  for (std::uint64_t c : flat.counts) nonzero += c > 0;
  CHECK(nonzero == 1);
  CHECK(std::accumulate(flat.counts.begin(), flat.counts.end(), std::uint64_t{0}) == 10);
  CHECK_THROWS_AS(histogram(std::vector<double>{}, 4), DataError);

  std::vector<double> ten(10);
  std::iota(ten.begin(), ten.end(), 1.0);
  std::shuffle(ten.begin(), ten.end(), std::mt19937_64(1));
  CHECK(percentile(ten, 10) == 1.0);
  CHECK(percentile(ten, 11) == 2.0);
  CHECK(percentile(ten, 90) == 9.0);
  CHECK(percentile(ten, 100) == 10.0);
  CHECK(percentile(ten, 50) == 5.0);
  CHECK_THROWS_AS(percentile(ten, 0), ConfigError);
  CHECK_THROWS_AS(percentile({}, 50), DataError);
  // exact ranks for every q in 1..100 on a 20-item set
  std::vector<double> twenty(20);
  std::iota(twenty.begin(), twenty.end(), 1.0);
  for (int q = 1; q <= 100; ++q) CHECK(percentile(twenty, q) == static_cast<double>((q * 20 + 99) / 100));
}

TEST_CASE("weight density of a freshly initialized head") {
  RngStream rng(3);
  const auto net = Network<float>::build(NetworkConfig{.variant = Variant::kProbabilistic}, rng);
  const WeightDensity d = weight_density_stats(net);
  CHECK(d.layer == "head");
  const ConvLayer<float>& head = net.head();
  CHECK(d.count == head.out_channels * head.in_channels * 9 + head.out_channels);
  CHECK(std::accumulate(d.mu.counts.begin(), d.mu.counts.end(), std::uint64_t{0}) == d.count);
  CHECK(std::accumulate(d.sigma.counts.begin(), d.sigma.counts.end(), std::uint64_t{0}) == d.count);
  std::size_t bins = 0;
  std::size_t hot = 0;
  for (std::size_t i = 0; i < d.sigma.counts.size(); ++i)
    if (d.sigma.counts[i] > 0) {
      ++bins;
      hot = i;
    }
  CHECK(bins == 1);
  CHECK(d.sigma.bin_center(hot) == doctest::Approx(std::log1p(std::exp(-5.0))).epsilon(1e-3));
  CHECK(d.sigma_p10 == d.sigma_p90);
  CHECK(d.sigma_p10 == doctest::Approx(0.0067153).epsilon(1e-4));

  RngStream r2(3);
  const auto det = Network<float>::build(NetworkConfig{}, r2);
  CHECK_THROWS_AS(weight_density_stats(det), ConfigError);
  CHECK_THROWS_AS(weight_density_stats(net, "nope"), ConfigError);
  RngStream r3(3);
  const auto hyb = Network<float>::build(NetworkConfig{.variant = Variant::kHybrid}, r3);
  CHECK(weight_density_stats(hyb).count == d.count);
  CHECK_THROWS_AS(weight_density_stats(hyb, "aspp0.d1"), ConfigError);
}

TEST_CASE("CSV writers") {
  const fs::path dir = fs::temp_directory_path() / "gridbayes_test_metrics_csv";
  fs::create_directories(dir);
  const Cells c = make_cells({F, O, F}, {F, F, F}, {1, 1, 1});
  const IouReport r = iou(confusion_counts(c.pred, c.labels, c.weights));
  write_iou_csv(r, dir / "iou.csv");
  const auto iou_lines = read_lines(dir / "iou.csv");
  CHECK(iou_lines[0] == "class,iou,absent");
  CHECK(iou_lines.size() == kClassCount + 2);  // header, classes, mean
  const PrecisionCurve pc = uncertainty_precision_curve(c.pred, std::vector<double>{0.1, 0.2, 0.3}, c.labels,
                                                        c.weights, UncertaintyKind::kEpistemic);
  write_curve_csv(pc, dir / "curve.csv");
  const auto curve = read_lines(dir / "curve.csv");
  CHECK(curve[0].rfind("# epistemic", 0) == 0);
  CHECK(curve[1] == "class,quantile,threshold,precision,support");
  fs::remove_all(dir);
}
