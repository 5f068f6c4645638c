#include "gridbayes/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>

#include "gridbayes/error.hpp"
#include "gridbayes/parallel.hpp"

namespace gridbayes {

using nlohmann::json;

std::string to_string(KlWeighting w) {
  return w == KlWeighting::kUniform ? "uniform" : "geometric";
}

KlWeighting parse_kl_weighting(const std::string& name) {
  if (name == "uniform") return KlWeighting::kUniform;
  if (name == "geometric") return KlWeighting::kGeometric;
  throw ConfigError("unknown KL weighting '" + name + "' (expected uniform or geometric)");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
  if (samples_per_step == 0) throw ConfigError("samples per step must be >= 1");
  if (!(prior_gamma > 0.0)) throw ConfigError("prior variance must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
}

json to_json(const TrainConfig& c) {
  return json{{"variant", to_string(c.variant)},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"seed", c.seed},
              {"kl_weighting", to_string(c.kl_weighting)},
              {"samples_per_step", c.samples_per_step},
              {"prior_gamma", c.prior_gamma},
              {"dropout_rate", c.dropout_rate}};
}

TrainConfig train_config_from_json(const json& j) {
  try {
    TrainConfig c;
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.lr = j.at("lr").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.kl_weighting = parse_kl_weighting(j.at("kl_weighting").get<std::string>());
    c.samples_per_step = j.at("samples_per_step").get<std::size_t>();
    c.prior_gamma = j.at("prior_gamma").get<double>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed train config: ") + e.what());
  }
}

NetworkConfig network_config_for(const TrainConfig& cfg, const GridSpec& grid) {
  NetworkConfig n;
  n.variant = cfg.variant;
  n.rows = grid.rows;
  n.cols = grid.cols;
  n.input_features = kInputFeatures;
  n.classes = kClassCount;
  n.prior.gamma = cfg.prior_gamma;
  n.dropout_rate = cfg.dropout_rate;
  n.validate();
  return n;
}

double elbo_loss(double nll, double kl_total, std::size_t n_batches) {
  if (n_batches == 0) throw ConfigError("elbo_loss: n_batches must be >= 1");
  return kl_total / static_cast<double>(n_batches) + nll;
}

double kl_batch_weight(KlWeighting w, std::size_t index, std::size_t n_batches) {
  if (n_batches == 0 || index >= n_batches) {
    throw ConfigError("kl_batch_weight: batch " + std::to_string(index) + " of " +
                      std::to_string(n_batches));
  }
  if (w == KlWeighting::kUniform) return 1.0 / static_cast<double>(n_batches);
  // 2^(M-i) / (2^M - 1) with 1-based i, evaluated as 2^-i / (1 - 2^-M)
  const double i = static_cast<double>(index + 1), m = static_cast<double>(n_batches);
  return std::exp2(-i) / (1.0 - std::exp2(-m));
}

Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ConfigError("make_batch: empty batch");
  const Sample& first = samples[indices[0]];
  const std::size_t rows = first.features.rows, cols = first.features.cols;
  const std::size_t cells = rows * cols;
  Batch b{Tensor<float>(Shape{indices.size(), kInputFeatures, rows, cols}), {}, {}};
  b.labels.reserve(indices.size() * cells);
  b.weights.reserve(indices.size() * cells);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Sample& s = samples[indices[k]];
    if (s.features.rows != rows || s.features.cols != cols || s.labels.labels.size() != cells ||
        s.weights.weights.size() != cells) {
      throw DataError("make_batch: scene " + s.id + " does not match the " +
                      std::to_string(rows) + "x" + std::to_string(cols) + " grid");
    }
    std::copy(s.features.values.begin(), s.features.values.end(),
              b.features.data() + k * kInputFeatures * cells);
    b.labels.insert(b.labels.end(), s.labels.labels.begin(), s.labels.labels.end());
    b.weights.insert(b.weights.end(), s.weights.weights.begin(), s.weights.weights.end());
  }
  return b;
}

Checkpoint train(std::span<const Sample> train_set, const GridSpec& grid, const TrainConfig& cfg,
                 const TrainHooks& hooks) {
  cfg.validate();
  grid.validate();
  tune_allocator();
  if (train_set.empty()) throw DataError("training set is empty");
  double visible = 0.0;
  for (const Sample& s : train_set) {
    for (float w : s.weights.weights) visible += w;
  }
  if (!(visible > 0.0)) {
    throw DataError("training set has no observable cells: every label sits under weight 0");
  }

  const NetworkConfig ncfg = network_config_for(cfg, grid);
  const RngStream root(cfg.seed);
  RngStream init_rng = root.substream(0);
  RngStream rng = root.substream(1);
  Checkpoint ckpt{ncfg, cfg, Network<float>::build(ncfg, init_rng), std::nullopt, {}};
  Network<float>& net = ckpt.network;

  AdamHyper hyper;
  hyper.lr = cfg.lr;
  const std::vector<ParamRef<float>> params = net.parameters();
  AdamState<float> adam = make_adam_state(params, hyper);

  const std::size_t n = train_set.size();
  const std::size_t n_batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Tensor<float>> summed;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double loss_sum = 0.0, kl_sum = 0.0, nll_sum = 0.0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
      const Batch batch = make_batch(train_set, std::span(order).subspan(lo, hi - lo));
      auto fail = [&](const std::string& term) {
        throw NumericError("non-finite " + term + " at epoch " + std::to_string(epoch + 1) +
                           ", batch " + std::to_string(b + 1) + " of " +
                           std::to_string(n_batches));
      };

      Graph<float> g;
      const Var x = g.constant(batch.features);
      std::vector<GraphPass<float>> passes;
      Var nll;
      for (std::size_t s = 0; s < cfg.samples_per_step; ++s) {
        try {
          passes.push_back(net.forward_graph(g, x, WeightMode::kSample, BnMode::kTrain, rng, true));
        } catch (const NumericError& e) {
          fail(std::string("forward pass (") + e.what() + ")");
        }
        const Var term = weighted_nll<float>(g, passes.back().probs, batch.labels, batch.weights);
        nll = nll.valid() ? add(g, nll, term) : term;
      }
      if (cfg.samples_per_step > 1) nll = scale(g, nll, 1.0f / static_cast<float>(cfg.samples_per_step));
      const double nll_value = g.value(nll)[0];
      if (!std::isfinite(nll_value)) fail("nll term");

      Var loss = nll;
      double kl_value = 0.0;
      const double kl_weight = kl_batch_weight(cfg.kl_weighting, b, n_batches);
      if (passes.front().kl.valid()) {
        kl_value = g.value(passes.front().kl)[0];
        if (!std::isfinite(kl_value)) fail("kl term");
        loss = add(g, scale(g, passes.front().kl, static_cast<float>(kl_weight)), nll);
      }
      const double step_loss = kl_weight * kl_value + nll_value;
      if (!std::isfinite(step_loss) || !std::isfinite(g.value(loss)[0])) fail("loss");

      g.backward(loss);
      std::vector<const Tensor<float>*> grads;
      if (passes.size() == 1) {
        for (Var p : passes.front().params) grads.push_back(&g.grad(p));
      } else {
        summed.clear();
        for (std::size_t i = 0; i < params.size(); ++i) {
          summed.push_back(g.grad(passes[0].params[i]));
          for (std::size_t s = 1; s < passes.size(); ++s) {
            const Tensor<float>& gi = g.grad(passes[s].params[i]);
            for (std::size_t k = 0; k < gi.size(); ++k) summed.back()[k] += gi[k];
          }
        }
        for (const Tensor<float>& t : summed) grads.push_back(&t);
      }
      try {
        adam_step(params, grads, adam);
      } catch (const NumericError& e) {
        fail(std::string("gradient (") + e.what() + ")");
      }

      loss_sum += step_loss;
      kl_sum += kl_value;
      nll_sum += nll_value;
      if (hooks.on_step) hooks.on_step({epoch + 1, b + 1, n_batches, step_loss});
    }
    const double nb = static_cast<double>(n_batches);
    EpochRecord rec{epoch + 1, loss_sum / nb, kl_sum / nb, nll_sum / nb, n_batches};
    ckpt.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  ckpt.optimizer = std::move(adam);
  return ckpt;
}

namespace {

constexpr char kMagic[4] = {'B', 'N', 'G', 'R'};
constexpr std::uint8_t kDtypeF32 = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void tensor(const std::string& name, const Tensor<float>& t) {
    le<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    le<std::uint8_t>(kDtypeF32);
    le<std::uint8_t>(static_cast<std::uint8_t>(t.shape().rank()));
    for (std::size_t d : t.shape().dims()) le<std::uint64_t>(d);
    for (float f : t.values()) {
      std::uint32_t u;
      std::memcpy(&u, &f, sizeof(u));
      le<std::uint32_t>(u);
    }
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : buf(b) {}
  void need(std::size_t n, const char* what) {
    if (buf.size() - pos < n) {
      throw CheckpointError(CheckpointErrorKind::kCorrupt,
                            std::string("corrupt checkpoint: truncated while reading ") + what);
    }
  }
  template <typename U>
  U le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(U(buf[pos + i]) << (8 * i));
    pos += sizeof(U);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  std::span<const std::uint8_t> buf;
  std::size_t pos = 0;
};

struct RawTensor {
  Shape shape;
  std::vector<float> values;
};

json history_json(const std::vector<EpochRecord>& history) {
  json h = json::array();
  for (const EpochRecord& r : history) {
    h.push_back(json{{"epoch", r.epoch}, {"loss", r.loss}, {"kl_total", r.kl_total},
                     {"nll", r.nll}, {"n_batches", r.n_batches}});
  }
  return h;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  json meta{{"network", to_json(ckpt.network_config)},
            {"train", to_json(ckpt.train_config)},
            {"history", history_json(ckpt.history)},
            {"optimizer", nullptr}};
  if (ckpt.optimizer) {
    const AdamHyper& h = ckpt.optimizer->hyper;
    meta["optimizer"] = json{{"step", ckpt.optimizer->step}, {"lr", h.lr},
                             {"beta1", h.beta1}, {"beta2", h.beta2}, {"eps", h.eps}};
  }
  const std::string blob = meta.dump();

  std::vector<std::pair<std::string, const Tensor<float>*>> tensors = ckpt.network.parameters();
  const std::size_t n_params = tensors.size();
  for (const auto& b : ckpt.network.buffers()) tensors.push_back(b);
  if (ckpt.optimizer) {
    if (ckpt.optimizer->first_moment.size() != n_params ||
        ckpt.optimizer->second_moment.size() != n_params) {
      throw ConfigError("optimizer state does not match the network parameters");
    }
    for (std::size_t i = 0; i < n_params; ++i) {
      tensors.emplace_back("adam.m." + tensors[i].first, &ckpt.optimizer->first_moment[i]);
    }
    for (std::size_t i = 0; i < n_params; ++i) {
      tensors.emplace_back("adam.v." + tensors[i].first, &ckpt.optimizer->second_moment[i]);
    }
  }

  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint64_t>(blob.size());
  w.bytes(blob.data(), blob.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) w.tensor(name, *t);
  return std::move(w.out);
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.str(4, "magic") != std::string(kMagic, 4)) {
    throw CheckpointError(CheckpointErrorKind::kCorrupt, "corrupt checkpoint: bad magic bytes");
  }
  const std::uint32_t version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrorKind::kVersionMismatch,
                          "checkpoint version " + std::to_string(version) +
                              " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t blob_len = r.le<std::uint64_t>("config length");
  if (blob_len > bytes.size()) {
    throw CheckpointError(CheckpointErrorKind::kCorrupt, "corrupt checkpoint: config length out of range");
  }
  json meta;
  try {
    meta = json::parse(r.str(static_cast<std::size_t>(blob_len), "config"));
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointErrorKind::kCorrupt,
                          std::string("corrupt checkpoint: config is not JSON: ") + e.what());
  }

  std::map<std::string, RawTensor> table;
  const std::uint32_t count = r.le<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.le<std::uint32_t>("tensor name length");
    std::string name = r.str(name_len, "tensor name");
    if (r.le<std::uint8_t>("dtype") != kDtypeF32) {
      throw CheckpointError(CheckpointErrorKind::kCorrupt, "corrupt checkpoint: tensor " + name +
                                                               " has an unknown dtype");
    }
    const std::uint8_t rank = r.le<std::uint8_t>("rank");
    if (rank > 4) {
      throw CheckpointError(CheckpointErrorKind::kCorrupt,
                            "corrupt checkpoint: tensor " + name + " has rank " + std::to_string(rank));
    }
    std::vector<std::size_t> dims;
    std::uint64_t elements = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::uint64_t dim = r.le<std::uint64_t>("dims");
      if (dim != 0 && elements > bytes.size() / dim) {
        throw CheckpointError(CheckpointErrorKind::kCorrupt, "corrupt checkpoint: tensor " + name +
                                                                 " is larger than the file");
      }
      elements *= dim;
      dims.push_back(static_cast<std::size_t>(dim));
    }
    r.need(static_cast<std::size_t>(elements) * 4, "tensor payload");
    RawTensor t{Shape(dims), std::vector<float>(static_cast<std::size_t>(elements))};
    for (float& f : t.values) {
      const std::uint32_t u = r.le<std::uint32_t>("tensor payload");
      std::memcpy(&f, &u, sizeof(f));
    }
    if (!table.emplace(name, std::move(t)).second) {
      throw CheckpointError(CheckpointErrorKind::kCorrupt, "corrupt checkpoint: duplicate tensor " + name);
    }
  }
  if (r.pos != bytes.size()) {
    throw CheckpointError(CheckpointErrorKind::kCorrupt, "corrupt checkpoint: trailing bytes");
  }

  NetworkConfig ncfg;
  TrainConfig tcfg;
  std::vector<EpochRecord> history;
  std::optional<AdamState<float>> optimizer;
  try {
    ncfg = network_config_from_json(meta.at("network"));
    tcfg = train_config_from_json(meta.at("train"));
    for (const json& h : meta.at("history")) {
      history.push_back({h.at("epoch").get<std::size_t>(), h.at("loss").get<double>(),
                         h.at("kl_total").get<double>(), h.at("nll").get<double>(),
                         h.at("n_batches").get<std::size_t>()});
    }
    if (!meta.at("optimizer").is_null()) {
      const json& o = meta.at("optimizer");
      AdamState<float> st;
      st.step = o.at("step").get<std::uint64_t>();
      st.hyper = {o.at("lr").get<double>(), o.at("beta1").get<double>(),
                  o.at("beta2").get<double>(), o.at("eps").get<double>()};
      optimizer = std::move(st);
    }
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointErrorKind::kCorrupt,
                          std::string("corrupt checkpoint: bad config: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointErrorKind::kCorrupt,
                          std::string("corrupt checkpoint: bad config: ") + e.what());
  }

  RngStream unused(0);
  Checkpoint ckpt{ncfg, tcfg, Network<float>::build(ncfg, unused), std::move(optimizer),
                  std::move(history)};
  std::size_t consumed = 0;
  auto take = [&](const std::string& name, Tensor<float>& dst) {
    auto it = table.find(name);
    if (it == table.end()) {
      throw CheckpointError(CheckpointErrorKind::kShapeMismatch,
                            "checkpoint is missing tensor " + name + " required by its config");
    }
    if (it->second.shape != dst.shape()) {
      throw CheckpointError(CheckpointErrorKind::kShapeMismatch,
                            "checkpoint tensor " + name + " has shape " + it->second.shape.to_string() +
                                ", config implies " + dst.shape().to_string());
    }
    dst = Tensor<float>(dst.shape(), std::move(it->second.values));
    ++consumed;
  };
  const std::vector<ParamRef<float>> params = ckpt.network.parameters();
  for (const ParamRef<float>& p : params) take(p.name, *p.tensor);
  for (const ParamRef<float>& b : ckpt.network.buffers()) take(b.name, *b.tensor);
  if (ckpt.optimizer) {
    for (const ParamRef<float>& p : params) {
      ckpt.optimizer->first_moment.emplace_back(p.tensor->shape());
      take("adam.m." + p.name, ckpt.optimizer->first_moment.back());
    }
    for (const ParamRef<float>& p : params) {
      ckpt.optimizer->second_moment.emplace_back(p.tensor->shape());
      take("adam.v." + p.name, ckpt.optimizer->second_moment.back());
    }
  }
  if (consumed != table.size()) {
    throw CheckpointError(CheckpointErrorKind::kShapeMismatch,
                          "checkpoint holds " + std::to_string(table.size()) +
                              " tensors, its config accounts for " + std::to_string(consumed));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace gridbayes
