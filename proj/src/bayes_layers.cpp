#include "gridbayes/bayes_layers.hpp"

#include <cmath>
#include <utility>

#include "gridbayes/error.hpp"

namespace gridbayes {

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::kDeterministic: return "deterministic";
    case Variant::kProbabilistic: return "probabilistic";
    case Variant::kHybrid: return "hybrid";
    case Variant::kMcDropout: return "mc-dropout";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  if (name == "deterministic") return Variant::kDeterministic;
  if (name == "probabilistic") return Variant::kProbabilistic;
  if (name == "hybrid") return Variant::kHybrid;
  if (name == "mc-dropout") return Variant::kMcDropout;
  throw ConfigError("unknown network variant '" + std::string(name) +
                    "' (expected deterministic, probabilistic, hybrid or mc-dropout)");
}

void NetworkConfig::validate() const {
  if (rows == 0 || cols == 0) throw ConfigError("network grid dims must be positive");
  if (input_features == 0) throw ConfigError("network needs at least one input feature");
  if (classes < 2) throw ConfigError("network needs at least two classes");
  if (aspp_layers == 0) throw ConfigError("network needs at least one ASPP layer");
  if (branch_channels == 0) throw ConfigError("ASPP branch channels must be positive");
  if (dilations.empty()) throw ConfigError("ASPP dilation set is empty");
  for (std::size_t d : dilations) {
    if (d == 0) throw ConfigError("ASPP dilation must be >= 1");
  }
  if (head_kernel == 0 || head_kernel % 2 == 0) {
    throw ConfigError("head kernel size must be odd, got " + std::to_string(head_kernel));
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1)");
  }
  if (!(prior.gamma > 0.0)) throw ConfigError("prior variance gamma must be positive");
}

nlohmann::json to_json(const NetworkConfig& cfg) {
  return nlohmann::json{
      {"variant", to_string(cfg.variant)},
      {"rows", cfg.rows},
      {"cols", cfg.cols},
      {"input_features", cfg.input_features},
      {"classes", cfg.classes},
      {"aspp_layers", cfg.aspp_layers},
      {"branch_channels", cfg.branch_channels},
      {"dilations", cfg.dilations},
      {"dropout_rate", cfg.dropout_rate},
      {"head_kernel", cfg.head_kernel},
      {"prior_gamma", cfg.prior.gamma},
      {"init_rho", cfg.init_rho},
  };
}

NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig cfg;
  try {
    cfg.variant = parse_variant(j.at("variant").get<std::string>());
    cfg.rows = j.at("rows").get<std::size_t>();
    cfg.cols = j.at("cols").get<std::size_t>();
    cfg.input_features = j.at("input_features").get<std::size_t>();
    cfg.classes = j.at("classes").get<std::size_t>();
    cfg.aspp_layers = j.at("aspp_layers").get<std::size_t>();
    cfg.branch_channels = j.at("branch_channels").get<std::size_t>();
    cfg.dilations = j.at("dilations").get<std::vector<std::size_t>>();
    cfg.dropout_rate = j.at("dropout_rate").get<double>();
    cfg.head_kernel = j.at("head_kernel").get<std::size_t>();
    cfg.prior.gamma = j.at("prior_gamma").get<double>();
    cfg.init_rho = j.at("init_rho").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed network config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

template <typename T>
T softplus(T x) {
  // log(1 + e^x) without overflow for large x
  return x > T(20) ? x : std::log1p(std::exp(x));
}

template <typename T>
static T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
Tensor<T> VariationalParams<T>::sigma() const {
  Tensor<T> out = rho;
  for (T& v : out.values()) v = softplus(v);
  return out;
}

template <typename T>
Tensor<T> reparameterized_weights(const VariationalParams<T>& vp) {
  if (vp.mu.shape() != vp.rho.shape() || vp.mu.shape() != vp.epsilon.shape()) {
    throw ConfigError("variational params: mu, rho and epsilon shapes differ");
  }
  Tensor<T> w = vp.mu;
  for (std::size_t i = 0; i < w.size(); ++i) w[i] += softplus(vp.rho[i]) * vp.epsilon[i];
  return w;
}

template <typename T>
Tensor<T> sample_weights(VariationalParams<T>& vp, RngStream& rng) {
  vp.epsilon = Tensor<T>(vp.mu.shape());
  for (T& e : vp.epsilon.values()) e = static_cast<T>(rng.normal());
  return reparameterized_weights(vp);
}

template <typename T>
double kl_to_prior(const VariationalParams<T>& vp, const PriorConfig& prior) {
  if (!(prior.gamma > 0.0)) throw ConfigError("prior variance gamma must be positive");
  const double half_log_gamma = 0.5 * std::log(prior.gamma);
  double total = 0.0;
  for (std::size_t i = 0; i < vp.mu.size(); ++i) {
    const double sigma = softplus(static_cast<double>(vp.rho[i]));
    const double mu = vp.mu[i];
    total += half_log_gamma - std::log(sigma) +
             (sigma * sigma + mu * mu) / (2.0 * prior.gamma) - 0.5;
  }
  return total;
}

template <typename T>
Var reparameterize(Graph<T>& g, Var mu, Var rho, const Tensor<T>& epsilon) {
  const Tensor<T>& m = g.value(mu);
  const Tensor<T>& r = g.value(rho);
  if (m.shape() != r.shape() || m.shape() != epsilon.shape()) {
    throw ConfigError("reparameterize: mu " + m.shape().to_string() + ", rho " +
                      r.shape().to_string() + ", epsilon " + epsilon.shape().to_string());
  }
  Tensor<T> w = m;
  for (std::size_t i = 0; i < w.size(); ++i) w[i] += softplus(r[i]) * epsilon[i];
  const Var inputs[] = {mu, rho};
  return g.record(std::move(w), inputs,
                  [mu, rho, epsilon](Graph<T>& gr, const Tensor<T>& go) {
    if (gr.requires_grad(mu)) {
      Tensor<T>& acc = gr.grad_accumulator(mu);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += go[i];
    }
    if (gr.requires_grad(rho)) {
      const Tensor<T>& rv = gr.value(rho);
      Tensor<T>& acc = gr.grad_accumulator(rho);
      for (std::size_t i = 0; i < acc.size(); ++i) {
        acc[i] += go[i] * epsilon[i] * sigmoid(rv[i]);
      }
    }
  });
}

template <typename T>
Var kl_to_prior(Graph<T>& g, Var mu, Var rho, const PriorConfig& prior) {
  if (!(prior.gamma > 0.0)) throw ConfigError("prior variance gamma must be positive");
  const Tensor<T>& m = g.value(mu);
  const Tensor<T>& r = g.value(rho);
  if (m.shape() != r.shape()) throw ConfigError("kl_to_prior: mu and rho shapes differ");
  const double gamma = prior.gamma;
  const double half_log_gamma = 0.5 * std::log(gamma);
  double total = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double sigma = softplus(static_cast<double>(r[i]));
    total += half_log_gamma - std::log(sigma) +
             (sigma * sigma + double(m[i]) * double(m[i])) / (2.0 * gamma) - 0.5;
  }
  const Var inputs[] = {mu, rho};
  return g.record(Tensor<T>::scalar(static_cast<T>(total)), inputs,
                  [mu, rho, gamma](Graph<T>& gr, const Tensor<T>& go) {
    const T scale_out = go[0];
    if (gr.requires_grad(mu)) {
      const Tensor<T>& mv = gr.value(mu);
      Tensor<T>& acc = gr.grad_accumulator(mu);
      for (std::size_t i = 0; i < acc.size(); ++i) {
        acc[i] += scale_out * static_cast<T>(mv[i] / gamma);
      }
    }
    if (gr.requires_grad(rho)) {
      const Tensor<T>& rv = gr.value(rho);
      Tensor<T>& acc = gr.grad_accumulator(rho);
      for (std::size_t i = 0; i < acc.size(); ++i) {
        const double r = rv[i];
        const double sigma = softplus(r);
        const double d_sigma = -1.0 / sigma + sigma / gamma;
        acc[i] += scale_out * static_cast<T>(d_sigma * sigmoid(r));
      }
    }
  });
}

template <typename T>
Tensor<T> mc_dropout_mask(const Shape& shape, double rate, RngStream& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  Tensor<T> mask(shape, T(1));
  if (rate == 0.0) return mask;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (T& v : mask.values()) v = rng.uniform() < rate ? T(0) : keep_scale;
  return mask;
}

template <typename T>
std::size_t ConvLayer<T>::parameter_count() const {
  const std::size_t point = weight_count() + out_channels;
  return kind == ParamKind::kVariational ? 2 * point : point;
}

namespace {

template <typename T>
Tensor<T> uniform_init(const Shape& shape, double bound, RngStream& rng) {
  Tensor<T> t(shape);
  for (T& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

template <typename T>
Network<T> Network<T>::build(const NetworkConfig& cfg, RngStream& rng) {
  cfg.validate();
  Network net;
  net.cfg_ = cfg;
  net.bn_scale_ = Tensor<T>(Shape{cfg.input_features}, T(1));
  net.bn_shift_ = Tensor<T>(Shape{cfg.input_features}, T(0));
  net.bn_stats_ = BatchNormStats<T>::init(cfg.input_features);

  auto make_conv = [&](std::string name, std::size_t cin, std::size_t cout,
                       std::size_t kernel, std::size_t dilation, ParamKind kind) {
    ConvLayer<T> layer;
    layer.name = std::move(name);
    layer.in_channels = cin;
    layer.out_channels = cout;
    layer.kernel = kernel;
    layer.dilation = dilation;
    layer.kind = kind;
    const Shape wshape{cout, cin, kernel, kernel};
    const Shape bshape{cout};
    const double fan_in = double(cin * kernel * kernel);
    const double fan_out = double(cout * kernel * kernel);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor<T> w = uniform_init<T>(wshape, bound, rng);
    if (kind == ParamKind::kPoint) {
      layer.weight = std::move(w);
      layer.bias = Tensor<T>(bshape, T(0));
    } else {
      const T rho0 = static_cast<T>(cfg.init_rho);
      layer.weight_vp = {std::move(w), Tensor<T>(wshape, rho0), Tensor<T>(wshape, T(0))};
      layer.bias_vp = {Tensor<T>(bshape, T(0)), Tensor<T>(bshape, rho0),
                       Tensor<T>(bshape, T(0))};
    }
    return layer;
  };

  const ParamKind trunk_kind = cfg.variant == Variant::kProbabilistic
                                   ? ParamKind::kVariational
                                   : ParamKind::kPoint;
  const ParamKind head_kind = (cfg.variant == Variant::kProbabilistic ||
                               cfg.variant == Variant::kHybrid)
                                  ? ParamKind::kVariational
                                  : ParamKind::kPoint;
  std::size_t in_channels = cfg.input_features;
  for (std::size_t block = 0; block < cfg.aspp_layers; ++block) {
    for (std::size_t b = 0; b < cfg.dilations.size(); ++b) {
      net.convs_.push_back(make_conv(
          "aspp" + std::to_string(block) + ".d" + std::to_string(cfg.dilations[b]),
          in_channels, cfg.branch_channels, 3, cfg.dilations[b], trunk_kind));
    }
    in_channels = cfg.aspp_channels();
  }
  net.convs_.push_back(make_conv("head", in_channels, cfg.classes, cfg.head_kernel, 1, head_kind));

  std::size_t offset = 2;  // bn.scale, bn.shift
  for (const ConvLayer<T>& layer : net.convs_) {
    net.param_offset_.push_back(offset);
    offset += layer.kind == ParamKind::kVariational ? 4 : 2;
  }
  return net;
}

template <typename T>
std::vector<ParamRef<T>> Network<T>::parameters() {
  std::vector<ParamRef<T>> out{{"bn.scale", &bn_scale_}, {"bn.shift", &bn_shift_}};
  for (ConvLayer<T>& layer : convs_) {
    if (layer.kind == ParamKind::kPoint) {
      out.push_back({layer.name + ".weight", &layer.weight});
      out.push_back({layer.name + ".bias", &layer.bias});
    } else {
      out.push_back({layer.name + ".weight_mu", &layer.weight_vp.mu});
      out.push_back({layer.name + ".weight_rho", &layer.weight_vp.rho});
      out.push_back({layer.name + ".bias_mu", &layer.bias_vp.mu});
      out.push_back({layer.name + ".bias_rho", &layer.bias_vp.rho});
    }
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> Network<T>::parameters() const {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (const ParamRef<T>& p : const_cast<Network*>(this)->parameters()) {
    out.emplace_back(p.name, p.tensor);
  }
  return out;
}

template <typename T>
std::vector<ParamRef<T>> Network<T>::buffers() {
  return {{"bn.running_mean", &bn_stats_.running_mean},
          {"bn.running_var", &bn_stats_.running_var}};
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> Network<T>::buffers() const {
  return {{"bn.running_mean", &bn_stats_.running_mean},
          {"bn.running_var", &bn_stats_.running_var}};
}

template <typename T>
std::size_t Network<T>::conv_parameter_count() const {
  std::size_t total = 0;
  for (const ConvLayer<T>& layer : convs_) total += layer.parameter_count();
  return total;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  return conv_parameter_count() + bn_scale_.size() + bn_shift_.size();
}

template <typename T>
bool Network<T>::has_variational_layers() const {
  for (const ConvLayer<T>& layer : convs_) {
    if (layer.kind == ParamKind::kVariational) return true;
  }
  return false;
}

template <typename T>
bool Network<T>::trunk_is_stochastic() const {
  for (std::size_t i = 0; i + 1 < convs_.size(); ++i) {
    if (convs_[i].kind == ParamKind::kVariational) return true;
  }
  return false;
}

template <typename T>
double Network<T>::total_kl() const {
  double total = 0.0;
  for (const ConvLayer<T>& layer : convs_) {
    if (layer.kind != ParamKind::kVariational) continue;
    total += kl_to_prior(layer.weight_vp, cfg_.prior);
    total += kl_to_prior(layer.bias_vp, cfg_.prior);
  }
  return total;
}

template <typename T>
std::vector<Var> Network<T>::bind(Graph<T>& g, bool trainable) const {
  std::vector<Var> bound;
  for (const auto& [name, tensor] : parameters()) {
    bound.push_back(trainable ? g.leaf(*tensor) : g.constant(*tensor));
  }
  return bound;
}

template <typename T>
void Network<T>::check_input(const Shape& shape, std::size_t channels,
                             const char* what) const {
  if (shape.rank() != 4 || shape[0] == 0 || shape[1] != channels ||
      shape[2] != cfg_.rows || shape[3] != cfg_.cols) {
    throw ConfigError(std::string(what) + " has shape " + shape.to_string() +
                      ", network expects Nx" + std::to_string(channels) + "x" +
                      std::to_string(cfg_.rows) + "x" + std::to_string(cfg_.cols));
  }
}

template <typename T>
Var Network<T>::conv_pass(Graph<T>& g, const ConvLayer<T>& layer, Var x,
                          const std::vector<Var>& bound, std::size_t layer_index,
                          WeightMode mode, RngStream& rng,
                          std::vector<std::pair<std::size_t, Tensor<T>>>* eps_out) const {
  const std::size_t off = param_offset_[layer_index];
  if (layer.kind == ParamKind::kPoint) {
    return conv2d_dilated(g, x, bound[off], bound[off + 1], layer.dilation);
  }
  if (mode == WeightMode::kMean) {
    return conv2d_dilated(g, x, bound[off], bound[off + 2], layer.dilation);
  }
  auto draw = [&rng](const Shape& shape) {
    Tensor<T> eps(shape);
    for (T& e : eps.values()) e = static_cast<T>(rng.normal());
    return eps;
  };
  Tensor<T> eps_w = draw(layer.weight_vp.mu.shape());
  Tensor<T> eps_b = draw(layer.bias_vp.mu.shape());
  const Var w = reparameterize(g, bound[off], bound[off + 1], eps_w);
  const Var b = reparameterize(g, bound[off + 2], bound[off + 3], eps_b);
  if (eps_out) {
    eps_out->emplace_back(2 * layer_index, std::move(eps_w));
    eps_out->emplace_back(2 * layer_index + 1, std::move(eps_b));
  }
  return conv2d_dilated(g, x, w, b, layer.dilation);
}

template <typename T>
Var Network<T>::trunk_pass(Graph<T>& g, Var x, const std::vector<Var>& bound,
                           WeightMode mode, BnMode bn_mode, BatchNormStats<T>& stats,
                           RngStream& rng,
                           std::vector<std::pair<std::size_t, Tensor<T>>>* eps_out) const {
  Var h = batch_norm(g, x, bound[0], bound[1], stats, bn_mode);
  const std::size_t branches = cfg_.dilations.size();
  for (std::size_t block = 0; block < cfg_.aspp_layers; ++block) {
    std::vector<Var> parts;
    for (std::size_t b = 0; b < branches; ++b) {
      const std::size_t index = block * branches + b;
      parts.push_back(conv_pass(g, convs_[index], h, bound, index, mode, rng, eps_out));
    }
    h = relu(g, concat_channels<T>(g, parts));
  }
  return h;
}

template <typename T>
Var Network<T>::head_pass(Graph<T>& g, Var features, const std::vector<Var>& bound,
                          WeightMode mode, RngStream& rng,
                          std::vector<std::pair<std::size_t, Tensor<T>>>* eps_out) const {
  Var h = features;
  if (cfg_.variant == Variant::kMcDropout && mode == WeightMode::kSample) {
    h = multiply_constant(g, h, mc_dropout_mask<T>(g.value(h).shape(), cfg_.dropout_rate, rng));
  }
  const std::size_t index = convs_.size() - 1;
  return softmax_cells(g, conv_pass(g, convs_[index], h, bound, index, mode, rng, eps_out));
}

template <typename T>
Var Network<T>::kl_pass(Graph<T>& g, const std::vector<Var>& bound) const {
  Var total;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    if (convs_[i].kind != ParamKind::kVariational) continue;
    const std::size_t off = param_offset_[i];
    for (std::size_t k : {std::size_t{0}, std::size_t{2}}) {
      const Var term = kl_to_prior(g, bound[off + k], bound[off + k + 1], cfg_.prior);
      total = total.valid() ? add(g, total, term) : term;
    }
  }
  return total;
}

template <typename T>
Tensor<T> Network<T>::trunk(const Tensor<T>& input, WeightMode mode, RngStream& rng) const {
  check_input(input.shape(), cfg_.input_features, "network input");
  Graph<T> g;
  const std::vector<Var> bound = bind(g, false);
  BatchNormStats<T> stats = bn_stats_;
  const Var x = g.constant(input);
  return g.value(trunk_pass(g, x, bound, mode, BnMode::kEval, stats, rng, nullptr));
}

template <typename T>
ForwardResult<T> Network<T>::head(const Tensor<T>& features, WeightMode mode,
                                  RngStream& rng) const {
  check_input(features.shape(), cfg_.aspp_channels(), "head features");
  Graph<T> g;
  const std::vector<Var> bound = bind(g, false);
  const Var x = g.constant(features);
  return {g.value(head_pass(g, x, bound, mode, rng, nullptr)), total_kl()};
}

template <typename T>
ForwardResult<T> Network<T>::forward(const Tensor<T>& input, WeightMode mode,
                                     RngStream& rng) const {
  check_input(input.shape(), cfg_.input_features, "network input");
  Graph<T> g;
  const std::vector<Var> bound = bind(g, false);
  BatchNormStats<T> stats = bn_stats_;
  const Var x = g.constant(input);
  const Var features = trunk_pass(g, x, bound, mode, BnMode::kEval, stats, rng, nullptr);
  return {g.value(head_pass(g, features, bound, mode, rng, nullptr)), total_kl()};
}

template <typename T>
GraphPass<T> Network<T>::forward_graph(Graph<T>& g, Var input, WeightMode mode,
                                       BnMode bn_mode, RngStream& rng, bool trainable) {
  check_input(g.value(input).shape(), cfg_.input_features, "network input");
  GraphPass<T> pass;
  pass.params = bind(g, trainable);
  std::vector<std::pair<std::size_t, Tensor<T>>> eps;
  const Var features =
      trunk_pass(g, input, pass.params, mode, bn_mode, bn_stats_, rng, &eps);
  pass.probs = head_pass(g, features, pass.params, mode, rng, &eps);
  pass.kl = kl_pass(g, pass.params);
  for (auto& [slot, tensor] : eps) {
    ConvLayer<T>& layer = convs_[slot / 2];
    (slot % 2 == 0 ? layer.weight_vp : layer.bias_vp).epsilon = std::move(tensor);
  }
  return pass;
}

template class Network<float>;
template class Network<double>;

#define GRIDBAYES_INSTANTIATE_BAYES(T)                                             \
  template T softplus<T>(T);                                                       \
  template struct VariationalParams<T>;                                            \
  template struct ConvLayer<T>;                                                    \
  template Tensor<T> reparameterized_weights<T>(const VariationalParams<T>&);      \
  template Tensor<T> sample_weights<T>(VariationalParams<T>&, RngStream&);         \
  template double kl_to_prior<T>(const VariationalParams<T>&, const PriorConfig&); \
  template Var reparameterize<T>(Graph<T>&, Var, Var, const Tensor<T>&);           \
  template Var kl_to_prior<T>(Graph<T>&, Var, Var, const PriorConfig&);            \
  template Tensor<T> mc_dropout_mask<T>(const Shape&, double, RngStream&);

GRIDBAYES_INSTANTIATE_BAYES(float)
GRIDBAYES_INSTANTIATE_BAYES(double)

#undef GRIDBAYES_INSTANTIATE_BAYES

}  // namespace gridbayes
