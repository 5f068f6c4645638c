#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "gridbayes/adam.hpp"
#include "gridbayes/autodiff.hpp"
#include "gridbayes/rng.hpp"
#include "gridbayes/tensor.hpp"
#include "json.hpp"

namespace gridbayes {

enum class Variant { kDeterministic, kProbabilistic, kHybrid, kMcDropout };

std::string to_string(Variant variant);
Variant parse_variant(std::string_view name);

enum class ParamKind { kPoint, kVariational };

struct PriorConfig {
  double gamma = 1.0;  // variance of the isotropic N(0, gamma I) prior
};

struct NetworkConfig {
  Variant variant = Variant::kDeterministic;
  std::size_t rows = 64;  // c_l
  std::size_t cols = 64;  // c_w
  std::size_t input_features = 4;
  std::size_t classes = 4;
  std::size_t aspp_layers = 4;
  std::size_t branch_channels = 16;
  std::vector<std::size_t> dilations = {1, 2, 4};
  double dropout_rate = 0.5;
  std::size_t head_kernel = 3;
  PriorConfig prior;
  double init_rho = -5.0;

  std::size_t aspp_channels() const { return branch_channels * dilations.size(); }
  void validate() const;
};

nlohmann::json to_json(const NetworkConfig& cfg);
NetworkConfig network_config_from_json(const nlohmann::json& j);

template <typename T>
T softplus(T x);

// Gaussian posterior over a tensor of weights, sigma = softplus(rho).
template <typename T>
struct VariationalParams {
  Tensor<T> mu;
  Tensor<T> rho;
  Tensor<T> epsilon;  // noise of the most recent sample

  Tensor<T> sigma() const;
};

// w = mu + softplus(rho) * epsilon with the cached epsilon.
template <typename T>
Tensor<T> reparameterized_weights(const VariationalParams<T>& vp);

// Draws epsilon ~ N(0, 1) from `rng`, caches it and returns the weights.
template <typename T>
Tensor<T> sample_weights(VariationalParams<T>& vp, RngStream& rng);

// Closed-form KL[N(mu, sigma^2) || N(0, gamma)] summed over all weights.
template <typename T>
double kl_to_prior(const VariationalParams<T>& vp, const PriorConfig& prior);

// Graph forms of the two operations above, differentiable w.r.t. mu and rho.
template <typename T>
Var reparameterize(Graph<T>& g, Var mu, Var rho, const Tensor<T>& epsilon);

template <typename T>
Var kl_to_prior(Graph<T>& g, Var mu, Var rho, const PriorConfig& prior);

// Inverted-dropout mask: 0 with probability `rate`, else 1/(1-rate).
template <typename T>
Tensor<T> mc_dropout_mask(const Shape& shape, double rate, RngStream& rng);

template <typename T>
struct ConvLayer {
  std::string name;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t dilation = 1;
  ParamKind kind = ParamKind::kPoint;
  Tensor<T> weight;  // point weights
  Tensor<T> bias;
  VariationalParams<T> weight_vp;  // variational weights
  VariationalParams<T> bias_vp;

  std::size_t weight_count() const { return out_channels * in_channels * kernel * kernel; }
  // Trainable scalars: weights + biases, doubled for variational layers.
  std::size_t parameter_count() const;
};

// mean-weights: mu and no dropout. sample: one draw per variational tensor
// and one dropout mask when the variant has one.
enum class WeightMode { kMean, kSample };

template <typename T>
struct ForwardResult {
  Tensor<T> probs;  // N x C x rows x cols
  double kl = 0.0;  // total KL of the variational layers to the prior
};

template <typename T>
struct GraphPass {
  Var probs;
  Var kl;                   // invalid when the network has no variational layer
  std::vector<Var> params;  // aligned with Network::parameters()
};

// Input batch norm, a stack of ASPP blocks (parallel dilated 3x3 convs,
// concatenated, then ReLU) and a head conv followed by softmax. The output of
// the last ASPP block is the feature site where MC dropout is applied.
template <typename T>
class Network {
 public:
  static Network build(const NetworkConfig& cfg, RngStream& rng);

  const NetworkConfig& config() const { return cfg_; }

  // Ordered, named trainable tensors.
  std::vector<ParamRef<T>> parameters();
  std::vector<std::pair<std::string, const Tensor<T>*>> parameters() const;
  // Batch-norm running statistics.
  std::vector<ParamRef<T>> buffers();
  std::vector<std::pair<std::string, const Tensor<T>*>> buffers() const;

  std::size_t parameter_count() const;
  std::size_t conv_parameter_count() const;

  const std::vector<ConvLayer<T>>& conv_layers() const { return convs_; }
  std::vector<ConvLayer<T>>& conv_layers() { return convs_; }
  const ConvLayer<T>& head() const { return convs_.back(); }
  ConvLayer<T>& head() { return convs_.back(); }
  const BatchNormStats<T>& bn_stats() const { return bn_stats_; }

  bool has_variational_layers() const;
  // True when the layers before the dropout site draw random numbers.
  bool trunk_is_stochastic() const;

  // Inference with batch norm in eval mode. input: N x F_in x rows x cols.
  ForwardResult<T> forward(const Tensor<T>& input, WeightMode mode, RngStream& rng) const;
  // Split of forward() at the dropout site; head(trunk(x)) == forward(x) and
  // they consume the random stream in the same order.
  Tensor<T> trunk(const Tensor<T>& input, WeightMode mode, RngStream& rng) const;
  ForwardResult<T> head(const Tensor<T>& features, WeightMode mode, RngStream& rng) const;

  // Records a full pass on `g`. Parameters become leaves when `trainable`.
  // In kTrain batch-norm mode the running statistics are updated.
  GraphPass<T> forward_graph(Graph<T>& g, Var input, WeightMode mode, BnMode bn_mode,
                             RngStream& rng, bool trainable);

  double total_kl() const;

 private:
  Network() = default;

  std::vector<Var> bind(Graph<T>& g, bool trainable) const;
  void check_input(const Shape& shape, std::size_t channels, const char* what) const;
  Var conv_pass(Graph<T>& g, const ConvLayer<T>& layer, Var x,
                const std::vector<Var>& bound, std::size_t layer_index,
                WeightMode mode, RngStream& rng,
                std::vector<std::pair<std::size_t, Tensor<T>>>* eps_out) const;
  Var trunk_pass(Graph<T>& g, Var x, const std::vector<Var>& bound, WeightMode mode,
                 BnMode bn_mode, BatchNormStats<T>& stats, RngStream& rng,
                 std::vector<std::pair<std::size_t, Tensor<T>>>* eps_out) const;
  Var head_pass(Graph<T>& g, Var features, const std::vector<Var>& bound,
                WeightMode mode, RngStream& rng,
                std::vector<std::pair<std::size_t, Tensor<T>>>* eps_out) const;
  Var kl_pass(Graph<T>& g, const std::vector<Var>& bound) const;

  NetworkConfig cfg_;
  Tensor<T> bn_scale_;
  Tensor<T> bn_shift_;
  BatchNormStats<T> bn_stats_;
  std::vector<ConvLayer<T>> convs_;        // ASPP branches in order, head last
  std::vector<std::size_t> param_offset_;  // index of each conv's first tensor
};

extern template class Network<float>;
extern template class Network<double>;

}  // namespace gridbayes
