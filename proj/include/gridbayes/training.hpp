#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gridbayes/adam.hpp"
#include "gridbayes/bayes_layers.hpp"
#include "gridbayes/dataset.hpp"
#include "json.hpp"

namespace gridbayes {

// How the dataset-level KL term is spread over the minibatches of an epoch.
// kUniform: each batch carries kl / n_batches. kGeometric: batch i of M
// carries 2^(M-i) / (2^M - 1) of it, front-loading the prior.
enum class KlWeighting { kUniform, kGeometric };
std::string to_string(KlWeighting w);
KlWeighting parse_kl_weighting(const std::string& name);

struct TrainConfig {
  Variant variant = Variant::kDeterministic;
  std::size_t epochs = 30;
  std::size_t batch_size = 4;
  double lr = 5e-4;
  std::uint64_t seed = 0;
  KlWeighting kl_weighting = KlWeighting::kUniform;
  std::size_t samples_per_step = 1;
  double prior_gamma = 1.0;
  double dropout_rate = 0.5;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Network config for a variant on a given grid, all other fields default.
NetworkConfig network_config_for(const TrainConfig& cfg, const GridSpec& grid);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;      // mean per-step objective
  double kl_total = 0.0;  // mean KL of the posterior to the prior
  double nll = 0.0;       // mean weighted NLL
  std::size_t n_batches = 0;
};

struct Checkpoint {
  NetworkConfig network_config;
  TrainConfig train_config;
  Network<float> network;
  std::optional<AdamState<float>> optimizer;
  std::vector<EpochRecord> history;
};

// kl_total / n_batches + nll.
double elbo_loss(double nll, double kl_total, std::size_t n_batches);

// Fraction of the dataset KL charged to batch `index` (0-based) of `n_batches`.
double kl_batch_weight(KlWeighting w, std::size_t index, std::size_t n_batches);

struct TrainProgress {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  std::size_t n_batches = 0;
  double loss = 0.0;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(const TrainProgress&)> on_step;
};

// Stacks samples[indices] into N x F x H x W features plus flat labels and
// observability weights.
struct Batch {
  Tensor<float> features;
  std::vector<std::uint8_t> labels;
  std::vector<float> weights;
};
Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices);

Checkpoint train(std::span<const Sample> train_set, const GridSpec& grid, const TrainConfig& cfg,
                 const TrainHooks& hooks = {});

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace gridbayes
