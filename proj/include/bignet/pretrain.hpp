#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bignet/gat.hpp"
#include "bignet/graph.hpp"

namespace bignet {

/// Masking rates per node type (semantic, topological, spatial; homogeneous
/// graphs use the first entry), number of decoder re-mask views and their rate.
struct MaskPlan {
  std::array<double, kNodeTypeCount> rate{0.5, 0.5, 0.5};
  int views = 3;
  double remask_rate = 0.5;

  static MaskPlan defaults(GraphMode mode);
  bool operator==(const MaskPlan&) const = default;
};

void validate_mask_plan(const MaskPlan& plan);

/// Exact number of rows masked among `n`: round(rate * n), at least one when
/// n > 0.
std::size_t mask_count(std::size_t n, double rate);

/// Masked rows (local indices, ascending) per node type block.
struct MaskSet {
  std::vector<nn::Index> rows;
  std::size_t size() const;
};

/// Uniformly samples mask_count(count(t), rates[t]) rows of every type block.
MaskSet sample_mask(const nn::ModelGraph& g, std::span<const double> rates, std::mt19937_64& rng);

/// Encoder mask plus the independent decoder re-mask views of one step.
struct MaskSample {
  MaskSet masked;
  std::vector<MaskSet> remask;
};
MaskSample sample_masks(const nn::ModelGraph& g, const MaskPlan& plan, std::mt19937_64& rng);

/// Feature blocks with masked rows replaced by the token of their type.
std::vector<nn::Var> mask_features(std::span<const nn::Var> x, const MaskSet& m, std::span<const nn::Var> tokens);

/// (1/|V|) sum over views j and masked nodes i of (1 - cos(z_ij, x_i))^gamma.
nn::Var input_reconstruction_loss(std::span<const nn::Mat> x, const std::vector<std::vector<nn::Var>>& views,
                                  const MaskSet& masked, double gamma = 1.0);

/// Mean over nodes of (1 - cos(zbar_i, xbar_i)); restricted to `masked` when
/// given. The targets are constants.
nn::Var latent_prediction_loss(std::span<const nn::Var> zbar, std::span<const nn::Mat> xbar,
                               const MaskSet* masked = nullptr);

/// zeta <- tau * zeta + (1 - tau) * xi for every parameter of `target`,
/// matched by name in `online`.
void ema_update(nn::ParameterStore& target, const nn::ParameterStore& online, double tau);

struct PretrainConfig {
  GraphMode mode = GraphMode::heterogeneous;
  nn::GatConfig encoder;     // 2 layers, 512 wide, 4/1 heads
  int decoder_layers = 2;
  MaskPlan mask = MaskPlan::defaults(GraphMode::heterogeneous);
  double gamma = 1.0;        // exponent on the input reconstruction error
  double tau = 0.996;        // EMA decay of the target generator
  bool latent_masked_only = false;
  std::vector<double> lr_grid{0.001, 0.003, 0.005, 0.007};
  std::vector<int> batch_grid{4, 8, 16};
  int max_epochs = 5000;
  int patience = 300;
  double val_fraction = 0.1;
  double weight_decay = 0.0;
  std::uint64_t seed = 1;

  static PretrainConfig defaults(GraphMode mode);
};

void validate_pretrain_config(const PretrainConfig& c);
std::string pretrain_config_to_json(const PretrainConfig& c);
PretrainConfig pretrain_config_from_json(const std::string& json);

/// Encoder, decoder, projector, mask tokens and the EMA target generator
/// (a shadow encoder and projector in a separate store with matching names).
class BigNetModel {
 public:
  explicit BigNetModel(const PretrainConfig& config);

  struct Loss {
    nn::Var total;
    double input = 0.0;
    double latent = 0.0;
  };
  /// Full objective for one step with the given masks.
  Loss loss(const nn::ModelGraph& g, const MaskSample& masks) const;

  /// Encoder output per type block (no masking).
  std::vector<nn::Var> encode(std::span<const nn::Var> x, const nn::ModelGraph& g) const;
  /// Target generator output, computed without recording.
  std::vector<nn::Mat> target(const nn::ModelGraph& g) const;

  const PretrainConfig& config() const { return config_; }
  nn::ParameterStore& online() { return online_; }
  const nn::ParameterStore& online() const { return online_; }
  nn::ParameterStore& target_store() { return target_; }
  const nn::ParameterStore& target_store() const { return target_; }
  /// Parameters of the encoder only (prefix "enc.").
  std::vector<nn::Var> encoder_parameters() const { return online_.vars_with_prefix("enc."); }
  int embedding_width() const { return config_.encoder.hidden_dim; }

 private:
  PretrainConfig config_;
  nn::ParameterStore online_, target_;
  std::optional<nn::TypedGat> encoder_, decoder_, target_encoder_;
  std::optional<nn::Mlp> projector_, target_projector_;
  std::vector<nn::Var> mask_tokens_;
  nn::Var remask_token_;
};

/// Input feature blocks of a model graph as constants.
std::vector<nn::Var> feature_vars(const nn::ModelGraph& g);

struct EpochRecord {
  int run = 0;
  double lr0 = 0.0;
  int batch = 0;
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double train_input = 0.0;
  double train_latent = 0.0;
  double val_loss = 0.0;
};

struct PretrainResult {
  nn::Archive checkpoint;  // best grid point, best epoch
  double best_val_loss = 0.0;
  double best_lr = 0.0;
  int best_batch = 0;
  int best_epoch = 0;
  std::vector<EpochRecord> history;
  std::vector<int> epochs_run;  // per grid point
  std::vector<bool> early_stopped;
};

class PretrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Returning false from the callback ends the current grid point.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Trains over every lr x batch grid point from the same initialisation,
/// holding out `val_fraction` of the pretraining graphs for early stopping,
/// and keeps the grid point with the lowest validation loss.
PretrainResult pretrain(const GraphDataset& dataset, const PretrainConfig& config, const EpochCallback& on_epoch = {});

void write_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history);

/// Rebuilds a model from a checkpoint archive.
BigNetModel model_from_checkpoint(const nn::Archive& archive);

/// Encoder representations of every node, in node order (n x hidden_dim).
nn::Mat embed(const BimGraph& g, const BigNetModel& model);

}  // namespace bignet
