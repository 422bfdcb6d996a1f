#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bignet/gat.hpp"
#include "bignet/graph.hpp"
#include "bignet/pretrain.hpp"

namespace bignet {

/// Transfer strategies. The none_* baselines feed the classifier raw
/// normalised node features instead of encoder representations.
enum class Strategy { feat_extract_mlp, feat_extract_gat, fine_tune_mlp, none_mlp, none_gat };
std::string_view to_string(Strategy s);
Strategy strategy_from_string(std::string_view s);
bool uses_encoder(Strategy s);
bool uses_gat_head(Strategy s);

using ClassWeights = std::array<double, kClassCount>;

/// w_i <- w_i * (1 + alpha * error_i), without any renormalisation.
ClassWeights update_class_weights_raw(const ClassWeights& w, const ClassWeights& error_rates, double alpha = 0.1);
/// Clips every weight to at most `max_ratio` times the smallest, then rescales
/// to mean 1.
ClassWeights normalize_class_weights(const ClassWeights& w, double max_ratio = 10.0);
/// One epoch's update: raw rule followed by normalisation.
ClassWeights update_class_weights(const ClassWeights& w, const ClassWeights& error_rates, double alpha = 0.1,
                                  double max_ratio = 10.0);

/// Per-class misclassification rate among nodes whose true class is i (0 when
/// the class is absent). Labels < 0 are skipped.
ClassWeights class_error_rates(std::span<const int> predicted, std::span<const int> actual);

struct ClassMetrics {
  std::size_t tp = 0, fp = 0, fn = 0, support = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct EvalReport {
  /// confusion[predicted][actual]
  std::array<std::array<std::size_t, kClassCount>, kClassCount> confusion{};
  std::array<ClassMetrics, kClassCount> per_class{};
  double average_f1 = 0.0;   // mean F1 over the three error classes
  double weighted_f1 = 0.0;  // support-weighted F1 over all four classes
  double accuracy = 0.0;
  std::size_t evaluated = 0;
  std::string strategy;
  std::uint64_t seed = 0;
  std::string config_json = "{}";

  std::string to_json(int indent = 2) const;
};

/// Metrics from predicted and true class ids; entries with actual < 0 are
/// skipped. Zero denominators give 0.
EvalReport evaluate_predictions(std::span<const int> predicted, std::span<const int> actual);

struct TransferConfig {
  Strategy strategy = Strategy::feat_extract_gat;
  int mlp_hidden = 256;
  nn::GatConfig gat{2, 256, 4, 1, 0.2, nn::Activation::prelu, true};
  double lr = 0.005;
  int max_epochs = 5000;
  int patience = 300;
  double alpha = 0.1;
  double max_weight_ratio = 10.0;
  double weight_decay = 0.0;
  std::uint64_t seed = 1;
};

void validate_transfer_config(const TransferConfig& c);
std::string transfer_config_to_json(const TransferConfig& c);
TransferConfig transfer_config_from_json(const std::string& json);

/// Throws std::invalid_argument when a label sits on a node type that cannot
/// carry it: component errors sit on semantic nodes, and a lost connection
/// sits on the spatial node that replaces the removed relation.
void check_label_types(const BimGraph& g);

/// Node classifier: optional encoder plus an MLP or GAT head.
class Classifier {
 public:
  /// `encoder` is required by every strategy except the none_* baselines.
  Classifier(GraphMode mode, const TransferConfig& config, std::optional<BigNetModel> encoder);

  /// Logits per type block. Frozen strategies compute the encoder without
  /// recording.
  std::vector<nn::Var> logits(const nn::ModelGraph& g) const;
  /// Predicted class per node, in node order.
  std::vector<int> predict(const BimGraph& g) const;
  std::vector<int> predict(const nn::ModelGraph& g) const;

  /// Parameters updated by training (head, plus encoder when fine-tuning).
  std::vector<nn::Var> trainable() const;
  const nn::ParameterStore& head_store() const { return head_; }
  nn::ParameterStore& head_store() { return head_; }
  const std::optional<BigNetModel>& encoder() const { return encoder_; }
  std::optional<BigNetModel>& encoder() { return encoder_; }
  const TransferConfig& config() const { return config_; }
  GraphMode mode() const { return mode_; }

  /// Input blocks for the head: raw features or encoder output.
  std::vector<nn::Var> head_inputs(const nn::ModelGraph& g) const;
  std::vector<nn::Var> head_logits(std::span<const nn::Var> inputs, const nn::ModelGraph& g) const;

 private:
  GraphMode mode_;
  TransferConfig config_;
  std::optional<BigNetModel> encoder_;
  nn::ParameterStore head_;
  std::optional<nn::Mlp> mlp_;
  std::optional<nn::TypedGat> gat_;
};

struct TransferEpoch {
  int epoch = 0;
  double loss = 0.0;
  double train_average_f1 = 0.0;
  double val_average_f1 = 0.0;
  ClassWeights weights{};
};

struct TransferResult {
  int best_epoch = 0;
  double best_val_average_f1 = 0.0;
  int epochs_run = 0;
  bool early_stopped = false;
  std::vector<TransferEpoch> history;
};

using TransferCallback = std::function<bool(const TransferEpoch&)>;

/// Trains `classifier` on the transfer_train graphs with class-weighted
/// cross-entropy, adapting the weights every epoch, and early-stops on the
/// validation average F1. The classifier ends at its best validation epoch.
TransferResult train_transfer(Classifier& classifier, const GraphDataset& dataset, const TransferCallback& on_epoch = {});

/// Confusion matrix and metrics over every labelled node of `graphs`.
EvalReport evaluate(const Classifier& classifier, std::span<const BimGraph* const> graphs);
EvalReport evaluate(const Classifier& classifier, const GraphDataset& dataset, Split split);

/// Head (and fine-tuned encoder) parameters with the configs needed to
/// rebuild the classifier.
nn::Archive classifier_snapshot(const Classifier& c);
Classifier classifier_from_archive(const nn::Archive& archive);

}  // namespace bignet
