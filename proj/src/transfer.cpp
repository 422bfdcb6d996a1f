#include "bignet/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace bignet {

using nn::Mat;
using nn::Var;
using json = nlohmann::json;

// -------------------------------------------------------------- strategy

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::feat_extract_mlp: return "feat_extract_mlp";
    case Strategy::feat_extract_gat: return "feat_extract_gat";
    case Strategy::fine_tune_mlp: return "fine_tune_mlp";
    case Strategy::none_mlp: return "none_mlp";
    case Strategy::none_gat: return "none_gat";
  }
  return "?";
}

Strategy strategy_from_string(std::string_view s) {
  for (auto v : {Strategy::feat_extract_mlp, Strategy::feat_extract_gat, Strategy::fine_tune_mlp, Strategy::none_mlp,
                 Strategy::none_gat})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown strategy '" + std::string(s) + "'");
}

bool uses_encoder(Strategy s) { return s != Strategy::none_mlp && s != Strategy::none_gat; }
bool uses_gat_head(Strategy s) { return s == Strategy::feat_extract_gat || s == Strategy::none_gat; }

// ---------------------------------------------------------- class weights

ClassWeights update_class_weights_raw(const ClassWeights& w, const ClassWeights& error_rates, double alpha) {
  ClassWeights out{};
  for (int i = 0; i < kClassCount; ++i) {
    const double e = error_rates[static_cast<std::size_t>(i)];
    if (!(e >= 0.0 && e <= 1.0)) throw std::invalid_argument("error rates must lie in [0, 1]");
    out[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i)] * (1.0 + alpha * e);
  }
  return out;
}

ClassWeights normalize_class_weights(const ClassWeights& w, double max_ratio) {
  if (!(max_ratio >= 1.0)) throw std::invalid_argument("max_ratio must be >= 1");
  const double lo = *std::min_element(w.begin(), w.end());
  if (!(lo > 0.0)) throw std::invalid_argument("class weights must be positive");
  ClassWeights out{};
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    out[i] = std::min(w[i], max_ratio * lo);
    sum += out[i];
  }
  const double mean = sum / static_cast<double>(w.size());
  for (auto& v : out) v /= mean;
  return out;
}

ClassWeights update_class_weights(const ClassWeights& w, const ClassWeights& error_rates, double alpha, double max_ratio) {
  return normalize_class_weights(update_class_weights_raw(w, error_rates, alpha), max_ratio);
}

ClassWeights class_error_rates(std::span<const int> predicted, std::span<const int> actual) {
  if (predicted.size() != actual.size()) throw std::invalid_argument("class_error_rates: length mismatch");
  std::array<std::size_t, kClassCount> wrong{}, total{};
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (actual[i] < 0) continue;
    const auto a = static_cast<std::size_t>(actual[i]);
    ++total[a];
    if (predicted[i] != actual[i]) ++wrong[a];
  }
  ClassWeights e{};
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = total[i] ? static_cast<double>(wrong[i]) / static_cast<double>(total[i]) : 0.0;
  return e;
}

// --------------------------------------------------------------- metrics

namespace {

double ratio(std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; }

}  // namespace

EvalReport evaluate_predictions(std::span<const int> predicted, std::span<const int> actual) {
  if (predicted.size() != actual.size()) throw std::invalid_argument("evaluate_predictions: length mismatch");
  EvalReport r;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (actual[i] < 0) continue;
    if (actual[i] >= kClassCount || predicted[i] < 0 || predicted[i] >= kClassCount)
      throw std::invalid_argument("evaluate_predictions: class id out of range");
    ++r.confusion[static_cast<std::size_t>(predicted[i])][static_cast<std::size_t>(actual[i])];
    ++r.evaluated;
    if (predicted[i] == actual[i]) ++correct;
  }
  double weighted = 0.0;
  for (std::size_t c = 0; c < kClassCount; ++c) {
    auto& m = r.per_class[c];
    m.tp = r.confusion[c][c];
    for (std::size_t o = 0; o < kClassCount; ++o) {
      if (o == c) continue;
      m.fp += r.confusion[c][o];
      m.fn += r.confusion[o][c];
    }
    m.support = m.tp + m.fn;
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn);
    m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    weighted += m.f1 * static_cast<double>(m.support);
  }
  r.average_f1 = (r.per_class[1].f1 + r.per_class[2].f1 + r.per_class[3].f1) / 3.0;
  r.weighted_f1 = r.evaluated ? weighted / static_cast<double>(r.evaluated) : 0.0;
  r.accuracy = ratio(correct, r.evaluated);
  return r;
}

std::string EvalReport::to_json(int indent) const {
  json j;
  j["confusion"] = confusion;
  j["confusion_layout"] = "rows predicted, columns actual";
  json pc;
  for (int c = 0; c < kClassCount; ++c) {
    const auto& m = per_class[static_cast<std::size_t>(c)];
    pc[std::string(bignet::to_string(static_cast<NodeLabel>(c)))] = {
        {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"tp", m.tp},
        {"fp", m.fp},               {"fn", m.fn},         {"support", m.support}};
  }
  j["per_class"] = pc;
  j["average_f1"] = average_f1;
  j["weighted_f1"] = weighted_f1;
  j["accuracy"] = accuracy;
  j["evaluated"] = evaluated;
  j["strategy"] = strategy;
  j["seed"] = seed;
  j["config"] = json::parse(config_json);
  return j.dump(indent);
}

// ---------------------------------------------------------------- config

void validate_transfer_config(const TransferConfig& c) {
  if (c.mlp_hidden <= 0) throw std::invalid_argument("mlp_hidden must be positive");
  if (c.gat.layers < 1 || c.gat.hidden_dim <= 0 || c.gat.heads_hidden <= 0 || c.gat.heads_out <= 0 ||
      c.gat.hidden_dim % c.gat.heads_hidden != 0)
    throw std::invalid_argument("invalid classifier GAT shape");
  if (!(c.lr >= 0.0) || !std::isfinite(c.lr)) throw std::invalid_argument("lr must be finite and >= 0");
  if (c.max_epochs < 1 || c.patience < 1) throw std::invalid_argument("max_epochs and patience must be >= 1");
  if (!(c.alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
  if (!(c.max_weight_ratio >= 1.0)) throw std::invalid_argument("max_weight_ratio must be >= 1");
  if (!(c.weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
}

std::string transfer_config_to_json(const TransferConfig& c) {
  json j;
  j["strategy"] = std::string(to_string(c.strategy));
  j["mlp_hidden"] = c.mlp_hidden;
  j["gat_layers"] = c.gat.layers;
  j["gat_hidden"] = c.gat.hidden_dim;
  j["gat_heads_hidden"] = c.gat.heads_hidden;
  j["gat_heads_out"] = c.gat.heads_out;
  j["lr"] = c.lr;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["alpha"] = c.alpha;
  j["max_weight_ratio"] = c.max_weight_ratio;
  j["weight_decay"] = c.weight_decay;
  j["seed"] = c.seed;
  return j.dump();
}

TransferConfig transfer_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  TransferConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "strategy") c.strategy = strategy_from_string(v.get<std::string>());
    else if (key == "mlp_hidden") c.mlp_hidden = v.get<int>();
    else if (key == "gat_layers") c.gat.layers = v.get<int>();
    else if (key == "gat_hidden") c.gat.hidden_dim = v.get<int>();
    else if (key == "gat_heads_hidden") c.gat.heads_hidden = v.get<int>();
    else if (key == "gat_heads_out") c.gat.heads_out = v.get<int>();
    else if (key == "lr") c.lr = v.get<double>();
    else if (key == "max_epochs") c.max_epochs = v.get<int>();
    else if (key == "patience") c.patience = v.get<int>();
    else if (key == "alpha") c.alpha = v.get<double>();
    else if (key == "max_weight_ratio") c.max_weight_ratio = v.get<double>();
    else if (key == "weight_decay") c.weight_decay = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("unknown transfer config key '" + key + "'");
  }
  validate_transfer_config(c);
  return c;
}

void check_label_types(const BimGraph& g) {
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    const auto& n = g.nodes[i];
    bool ok = true;
    switch (n.label) {
      case NodeLabel::correct:
      case NodeLabel::unlabeled: break;
      case NodeLabel::semantic_conflict:
      case NodeLabel::data_range_error: ok = n.type == NodeType::semantic; break;
      case NodeLabel::topological_error: ok = n.type == NodeType::spatial; break;
    }
    if (!ok)
      throw std::invalid_argument("node " + std::to_string(i) + " (" + std::string(to_string(n.type)) + ") cannot carry label " +
                                  std::string(to_string(n.label)));
  }
}

// ------------------------------------------------------------ classifier

Classifier::Classifier(GraphMode mode, const TransferConfig& config, std::optional<BigNetModel> encoder)
    : mode_(mode), config_(config), encoder_(std::move(encoder)) {
  validate_transfer_config(config_);
  if (uses_encoder(config_.strategy)) {
    if (!encoder_) throw std::invalid_argument("strategy " + std::string(to_string(config_.strategy)) + " needs a checkpoint");
    if (encoder_->config().mode != mode_) throw std::invalid_argument("checkpoint mode does not match the graphs");
  } else {
    encoder_.reset();
  }
  const int types = nn::type_count(mode_);
  const std::vector<int> in = encoder_ ? std::vector<int>(static_cast<std::size_t>(types), encoder_->embedding_width())
                                       : nn::type_widths(mode_);
  std::mt19937_64 rng(config_.seed);
  if (uses_gat_head(config_.strategy)) {
    gat_.emplace(head_, "head", mode_, in, std::vector<int>(static_cast<std::size_t>(types), kClassCount), config_.gat,
                 false, rng);
  } else {
    mlp_.emplace(head_, "head", in, std::vector<int>{config_.mlp_hidden, kClassCount}, nn::Activation::prelu, rng);
  }
}

std::vector<Var> Classifier::head_inputs(const nn::ModelGraph& g) const {
  if (g.mode != mode_) throw std::invalid_argument("graph mode does not match the classifier");
  const auto x = feature_vars(g);
  if (!encoder_) return x;
  if (config_.strategy == Strategy::fine_tune_mlp) return encoder_->encode(x, g);
  nn::NoGrad off;
  auto h = encoder_->encode(x, g);
  for (auto& v : h) v = nn::constant(v->value);
  return h;
}

std::vector<Var> Classifier::head_logits(std::span<const Var> inputs, const nn::ModelGraph& g) const {
  return gat_ ? gat_->forward(inputs, g) : mlp_->forward(inputs);
}

std::vector<Var> Classifier::logits(const nn::ModelGraph& g) const { return head_logits(head_inputs(g), g); }

namespace {

std::vector<int> argmax_global(const nn::ModelGraph& g, std::span<const Var> logits) {
  std::vector<int> out(g.total_nodes, 0);
  for (std::size_t t = 0; t < logits.size(); ++t) {
    const auto& m = logits[t]->value;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      Eigen::Index k;
      m.row(i).maxCoeff(&k);
      out[g.global_index[t][static_cast<std::size_t>(i)]] = static_cast<int>(k);
    }
  }
  return out;
}

std::vector<int> labels_global(const nn::ModelGraph& g) {
  std::vector<int> out(g.total_nodes, -1);
  for (std::size_t t = 0; t < g.labels.size(); ++t)
    for (std::size_t i = 0; i < g.labels[t].size(); ++i) out[g.global_index[t][i]] = g.labels[t][i];
  return out;
}

}  // namespace

std::vector<int> Classifier::predict(const nn::ModelGraph& g) const {
  nn::NoGrad off;
  return argmax_global(g, logits(g));
}

std::vector<int> Classifier::predict(const BimGraph& g) const {
  if (g.node_count() == 0) return {};
  return predict(nn::to_model_graph(g));
}

std::vector<Var> Classifier::trainable() const {
  auto v = head_.vars();
  if (encoder_ && config_.strategy == Strategy::fine_tune_mlp) {
    const auto e = encoder_->encoder_parameters();
    v.insert(v.end(), e.begin(), e.end());
  }
  return v;
}

// -------------------------------------------------------------- training

namespace {

nn::ModelGraph merged(const GraphDataset& d, Split s) {
  std::vector<const BimGraph*> part;
  for (auto i : d.indices(s))
    if (d.graphs[i].node_count() > 0) part.push_back(&d.graphs[i]);
  if (part.empty()) throw std::invalid_argument("no " + std::string(to_string(s)) + " graphs with nodes");
  for (const auto* g : part) check_label_types(*g);
  return nn::to_model_graph(part);
}

}  // namespace

TransferResult train_transfer(Classifier& c, const GraphDataset& dataset, const TransferCallback& on_epoch) {
  const auto& cfg = c.config();
  const auto train = merged(dataset, Split::transfer_train);
  const auto val = merged(dataset, Split::transfer_val);
  if (train.mode != c.mode()) throw std::invalid_argument("graph mode does not match the classifier");

  std::vector<int> labels;
  std::vector<std::size_t> offsets;  // start row of each type block in the concatenated logits
  for (std::size_t t = 0; t < train.labels.size(); ++t) {
    offsets.push_back(labels.size());
    labels.insert(labels.end(), train.labels[t].begin(), train.labels[t].end());
  }
  if (std::none_of(labels.begin(), labels.end(), [](int l) { return l >= 0; }))
    throw std::invalid_argument("training graphs carry no labelled nodes");
  const auto val_labels = labels_global(val);

  const bool frozen = cfg.strategy != Strategy::fine_tune_mlp;
  const auto train_in = frozen ? c.head_inputs(train) : std::vector<Var>{};
  const auto val_in = frozen ? c.head_inputs(val) : std::vector<Var>{};

  const auto params = c.trainable();
  nn::AdamConfig adam_cfg;
  adam_cfg.weight_decay = cfg.weight_decay;
  nn::Adam adam(params, adam_cfg);
  ClassWeights weights;
  weights.fill(1.0);

  TransferResult result;
  result.best_val_average_f1 = -1.0;
  std::vector<Mat> best_state;
  double best_weighted = -1.0;
  int since = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    result.epochs_run = epoch;
    for (const auto& p : params) p->zero_grad();
    TransferEpoch rec;
    rec.epoch = epoch;
    rec.weights = weights;
    std::vector<int> predicted(labels.size(), 0);
    {
      nn::Tape tape;
      const auto logits = c.head_logits(frozen ? train_in : c.head_inputs(train), train);
      const auto all = nn::concat_rows(logits);
      const auto loss = nn::weighted_cross_entropy(all, labels, weights);
      rec.loss = loss->value(0, 0);
      if (!std::isfinite(rec.loss)) throw std::runtime_error("non-finite transfer loss at epoch " + std::to_string(epoch));
      for (Eigen::Index i = 0; i < all->value.rows(); ++i) {
        Eigen::Index k;
        all->value.row(i).maxCoeff(&k);
        predicted[static_cast<std::size_t>(i)] = static_cast<int>(k);
      }
      tape.backward(loss);
    }
    adam.step(nn::cosine_lr(cfg.lr, epoch - 1, cfg.max_epochs));
    weights = update_class_weights(weights, class_error_rates(predicted, labels), cfg.alpha, cfg.max_weight_ratio);
    rec.train_average_f1 = evaluate_predictions(predicted, labels).average_f1;

    std::vector<int> val_pred;
    {
      nn::NoGrad off;
      val_pred = argmax_global(val, frozen ? c.head_logits(val_in, val) : c.logits(val));
    }
    const auto val_report = evaluate_predictions(val_pred, val_labels);
    rec.val_average_f1 = val_report.average_f1;
    result.history.push_back(rec);

    // Ties on average F1 (e.g. no error class present) fall back to weighted F1.
    if (rec.val_average_f1 > result.best_val_average_f1 ||
        (rec.val_average_f1 == result.best_val_average_f1 && val_report.weighted_f1 > best_weighted)) {
      result.best_val_average_f1 = rec.val_average_f1;
      best_weighted = val_report.weighted_f1;
      result.best_epoch = epoch;
      since = 0;
      best_state.clear();
      for (const auto& p : params) best_state.push_back(p->value);
    } else if (++since >= cfg.patience) {
      result.early_stopped = true;
    }
    if (on_epoch && !on_epoch(rec)) break;
    if (result.early_stopped) break;
  }
  for (std::size_t i = 0; i < params.size() && i < best_state.size(); ++i) params[i]->value = best_state[i];
  return result;
}

EvalReport evaluate(const Classifier& c, std::span<const BimGraph* const> graphs) {
  std::vector<int> pred, actual;
  for (const auto* g : graphs) {
    if (g->node_count() == 0) continue;
    const auto p = c.predict(*g);
    pred.insert(pred.end(), p.begin(), p.end());
    for (const auto& n : g->nodes) actual.push_back(n.label == NodeLabel::unlabeled ? -1 : static_cast<int>(n.label));
  }
  auto r = evaluate_predictions(pred, actual);
  r.strategy = std::string(to_string(c.config().strategy));
  r.seed = c.config().seed;
  r.config_json = transfer_config_to_json(c.config());
  return r;
}

EvalReport evaluate(const Classifier& c, const GraphDataset& dataset, Split split) {
  std::vector<const BimGraph*> graphs;
  for (auto i : dataset.indices(split)) graphs.push_back(&dataset.graphs[i]);
  return evaluate(c, graphs);
}

// ----------------------------------------------------------- persistence

nn::Archive classifier_snapshot(const Classifier& c) {
  json j;
  j["kind"] = "bignet-classifier";
  j["mode"] = std::string(to_string(c.mode()));
  j["transfer"] = json::parse(transfer_config_to_json(c.config()));
  if (c.encoder()) j["pretrain"] = json::parse(pretrain_config_to_json(c.encoder()->config()));
  nn::Archive a = nn::snapshot(c.head_store(), j.dump());
  if (c.encoder())
    for (const auto& [name, v] : c.encoder()->online().items()) a.tensors.emplace_back(name, v->value);
  return a;
}

Classifier classifier_from_archive(const nn::Archive& archive) {
  const json j = json::parse(archive.config_json);
  if (j.value("kind", "") != "bignet-classifier") throw nn::CheckpointError("archive does not hold a classifier");
  const auto mode = graph_mode_from_string(j.at("mode").get<std::string>());
  const auto cfg = transfer_config_from_json(j.at("transfer").dump());
  std::optional<BigNetModel> enc;
  if (j.contains("pretrain")) {
    enc.emplace(pretrain_config_from_json(j.at("pretrain").dump()));
    nn::restore(enc->online(), archive);
    ema_update(enc->target_store(), enc->online(), 0.0);
  }
  Classifier c(mode, cfg, std::move(enc));
  nn::restore(c.head_store(), archive);
  return c;
}

}  // namespace bignet
