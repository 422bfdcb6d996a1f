#include "bignet/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace bignet {

using nn::Index;
using nn::Mat;
using nn::Var;
using json = nlohmann::json;

// ------------------------------------------------------------------ masks

MaskPlan MaskPlan::defaults(GraphMode mode) {
  MaskPlan p;
  if (mode == GraphMode::heterogeneous) p.rate = {0.5, 0.6, 0.6};
  return p;
}

void validate_mask_plan(const MaskPlan& plan) {
  for (double r : plan.rate)
    if (!(r > 0.0 && r < 1.0)) throw std::invalid_argument("mask rates must lie in (0, 1)");
  if (!(plan.remask_rate > 0.0 && plan.remask_rate < 1.0)) throw std::invalid_argument("re-mask rate must lie in (0, 1)");
  if (plan.views < 1) throw std::invalid_argument("at least one re-mask view is required");
}

std::size_t mask_count(std::size_t n, double rate) {
  if (n == 0) return 0;
  const auto k = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n);
}

std::size_t MaskSet::size() const {
  std::size_t n = 0;
  for (const auto& r : rows) n += r.size();
  return n;
}

MaskSet sample_mask(const nn::ModelGraph& g, std::span<const double> rates, std::mt19937_64& rng) {
  if (rates.size() < static_cast<std::size_t>(g.types())) throw std::invalid_argument("sample_mask: missing rates");
  MaskSet m;
  m.rows.resize(static_cast<std::size_t>(g.types()));
  for (int t = 0; t < g.types(); ++t) {
    const std::size_t n = g.count(t), k = mask_count(n, rates[static_cast<std::size_t>(t)]);
    Index all(n);
    std::iota(all.begin(), all.end(), 0u);
    // Partial Fisher-Yates: the first k entries are a uniform sample.
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(all[i], all[pick(rng)]);
    }
    all.resize(k);
    std::sort(all.begin(), all.end());
    m.rows[static_cast<std::size_t>(t)] = std::move(all);
  }
  return m;
}

MaskSample sample_masks(const nn::ModelGraph& g, const MaskPlan& plan, std::mt19937_64& rng) {
  MaskSample s;
  s.masked = sample_mask(g, plan.rate, rng);
  const std::vector<double> remask(static_cast<std::size_t>(g.types()), plan.remask_rate);
  for (int j = 0; j < plan.views; ++j) s.remask.push_back(sample_mask(g, remask, rng));
  return s;
}

std::vector<Var> mask_features(std::span<const Var> x, const MaskSet& m, std::span<const Var> tokens) {
  if (m.rows.size() != x.size() || tokens.size() != x.size())
    throw std::invalid_argument("mask_features: type count mismatch");
  std::vector<Var> out;
  for (std::size_t t = 0; t < x.size(); ++t)
    out.push_back(m.rows[t].empty() ? x[t] : nn::replace_rows(x[t], m.rows[t], tokens[t]));
  return out;
}

// ----------------------------------------------------------------- losses

Var input_reconstruction_loss(std::span<const Mat> x, const std::vector<std::vector<Var>>& views, const MaskSet& masked,
                              double gamma) {
  const std::size_t n = masked.size();
  if (n == 0) return nn::constant(Mat::Zero(1, 1));
  Var total;
  for (const auto& z : views) {
    if (z.size() != x.size() || masked.rows.size() != x.size())
      throw std::invalid_argument("input_reconstruction_loss: type count mismatch");
    for (std::size_t t = 0; t < x.size(); ++t) {
      if (masked.rows[t].empty()) continue;
      auto term = nn::cosine_error_sum(z[t], x[t], &masked.rows[t], gamma);
      total = total ? nn::add(total, term) : term;
    }
  }
  if (!total) return nn::constant(Mat::Zero(1, 1));
  return nn::scale(total, 1.0 / static_cast<double>(n));
}

Var latent_prediction_loss(std::span<const Var> zbar, std::span<const Mat> xbar, const MaskSet* masked) {
  if (zbar.size() != xbar.size()) throw std::invalid_argument("latent_prediction_loss: type count mismatch");
  std::size_t n = 0;
  Var total;
  for (std::size_t t = 0; t < zbar.size(); ++t) {
    const Index* rows = masked ? &masked->rows.at(t) : nullptr;
    const std::size_t count = rows ? rows->size() : static_cast<std::size_t>(zbar[t]->value.rows());
    if (count == 0) continue;
    n += count;
    auto term = nn::cosine_error_sum(zbar[t], xbar[t], rows, 1.0);
    total = total ? nn::add(total, term) : term;
  }
  if (!total) return nn::constant(Mat::Zero(1, 1));
  return nn::scale(total, 1.0 / static_cast<double>(n));
}

void ema_update(nn::ParameterStore& target, const nn::ParameterStore& online, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("ema_update: tau must lie in [0, 1]");
  for (const auto& [name, zeta] : target.items()) {
    const auto& xi = online.get(name)->value;
    if (xi.rows() != zeta->value.rows() || xi.cols() != zeta->value.cols())
      throw std::invalid_argument("ema_update: shape mismatch for '" + name + "'");
    zeta->value = tau * zeta->value + (1.0 - tau) * xi;
  }
}

// ----------------------------------------------------------------- config

PretrainConfig PretrainConfig::defaults(GraphMode mode) {
  PretrainConfig c;
  c.mode = mode;
  c.mask = MaskPlan::defaults(mode);
  return c;
}

void validate_pretrain_config(const PretrainConfig& c) {
  validate_mask_plan(c.mask);
  const auto& e = c.encoder;
  if (e.layers < 1 || c.decoder_layers < 1) throw std::invalid_argument("encoder and decoder need at least one layer");
  if (e.hidden_dim <= 0 || e.heads_hidden <= 0 || e.heads_out <= 0)
    throw std::invalid_argument("hidden_dim and heads must be positive");
  if (e.hidden_dim % e.heads_hidden != 0) throw std::invalid_argument("hidden_dim must be divisible by heads_hidden");
  if (!(c.gamma >= 1.0)) throw std::invalid_argument("gamma must be >= 1");
  if (!(c.tau >= 0.0 && c.tau <= 1.0)) throw std::invalid_argument("tau must lie in [0, 1]");
  if (c.lr_grid.empty() || c.batch_grid.empty()) throw std::invalid_argument("lr_grid and batch_grid must be non-empty");
  for (double lr : c.lr_grid)
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rates must be finite and >= 0");
  for (int b : c.batch_grid)
    if (b < 1) throw std::invalid_argument("batch sizes must be >= 1");
  if (c.max_epochs < 1 || c.patience < 1) throw std::invalid_argument("max_epochs and patience must be >= 1");
  if (!(c.val_fraction > 0.0 && c.val_fraction < 1.0)) throw std::invalid_argument("val_fraction must lie in (0, 1)");
  if (!(c.weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
}

std::string pretrain_config_to_json(const PretrainConfig& c) {
  json j;
  j["mode"] = std::string(to_string(c.mode));
  j["layers"] = c.encoder.layers;
  j["hidden_dim"] = c.encoder.hidden_dim;
  j["heads_hidden"] = c.encoder.heads_hidden;
  j["heads_out"] = c.encoder.heads_out;
  j["negative_slope"] = c.encoder.negative_slope;
  j["activation"] = std::string(nn::to_string(c.encoder.activation));
  j["self_loops"] = c.encoder.self_loops;
  j["decoder_layers"] = c.decoder_layers;
  j["mask_rate"] = c.mask.rate;
  j["views"] = c.mask.views;
  j["remask_rate"] = c.mask.remask_rate;
  j["gamma"] = c.gamma;
  j["tau"] = c.tau;
  j["latent_masked_only"] = c.latent_masked_only;
  j["lr_grid"] = c.lr_grid;
  j["batch_grid"] = c.batch_grid;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["val_fraction"] = c.val_fraction;
  j["weight_decay"] = c.weight_decay;
  j["seed"] = c.seed;
  return j.dump();
}

PretrainConfig pretrain_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  PretrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "mode") c.mode = graph_mode_from_string(v.get<std::string>());
    else if (key == "layers") c.encoder.layers = v.get<int>();
    else if (key == "hidden_dim") c.encoder.hidden_dim = v.get<int>();
    else if (key == "heads_hidden") c.encoder.heads_hidden = v.get<int>();
    else if (key == "heads_out") c.encoder.heads_out = v.get<int>();
    else if (key == "negative_slope") c.encoder.negative_slope = v.get<double>();
    else if (key == "activation") c.encoder.activation = nn::activation_from_string(v.get<std::string>());
    else if (key == "self_loops") c.encoder.self_loops = v.get<bool>();
    else if (key == "decoder_layers") c.decoder_layers = v.get<int>();
    else if (key == "mask_rate") c.mask.rate = v.get<std::array<double, kNodeTypeCount>>();
    else if (key == "views") c.mask.views = v.get<int>();
    else if (key == "remask_rate") c.mask.remask_rate = v.get<double>();
    else if (key == "gamma") c.gamma = v.get<double>();
    else if (key == "tau") c.tau = v.get<double>();
    else if (key == "latent_masked_only") c.latent_masked_only = v.get<bool>();
    else if (key == "lr_grid") c.lr_grid = v.get<std::vector<double>>();
    else if (key == "batch_grid") c.batch_grid = v.get<std::vector<int>>();
    else if (key == "max_epochs") c.max_epochs = v.get<int>();
    else if (key == "patience") c.patience = v.get<int>();
    else if (key == "val_fraction") c.val_fraction = v.get<double>();
    else if (key == "weight_decay") c.weight_decay = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("unknown pretrain config key '" + key + "'");
  }
  validate_pretrain_config(c);
  return c;
}

// ------------------------------------------------------------------ model

std::vector<Var> feature_vars(const nn::ModelGraph& g) {
  std::vector<Var> x;
  for (const auto& f : g.features) x.push_back(nn::constant(f));
  return x;
}

BigNetModel::BigNetModel(const PretrainConfig& config) : config_(config) {
  validate_pretrain_config(config_);
  const GraphMode mode = config_.mode;
  const int types = nn::type_count(mode), hidden = config_.encoder.hidden_dim;
  const auto widths = nn::type_widths(mode);
  const std::vector<int> wide(static_cast<std::size_t>(types), hidden);
  nn::GatConfig dec = config_.encoder;
  dec.layers = config_.decoder_layers;

  std::mt19937_64 rng(config_.seed);
  encoder_.emplace(online_, "enc", mode, widths, wide, config_.encoder, true, rng);
  decoder_.emplace(online_, "dec", mode, wide, widths, dec, false, rng);
  projector_.emplace(online_, "proj", std::vector<int>{hidden}, std::vector<int>{hidden, hidden}, nn::Activation::prelu,
                     rng);
  for (int t = 0; t < types; ++t)
    mask_tokens_.push_back(online_.add("mask_token" + std::to_string(t), Mat::Zero(1, widths[static_cast<std::size_t>(t)])));
  remask_token_ = online_.add("remask_token", Mat::Zero(1, hidden));

  std::mt19937_64 shadow(config_.seed ^ 0x5a5a5a5aULL);
  target_encoder_.emplace(target_, "enc", mode, widths, wide, config_.encoder, true, shadow);
  target_projector_.emplace(target_, "proj", std::vector<int>{hidden}, std::vector<int>{hidden, hidden},
                            nn::Activation::prelu, shadow);
  ema_update(target_, online_, 0.0);
}

std::vector<Var> BigNetModel::encode(std::span<const Var> x, const nn::ModelGraph& g) const {
  return encoder_->forward(x, g);
}

std::vector<Mat> BigNetModel::target(const nn::ModelGraph& g) const {
  nn::NoGrad off;
  const auto x = feature_vars(g);
  const auto z = target_projector_->forward(target_encoder_->forward(x, g));
  std::vector<Mat> out;
  for (const auto& v : z) out.push_back(v->value);
  return out;
}

BigNetModel::Loss BigNetModel::loss(const nn::ModelGraph& g, const MaskSample& masks) const {
  if (g.mode != config_.mode) throw std::invalid_argument("graph mode does not match the model");
  const auto x = feature_vars(g);
  const auto h = encoder_->forward(mask_features(x, masks.masked, mask_tokens_), g);

  const std::vector<Var> remask(h.size(), remask_token_);
  std::vector<std::vector<Var>> views;
  for (const auto& r : masks.remask) views.push_back(decoder_->forward(mask_features(h, r, remask), g));
  const auto l_input = input_reconstruction_loss(g.features, views, masks.masked, config_.gamma);

  const auto xbar = target(g);
  const auto l_latent =
      latent_prediction_loss(projector_->forward(h), xbar, config_.latent_masked_only ? &masks.masked : nullptr);

  Loss out;
  out.total = nn::add(l_input, l_latent);
  out.input = l_input->value(0, 0);
  out.latent = l_latent->value(0, 0);
  return out;
}

// --------------------------------------------------------------- training

namespace {

struct Batch {
  nn::ModelGraph graph;
  MaskSample masks;
};

std::vector<Batch> fixed_batches(const GraphDataset& d, const std::vector<std::size_t>& ids, const MaskPlan& plan,
                                 std::uint64_t seed) {
  constexpr std::size_t kChunk = 16;
  std::mt19937_64 rng(seed);
  std::vector<Batch> out;
  for (std::size_t i = 0; i < ids.size(); i += kChunk) {
    std::vector<const BimGraph*> part;
    for (std::size_t k = i; k < std::min(ids.size(), i + kChunk); ++k) part.push_back(&d.graphs[ids[k]]);
    Batch b;
    b.graph = nn::to_model_graph(part);
    b.masks = sample_masks(b.graph, plan, rng);
    out.push_back(std::move(b));
  }
  return out;
}

double evaluate_loss(const BigNetModel& model, const std::vector<Batch>& batches) {
  nn::NoGrad off;
  double sum = 0.0;
  std::size_t nodes = 0;
  for (const auto& b : batches) {
    sum += model.loss(b.graph, b.masks).total->value(0, 0) * static_cast<double>(b.graph.total_nodes);
    nodes += b.graph.total_nodes;
  }
  return nodes ? sum / static_cast<double>(nodes) : 0.0;
}

std::string checkpoint_config(const PretrainConfig& c, double lr, int batch, int epoch, double val) {
  json j;
  j["kind"] = "bignet-pretrain";
  j["pretrain"] = json::parse(pretrain_config_to_json(c));
  j["selected"] = {{"lr", lr}, {"batch", batch}, {"epoch", epoch}, {"val_loss", val}};
  return j.dump();
}

}  // namespace

PretrainResult pretrain(const GraphDataset& dataset, const PretrainConfig& config, const EpochCallback& on_epoch) {
  validate_pretrain_config(config);
  if (dataset.splits.size() != dataset.graphs.size()) throw std::invalid_argument("dataset splits do not match graphs");
  auto pool = dataset.indices(Split::pretrain);
  if (pool.empty()) throw std::invalid_argument("dataset has no pretraining graphs");
  for (auto i : pool)
    if (dataset.graphs[i].mode != config.mode) throw std::invalid_argument("graph mode does not match the config");

  std::mt19937_64 split_rng(config.seed);
  std::shuffle(pool.begin(), pool.end(), split_rng);
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(config.val_fraction * pool.size())));
  if (n_val >= pool.size()) throw std::invalid_argument("validation split leaves no training graphs (need >= 2 pretraining graphs)");
  const std::vector<std::size_t> val_ids(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_ids(pool.begin() + static_cast<std::ptrdiff_t>(n_val), pool.end());
  const auto val = fixed_batches(dataset, val_ids, config.mask, config.seed + 0x9e3779b97f4a7c15ULL);

  PretrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  int run = 0;
  for (double lr0 : config.lr_grid) {
    for (int batch : config.batch_grid) {
      BigNetModel model(config);
      nn::AdamConfig adam_cfg;
      adam_cfg.weight_decay = config.weight_decay;
      nn::Adam adam(model.online().vars(), adam_cfg);
      std::mt19937_64 rng(config.seed * 1000003ULL + 17);
      std::vector<std::size_t> order = train_ids;

      double best = std::numeric_limits<double>::infinity();
      int since = 0, epochs = 0;
      bool stopped = false;
      for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        epochs = epoch;
        const double lr = nn::cosine_lr(lr0, epoch - 1, config.max_epochs);
        std::shuffle(order.begin(), order.end(), rng);
        double sum = 0.0, sum_in = 0.0, sum_lat = 0.0;
        int steps = 0;
        for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch)) {
          std::vector<const BimGraph*> part;
          for (std::size_t k = i; k < std::min(order.size(), i + static_cast<std::size_t>(batch)); ++k)
            part.push_back(&dataset.graphs[order[k]]);
          const auto g = nn::to_model_graph(part);
          const auto masks = sample_masks(g, config.mask, rng);
          model.online().zero_grad();
          nn::Tape tape;
          const auto l = model.loss(g, masks);
          const double value = l.total->value(0, 0);
          if (!std::isfinite(value)) {
            std::ostringstream msg;
            msg << "non-finite pretraining loss (lr " << lr0 << ", batch " << batch << ", epoch " << epoch << ", step "
                << steps << ", input " << l.input << ", latent " << l.latent << ")";
            throw PretrainError(msg.str());
          }
          tape.backward(l.total);
          adam.step(lr);
          ema_update(model.target_store(), model.online(), config.tau);
          sum += value;
          sum_in += l.input;
          sum_lat += l.latent;
          ++steps;
        }
        EpochRecord rec;
        rec.run = run;
        rec.lr0 = lr0;
        rec.batch = batch;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = sum / steps;
        rec.train_input = sum_in / steps;
        rec.train_latent = sum_lat / steps;
        rec.val_loss = evaluate_loss(model, val);
        if (!std::isfinite(rec.val_loss)) throw PretrainError("non-finite validation loss at epoch " + std::to_string(epoch));
        result.history.push_back(rec);

        if (rec.val_loss < best) {
          best = rec.val_loss;
          since = 0;
          if (best < result.best_val_loss) {
            result.best_val_loss = best;
            result.best_lr = lr0;
            result.best_batch = batch;
            result.best_epoch = epoch;
            result.checkpoint = nn::snapshot(model.online(), checkpoint_config(config, lr0, batch, epoch, best));
          }
        } else if (++since >= config.patience) {
          stopped = true;
        }
        if (on_epoch && !on_epoch(rec)) break;
        if (stopped) break;
      }
      result.epochs_run.push_back(epochs);
      result.early_stopped.push_back(stopped);
      ++run;
    }
  }
  return result;
}

void write_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "run,lr0,batch,epoch,lr,train_loss,train_input,train_latent,val_loss\n";
  for (const auto& r : history)
    out << r.run << ',' << r.lr0 << ',' << r.batch << ',' << r.epoch << ',' << r.lr << ',' << r.train_loss << ','
        << r.train_input << ',' << r.train_latent << ',' << r.val_loss << '\n';
}

BigNetModel model_from_checkpoint(const nn::Archive& archive) {
  const json j = json::parse(archive.config_json);
  if (!j.contains("pretrain")) throw nn::CheckpointError("checkpoint was not produced by pretraining");
  BigNetModel model(pretrain_config_from_json(j.at("pretrain").dump()));
  nn::restore(model.online(), archive);
  ema_update(model.target_store(), model.online(), 0.0);
  return model;
}

Mat embed(const BimGraph& g, const BigNetModel& model) {
  if (g.mode != model.config().mode) throw std::invalid_argument("graph mode does not match the checkpoint");
  if (g.node_count() == 0) return Mat(0, model.embedding_width());
  nn::NoGrad off;
  const auto mg = nn::to_model_graph(g);
  const auto h = model.encode(feature_vars(mg), mg);
  return nn::gather_global(mg, h);
}

}  // namespace bignet
