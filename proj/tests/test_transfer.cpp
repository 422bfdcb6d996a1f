#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "bignet/synth.hpp"
#include "bignet/transfer.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace bignet;
using nn::Mat;

namespace {

// Independent count-and-divide oracle for one class.
struct OracleMetrics {
  double precision, recall, f1;
};
OracleMetrics oracle(const std::vector<int>& pred, const std::vector<int>& actual, int c) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == c && actual[i] == c) tp += 1;
    if (pred[i] == c && actual[i] != c) fp += 1;
    if (pred[i] != c && actual[i] == c) fn += 1;
  }
  const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  return {p, r, p + r > 0 ? 2 * p * r / (p + r) : 0.0};
}

BuildingSpec tiny_spec() {
  BuildingSpec s;
  s.bays = 2;
  s.spans = 2;
  s.storeys = 1;
  s.mep_runs = 2;
  s.seed = 9;
  s.name = "X";
  return s;
}

GraphDataset tiny_benchmark(GraphMode mode, std::uint64_t seed = 4) {
  auto d = error_benchmark(tiny_spec(), 6, 0.3, 0.3, mode, seed, HashingEmbedder{});
  return make_splits(d, 0.34, seed);
}

TransferConfig quick(Strategy s) {
  TransferConfig c;
  c.strategy = s;
  c.mlp_hidden = 16;
  c.gat.hidden_dim = 8;
  c.gat.heads_hidden = 2;
  c.max_epochs = 25;
  c.patience = 10;
  c.lr = 0.01;
  c.seed = 2;
  return c;
}

PretrainConfig tiny_pretrain(GraphMode mode) {
  auto c = PretrainConfig::defaults(mode);
  c.encoder.hidden_dim = 8;
  c.encoder.heads_hidden = 2;
  return c;
}

}  // namespace

TEST_SUITE("transfer_eval") {
  TEST_CASE("adaptive class weights follow the raw update exactly") {
    ClassWeights w;
    w.fill(1.0);
    ClassWeights zero{}, half, one;
    half.fill(0.5);
    one.fill(1.0);
    CHECK(update_class_weights_raw(w, zero)[0] == 1.0);
    CHECK(update_class_weights_raw(w, half)[0] == 1.05);
    auto t = w;
    const double expected[] = {1.05, 1.1025, 1.157625};
    double hand = 1.0;
    for (double e : expected) {
      t = update_class_weights_raw(t, half, 0.1);
      hand = hand * (1.0 + 0.1 * 0.5);
      CHECK(t[2] == hand);
      // The decimal value is reached to the last bit, or one binary64 ulp away.
      CHECK(std::abs(t[2] - e) <= std::nextafter(e, 2.0) - e);
    }
    CHECK(t[0] == 1.05 * 1.05 * 1.05);
    t = w;
    for (int i = 0; i < 3; ++i) t = update_class_weights_raw(t, one, 0.1);
    CHECK(t[1] == doctest::Approx(1.331).epsilon(1e-15));
    CHECK_THROWS_AS(update_class_weights_raw(w, ClassWeights{1.5, 0, 0, 0}), std::invalid_argument);
  }

  TEST_CASE("normalised weights have mean one and a bounded spread") {
    const auto n = normalize_class_weights({1.0, 2.0, 50.0, 4.0}, 10.0);
    double mean = 0.0;
    for (double v : n) mean += v / 4.0;
    CHECK(mean == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(n[2] / n[0] == doctest::Approx(10.0));
    CHECK(n[1] / n[0] == doctest::Approx(2.0));
    const auto u = update_class_weights({1, 1, 1, 1}, {0, 1, 0, 0});
    CHECK(u[1] > u[0]);
    CHECK(u[0] == u[2]);
  }

  TEST_CASE("class error rates") {
    const std::vector<int> pred = {0, 1, 1, 3, 0, 2};
    const std::vector<int> act = {0, 1, 0, 3, 3, -1};
    const auto e = class_error_rates(pred, act);
    CHECK(e[0] == 0.5);
    CHECK(e[1] == 0.0);
    CHECK(e[2] == 0.0);
    CHECK(e[3] == 0.5);
  }

  TEST_CASE("metric examples") {
    std::vector<int> y = {0, 1, 2, 3, 3, 1};
    auto perfect = evaluate_predictions(y, y);
    CHECK(perfect.average_f1 == 1.0);
    CHECK(perfect.weighted_f1 == 1.0);
    // Class 1: TP = 2, FP = 1, FN = 1.
    const std::vector<int> pred = {1, 1, 1, 0, 2};
    const std::vector<int> act = {1, 1, 0, 1, 2};
    const auto r = evaluate_predictions(pred, act);
    CHECK(r.per_class[1].tp == 2);
    CHECK(r.per_class[1].fp == 1);
    CHECK(r.per_class[1].fn == 1);
    CHECK(r.per_class[1].precision == doctest::Approx(2.0 / 3.0));
    CHECK(r.per_class[1].recall == doctest::Approx(2.0 / 3.0));
    CHECK(r.per_class[1].f1 == doctest::Approx(2.0 / 3.0));
    // Absent classes score 0.
    const std::vector<int> zeros(4, 0);
    CHECK(evaluate_predictions(zeros, zeros).average_f1 == 0.0);
  }

  TEST_CASE("metrics match a count-and-divide oracle on random predictions") {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> cls(0, 3);
    std::vector<int> pred(1000), act(1000);
    for (int i = 0; i < 1000; ++i) {
      pred[static_cast<std::size_t>(i)] = cls(rng);
      act[static_cast<std::size_t>(i)] = cls(rng);
    }
    const auto r = evaluate_predictions(pred, act);
    double avg = 0.0;
    for (int c = 0; c < 4; ++c) {
      const auto o = oracle(pred, act, c);
      CHECK(std::abs(r.per_class[static_cast<std::size_t>(c)].precision - o.precision) <= 1e-12);
      CHECK(std::abs(r.per_class[static_cast<std::size_t>(c)].recall - o.recall) <= 1e-12);
      CHECK(std::abs(r.per_class[static_cast<std::size_t>(c)].f1 - o.f1) <= 1e-12);
      if (c > 0) avg += o.f1 / 3.0;
    }
    CHECK(std::abs(r.average_f1 - avg) <= 1e-12);

    // Columns sum to true counts, rows to predicted counts.
    for (int c = 0; c < 4; ++c) {
      std::size_t col = 0, row = 0;
      for (int o = 0; o < 4; ++o) {
        col += r.confusion[static_cast<std::size_t>(o)][static_cast<std::size_t>(c)];
        row += r.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(o)];
      }
      CHECK(col == static_cast<std::size_t>(std::count(act.begin(), act.end(), c)));
      CHECK(row == static_cast<std::size_t>(std::count(pred.begin(), pred.end(), c)));
    }

    // Node order does not matter.
    std::vector<std::size_t> perm(1000);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> p2, a2;
    for (auto i : perm) {
      p2.push_back(pred[i]);
      a2.push_back(act[i]);
    }
    const auto s = evaluate_predictions(p2, a2);
    for (int c = 0; c < 4; ++c) CHECK(s.per_class[static_cast<std::size_t>(c)].f1 == r.per_class[static_cast<std::size_t>(c)].f1);
  }

  TEST_CASE("scaling class weights keeps the loss argmin over candidate logits") {
    const std::vector<int> labels = {0, 3, 1, 2, 0};
    const std::vector<double> w = {0.5, 2.0, 1.5, 3.0};
    std::vector<double> w3;
    for (double v : w) w3.push_back(3.0 * v);
    std::size_t best = 0, best3 = 0;
    double lo = 1e300, lo3 = 1e300;
    for (std::size_t k = 0; k < 20; ++k) {
      const auto logits = nn::constant(testing::probe(5, 4, 100 + k));
      const double a = nn::weighted_cross_entropy(logits, labels, w)->value(0, 0);
      const double b = nn::weighted_cross_entropy(logits, labels, w3)->value(0, 0);
      if (a < lo) lo = a, best = k;
      if (b < lo3) lo3 = b, best3 = k;
    }
    CHECK(best == best3);
  }

  TEST_CASE("report json carries the contract fields") {
    auto r = evaluate_predictions(std::vector<int>{0, 1}, std::vector<int>{0, 2});
    r.strategy = "none_mlp";
    const auto text = r.to_json();
    for (const char* key : {"confusion", "per_class", "average_f1", "weighted_f1", "strategy", "seed", "config"})
      CHECK(text.find(key) != std::string::npos);
  }

  TEST_CASE("strategy names and config round trip") {
    for (auto s : {Strategy::feat_extract_mlp, Strategy::feat_extract_gat, Strategy::fine_tune_mlp, Strategy::none_mlp,
                   Strategy::none_gat})
      CHECK(strategy_from_string(to_string(s)) == s);
    CHECK_THROWS_AS(strategy_from_string("bogus"), std::invalid_argument);
    const auto c = quick(Strategy::none_gat);
    CHECK(transfer_config_to_json(transfer_config_from_json(transfer_config_to_json(c))) == transfer_config_to_json(c));
    CHECK_THROWS_AS(transfer_config_from_json(R"({"lr": -1})"), std::invalid_argument);
  }

  TEST_CASE("frozen strategies leave the encoder untouched and share embeddings") {
    const auto d = tiny_benchmark(GraphMode::heterogeneous);
    BigNetModel base(tiny_pretrain(GraphMode::heterogeneous));
    const auto archive = nn::snapshot(base.online(), R"({"pretrain":)" + pretrain_config_to_json(base.config()) + "}");
    std::vector<std::vector<Mat>> inputs;
    for (auto s : {Strategy::feat_extract_mlp, Strategy::feat_extract_gat}) {
      Classifier c(GraphMode::heterogeneous, quick(s), model_from_checkpoint(archive));
      const auto mg = nn::to_model_graph(d.graphs[0]);
      std::vector<Mat> in;
      for (const auto& v : c.head_inputs(mg)) in.push_back(v->value);
      inputs.push_back(in);
      train_transfer(c, d);
      const auto& after = c.encoder()->online().items();
      for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i].second->value == base.online().items()[i].second->value);
    }
    CHECK(inputs[0] == inputs[1]);
  }

  TEST_CASE("fine-tuning updates the encoder") {
    const auto d = tiny_benchmark(GraphMode::homogeneous);
    BigNetModel base(tiny_pretrain(GraphMode::homogeneous));
    const auto archive = nn::snapshot(base.online(), R"({"pretrain":)" + pretrain_config_to_json(base.config()) + "}");
    auto cfg = quick(Strategy::fine_tune_mlp);
    cfg.max_epochs = 3;
    Classifier c(GraphMode::homogeneous, cfg, model_from_checkpoint(archive));
    train_transfer(c, d);
    bool changed = false;
    for (const auto& [name, v] : c.encoder()->online().items())
      if (name.starts_with("enc.") && v->value != base.online().get(name)->value) changed = true;
    CHECK(changed);
  }

  TEST_CASE("all-correct labels lead to all-correct predictions") {
    auto d = tiny_benchmark(GraphMode::heterogeneous);
    for (auto& g : d.graphs)
      for (auto& n : g.nodes) n.label = NodeLabel::correct;
    for (auto s : {Strategy::none_mlp, Strategy::none_gat}) {
      auto cfg = quick(s);
      cfg.max_epochs = 80;
      Classifier c(GraphMode::heterogeneous, cfg, std::nullopt);
      train_transfer(c, d);
      const auto rep = evaluate(c, d, Split::transfer_test);
      CHECK(rep.accuracy == 1.0);
      CHECK(rep.average_f1 == 0.0);
    }
  }

  TEST_CASE("training a baseline improves on the labelled benchmark and round-trips") {
    const auto d = tiny_benchmark(GraphMode::heterogeneous);
    auto cfg = quick(Strategy::none_mlp);
    cfg.max_epochs = 150;
    cfg.patience = 150;
    Classifier c(GraphMode::heterogeneous, cfg, std::nullopt);
    const auto r = train_transfer(c, d);
    CHECK(r.best_val_average_f1 > 0.0);
    CHECK(r.history.back().loss < r.history.front().loss);
    const auto restored = classifier_from_archive(classifier_snapshot(c));
    for (const auto& g : d.graphs) CHECK(restored.predict(g) == c.predict(g));
    const auto rep = evaluate(c, d, Split::transfer_test);
    std::size_t labelled = 0;
    for (auto i : d.indices(Split::transfer_test)) labelled += d.graphs[i].node_count();
    CHECK(rep.evaluated == labelled);
  }

  TEST_CASE("transfer contract errors") {
    auto d = tiny_benchmark(GraphMode::heterogeneous);
    CHECK_THROWS_AS(Classifier(GraphMode::heterogeneous, quick(Strategy::feat_extract_gat), std::nullopt),
                    std::invalid_argument);
    CHECK_THROWS_AS(Classifier(GraphMode::homogeneous, quick(Strategy::feat_extract_mlp),
                               BigNetModel(tiny_pretrain(GraphMode::heterogeneous))),
                    std::invalid_argument);
    auto unlabelled = d;
    for (auto& g : unlabelled.graphs)
      for (auto& n : g.nodes) n.label = NodeLabel::unlabeled;
    Classifier c(GraphMode::heterogeneous, quick(Strategy::none_mlp), std::nullopt);
    CHECK_THROWS_AS(train_transfer(c, unlabelled), std::invalid_argument);
    auto wrong = d;
    const auto train = wrong.indices(Split::transfer_train);
    auto& g = wrong.graphs[train[0]];
    for (auto& n : g.nodes)
      if (n.type == NodeType::spatial) {
        n.label = NodeLabel::semantic_conflict;
        break;
      }
    CHECK_THROWS_AS(train_transfer(c, wrong), std::invalid_argument);
  }
}
