#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "bignet/pretrain.hpp"
#include "doctest.h"
#include "gradcheck.hpp"
#include "helpers.hpp"

using namespace bignet;
using nn::Mat;
using nn::Var;

namespace {

// Column, a beam connected to it and a wall 0.25 m away: three semantic
// nodes, one topological and one spatial node.
FloorModel five_node_floor() {
  FloorModel f;
  f.level_id = "L1";
  f.components.push_back(testing::point_component("C1", Vec3(0, 0, 0)));
  f.components.push_back(testing::line_component("B1", Vec3(0.25, 0, 0), Vec3(3, 0, 0), {2750, 200, 300}, "beam"));
  f.components.push_back(testing::line_component("W1", Vec3(0, 0.5, 0), Vec3(0, 3, 0), {2500, 200, 300}));
  f.relations.push_back({RelationKind::connection, "C1", "B1"});
  return f;
}

PretrainConfig tiny_config(GraphMode mode) {
  auto c = PretrainConfig::defaults(mode);
  c.encoder.hidden_dim = 8;
  c.encoder.heads_hidden = 2;
  c.encoder.heads_out = 1;
  c.lr_grid = {0.01};
  c.batch_grid = {2};
  c.max_epochs = 30;
  c.patience = 5;
  c.val_fraction = 0.25;
  c.seed = 3;
  return c;
}

GraphDataset small_corpus(GraphMode mode, int graphs, std::size_t components = 25) {
  GraphDataset d;
  for (int i = 0; i < graphs; ++i) {
    d.graphs.push_back(build_graph(testing::random_floor(components, 100 + static_cast<std::uint64_t>(i), 3.0, 0.3), 0.3,
                                   mode, HashingEmbedder{}));
    d.splits.push_back(Split::pretrain);
  }
  return d;
}

nn::ModelGraph big_homo(std::size_t n) {
  nn::ModelGraph g;
  g.mode = GraphMode::homogeneous;
  g.features = {Mat::Zero(static_cast<Eigen::Index>(n), kHomogeneousWidth)};
  g.global_index.resize(1);
  g.labels.resize(1);
  g.arc_src.resize(1);
  g.arc_dst.resize(1);
  g.total_nodes = n;
  return g;
}

// 99% two-sided binomial interval half-width (normal approximation).
double binomial_halfwidth(std::size_t n, double p) { return 2.576 * std::sqrt(static_cast<double>(n) * p * (1 - p)); }

// Scalar oracle for (1 - cos)^gamma between two rows, zero norm -> cos 0.
double cos_err(const Mat& a, Eigen::Index i, const Mat& b, Eigen::Index k, double gamma) {
  double dot = 0, na = 0, nb = 0;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    dot += a(i, c) * b(k, c);
    na += a(i, c) * a(i, c);
    nb += b(k, c) * b(k, c);
  }
  const double cosv = (na == 0 || nb == 0) ? 0.0 : dot / (std::sqrt(na) * std::sqrt(nb));
  return std::pow(1.0 - cosv, gamma);
}

}  // namespace

TEST_SUITE("pretrainer") {
  TEST_CASE("mask counts are exact and at least one") {
    CHECK(mask_count(0, 0.5) == 0);
    CHECK(mask_count(1, 0.5) == 1);
    CHECK(mask_count(3, 0.5) == 2);
    CHECK(mask_count(10, 0.6) == 6);
    CHECK(mask_count(10000, 0.5) == 5000);
  }

  TEST_CASE("homogeneous mask fraction lies in the binomial interval of 0.5") {
    const auto g = big_homo(10000);
    std::mt19937_64 rng(1);
    const auto plan = MaskPlan::defaults(GraphMode::homogeneous);
    const auto m = sample_mask(g, plan.rate, rng);
    CHECK(std::abs(static_cast<double>(m.size()) - 5000.0) <= binomial_halfwidth(10000, 0.5));
    CHECK(std::is_sorted(m.rows[0].begin(), m.rows[0].end()));
    CHECK(std::adjacent_find(m.rows[0].begin(), m.rows[0].end()) == m.rows[0].end());
    std::mt19937_64 again(1);
    CHECK(sample_mask(g, plan.rate, again).rows == m.rows);
  }

  TEST_CASE("heterogeneous mask fractions follow per-type rates") {
    const auto plan = MaskPlan::defaults(GraphMode::heterogeneous);
    CHECK(plan.rate[0] == 0.5);
    CHECK(plan.rate[1] == 0.6);
    CHECK(plan.rate[2] == 0.6);
    nn::ModelGraph g;
    g.mode = GraphMode::heterogeneous;
    g.features = {Mat::Zero(4000, kSemanticWidth), Mat::Zero(3000, kTopologicalWidth), Mat::Zero(3000, kSpatialWidth)};
    std::mt19937_64 rng(2);
    const auto m = sample_mask(g, plan.rate, rng);
    for (int t = 0; t < 3; ++t) {
      const double n = static_cast<double>(g.count(t)), p = plan.rate[static_cast<std::size_t>(t)];
      CHECK(std::abs(static_cast<double>(m.rows[static_cast<std::size_t>(t)].size()) - p * n) <=
            binomial_halfwidth(g.count(t), p));
    }
  }

  TEST_CASE("mask plan validation") {
    MaskPlan p;
    p.rate[1] = 1.0;
    CHECK_THROWS_AS(validate_mask_plan(p), std::invalid_argument);
    p = MaskPlan{};
    p.views = 0;
    CHECK_THROWS_AS(validate_mask_plan(p), std::invalid_argument);
  }

  TEST_CASE("masked rows take the token and the rest are untouched") {
    const Mat x = testing::probe(6, 3, 4);
    MaskSet m;
    m.rows = {{1, 4}};
    const std::vector<Var> in = {nn::constant(x)};
    const std::vector<Var> tok = {nn::constant(Mat::Constant(1, 3, 9.0))};
    const Mat out = mask_features(in, m, tok)[0]->value;
    for (Eigen::Index i = 0; i < 6; ++i) {
      if (i == 1 || i == 4) CHECK(out.row(i) == Mat::Constant(1, 3, 9.0));
      else CHECK(out.row(i) == x.row(i));
    }
  }

  TEST_CASE("input reconstruction loss examples and termwise oracle") {
    const Mat x = testing::probe(5, 4, 5);
    MaskSet m;
    m.rows = {{0, 2, 3}};
    std::vector<std::vector<Var>> same(3, {nn::constant(x)});
    CHECK(input_reconstruction_loss(std::span<const Mat>(&x, 1), same, m)->value(0, 0) ==
          doctest::Approx(0.0).epsilon(1e-15));

    Mat one = Mat::Zero(1, 3);
    one << 1, 0, 0;
    Mat orth(1, 3);
    orth << 0, 2, -1;
    MaskSet single;
    single.rows = {{0}};
    std::vector<std::vector<Var>> views(3, {nn::constant(orth)});
    CHECK(input_reconstruction_loss(std::span<const Mat>(&one, 1), views, single)->value(0, 0) == doctest::Approx(3.0));

    for (double gamma : {1.0, 2.0}) {
      std::vector<std::vector<Var>> z;
      std::vector<Mat> zm;
      for (int j = 0; j < 3; ++j) {
        zm.push_back(testing::probe(5, 4, 50 + static_cast<std::uint64_t>(j)));
        z.push_back({nn::constant(zm.back())});
      }
      double oracle = 0.0;
      for (int j = 0; j < 3; ++j)
        for (auto i : m.rows[0]) oracle += cos_err(zm[static_cast<std::size_t>(j)], i, x, i, gamma);
      oracle /= 3.0;
      CHECK(input_reconstruction_loss(std::span<const Mat>(&x, 1), z, m, gamma)->value(0, 0) ==
            doctest::Approx(oracle).epsilon(1e-12));
    }
  }

  TEST_CASE("zero-norm rows count as orthogonal") {
    Mat x = Mat::Zero(2, 3);
    x(1, 0) = 1.0;
    MaskSet m;
    m.rows = {{0, 1}};
    std::vector<std::vector<Var>> z(3, {nn::constant(x)});
    // Row 0 has zero norm: 3 views x 1; row 1 matches: 0. Divided by |V| = 2.
    CHECK(input_reconstruction_loss(std::span<const Mat>(&x, 1), z, m)->value(0, 0) == doctest::Approx(1.5));
  }

  TEST_CASE("latent prediction loss examples and termwise oracle") {
    const std::vector<Mat> xbar = {testing::probe(4, 6, 6), testing::probe(3, 6, 7)};
    std::vector<Var> same = {nn::constant(xbar[0]), nn::constant(xbar[1])};
    std::vector<Var> neg = {nn::constant(-xbar[0]), nn::constant(-xbar[1])};
    CHECK(latent_prediction_loss(same, xbar)->value(0, 0) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(latent_prediction_loss(neg, xbar)->value(0, 0) == doctest::Approx(2.0));

    const std::vector<Mat> zm = {testing::probe(4, 6, 8), testing::probe(3, 6, 9)};
    const std::vector<Var> z = {nn::constant(zm[0]), nn::constant(zm[1])};
    double all = 0.0, sub = 0.0;
    for (std::size_t t = 0; t < 2; ++t)
      for (Eigen::Index i = 0; i < zm[t].rows(); ++i) all += cos_err(zm[t], i, xbar[t], i, 1.0);
    CHECK(latent_prediction_loss(z, xbar)->value(0, 0) == doctest::Approx(all / 7.0).epsilon(1e-12));
    MaskSet m;
    m.rows = {{1, 3}, {0}};
    sub = cos_err(zm[0], 1, xbar[0], 1, 1.0) + cos_err(zm[0], 3, xbar[0], 3, 1.0) + cos_err(zm[1], 0, xbar[1], 0, 1.0);
    CHECK(latent_prediction_loss(z, xbar, &m)->value(0, 0) == doctest::Approx(sub / 3.0).epsilon(1e-12));
  }

  TEST_CASE("ema examples and closed form") {
    auto make = [](double v) {
      nn::ParameterStore s;
      s.add("p", Mat::Constant(2, 2, v));
      return s;
    };
    auto zeta = make(1.0);
    const auto xi = make(0.0);
    ema_update(zeta, xi, 1.0);
    CHECK(zeta.get("p")->value(0, 0) == 1.0);
    ema_update(zeta, xi, 0.9);
    CHECK(zeta.get("p")->value(0, 0) == doctest::Approx(0.9).epsilon(1e-15));
    ema_update(zeta, xi, 0.0);
    CHECK(zeta.get("p")->value(0, 0) == 0.0);

    for (double tau : {0.0, 0.5, 0.996, 1.0}) {
      nn::ParameterStore z, x;
      const Mat z0 = testing::probe(3, 4, 10), x0 = testing::probe(3, 4, 11);
      z.add("p", z0);
      x.add("p", x0);
      const int n = 250;
      for (int i = 0; i < n; ++i) ema_update(z, x, tau);
      const double tn = std::pow(tau, n);
      const Mat closed = tn * z0 + (1 - tn) * x0;
      CHECK((z.get("p")->value - closed).cwiseAbs().maxCoeff() <= 1e-10);
    }
    CHECK_THROWS_AS(ema_update(zeta, xi, 1.5), std::invalid_argument);
  }

  TEST_CASE("full objective gradient matches finite differences") {
    for (auto mode : {GraphMode::heterogeneous, GraphMode::homogeneous}) {
      const auto bg = build_graph(five_node_floor(), 0.3, mode, HashingEmbedder{});
      REQUIRE(bg.node_count() == 5);
      const auto g = nn::to_model_graph(bg);
      auto cfg = tiny_config(mode);
      cfg.gamma = 2.0;
      BigNetModel model(cfg);
      // Move the target away from the online weights so the latent term is not trivially zero.
      for (auto& [name, v] : model.target_store().items()) v->value *= 0.7;
      // Non-zero tokens keep masked rows away from the zero-norm branch.
      for (auto& [name, v] : model.online().items())
        if (name.find("token") != std::string::npos) v->value = testing::probe(v->value.rows(), v->value.cols(), 12);
      std::mt19937_64 rng(5);
      const auto masks = sample_masks(g, cfg.mask, rng);
      const auto res = testing::grad_check([&] { return model.loss(g, masks).total; }, model.online().items());
      INFO(to_string(mode), " ", res.worst);
      CHECK(res.max_rel_error < 1e-4);
    }
  }

  TEST_CASE("zero learning rate keeps parameters and validation loss fixed, then stops early") {
    auto d = small_corpus(GraphMode::heterogeneous, 4);
    auto cfg = tiny_config(GraphMode::heterogeneous);
    cfg.lr_grid = {0.0};
    cfg.patience = 4;
    const auto r = pretrain(d, cfg);
    REQUIRE(r.epochs_run.size() == 1);
    CHECK(r.early_stopped[0]);
    CHECK(r.epochs_run[0] == cfg.patience + 1);
    for (const auto& rec : r.history) CHECK(rec.val_loss == r.history.front().val_loss);
    BigNetModel fresh(cfg);
    for (std::size_t i = 0; i < r.checkpoint.tensors.size(); ++i)
      CHECK(r.checkpoint.tensors[i].second == fresh.online().items()[i].second->value);
  }

  TEST_CASE("training reduces the loss and is reproducible") {
    auto d = small_corpus(GraphMode::heterogeneous, 6);
    auto cfg = tiny_config(GraphMode::heterogeneous);
    cfg.encoder.hidden_dim = 16;
    cfg.max_epochs = 25;
    cfg.patience = 25;
    const auto a = pretrain(d, cfg);
    const auto b = pretrain(d, cfg);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history.back().train_loss < a.history.front().train_loss);
    for (const auto& rec : a.history) CHECK(std::isfinite(rec.train_loss));
  }

  TEST_CASE("grid search visits every point and keeps the best") {
    auto d = small_corpus(GraphMode::homogeneous, 4);
    auto cfg = tiny_config(GraphMode::homogeneous);
    cfg.lr_grid = {0.0, 0.01};
    cfg.batch_grid = {1, 3};
    cfg.max_epochs = 4;
    const auto r = pretrain(d, cfg);
    CHECK(r.epochs_run.size() == 4);
    double best = 1e300;
    for (const auto& rec : r.history) best = std::min(best, rec.val_loss);
    CHECK(r.best_val_loss == best);
    CHECK(r.best_epoch >= 1);
  }

  TEST_CASE("pretraining contract errors") {
    auto d = small_corpus(GraphMode::heterogeneous, 1);
    auto cfg = tiny_config(GraphMode::heterogeneous);
    CHECK_THROWS_AS(pretrain(d, cfg), std::invalid_argument);
    d = small_corpus(GraphMode::heterogeneous, 3);
    CHECK_THROWS_AS(pretrain(d, tiny_config(GraphMode::homogeneous)), std::invalid_argument);
    d.graphs[0].features[0] = std::nanf("");
    d.graphs[1].features[0] = std::nanf("");
    d.graphs[2].features[0] = std::nanf("");
    CHECK_THROWS_AS(pretrain(d, cfg), PretrainError);
    auto bad = cfg;
    bad.mask.rate[0] = 0.0;
    CHECK_THROWS_AS(validate_pretrain_config(bad), std::invalid_argument);
  }

  TEST_CASE("config json round trip") {
    auto c = tiny_config(GraphMode::homogeneous);
    c.latent_masked_only = true;
    c.gamma = 2.0;
    const auto back = pretrain_config_from_json(pretrain_config_to_json(c));
    CHECK(pretrain_config_to_json(back) == pretrain_config_to_json(c));
    CHECK(back.mask == c.mask);
    CHECK_THROWS_AS(pretrain_config_from_json(R"({"bogus": 1})"), std::invalid_argument);
  }

  TEST_CASE("embeddings are deterministic, permutation equivariant and survive a checkpoint") {
    const auto cfg = tiny_config(GraphMode::heterogeneous);
    BigNetModel model(cfg);
    const auto g = build_graph(testing::random_floor(30, 7, 3.0, 0.3), 0.3, GraphMode::heterogeneous, HashingEmbedder{});
    const Mat h = embed(g, model);
    CHECK(h.rows() == static_cast<Eigen::Index>(g.node_count()));
    CHECK(h.cols() == cfg.encoder.hidden_dim);
    CHECK(embed(g, model) == h);

    BimGraph empty;
    empty.mode = GraphMode::heterogeneous;
    empty.rebuild_offsets();
    CHECK(embed(empty, model).rows() == 0);
    BimGraph homo = g;
    homo.mode = GraphMode::homogeneous;
    CHECK_THROWS_AS(embed(homo, model), std::invalid_argument);

    // Reverse node order.
    const std::size_t n = g.node_count();
    BimGraph p = g;
    std::vector<std::uint32_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<std::uint32_t>(n - 1 - i);
    for (std::size_t i = 0; i < n; ++i) p.nodes[perm[i]] = g.nodes[i];
    p.rebuild_offsets();
    for (std::size_t i = 0; i < n; ++i) {
      const auto src = g.feature(i);
      std::copy(src.begin(), src.end(), p.features.begin() + static_cast<std::ptrdiff_t>(p.offsets[perm[i]]));
    }
    for (auto& e : p.edges) e = {perm[e[0]], perm[e[1]]};
    const Mat hp = embed(p, model);
    for (std::size_t i = 0; i < n; ++i)
      CHECK((h.row(static_cast<Eigen::Index>(i)) - hp.row(perm[i])).cwiseAbs().maxCoeff() <= 1e-12);

    const auto path = std::filesystem::temp_directory_path() / "bignet_tests" / "pretrain.bnck";
    nn::save_archive(path, nn::snapshot(model.online(), R"({"pretrain":)" + pretrain_config_to_json(cfg) + "}"));
    const auto loaded = model_from_checkpoint(nn::load_archive(path));
    CHECK(embed(g, loaded) == h);
    nn::Archive foreign;
    foreign.config_json = R"({"kind":"other"})";
    CHECK_THROWS_AS(model_from_checkpoint(foreign), nn::CheckpointError);
  }
}
