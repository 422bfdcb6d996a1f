#include <filesystem>
#include <fstream>
#include <random>

#include "bignet/gat.hpp"
#include "bignet/features.hpp"
#include "bignet/graph.hpp"
#include "doctest.h"
#include "gradcheck.hpp"
#include "helpers.hpp"

using namespace bignet;
using namespace bignet::nn;
using bignet::testing::grad_check;
using bignet::testing::probe_loss;

namespace {

constexpr double kGradTol = 1e-4;

Mat random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  return bignet::testing::probe(r, c, seed) * scale;
}

// Homogeneous toy graph with arbitrary feature width: self loops plus both
// directions of each undirected edge.
ModelGraph toy_graph(int n, const std::vector<std::pair<int, int>>& edges, int width, std::uint64_t seed,
                     bool self_loops = true) {
  ModelGraph g;
  g.mode = GraphMode::homogeneous;
  g.features = {random_mat(n, width, seed)};
  g.global_index.resize(1);
  g.labels.resize(1);
  for (int i = 0; i < n; ++i) {
    g.global_index[0].push_back(static_cast<std::uint32_t>(i));
    g.labels[0].push_back(-1);
  }
  g.arc_src.resize(1);
  g.arc_dst.resize(1);
  if (self_loops)
    for (int i = 0; i < n; ++i) {
      g.arc_src[0].push_back(static_cast<std::uint32_t>(i));
      g.arc_dst[0].push_back(static_cast<std::uint32_t>(i));
    }
  for (auto [a, b] : edges) {
    g.arc_src[0].push_back(static_cast<std::uint32_t>(a));
    g.arc_dst[0].push_back(static_cast<std::uint32_t>(b));
    g.arc_src[0].push_back(static_cast<std::uint32_t>(b));
    g.arc_dst[0].push_back(static_cast<std::uint32_t>(a));
  }
  g.total_nodes = static_cast<std::size_t>(n);
  return g;
}

std::vector<Var> inputs(const ModelGraph& g) {
  std::vector<Var> x;
  for (const auto& f : g.features) x.push_back(constant(f));
  return x;
}

GatLayerSpec homo_spec(int in, int out, int heads, bool concat, Activation act) {
  GatLayerSpec s;
  s.in_width = {in};
  s.out_per_head = {out};
  s.heads = heads;
  s.concat = concat;
  s.activation = act;
  return s;
}

std::vector<std::pair<std::string, Var>> all_params(const ParameterStore& store) {
  return {store.items().begin(), store.items().end()};
}

// Small heterogeneous graph from a random floor, with features scaled down so
// attention logits stay away from the rectifier kink.
ModelGraph small_hetero(std::uint64_t seed) {
  const auto floor = bignet::testing::random_floor(5, seed, 1.5, 0.4);
  const auto g = build_graph(floor, 0.5, GraphMode::heterogeneous, HashingEmbedder{});
  return to_model_graph(g);
}

}  // namespace

TEST_SUITE("gnn_core") {
  TEST_CASE("singleton with identity weights returns its input") {
    auto g = toy_graph(1, {}, 3, 1);
    ParameterStore store;
    std::mt19937_64 rng(1);
    TypedGatLayer layer(store, "g", GraphMode::homogeneous, homo_spec(3, 3, 1, true, Activation::identity), rng);
    store.get("g.node>node.W")->value = Mat::Identity(3, 3);
    store.get("g.node>node.a_src")->value.setZero();
    store.get("g.node>node.a_dst")->value.setZero();
    const auto x = inputs(g);
    const auto out = layer.forward(x, g);
    CHECK((out[0]->value - g.features[0]).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("disconnected nodes only see themselves") {
    auto g = toy_graph(2, {}, 4, 2);
    ParameterStore store;
    std::mt19937_64 rng(2);
    TypedGatLayer layer(store, "g", GraphMode::homogeneous, homo_spec(4, 3, 2, true, Activation::prelu), rng);
    const auto before = layer.forward(inputs(g), g)[0]->value;
    g.features[0].row(1) *= -3.0;
    const auto after = layer.forward(inputs(g), g)[0]->value;
    CHECK(before.row(0) == after.row(0));
    CHECK(before.row(1) != after.row(1));
  }

  TEST_CASE("isolated node without self loops is an error") {
    auto g = toy_graph(3, {{0, 1}}, 2, 3, false);
    ParameterStore store;
    std::mt19937_64 rng(3);
    auto spec = homo_spec(2, 2, 1, true, Activation::identity);
    spec.self_loops = false;
    TypedGatLayer layer(store, "g", GraphMode::homogeneous, spec, rng);
    CHECK_THROWS_AS(layer.forward(inputs(g), g), std::invalid_argument);
  }

  TEST_CASE("attention weights sum to one per destination and head") {
    const auto g = small_hetero(4);
    ParameterStore store;
    std::mt19937_64 rng(4);
    GatLayerSpec spec;
    spec.in_width = type_widths(GraphMode::heterogeneous);
    spec.out_per_head = {4, 4, 4};
    spec.heads = 3;
    TypedGatLayer layer(store, "g", GraphMode::heterogeneous, spec, rng);
    std::vector<std::vector<Mat>> alpha;
    layer.forward(inputs(g), g, &alpha);
    const auto& fams = arc_types(GraphMode::heterogeneous);
    for (int t = 0; t < 3; ++t) {
      Mat sum = Mat::Zero(static_cast<Eigen::Index>(g.count(t)), 3);
      std::size_t gi = 0;
      for (std::size_t r = 0; r < fams.size(); ++r) {
        if (fams[r].dst_type != t) continue;
        const auto& a = alpha[static_cast<std::size_t>(t)][gi++];
        for (std::size_t k = 0; k < g.arc_dst[r].size(); ++k) sum.row(g.arc_dst[r][k]) += a.row(static_cast<Eigen::Index>(k));
      }
      CHECK((sum.array() - 1.0).abs().maxCoeff() <= 1e-12);
    }
  }

  TEST_CASE("gat layer gradients match finite differences") {
    const auto g = toy_graph(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 0}, {1, 4}}, 5, 5);
    for (bool concat : {true, false}) {
      ParameterStore store;
      std::mt19937_64 rng(5);
      TypedGatLayer layer(store, "g", GraphMode::homogeneous, homo_spec(5, 3, 2, concat, Activation::prelu), rng);
      auto x = parameter(g.features[0]);
      auto params = all_params(store);
      params.emplace_back("x", x);
      const auto res = grad_check([&] { return probe_loss(layer.forward(std::vector<Var>{x}, g)[0], 9); }, params);
      INFO(res.worst);
      CHECK(res.max_rel_error < kGradTol);
    }
  }

  TEST_CASE("two-layer typed gat gradients match finite differences") {
    const auto g = small_hetero(6);
    ParameterStore store;
    std::mt19937_64 rng(6);
    GatConfig cfg;
    cfg.hidden_dim = 8;
    cfg.heads_hidden = 2;
    cfg.heads_out = 2;
    TypedGat net(store, "enc", GraphMode::heterogeneous, type_widths(GraphMode::heterogeneous), {3, 2, 4}, cfg, true, rng);
    std::vector<Var> x;
    std::vector<std::pair<std::string, Var>> params = all_params(store);
    for (int t = 0; t < 3; ++t) {
      x.push_back(parameter(g.features[static_cast<std::size_t>(t)]));
      params.emplace_back("x" + std::to_string(t), x.back());
    }
    const auto res = grad_check(
        [&] {
          const auto out = net.forward(x, g);
          Var loss = probe_loss(out[0], 1);
          for (int t = 1; t < 3; ++t) loss = add(loss, probe_loss(out[static_cast<std::size_t>(t)], 1 + t));
          return loss;
        },
        params);
    INFO(res.worst);
    CHECK(res.max_rel_error < kGradTol);
  }

  TEST_CASE("typed layer with only semantic self loops equals the untyped layer") {
    auto hetero = small_hetero(7);
    for (int t = 1; t < 3; ++t) hetero.features[static_cast<std::size_t>(t)].resize(0, hetero.features[static_cast<std::size_t>(t)].cols());
    for (std::size_t r = 0; r < hetero.arc_src.size(); ++r)
      if (r != 0) {
        hetero.arc_src[r].clear();
        hetero.arc_dst[r].clear();
      }
    ParameterStore hs, ss;
    std::mt19937_64 r1(7), r2(8);
    GatLayerSpec spec;
    spec.in_width = type_widths(GraphMode::heterogeneous);
    spec.out_per_head = {5, 5, 5};
    spec.heads = 2;
    TypedGatLayer typed(hs, "t", GraphMode::heterogeneous, spec, r1);
    TypedGatLayer plain(ss, "p", GraphMode::homogeneous, homo_spec(kSemanticWidth, 5, 2, true, Activation::prelu), r2);
    ss.get("p.node>node.W")->value = hs.get("t.sem>sem.W")->value;
    ss.get("p.node>node.a_src")->value = hs.get("t.sem>sem.a_src")->value;
    ss.get("p.node>node.a_dst")->value = hs.get("t.sem>sem.a_dst")->value;
    ss.get("p.bias0")->value = hs.get("t.bias0")->value;
    ss.get("p.prelu")->value = hs.get("t.prelu")->value;
    ModelGraph homo = toy_graph(static_cast<int>(hetero.count(0)), {}, kSemanticWidth, 1);
    homo.features[0] = hetero.features[0];
    const auto a = typed.forward(inputs(hetero), hetero)[0]->value;
    const auto b = plain.forward(inputs(homo), homo)[0]->value;
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("zeroed spatial-to-semantic weights cut spatial influence") {
    auto g = small_hetero(9);
    REQUIRE(g.count(2) > 0);
    ParameterStore store;
    std::mt19937_64 rng(9);
    GatLayerSpec spec;
    spec.in_width = type_widths(GraphMode::heterogeneous);
    spec.out_per_head = {4, 4, 4};
    spec.heads = 2;
    TypedGatLayer layer(store, "g", GraphMode::heterogeneous, spec, rng);
    const auto with = layer.forward(inputs(g), g)[0]->value;
    g.features[2] *= 0.5;
    const auto changed = layer.forward(inputs(g), g)[0]->value;
    CHECK((with - changed).cwiseAbs().maxCoeff() > 0.0);
    store.get("g.spat>sem.W")->value.setZero();
    const auto base = layer.forward(inputs(g), g)[0]->value;
    g.features[2] = random_mat(g.features[2].rows(), g.features[2].cols(), 3);
    const auto after = layer.forward(inputs(g), g)[0]->value;
    CHECK((base - after).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("relabelling nodes permutes outputs") {
    const int n = 8;
    const std::vector<std::pair<int, int>> edges = {{0, 1}, {1, 2}, {2, 3}, {3, 7}, {4, 5}, {5, 6}, {6, 0}, {2, 6}};
    const auto g = toy_graph(n, edges, 4, 10);
    std::vector<std::uint32_t> perm = {3, 7, 0, 5, 1, 6, 2, 4};  // old -> new
    ModelGraph p = g;
    for (int i = 0; i < n; ++i) p.features[0].row(perm[static_cast<std::size_t>(i)]) = g.features[0].row(i);
    for (std::size_t k = 0; k < g.arc_src[0].size(); ++k) {
      p.arc_src[0][k] = perm[g.arc_src[0][k]];
      p.arc_dst[0][k] = perm[g.arc_dst[0][k]];
    }
    ParameterStore store;
    std::mt19937_64 rng(10);
    GatConfig cfg;
    cfg.hidden_dim = 6;
    cfg.heads_hidden = 3;
    TypedGat net(store, "e", GraphMode::homogeneous, {4}, {5}, cfg, true, rng);
    const auto a = net.forward(inputs(g), g)[0]->value;
    const auto b = net.forward(inputs(p), p)[0]->value;
    for (int i = 0; i < n; ++i) CHECK(a.row(i) == b.row(perm[static_cast<std::size_t>(i)]));
  }

  TEST_CASE("forward passes are deterministic") {
    const auto g = small_hetero(11);
    ParameterStore store;
    std::mt19937_64 rng(11);
    GatConfig cfg;
    cfg.hidden_dim = 8;
    cfg.heads_hidden = 4;
    TypedGat net(store, "e", GraphMode::heterogeneous, type_widths(GraphMode::heterogeneous), {8, 8, 8}, cfg, true, rng);
    const auto a = net.forward(inputs(g), g);
    const auto b = net.forward(inputs(g), g);
    for (int t = 0; t < 3; ++t) CHECK(a[static_cast<std::size_t>(t)]->value == b[static_cast<std::size_t>(t)]->value);
  }

  TEST_CASE("mlp identity and zero weights") {
    ParameterStore store;
    std::mt19937_64 rng(12);
    Mlp mlp(store, "m", {4}, {4, 4}, Activation::identity, rng);
    store.get("m.l0.W")->value = Mat::Identity(4, 4);
    store.get("m.l1.W")->value = Mat::Identity(4, 4);
    const Mat x = random_mat(5, 4, 12);
    CHECK(mlp.forward(constant(x))->value == x);
    store.get("m.l0.W")->value.setZero();
    store.get("m.l1.W")->value.setZero();
    store.get("m.l1.b")->value << 1, 2, 3, 4;
    const Mat y = mlp.forward(constant(x))->value;
    for (int i = 0; i < 5; ++i) CHECK(y.row(i) == store.get("m.l1.b")->value.row(0));
    CHECK_THROWS_AS(mlp.forward(constant(random_mat(2, 3, 1))), std::invalid_argument);
  }

  TEST_CASE("mlp gradients match finite differences") {
    ParameterStore store;
    std::mt19937_64 rng(13);
    Mlp mlp(store, "m", {6, 3}, {5, 4, 2}, Activation::prelu, rng);
    auto x0 = parameter(random_mat(4, 6, 13));
    auto x1 = parameter(random_mat(3, 3, 14));
    auto params = all_params(store);
    params.emplace_back("x0", x0);
    params.emplace_back("x1", x1);
    const auto res = grad_check([&] { return add(probe_loss(mlp.forward(x0, 0), 2), probe_loss(mlp.forward(x1, 1), 3)); }, params);
    INFO(res.worst);
    CHECK(res.max_rel_error < kGradTol);
  }

  TEST_CASE("cosine error and weighted cross-entropy gradients") {
    const Mat target = random_mat(7, 5, 20);
    Mat tz = target;
    tz.row(2).setZero();
    for (double gamma : {1.0, 2.0, 3.0}) {
      auto z = parameter(random_mat(7, 5, 21));
      const Index rows = {0, 2, 3, 6};
      const auto res = grad_check([&] { return cosine_error_sum(z, tz, &rows, gamma); }, {{"z", z}});
      CHECK(res.max_rel_error < kGradTol);
      const auto all = grad_check([&] { return cosine_error_sum(z, target, nullptr, gamma); }, {{"z", z}});
      CHECK(all.max_rel_error < kGradTol);
    }
    auto logits = parameter(random_mat(9, 4, 22));
    const std::vector<int> labels = {0, 1, 2, 3, -1, 0, 0, 3, 2};
    const std::vector<double> weights = {0.4, 1.7, 1.2, 0.7};
    const auto res = grad_check([&] { return weighted_cross_entropy(logits, labels, weights); }, {{"logits", logits}});
    CHECK(res.max_rel_error < kGradTol);
  }

  TEST_CASE("loss values against termwise oracles") {
    const Mat x = random_mat(4, 3, 30);
    auto z = constant(x);
    CHECK(cosine_error_sum(z, x, nullptr, 1.0)->value(0, 0) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(cosine_error_sum(constant(-x), x, nullptr, 1.0)->value(0, 0) == doctest::Approx(8.0));
    Mat zero = x;
    zero.row(1).setZero();
    CHECK(cosine_error_sum(constant(zero), x, nullptr, 1.0)->value(0, 0) == doctest::Approx(1.0).epsilon(1e-12));

    const Mat logits = random_mat(5, 4, 31);
    const std::vector<int> labels = {3, 1, -1, 0, 1};
    const std::vector<double> w = {1.0, 2.0, 0.5, 3.0};
    double num = 0.0, den = 0.0;
    for (int i = 0; i < 5; ++i) {
      if (labels[static_cast<std::size_t>(i)] < 0) continue;
      double z = 0.0;
      for (int k = 0; k < 4; ++k) z += std::exp(logits(i, k));
      const double wi = w[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
      num += wi * -std::log(std::exp(logits(i, labels[static_cast<std::size_t>(i)])) / z);
      den += wi;
    }
    CHECK(weighted_cross_entropy(constant(logits), labels, w)->value(0, 0) == doctest::Approx(num / den).epsilon(1e-12));
  }

  TEST_CASE("adam minimises a quadratic and cosine schedule endpoints") {
    auto p = parameter(Mat::Constant(1, 3, 5.0));
    Adam opt({p});
    for (int i = 0; i < 2000; ++i) {
      p->zero_grad();
      Tape tape;
      auto loss = sum_all(mul(p, p));
      tape.backward(loss);
      opt.step(0.05);
    }
    CHECK(p->value.cwiseAbs().maxCoeff() < 1e-3);
    CHECK(cosine_lr(0.01, 0, 100) == 0.01);
    CHECK(cosine_lr(0.01, 50, 100) == doctest::Approx(0.005));
    CHECK(cosine_lr(0.01, 100, 100) == doctest::Approx(0.0));
  }

  TEST_CASE("no tape means no recording") {
    auto p = parameter(Mat::Ones(2, 2));
    auto y = matmul(p, p);
    CHECK_FALSE(y->requires_grad);
    Tape tape;
    {
      NoGrad off;
      CHECK_FALSE(matmul(p, p)->requires_grad);
    }
    CHECK(matmul(p, p)->requires_grad);
    CHECK(tape.size() == 1);
  }

  TEST_CASE("checkpoint archive round trip and corruption") {
    ParameterStore store;
    std::mt19937_64 rng(40);
    Mlp mlp(store, "m", {3}, {4, 2}, Activation::prelu, rng);
    const auto path = std::filesystem::temp_directory_path() / "bignet_tests" / "ck.bnck";
    save_archive(path, snapshot(store, R"({"kind":"test"})"));
    ParameterStore other;
    std::mt19937_64 rng2(41);
    Mlp mlp2(other, "m", {3}, {4, 2}, Activation::prelu, rng2);
    const auto archive = load_archive(path);
    CHECK(archive.config_json == R"({"kind":"test"})");
    restore(other, archive);
    for (std::size_t i = 0; i < store.items().size(); ++i)
      CHECK(store.items()[i].second->value == other.items()[i].second->value);

    std::string bytes;
    {
      std::ifstream in(path, std::ios::binary);
      bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    bytes[bytes.size() / 2] ^= 0x11;
    {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_archive(path), CheckpointError);

    ParameterStore wrong;
    std::mt19937_64 rng3(42);
    Mlp mlp3(wrong, "m", {3}, {5, 2}, Activation::prelu, rng3);
    CHECK_THROWS_AS(restore(wrong, archive), CheckpointError);
  }

  TEST_CASE("model graph conversion keeps types and arcs") {
    const auto floor = bignet::testing::random_floor(12, 3, 2.0, 0.3);
    const auto g = build_graph(floor, 0.3, GraphMode::heterogeneous, HashingEmbedder{});
    const auto mg = to_model_graph(g);
    const auto counts = g.count_by_type();
    std::size_t arcs = 0;
    for (int t = 0; t < 3; ++t) CHECK(mg.count(t) == counts[static_cast<std::size_t>(t)]);
    for (const auto& a : mg.arc_src) arcs += a.size();
    CHECK(arcs == g.node_count() + 2 * g.edge_count());
    const BimGraph* two[] = {&g, &g};
    const auto merged = to_model_graph(std::span<const BimGraph* const>(two));
    CHECK(merged.total_nodes == 2 * g.node_count());
    CHECK(merged.count(0) == 2 * counts[0]);

    auto bad = mg;
    bad.arc_src.pop_back();
    CHECK_THROWS_AS(validate_model_graph(bad), std::invalid_argument);
    bad = mg;
    if (!bad.arc_src[3].empty()) {
      bad.arc_dst[3][0] = static_cast<std::uint32_t>(mg.count(1) + 5);
      CHECK_THROWS_AS(validate_model_graph(bad), std::invalid_argument);
    }
  }
}
