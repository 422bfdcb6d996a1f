#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bignet/gat.hpp"

namespace bignet::nn {

// ------------------------------------------------------------ parameters

Var ParameterStore::add(const std::string& name, Mat init) {
  if (index_.contains(name)) throw std::invalid_argument("parameter '" + name + "' already exists");
  auto v = parameter(std::move(init));
  index_[name] = items_.size();
  items_.emplace_back(name, v);
  return v;
}

Var ParameterStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return items_[it->second].second;
}

std::vector<Var> ParameterStore::vars() const {
  std::vector<Var> out;
  out.reserve(items_.size());
  for (const auto& [name, v] : items_) out.push_back(v);
  return out;
}

std::vector<Var> ParameterStore::vars_with_prefix(const std::string& prefix) const {
  std::vector<Var> out;
  for (const auto& [name, v] : items_)
    if (name.starts_with(prefix)) out.push_back(v);
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& [name, v] : items_) v->zero_grad();
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : items_) n += static_cast<std::size_t>(v->value.size());
  return n;
}

void ParameterStore::copy_from(const ParameterStore& other) {
  if (other.items_.size() != items_.size()) throw std::invalid_argument("copy_from: parameter count differs");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& src = other.items_[i].second->value;
    auto& dst = items_[i].second->value;
    if (src.rows() != dst.rows() || src.cols() != dst.cols())
      throw std::invalid_argument("copy_from: shape mismatch at '" + items_[i].first + "'");
    dst = src;
  }
}

Mat glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-bound, bound);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::prelu: return "prelu";
    case Activation::relu: return "relu";
  }
  return "?";
}

Activation activation_from_string(std::string_view s) {
  for (auto a : {Activation::identity, Activation::prelu, Activation::relu})
    if (to_string(a) == s) return a;
  throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

namespace {

constexpr double kPreluInit = 0.25;

Var activate(const Var& x, Activation a, const Var& slope) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::prelu: return prelu(x, slope);
    case Activation::relu: return leaky_relu(x, 0.0);
  }
  return x;
}

Mat slope_init() { return Mat::Constant(1, 1, kPreluInit); }

}  // namespace

// ----------------------------------------------------------------- layers

TypedGatLayer::TypedGatLayer(ParameterStore& store, const std::string& prefix, GraphMode mode, GatLayerSpec spec,
                             std::mt19937_64& rng)
    : mode_(mode), spec_(std::move(spec)) {
  const int types = type_count(mode);
  if (static_cast<int>(spec_.in_width.size()) != types || static_cast<int>(spec_.out_per_head.size()) != types)
    throw std::invalid_argument("gat layer: widths must be given per node type");
  if (spec_.heads < 1) throw std::invalid_argument("gat layer: heads must be >= 1");
  for (int t = 0; t < types; ++t)
    if (spec_.in_width[static_cast<std::size_t>(t)] <= 0 || spec_.out_per_head[static_cast<std::size_t>(t)] <= 0)
      throw std::invalid_argument("gat layer: widths must be positive");
  for (const auto& f : arc_types(mode)) {
    const int in = spec_.in_width[static_cast<std::size_t>(f.src_type)];
    const int width = spec_.heads * spec_.out_per_head[static_cast<std::size_t>(f.dst_type)];
    const std::string p = prefix + "." + f.name;
    FamilyParams fp;
    fp.w = store.add(p + ".W", glorot(in, width, rng));
    // Each head's attention vector is initialised like a (F x 1) matrix.
    const double bound = std::sqrt(6.0 / (width / spec_.heads + 1.0));
    std::uniform_real_distribution<double> u(-bound, bound);
    Mat a_src(1, width), a_dst(1, width);
    for (Eigen::Index i = 0; i < width; ++i) a_src(0, i) = u(rng);
    for (Eigen::Index i = 0; i < width; ++i) a_dst(0, i) = u(rng);
    fp.a_src = store.add(p + ".a_src", std::move(a_src));
    fp.a_dst = store.add(p + ".a_dst", std::move(a_dst));
    fam_.push_back(fp);
  }
  for (int t = 0; t < types; ++t)
    bias_.push_back(store.add(prefix + ".bias" + std::to_string(t), Mat::Zero(1, out_width(t))));
  if (spec_.activation == Activation::prelu) slope_ = store.add(prefix + ".prelu", slope_init());
}

int TypedGatLayer::out_width(int type) const {
  const int f = spec_.out_per_head[static_cast<std::size_t>(type)];
  return spec_.concat ? f * spec_.heads : f;
}

std::vector<Var> TypedGatLayer::forward(std::span<const Var> x, const ModelGraph& g,
                                        std::vector<std::vector<Mat>>* alpha) const {
  const auto& fams = arc_types(mode_);
  const int types = type_count(mode_);
  if (g.mode != mode_ || static_cast<int>(x.size()) != types)
    throw std::invalid_argument("gat layer: graph mode or type count mismatch");
  for (int t = 0; t < types; ++t)
    if (x[static_cast<std::size_t>(t)]->value.cols() != spec_.in_width[static_cast<std::size_t>(t)])
      throw std::invalid_argument("gat layer: input width mismatch for type " + std::to_string(t));

  std::vector<Var> proj(fams.size());
  for (std::size_t r = 0; r < fams.size(); ++r) proj[r] = matmul(x[static_cast<std::size_t>(fams[r].src_type)], fam_[r].w);

  if (alpha) alpha->assign(static_cast<std::size_t>(types), {});
  std::vector<Var> out(static_cast<std::size_t>(types));
  for (int t = 0; t < types; ++t) {
    std::vector<ArcGroup> groups;
    for (std::size_t r = 0; r < fams.size(); ++r) {
      if (fams[r].dst_type != t) continue;
      if (static_cast<int>(r) == t && !spec_.self_loops) continue;
      groups.push_back({&g.arc_src[r], &g.arc_dst[r], proj[r], head_scores(proj[r], fam_[r].a_src, spec_.heads),
                        head_scores(proj[static_cast<std::size_t>(t)], fam_[r].a_dst, spec_.heads)});
    }
    Var h = attention_aggregate(groups, g.count(t), spec_.heads, spec_.negative_slope,
                                alpha ? &(*alpha)[static_cast<std::size_t>(t)] : nullptr);
    if (!spec_.concat && spec_.heads > 1) h = head_mean(h, spec_.heads);
    h = add_row(h, bias_[static_cast<std::size_t>(t)]);
    out[static_cast<std::size_t>(t)] = activate(h, spec_.activation, slope_);
  }
  return out;
}

TypedGat::TypedGat(ParameterStore& store, const std::string& prefix, GraphMode mode, std::vector<int> in_width,
                   std::vector<int> out_width, const GatConfig& config, bool activate_output, std::mt19937_64& rng) {
  if (config.layers < 1) throw std::invalid_argument("gat: layers must be >= 1");
  if (config.hidden_dim <= 0 || config.heads_hidden <= 0 || config.heads_out <= 0)
    throw std::invalid_argument("gat: dims and heads must be positive");
  if (config.hidden_dim % config.heads_hidden != 0)
    throw std::invalid_argument("gat: hidden_dim must be divisible by heads_hidden");
  const int types = type_count(mode);
  std::vector<int> width = std::move(in_width);
  for (int l = 0; l < config.layers; ++l) {
    const bool last = l + 1 == config.layers;
    GatLayerSpec spec;
    spec.in_width = width;
    spec.heads = last ? config.heads_out : config.heads_hidden;
    spec.concat = !last;
    spec.out_per_head = last ? out_width : std::vector<int>(static_cast<std::size_t>(types), config.hidden_dim / config.heads_hidden);
    spec.activation = (last && !activate_output) ? Activation::identity : config.activation;
    spec.negative_slope = config.negative_slope;
    spec.self_loops = config.self_loops;
    layers_.emplace_back(store, prefix + ".l" + std::to_string(l), mode, spec, rng);
    width.clear();
    for (int t = 0; t < types; ++t) width.push_back(layers_.back().out_width(t));
  }
}

std::vector<Var> TypedGat::forward(std::span<const Var> x, const ModelGraph& g) const {
  std::vector<Var> h(x.begin(), x.end());
  for (const auto& layer : layers_) h = layer.forward(h, g);
  return h;
}

Mlp::Mlp(ParameterStore& store, const std::string& prefix, std::vector<int> in_width, std::vector<int> dims,
         Activation hidden_activation, std::mt19937_64& rng)
    : in_width_(std::move(in_width)), act_(hidden_activation) {
  if (in_width_.empty() || dims.empty()) throw std::invalid_argument("mlp: empty widths");
  for (std::size_t l = 0; l < dims.size(); ++l) {
    Layer layer;
    const std::string p = prefix + ".l" + std::to_string(l);
    if (l == 0) {
      for (std::size_t t = 0; t < in_width_.size(); ++t)
        layer.w.push_back(store.add(p + ".W" + (in_width_.size() > 1 ? std::to_string(t) : std::string()),
                                    glorot(in_width_[t], dims[0], rng)));
    } else {
      layer.w.push_back(store.add(p + ".W", glorot(dims[l - 1], dims[l], rng)));
    }
    layer.b = store.add(p + ".b", Mat::Zero(1, dims[l]));
    if (l + 1 < dims.size() && act_ == Activation::prelu) layer.slope = store.add(p + ".prelu", slope_init());
    layers_.push_back(std::move(layer));
  }
}

Var Mlp::forward(const Var& x, int type) const {
  if (type < 0 || static_cast<std::size_t>(type) >= in_width_.size()) throw std::invalid_argument("mlp: bad type");
  if (x->value.cols() != in_width_[static_cast<std::size_t>(type)])
    throw std::invalid_argument("mlp: input width " + std::to_string(x->value.cols()) + " != " +
                                std::to_string(in_width_[static_cast<std::size_t>(type)]));
  Var h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    h = add_row(matmul(h, layer.w[l == 0 ? static_cast<std::size_t>(type) : 0]), layer.b);
    if (l + 1 < layers_.size()) h = activate(h, act_, layer.slope);
  }
  return h;
}

std::vector<Var> Mlp::forward(std::span<const Var> x) const {
  std::vector<Var> out;
  for (std::size_t t = 0; t < x.size(); ++t) out.push_back(forward(x[t], in_width_.size() > 1 ? static_cast<int>(t) : 0));
  return out;
}

// -------------------------------------------------------------- optimizer

Adam::Adam(std::vector<Var> params, AdamConfig config) : params_(std::move(params)), cfg_(config) {
  for (const auto& p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    if (p.grad.size() == 0) continue;
    Mat g = p.grad;
    if (cfg_.weight_decay != 0.0) g += cfg_.weight_decay * p.value;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
  }
}

double cosine_lr(double lr0, int epoch, int total) {
  if (total <= 0) return lr0;
  const double t = std::clamp(static_cast<double>(epoch) / total, 0.0, 1.0);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace bignet::nn
