#include <cmath>
#include <limits>
#include <string>

#include "bignet/nn.hpp"

namespace bignet::nn {

namespace {

thread_local Tape* g_active = nullptr;
thread_local bool g_grad_enabled = true;

bool needs_grad(std::initializer_list<const Var*> inputs) {
  if (!g_active || !g_grad_enabled) return false;
  for (const Var* v : inputs)
    if (*v && (*v)->requires_grad) return true;
  return false;
}

Var finish(Mat value, bool record, std::function<void(Node&)> backward) {
  auto out = std::make_shared<Node>();
  out->value = std::move(value);
  if (record) {
    out->requires_grad = true;
    out->backward = std::move(backward);
    g_active->record(out);
  }
  return out;
}

void check(bool ok, const char* op, const std::string& what) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": " + what);
}

std::string shape(const Mat& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

}  // namespace

Var constant(Mat value) {
  auto v = std::make_shared<Node>();
  v->value = std::move(value);
  return v;
}

Var parameter(Mat value) {
  auto v = constant(std::move(value));
  v->requires_grad = true;
  return v;
}

Tape::Tape() : previous_(g_active) { g_active = this; }
Tape::~Tape() { g_active = previous_; }
Tape* Tape::active() { return g_active; }

void Tape::backward(const Var& loss) {
  loss->grad_buffer().setOnes();
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    Node& n = **it;
    if (n.backward && n.grad.size() > 0) n.backward(n);
  }
}

NoGrad::NoGrad() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGrad::~NoGrad() { g_grad_enabled = previous_; }

Var matmul(const Var& a, const Var& b) {
  check(a->value.cols() == b->value.rows(), "matmul", shape(a->value) + " * " + shape(b->value));
  Mat out;
  out.noalias() = a->value * b->value;
  return finish(std::move(out), needs_grad({&a, &b}), [a, b](Node& self) {
    if (a->requires_grad) a->grad_buffer().noalias() += self.grad * b->value.transpose();
    if (b->requires_grad) b->grad_buffer().noalias() += a->value.transpose() * self.grad;
  });
}

Var add(const Var& a, const Var& b) {
  check(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(), "add",
        shape(a->value) + " + " + shape(b->value));
  return finish(a->value + b->value, needs_grad({&a, &b}), [a, b](Node& self) {
    if (a->requires_grad) a->grad_buffer() += self.grad;
    if (b->requires_grad) b->grad_buffer() += self.grad;
  });
}

Var add_row(const Var& a, const Var& row) {
  check(row->value.rows() == 1 && row->value.cols() == a->value.cols(), "add_row",
        shape(a->value) + " + " + shape(row->value));
  Mat out = a->value;
  out.rowwise() += row->value.row(0);
  return finish(std::move(out), needs_grad({&a, &row}), [a, row](Node& self) {
    if (a->requires_grad) a->grad_buffer() += self.grad;
    if (row->requires_grad) row->grad_buffer() += self.grad.colwise().sum();
  });
}

Var scale(const Var& a, double s) {
  return finish(a->value * s, needs_grad({&a}), [a, s](Node& self) { a->grad_buffer() += self.grad * s; });
}

Var mul(const Var& a, const Var& b) {
  check(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(), "mul",
        shape(a->value) + " .* " + shape(b->value));
  return finish(a->value.cwiseProduct(b->value), needs_grad({&a, &b}), [a, b](Node& self) {
    if (a->requires_grad) a->grad_buffer() += self.grad.cwiseProduct(b->value);
    if (b->requires_grad) b->grad_buffer() += self.grad.cwiseProduct(a->value);
  });
}

Var sum_all(const Var& a) {
  Mat out(1, 1);
  out(0, 0) = a->value.sum();
  return finish(std::move(out), needs_grad({&a}),
                [a](Node& self) { a->grad_buffer().array() += self.grad(0, 0); });
}

Var leaky_relu(const Var& a, double slope) {
  Mat out = a->value.unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return finish(std::move(out), needs_grad({&a}), [a, slope](Node& self) {
    a->grad_buffer().array() +=
        self.grad.array() * a->value.array().unaryExpr([slope](double x) { return x > 0.0 ? 1.0 : slope; });
  });
}

Var prelu(const Var& a, const Var& slope) {
  check(slope->value.size() == 1, "prelu", "slope must be 1x1");
  const double s = slope->value(0, 0);
  Mat out = a->value.unaryExpr([s](double x) { return x > 0.0 ? x : s * x; });
  return finish(std::move(out), needs_grad({&a, &slope}), [a, slope](Node& self) {
    const double s = slope->value(0, 0);
    if (a->requires_grad)
      a->grad_buffer().array() += self.grad.array() * a->value.unaryExpr([s](double x) { return x > 0.0 ? 1.0 : s; }).array();
    if (slope->requires_grad)
      slope->grad_buffer()(0, 0) +=
          (self.grad.array() * a->value.unaryExpr([](double x) { return x > 0.0 ? 0.0 : x; }).array()).sum();
  });
}

Var gather_rows(const Var& a, const Index& rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), a->value.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    check(rows[i] < a->value.rows(), "gather_rows", "row index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a->value.row(rows[i]);
  }
  return finish(std::move(out), needs_grad({&a}), [a, rows](Node& self) {
    Mat& g = a->grad_buffer();
    for (std::size_t i = 0; i < rows.size(); ++i) g.row(rows[i]) += self.grad.row(static_cast<Eigen::Index>(i));
  });
}

Var replace_rows(const Var& a, const Index& rows, const Var& token) {
  check(token->value.rows() == 1 && token->value.cols() == a->value.cols(), "replace_rows",
        "token " + shape(token->value) + " vs " + shape(a->value));
  Mat out = a->value;
  for (auto r : rows) {
    check(r < out.rows(), "replace_rows", "row index out of range");
    out.row(r) = token->value.row(0);
  }
  return finish(std::move(out), needs_grad({&a, &token}), [a, rows, token](Node& self) {
    if (a->requires_grad) {
      Mat g = self.grad;
      for (auto r : rows) g.row(r).setZero();
      a->grad_buffer() += g;
    }
    if (token->requires_grad) {
      Mat& t = token->grad_buffer();
      for (auto r : rows) t.row(0) += self.grad.row(r);
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  Eigen::Index rows = 0, cols = -1;
  bool record = false;
  for (const auto& p : parts) {
    if (cols < 0) cols = p->value.cols();
    check(p->value.cols() == cols, "concat_rows", "column mismatch");
    rows += p->value.rows();
    record = record || needs_grad({&p});
  }
  Mat out(rows, std::max<Eigen::Index>(cols, 0));
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p->value.rows()) = p->value;
    at += p->value.rows();
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return finish(std::move(out), record, [keep](Node& self) {
    Eigen::Index at = 0;
    for (const auto& p : keep) {
      if (p->requires_grad) p->grad_buffer() += self.grad.middleRows(at, p->value.rows());
      at += p->value.rows();
    }
  });
}

Var head_scores(const Var& x, const Var& a, int heads) {
  const Eigen::Index width = x->value.cols();
  check(heads > 0 && width % heads == 0, "head_scores", "width not divisible by heads");
  check(a->value.rows() == 1 && a->value.cols() == width, "head_scores", "attention vector " + shape(a->value));
  const Eigen::Index f = width / heads;
  Mat out(x->value.rows(), heads);
  for (int h = 0; h < heads; ++h)
    out.col(h) = x->value.middleCols(h * f, f) * a->value.middleCols(h * f, f).transpose();
  return finish(std::move(out), needs_grad({&x, &a}), [x, a, heads, f](Node& self) {
    for (int h = 0; h < heads; ++h) {
      if (x->requires_grad)
        x->grad_buffer().middleCols(h * f, f).noalias() += self.grad.col(h) * a->value.middleCols(h * f, f);
      if (a->requires_grad)
        a->grad_buffer().middleCols(h * f, f).noalias() += self.grad.col(h).transpose() * x->value.middleCols(h * f, f);
    }
  });
}

Var head_mean(const Var& x, int heads) {
  const Eigen::Index width = x->value.cols();
  check(heads > 0 && width % heads == 0, "head_mean", "width not divisible by heads");
  const Eigen::Index f = width / heads;
  Mat out = Mat::Zero(x->value.rows(), f);
  for (int h = 0; h < heads; ++h) out += x->value.middleCols(h * f, f);
  out /= heads;
  return finish(std::move(out), needs_grad({&x}), [x, heads, f](Node& self) {
    Mat& g = x->grad_buffer();
    for (int h = 0; h < heads; ++h) g.middleCols(h * f, f) += self.grad / heads;
  });
}

Var attention_aggregate(std::span<const ArcGroup> groups, std::size_t n_dst, int heads, double negative_slope,
                        std::vector<Mat>* alpha_out) {
  check(heads > 0, "attention_aggregate", "heads must be positive");
  Eigen::Index width = -1;
  bool record = false;
  for (const auto& g : groups) {
    check(g.src && g.dst && g.src->size() == g.dst->size(), "attention_aggregate", "arc index lists differ in size");
    if (width < 0) width = g.messages->value.cols();
    check(g.messages->value.cols() == width && width % heads == 0, "attention_aggregate", "message width mismatch");
    check(g.src_scores->value.rows() == g.messages->value.rows() && g.src_scores->value.cols() == heads,
          "attention_aggregate", "source score shape");
    check(g.dst_scores->value.rows() == static_cast<Eigen::Index>(n_dst) && g.dst_scores->value.cols() == heads,
          "attention_aggregate", "destination score shape");
    record = record || needs_grad({&g.messages, &g.src_scores, &g.dst_scores});
  }
  if (width < 0) width = 0;
  const Eigen::Index f = heads > 0 ? width / heads : 0;
  const double ninf = -std::numeric_limits<double>::infinity();

  struct Saved {
    Mat raw;    // arcs x heads, before the leaky rectifier
    Mat alpha;  // arcs x heads
  };
  auto saved = std::make_shared<std::vector<Saved>>(groups.size());
  Mat mx = Mat::Constant(static_cast<Eigen::Index>(n_dst), heads, ninf);
  std::vector<char> reached(n_dst, 0);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    const auto& src = *g.src;
    const auto& dst = *g.dst;
    Mat raw(static_cast<Eigen::Index>(src.size()), heads);
    for (std::size_t k = 0; k < src.size(); ++k) {
      check(src[k] < g.messages->value.rows() && dst[k] < n_dst, "attention_aggregate", "arc endpoint out of range");
      reached[dst[k]] = 1;
      for (int h = 0; h < heads; ++h) {
        const double r = g.src_scores->value(src[k], h) + g.dst_scores->value(dst[k], h);
        raw(static_cast<Eigen::Index>(k), h) = r;
        const double e = r > 0.0 ? r : negative_slope * r;
        mx(dst[k], h) = std::max(mx(dst[k], h), e);
      }
    }
    (*saved)[gi].raw = std::move(raw);
  }
  for (std::size_t v = 0; v < n_dst; ++v)
    if (!reached[v])
      throw std::invalid_argument("attention_aggregate: destination " + std::to_string(v) + " has no incoming arcs");

  Mat denom = Mat::Zero(static_cast<Eigen::Index>(n_dst), heads);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& dst = *groups[gi].dst;
    auto& s = (*saved)[gi];
    s.alpha.resize(s.raw.rows(), heads);
    for (Eigen::Index k = 0; k < s.raw.rows(); ++k)
      for (int h = 0; h < heads; ++h) {
        const double r = s.raw(k, h);
        const double e = r > 0.0 ? r : negative_slope * r;
        const double x = std::exp(e - mx(dst[static_cast<std::size_t>(k)], h));
        s.alpha(k, h) = x;
        denom(dst[static_cast<std::size_t>(k)], h) += x;
      }
  }
  Mat out = Mat::Zero(static_cast<Eigen::Index>(n_dst), width);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    const auto& src = *g.src;
    const auto& dst = *g.dst;
    auto& s = (*saved)[gi];
    for (std::size_t k = 0; k < src.size(); ++k) {
      const auto ki = static_cast<Eigen::Index>(k);
      for (int h = 0; h < heads; ++h) {
        const double a = s.alpha(ki, h) / denom(dst[k], h);
        s.alpha(ki, h) = a;
        out.row(dst[k]).segment(h * f, f) += a * g.messages->value.row(src[k]).segment(h * f, f);
      }
    }
  }
  if (alpha_out) {
    alpha_out->clear();
    for (const auto& s : *saved) alpha_out->push_back(s.alpha);
  }

  std::vector<ArcGroup> keep(groups.begin(), groups.end());
  return finish(std::move(out), record, [keep, saved, heads, f, negative_slope, n_dst](Node& self) {
    const Mat& dout = self.grad;
    std::vector<Mat> dalpha(keep.size());
    Mat weighted = Mat::Zero(static_cast<Eigen::Index>(n_dst), heads);  // sum_k alpha * dalpha per destination
    for (std::size_t gi = 0; gi < keep.size(); ++gi) {
      const auto& g = keep[gi];
      const auto& src = *g.src;
      const auto& dst = *g.dst;
      const auto& s = (*saved)[gi];
      Mat& da = dalpha[gi];
      da.resize(s.alpha.rows(), heads);
      Mat* dm = g.messages->requires_grad ? &g.messages->grad_buffer() : nullptr;
      for (std::size_t k = 0; k < src.size(); ++k) {
        const auto ki = static_cast<Eigen::Index>(k);
        for (int h = 0; h < heads; ++h) {
          const auto dseg = dout.row(dst[k]).segment(h * f, f);
          da(ki, h) = dseg.dot(g.messages->value.row(src[k]).segment(h * f, f));
          weighted(dst[k], h) += s.alpha(ki, h) * da(ki, h);
          if (dm) dm->row(src[k]).segment(h * f, f) += s.alpha(ki, h) * dseg;
        }
      }
    }
    for (std::size_t gi = 0; gi < keep.size(); ++gi) {
      const auto& g = keep[gi];
      const auto& src = *g.src;
      const auto& dst = *g.dst;
      const auto& s = (*saved)[gi];
      const bool want_src = g.src_scores->requires_grad, want_dst = g.dst_scores->requires_grad;
      if (!want_src && !want_dst) continue;
      Mat* ds = want_src ? &g.src_scores->grad_buffer() : nullptr;
      Mat* dd = want_dst ? &g.dst_scores->grad_buffer() : nullptr;
      for (std::size_t k = 0; k < src.size(); ++k) {
        const auto ki = static_cast<Eigen::Index>(k);
        for (int h = 0; h < heads; ++h) {
          const double dl = s.alpha(ki, h) * (dalpha[gi](ki, h) - weighted(dst[k], h));
          const double de = dl * (s.raw(ki, h) > 0.0 ? 1.0 : negative_slope);
          if (ds) (*ds)(src[k], h) += de;
          if (dd) (*dd)(dst[k], h) += de;
        }
      }
    }
  });
}

Var cosine_error_sum(const Var& z, const Mat& target, const Index* rows, double gamma) {
  check(z->value.rows() == target.rows() && z->value.cols() == target.cols(), "cosine_error_sum",
        shape(z->value) + " vs target " + shape(target));
  check(gamma >= 1.0, "cosine_error_sum", "gamma must be >= 1");
  Index all;
  if (!rows) {
    all.resize(static_cast<std::size_t>(z->value.rows()));
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::uint32_t>(i);
    rows = &all;
  }
  const Index idx = *rows;
  double total = 0.0;
  for (auto r : idx) {
    check(r < z->value.rows(), "cosine_error_sum", "row index out of range");
    const double nz = z->value.row(r).norm(), nx = target.row(r).norm();
    const double c = (nz == 0.0 || nx == 0.0) ? 0.0 : z->value.row(r).dot(target.row(r)) / (nz * nx);
    total += std::pow(1.0 - c, gamma);
  }
  Mat out(1, 1);
  out(0, 0) = total;
  return finish(std::move(out), needs_grad({&z}), [z, target, idx, gamma](Node& self) {
    Mat& g = z->grad_buffer();
    const double up = self.grad(0, 0);
    for (auto r : idx) {
      const auto zr = z->value.row(r);
      const auto xr = target.row(r);
      const double nz = zr.norm(), nx = xr.norm();
      if (nz == 0.0 || nx == 0.0) continue;
      const double c = zr.dot(xr) / (nz * nx);
      const double coef = -gamma * std::pow(1.0 - c, gamma - 1.0) * up;
      g.row(r) += coef * (xr / (nz * nx) - (c / (nz * nz)) * zr);
    }
  });
}

Var weighted_cross_entropy(const Var& logits, std::span<const int> labels, std::span<const double> class_weights) {
  const Eigen::Index n = logits->value.rows(), k = logits->value.cols();
  check(static_cast<Eigen::Index>(labels.size()) == n, "weighted_cross_entropy", "label count mismatch");
  check(static_cast<Eigen::Index>(class_weights.size()) == k, "weighted_cross_entropy", "weight count mismatch");
  Mat prob(n, k);
  double loss = 0.0, wsum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = logits->value.row(i).maxCoeff();
    prob.row(i) = (logits->value.row(i).array() - m).exp();
    const double z = prob.row(i).sum();
    prob.row(i) /= z;
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0) continue;
    check(y < k, "weighted_cross_entropy", "label out of range");
    const double w = class_weights[static_cast<std::size_t>(y)];
    loss += w * (std::log(z) + m - logits->value(i, y));
    wsum += w;
  }
  check(wsum > 0.0, "weighted_cross_entropy", "no labelled rows with positive weight");
  Mat out(1, 1);
  out(0, 0) = loss / wsum;
  std::vector<int> lab(labels.begin(), labels.end());
  std::vector<double> cw(class_weights.begin(), class_weights.end());
  return finish(std::move(out), needs_grad({&logits}), [logits, prob, lab, cw, wsum](Node& self) {
    Mat& g = logits->grad_buffer();
    const double up = self.grad(0, 0) / wsum;
    for (Eigen::Index i = 0; i < prob.rows(); ++i) {
      const int y = lab[static_cast<std::size_t>(i)];
      if (y < 0) continue;
      const double w = cw[static_cast<std::size_t>(y)] * up;
      g.row(i) += w * prob.row(i);
      g(i, y) -= w;
    }
  });
}

}  // namespace bignet::nn
