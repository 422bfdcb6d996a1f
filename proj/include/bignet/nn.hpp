#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

namespace bignet::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = std::vector<std::uint32_t>;

/// A value in the computation graph. Leaves with `requires_grad` are
/// parameters; interior nodes get a backward closure when recorded on a tape.
struct Node {
  Mat value;
  Mat grad;
  bool requires_grad = false;
  std::function<void(Node&)> backward;

  Mat& grad_buffer() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) grad = Mat::Zero(value.rows(), value.cols());
    return grad;
  }
  void zero_grad() { grad.resize(0, 0); }
};
using Var = std::shared_ptr<Node>;

Var constant(Mat value);
Var parameter(Mat value);

/// Records differentiable ops issued while it is the active tape. Without an
/// active tape (or when no input requires a gradient) ops only compute values.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(Var v) { ops_.push_back(std::move(v)); }
  /// Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse.
  void backward(const Var& loss);
  void clear() { ops_.clear(); }
  std::size_t size() const { return ops_.size(); }

  static Tape* active();

 private:
  std::vector<Var> ops_;
  Tape* previous_ = nullptr;
};

/// Temporarily disables recording (target networks, evaluation).
class NoGrad {
 public:
  NoGrad();
  ~NoGrad();
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  bool previous_;
};

// Elementwise and linear ops.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);  // broadcast a 1 x n row
Var scale(const Var& a, double s);
Var mul(const Var& a, const Var& b);  // elementwise
Var sum_all(const Var& a);  // 1 x 1
Var leaky_relu(const Var& a, double slope);
/// Parametric rectifier with one learnable slope (1 x 1).
Var prelu(const Var& a, const Var& slope);

// Row ops.
Var gather_rows(const Var& a, const Index& rows);
/// Copy of `a` with the listed rows replaced by `token` (1 x cols).
Var replace_rows(const Var& a, const Index& rows, const Var& token);
Var concat_rows(std::span<const Var> parts);

// Attention.
/// s[n, h] = sum_f x[n, h*F + f] * a[h*F + f] with F = cols / heads.
Var head_scores(const Var& x, const Var& a, int heads);
/// Mean over heads: (n x heads*F) -> (n x F).
Var head_mean(const Var& x, int heads);

/// One family of arcs feeding the same destination set.
struct ArcGroup {
  const Index* src = nullptr;
  const Index* dst = nullptr;
  Var messages;    // n_src x heads*F
  Var src_scores;  // n_src x heads
  Var dst_scores;  // n_dst x heads
};

/// Joint softmax over every incoming arc of each destination, per head:
/// e = leaky(src_score + dst_score), alpha = softmax_dst(e),
/// out[dst] += alpha * messages[src]. Every destination must have at least
/// one incoming arc. If `alpha_out` is set it receives alpha per group
/// (arcs x heads).
Var attention_aggregate(std::span<const ArcGroup> groups, std::size_t n_dst, int heads, double negative_slope,
                        std::vector<Mat>* alpha_out = nullptr);

// Losses.
/// sum over `rows` (all rows if null) of (1 - cos(z_i, target_i))^gamma.
/// Rows where either vector has zero norm count cos = 0 and pass no gradient.
Var cosine_error_sum(const Var& z, const Mat& target, const Index* rows, double gamma);
/// sum_i w[y_i] * CE(logits_i, y_i) / sum_i w[y_i] over rows with y_i >= 0.
Var weighted_cross_entropy(const Var& logits, std::span<const int> labels, std::span<const double> class_weights);

}  // namespace bignet::nn
