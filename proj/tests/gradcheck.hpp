#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "bignet/nn.hpp"

namespace bignet::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t entries = 0;
};

/// Central differences against tape gradients. For each tensor the error is
/// ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8) over up to
/// `per_tensor` sampled entries.
inline GradCheck grad_check(const std::function<nn::Var()>& loss_fn,
                            const std::vector<std::pair<std::string, nn::Var>>& params, double h = 1e-6,
                            std::size_t per_tensor = 30, std::uint64_t seed = 7) {
  for (const auto& [name, p] : params) p->zero_grad();
  {
    nn::Tape tape;
    auto loss = loss_fn();
    tape.backward(loss);
  }
  std::vector<nn::Mat> analytic;
  for (const auto& [name, p] : params)
    analytic.push_back(p->grad.size() ? p->grad : nn::Mat::Zero(p->value.rows(), p->value.cols()));

  auto eval = [&] {
    nn::NoGrad off;
    return loss_fn()->value(0, 0);
  };
  std::mt19937_64 rng(seed);
  GradCheck out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k].second;
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(p.value.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    if (idx.size() > per_tensor) idx.resize(per_tensor);
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (auto i : idx) {
      double& x = p.value.data()[i];
      const double saved = x;
      x = saved + h;
      const double up = eval();
      x = saved - h;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k].data()[i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      ++out.entries;
    }
    const double rel = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
    if (out.worst.empty() || rel > out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst = params[k].first;
    }
  }
  return out;
}

/// Fixed random weighting so a matrix output becomes a scalar loss.
inline nn::Mat probe(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  nn::Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

/// sum(x .* probe), differentiable.
inline nn::Var probe_loss(const nn::Var& x, std::uint64_t seed) {
  return nn::sum_all(nn::mul(x, nn::constant(probe(x->value.rows(), x->value.cols(), seed))));
}

}  // namespace bignet::testing
