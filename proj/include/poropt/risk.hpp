#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "poropt/eigensolver.hpp"
#include "poropt/matern.hpp"
#include "poropt/numeric.hpp"
#include "poropt/sensitivity.hpp"

namespace poropt::risk {

using field::MaternField;
using model::SigmoidChain;
using spectral::EigenPairs;
using spectral::GhepConfig;

/// Sample mean with Bessel-corrected spread.
struct SampleEstimate {
  double mean = 0.0;
  double variance = 0.0;   // unbiased sample variance
  double std_error = 0.0;  // sqrt(variance / n)
  int n = 0;
};

inline SampleEstimate summarize(const std::vector<double>& samples) {
  SampleEstimate e;
  e.n = static_cast<int>(samples.size());
  if (e.n == 0) return e;
  e.mean = pairwise_mean(samples);
  if (e.n > 1) {
    std::vector<double> sq(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const double d = samples[i] - e.mean;
      sq[i] = d * d;
    }
    e.variance = pairwise_sum(sq) / (e.n - 1);
    e.std_error = std::sqrt(e.variance / e.n);
  }
  return e;
}

/// Quadratic model of a quantity as a function of the uncertain parameter,
/// m = mean + delta: value + g^T delta + 1/2 sum_j lambda_j (psi_j^T C^{-1}
/// delta)^2. Because the directions are C^{-1}-orthonormal, the coefficients
/// psi^T C^{-1} delta are iid standard normal under delta ~ N(0, C), which
/// gives closed-form moments.
class QuadraticSurrogate {
 public:
  QuadraticSurrogate(double value, Vec grad, const EigenPairs& pairs, const MaternField& field)
      : value_(value), grad_(std::move(grad)), lambda_(pairs.values) {
    proj_.resize(grad_.size(), pairs.count());
    for (int j = 0; j < pairs.count(); ++j)
      proj_.col(j) = field.apply_precision(pairs.vectors.col(j));
  }

  double operator()(const Vec& delta) const {
    Vec c = proj_.transpose() * delta;
    return value_ + grad_.dot(delta) + 0.5 * lambda_.dot(Vec(c.array().square()));
  }

  /// Coordinates of delta in the curvature eigenbasis (iid N(0,1) in law).
  Vec coordinates(const Vec& delta) const { return proj_.transpose() * delta; }

  double mean() const { return value_ + 0.5 * lambda_.sum(); }
  const Vec& lambda() const { return lambda_; }
  const Vec& gradient() const { return grad_; }
  double value_at_mean() const { return value_; }

 private:
  double value_;
  Vec grad_;
  Vec lambda_;
  Eigen::MatrixXd proj_;  // C^{-1} psi_j, columns
};

/// First- and second-order moment expansions of a quantity under the field
/// distribution, from its value, parameter gradient, and the spectrum of the
/// covariance-preconditioned Hessian.
struct TaylorMoments {
  double value_at_mean = 0.0;
  double mean1 = 0.0;  // linear expansion: the value itself
  double mean2 = 0.0;  // quadratic expansion: value + sum(lambda)/2
  double var1 = 0.0;   // g^T C g
  double var2 = 0.0;   // g^T C g + sum(lambda^2)/2
  Vec lambda;
};

inline TaylorMoments taylor_moments(double value, const Vec& grad_m, const Vec& lambda,
                                    const MaternField& field) {
  TaylorMoments t;
  t.value_at_mean = value;
  t.mean1 = value;
  t.mean2 = value + 0.5 * lambda.sum();
  t.var1 = grad_m.dot(field.apply_covariance(grad_m));
  t.var2 = t.var1 + 0.5 * lambda.squaredNorm();
  t.lambda = lambda;
  return t;
}

/// Runs the randomized eigensolver on the chain's parameter Hessian and
/// assembles the moment expansion at the chain's linearization point.
inline std::pair<TaylorMoments, EigenPairs> taylor_moments(const SigmoidChain& chain,
                                                           const MaternField& field,
                                                           const GhepConfig& cfg) {
  EigenPairs pairs = spectral::randomized_ghep(
      chain.gradient().size(), [&](const Vec& x) { return chain.hess_apply(x); },
      [&](const Vec& x) { return field.apply_covariance(x); },
      [&](const Vec& x) { return field.apply_precision(x); }, cfg);
  TaylorMoments t = taylor_moments(chain.value(), chain.gradient(), pairs.values, field);
  return {std::move(t), std::move(pairs)};
}

/// Plain Monte Carlo over field samples m = mean + fluctuation. The sampled
/// function receives the full parameter vector.
inline SampleEstimate monte_carlo(const std::function<double(const Vec&)>& f,
                                  const MaternField& field, int n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw ConfigError("monte_carlo: need at least one sample");
  std::vector<double> vals(static_cast<std::size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) vals[static_cast<std::size_t>(i)] = f(field.sample(seed, i));
  return summarize(vals);
}

/// Control-variate estimate of E[f]: the quadratic surrogate is integrated in
/// closed form and Monte Carlo only sees the residual f - surrogate, whose
/// spread sets the error bar.
struct ControlVariateEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  SampleEstimate residual;
  double surrogate_mean = 0.0;
  /// Var(f samples) / Var(residual samples); how much the surrogate helped.
  double variance_reduction = 0.0;
};

inline ControlVariateEstimate control_variate(const std::function<double(const Vec&)>& f,
                                              const QuadraticSurrogate& surrogate,
                                              const MaternField& field, int n_samples,
                                              std::uint64_t seed) {
  if (n_samples < 1) throw ConfigError("control_variate: need at least one sample");
  std::vector<double> raw(static_cast<std::size_t>(n_samples));
  std::vector<double> res(static_cast<std::size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) {
    Vec m = field.sample(seed, i);
    Vec delta = m - field.config().mean;
    const double v = f(m);
    raw[static_cast<std::size_t>(i)] = v;
    res[static_cast<std::size_t>(i)] = v - surrogate(delta);
  }
  ControlVariateEstimate cv;
  cv.residual = summarize(res);
  cv.surrogate_mean = surrogate.mean();
  cv.mean = cv.surrogate_mean + cv.residual.mean;
  cv.std_error = cv.residual.std_error;
  const SampleEstimate plain = summarize(raw);
  cv.variance_reduction =
      (cv.residual.variance > 0.0) ? plain.variance / cv.residual.variance
                                   : std::numeric_limits<double>::infinity();
  return cv;
}

/// Probability of the rare event {f >= 0}, by indicator counting and by the
/// logistic relaxation l(x) = sigmoid(2 omega x) used inside the optimizer.
struct ChanceEstimate {
  SampleEstimate indicator;
  SampleEstimate smoothed;
  double omega = 0.0;
};

inline ChanceEstimate chance_probability(const std::function<double(const Vec&)>& f,
                                         const MaternField& field, int n_samples,
                                         std::uint64_t seed, double omega) {
  if (n_samples < 1) throw ConfigError("chance_probability: need at least one sample");
  if (!(omega > 0)) throw ConfigError("chance_probability: omega must be positive");
  std::vector<double> ind(static_cast<std::size_t>(n_samples));
  std::vector<double> smooth(static_cast<std::size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) {
    const double v = f(field.sample(seed, i));
    ind[static_cast<std::size_t>(i)] = (v >= 0.0) ? 1.0 : 0.0;
    smooth[static_cast<std::size_t>(i)] = logistic_step(v, omega);
  }
  ChanceEstimate est;
  est.indicator = summarize(ind);
  est.smoothed = summarize(smooth);
  est.omega = omega;
  return est;
}

}  // namespace poropt::risk
