#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "scarbench/error.hpp"
#include "scarbench/rng.hpp"
#include "scarbench/types.hpp"

namespace scarbench::loss {

/// Weights of the Dice, cross-entropy and KL terms plus smoothing and
/// numerical constants. Defaults are the published 0.2 / 0.2 / 0.6 split
/// with sigma = 2.
struct LossConfig {
  double w_dice = 0.2;
  double w_ce = 0.2;
  double w_kl = 0.6;
  double sigma = 2.0;
  double eps_dice = 1e-6;
  double eps_log = 1e-12;

  void validate() const {
    auto nonneg = [](double w) { return std::isfinite(w) && w >= 0.0; };
    if (!nonneg(w_dice) || !nonneg(w_ce) || !nonneg(w_kl)) {
      throw Error(Errc::InvalidParameter, "loss weights must be finite and non-negative");
    }
    if (std::abs(w_dice + w_ce + w_kl - 1.0) > 1e-9) {
      throw Error(Errc::InvalidParameter, "loss weights must sum to 1");
    }
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
      throw Error(Errc::InvalidParameter, "sigma must be positive");
    }
    if (!(eps_dice > 0.0) || !(eps_log > 0.0)) {
      throw Error(Errc::InvalidParameter, "epsilons must be positive");
    }
  }
};

/// Non-negative per-pixel probabilities summing to one.
class PixelDistribution {
 public:
  PixelDistribution(int width, int height, std::vector<double> p)
      : width_(width), height_(height), p_(std::move(p)) {
    if (width <= 0 || height <= 0 ||
        p_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
      throw Error(Errc::DimensionMismatch, "distribution size does not match dimensions");
    }
    double sum = 0.0;
    for (double v : p_) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw Error(Errc::InvalidParameter, "probabilities must be finite and non-negative");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw Error(Errc::InvalidParameter, "probabilities sum to " + std::to_string(sum));
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return p_.size(); }
  double operator[](std::size_t i) const noexcept { return p_[i]; }
  std::span<const double> data() const noexcept { return p_; }

 private:
  int width_;
  int height_;
  std::vector<double> p_;
};

inline double sigmoid(double s) noexcept {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

/// Normalized 1-D Gaussian, truncated at radius ceil(3 sigma). Index i holds
/// the weight for offset i - radius.
inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw Error(Errc::InvalidParameter, "sigma must be positive");
  }
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * static_cast<std::size_t>(radius) + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

namespace detail {

// Half-sample symmetric reflection (d c b a | a b c d | d c b a), applied
// repeatedly so any offset maps into [0, n).
inline int reflect_index(int q, int n) noexcept {
  const int period = 2 * n;
  int m = q % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

}  // namespace detail

/// Separable Gaussian convolution with reflect padding. The padding scheme is
/// mass-preserving, so the global sum of the input is kept.
inline RealMap gaussian_smooth(const RealMap& in, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  const int w = in.width();
  const int h = in.height();

  RealMap tmp(w, h);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int j = -radius; j <= radius; ++j) {
        acc += k[j + radius] * in(r, detail::reflect_index(c + j, w));
      }
      tmp.at(r, c) = acc;
    }
  }
  RealMap out(w, h);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int j = -radius; j <= radius; ++j) {
        acc += k[j + radius] * tmp(detail::reflect_index(r + j, h), c);
      }
      out.at(r, c) = acc;
    }
  }
  return out;
}

inline RealMap gaussian_smooth(const Mask& m, double sigma) {
  std::vector<double> v(m.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = m[i];
  RealMap out = gaussian_smooth(RealMap(m.width(), m.height(), std::move(v)), sigma);
  // Rounding can leave values a hair outside [0,1].
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = std::clamp(out[i], 0.0, 1.0);
  return out;
}

/// Smoothed target normalized to a distribution over pixels.
inline PixelDistribution soft_target(const Mask& m, double sigma) {
  if (m.empty()) throw Error(Errc::EmptyTarget, "soft target of an all-background mask");
  const RealMap s = gaussian_smooth(m, sigma);
  double sum = 0.0;
  for (double v : s.data()) sum += v;
  std::vector<double> p(s.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = s[i] / sum;
  return PixelDistribution(m.width(), m.height(), std::move(p));
}

/// log softmax(x), evaluated with the max subtracted.
inline std::vector<double> log_softmax(std::span<const double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  double acc = 0.0;
  for (double v : x) acc += std::exp(v - mx);
  const double lse = mx + std::log(acc);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
  return out;
}

inline std::vector<double> softmax(std::span<const double> x) {
  auto out = log_softmax(x);
  for (double& v : out) v = std::exp(v);
  return out;
}

/// log q where q = softmax(sigmoid(s)) over every pixel of the slice.
inline std::vector<double> predicted_log_distribution(const ScoreMap& s) {
  std::vector<double> a(s.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = sigmoid(s[i]);
  return log_softmax(a);
}

inline PixelDistribution predicted_distribution(const ScoreMap& s) {
  auto q = predicted_log_distribution(s);
  for (double& v : q) v = std::exp(v);
  return PixelDistribution(s.width(), s.height(), std::move(q));
}

/// KL(p || q) = sum p log(p / max(q, eps_log)), with 0 log 0 = 0.
inline double kl_divergence(const PixelDistribution& p, const PixelDistribution& q,
                            double eps_log = 1e-12) {
  require_same_shape(p, q);
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    kl += p[i] * (std::log(p[i]) - std::log(std::max(q[i], eps_log)));
  }
  return kl;
}

inline double dice_loss(const ScoreMap& s, const Mask& t, double eps_dice = 1e-6) {
  require_same_shape(s, t);
  double inter = 0.0, sum_a = 0.0, sum_t = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double a = sigmoid(s[i]);
    inter += a * t[i];
    sum_a += a;
    sum_t += t[i];
  }
  return 1.0 - (2.0 * inter + eps_dice) / (sum_a + sum_t + eps_dice);
}

/// Mean binary cross-entropy in the score domain:
/// max(s, 0) - s t + log(1 + exp(-|s|)).
inline double bce_loss(const ScoreMap& s, const Mask& t) {
  require_same_shape(s, t);
  double acc = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double x = s[i];
    acc += std::max(x, 0.0) - x * t[i] + std::log1p(std::exp(-std::abs(x)));
  }
  return acc / static_cast<double>(s.size());
}

namespace detail {

// KL(p || softmax(sigmoid(s))) straight from log q, clamping at log(eps).
inline double kl_from_log_q(const PixelDistribution& p, const std::vector<double>& log_q,
                            double eps_log) {
  const double log_eps = std::log(eps_log);
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    kl += p[i] * (std::log(p[i]) - std::max(log_q[i], log_eps));
  }
  return kl;
}

}  // namespace detail

struct LossTerms {
  double dice = 0.0;
  double bce = 0.0;
  double kl = 0.0;  // zero and not evaluated when w_kl == 0
  double combined = 0.0;
};

inline LossTerms loss_terms(const ScoreMap& s, const Mask& t, const LossConfig& c) {
  c.validate();
  require_same_shape(s, t);
  LossTerms out;
  out.dice = dice_loss(s, t, c.eps_dice);
  out.bce = bce_loss(s, t);
  if (c.w_kl > 0.0) {
    const auto p = soft_target(t, c.sigma);
    out.kl = detail::kl_from_log_q(p, predicted_log_distribution(s), c.eps_log);
  }
  out.combined = c.w_dice * out.dice + c.w_ce * out.bce + c.w_kl * out.kl;
  return out;
}

inline double combined_loss(const ScoreMap& s, const Mask& t, const LossConfig& c = {}) {
  return loss_terms(s, t, c).combined;
}

/// Analytic dL/ds for the combined loss.
inline RealMap grad_combined_loss(const ScoreMap& s, const Mask& t, const LossConfig& c = {}) {
  c.validate();
  require_same_shape(s, t);
  const std::size_t n = s.size();

  std::vector<double> a(n);
  for (std::size_t i = 0; i < n; ++i) a[i] = sigmoid(s[i]);

  // Gradient with respect to the sigmoid outputs, except BCE which is
  // accumulated directly in the score domain.
  std::vector<double> d_a(n, 0.0);
  RealMap grad(s.width(), s.height());

  if (c.w_dice > 0.0) {
    double inter = 0.0, sum_a = 0.0, sum_t = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      inter += a[i] * t[i];
      sum_a += a[i];
      sum_t += t[i];
    }
    const double num = 2.0 * inter + c.eps_dice;
    const double den = sum_a + sum_t + c.eps_dice;
    for (std::size_t i = 0; i < n; ++i) {
      d_a[i] += -c.w_dice * (2.0 * t[i] * den - num) / (den * den);
    }
  }

  if (c.w_kl > 0.0) {
    const auto p = soft_target(t, c.sigma);
    const auto log_q = log_softmax(a);
    const double log_eps = std::log(c.eps_log);
    // Clamped entries carry no dependence on the scores.
    double active_mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (log_q[i] > log_eps) active_mass += p[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double own = log_q[i] > log_eps ? p[i] : 0.0;
      d_a[i] += c.w_kl * (std::exp(log_q[i]) * active_mass - own);
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    double g = d_a[i] * a[i] * (1.0 - a[i]);
    if (c.w_ce > 0.0) g += c.w_ce * (a[i] - t[i]) / static_cast<double>(n);
    grad.at(i) = g;
  }
  return grad;
}

/// Central differences of combined_loss with respect to each score.
inline RealMap finite_difference_gradient(const ScoreMap& s, const Mask& t, const LossConfig& c,
                                          double step = 1e-3) {
  RealMap out(s.width(), s.height());
  ScoreMap probe = s;
  for (std::size_t i = 0; i < s.size(); ++i) {
    probe.set(i, s[i] + step);
    const double up = combined_loss(probe, t, c);
    probe.set(i, s[i] - step);
    const double down = combined_loss(probe, t, c);
    probe.set(i, s[i]);
    out.at(i) = (up - down) / (2.0 * step);
  }
  return out;
}

/// ||a - b|| / max(||a||, ||b||, floor), Euclidean norms over all pixels.
inline double relative_error(const RealMap& a, const RealMap& b, double floor = 1e-12) {
  require_same_shape(a, b);
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor). Much stricter than
/// relative_error on pixels whose gradient is nearly zero.
inline double max_elementwise_relative_error(const RealMap& a, const RealMap& b,
                                             double floor = 1e-6) {
  require_same_shape(a, b);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

struct GradientCheck {
  double relative_error = 0.0;              // max over instances
  double elementwise_relative_error = 0.0;  // max over instances and pixels
};

/// Compares grad_combined_loss with central differences on `trials` random
/// size x size instances: scores uniform in [-3, 3], foreground rate 0.3,
/// at least one foreground pixel.
inline GradientCheck gradient_check(const LossConfig& c, CounterRng& rng, int trials, int size,
                                    double step = 1e-3) {
  GradientCheck out;
  for (int k = 0; k < trials; ++k) {
    ScoreMap s(size, size);
    Mask m(size, size);
    for (std::size_t i = 0; i < s.size(); ++i) s.set(i, rng.uniform(-3.0, 3.0));
    for (std::size_t i = 0; i < m.size(); ++i) m.set(i, rng.uniform() < 0.3);
    if (m.empty()) m.set(static_cast<std::size_t>(rng.next_u64() % m.size()), true);
    const auto analytic = grad_combined_loss(s, m, c);
    const auto numeric = finite_difference_gradient(s, m, c, step);
    out.relative_error = std::max(out.relative_error, relative_error(analytic, numeric));
    out.elementwise_relative_error =
        std::max(out.elementwise_relative_error, max_elementwise_relative_error(analytic, numeric));
  }
  return out;
}

}  // namespace scarbench::loss
