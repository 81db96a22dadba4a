#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "odflow/common.hpp"

namespace odflow {

enum class GlmFamily { poisson, negbin };

struct GLMParams {
  Eigen::VectorXd coefficients;  // intercept first
  GlmFamily family = GlmFamily::poisson;
  double dispersion = 0.0;  // NB2 theta; variance = mu + mu^2 / theta
  bool ridge_applied = false;
  bool dispersion_capped = false;
  bool fitted = false;
};

struct GlmFitReport {
  int iterations = 0;
  int outer_iterations = 0;
  double deviance = 0.0;
  std::vector<double> deviance_trace;
  std::size_t rounded_responses = 0;
};

struct GlmOptions {
  double deviance_tol = 1e-8;
  int max_iterations = 100;
  double negbin_tol = 1e-6;
  int negbin_max_outer = 50;
  double coef_limit = 1e3;        // separation / divergence guard
  double dispersion_cap = 1e6;    // effectively Poisson beyond this
  double ridge = 1e-8;            // jitter for a singular weighted normal matrix
};

namespace detail {

inline double poisson_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double m = std::max(mu(i), 1e-12);
    dev += y(i) > 0.0 ? 2.0 * (y(i) * std::log(y(i) / m) - (y(i) - m)) : 2.0 * m;
  }
  return dev;
}

inline double negbin_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, double theta) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double m = std::max(mu(i), 1e-12);
    const double a = y(i) > 0.0 ? y(i) * std::log(y(i) / m) : 0.0;
    dev += 2.0 * (a - (y(i) + theta) * std::log((y(i) + theta) / (m + theta)));
  }
  return dev;
}

inline Eigen::VectorXd mean_from_eta(const Eigen::VectorXd& eta) {
  Eigen::VectorXd mu(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) mu(i) = std::exp(std::min(eta(i), 700.0));
  return mu;
}

/// One IRLS run at a fixed variance function. `theta` <= 0 means Poisson.
inline Eigen::VectorXd irls_log_link(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                     double theta, const GlmOptions& opts, GLMParams* flags,
                                     GlmFitReport* report, Eigen::VectorXd coef) {
  const Eigen::Index n = X.rows(), p = X.cols();
  if (coef.size() != p) {
    coef = Eigen::VectorXd::Zero(p);
    coef(0) = std::log(std::max(y.mean(), 1e-8));
  }
  auto deviance = [&](const Eigen::VectorXd& mu) {
    return theta > 0.0 ? negbin_deviance(y, mu, theta) : poisson_deviance(y, mu);
  };

  Eigen::VectorXd eta = X * coef;
  Eigen::VectorXd mu = mean_from_eta(eta);
  double dev = deviance(mu);
  if (report) report->deviance_trace.push_back(dev);

  for (int iter = 1; iter <= opts.max_iterations; ++iter) {
    Eigen::VectorXd w(n), z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = std::max(mu(i), 1e-10);
      // log link: weight = (dmu/deta)^2 / Var = mu^2 / Var
      w(i) = theta > 0.0 ? m / (1.0 + m / theta) : m;
      z(i) = eta(i) + (y(i) - m) / m;
    }
    Eigen::MatrixXd xtwx = X.transpose() * w.asDiagonal() * X;
    Eigen::VectorXd xtwz = X.transpose() * w.asDiagonal() * z;
    Eigen::VectorXd next = xtwx.ldlt().solve(xtwz);
    if (!next.allFinite()) {
      xtwx.diagonal().array() += opts.ridge;
      next = xtwx.ldlt().solve(xtwz);
      if (flags) flags->ridge_applied = true;
      if (!next.allFinite())
        throw ComputeError("glm: weighted normal matrix is singular even with ridge jitter");
    }

    // step halving keeps the deviance non-increasing
    Eigen::VectorXd candidate = next;
    Eigen::VectorXd cand_eta = X * candidate;
    Eigen::VectorXd cand_mu = mean_from_eta(cand_eta);
    double cand_dev = deviance(cand_mu);
    for (int half = 0; half < 32 && (!std::isfinite(cand_dev) || cand_dev > dev); ++half) {
      candidate = (candidate + coef) / 2.0;
      cand_eta = X * candidate;
      cand_mu = mean_from_eta(cand_eta);
      cand_dev = deviance(cand_mu);
    }
    if (!std::isfinite(cand_dev) || cand_dev > dev) break;  // no improving step

    coef = candidate;
    eta = cand_eta;
    mu = cand_mu;
    if (coef.cwiseAbs().maxCoeff() > opts.coef_limit)
      throw ComputeError(
          "glm: coefficients diverged (possible separation); consider regularization or "
          "rescaled covariates");
    const double improvement = dev - cand_dev;
    dev = cand_dev;
    if (report) {
      report->deviance_trace.push_back(dev);
      report->iterations = iter;
      report->deviance = dev;
    }
    if (improvement < opts.deviance_tol) break;
  }
  return coef;
}

}  // namespace detail

/// Poisson regression with a log link via iteratively reweighted least
/// squares. X must carry the intercept as its first column; y is rounded to
/// integers (flows are counts), with the number of rounded entries reported.
inline GLMParams fit_poisson(const Eigen::MatrixXd& X, Eigen::VectorXd y,
                             const GlmOptions& opts = {}, GlmFitReport* report = nullptr) {
  if (X.rows() != y.size()) throw DataError("fit_poisson: X rows != y length");
  if (X.rows() < 1) throw DataError("fit_poisson: empty design");
  std::size_t rounded = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y(i) < 0.0) throw DataError("fit_poisson: negative response at row " + std::to_string(i));
    const double r = std::round(y(i));
    if (r != y(i)) ++rounded;
    y(i) = r;
  }
  if (report) report->rounded_responses = rounded;
  if (y.maxCoeff() <= 0.0) throw DataError("fit_poisson: all responses are zero");

  GLMParams params;
  params.family = GlmFamily::poisson;
  params.coefficients = detail::irls_log_link(X, y, 0.0, opts, &params, report, Eigen::VectorXd());
  params.fitted = true;
  return params;
}

/// Negative binomial (NB2) regression: alternates IRLS at fixed dispersion
/// with a method-of-moments dispersion update from Pearson residuals.
inline GLMParams fit_negbin(const Eigen::MatrixXd& X, Eigen::VectorXd y,
                            const GlmOptions& opts = {}, GlmFitReport* report = nullptr) {
  if (X.rows() != y.size()) throw DataError("fit_negbin: X rows != y length");
  std::size_t rounded = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y(i) < 0.0) throw DataError("fit_negbin: negative response at row " + std::to_string(i));
    const double r = std::round(y(i));
    if (r != y(i)) ++rounded;
    y(i) = r;
  }
  if (report) report->rounded_responses = rounded;
  if (y.maxCoeff() <= 0.0) throw DataError("fit_negbin: all responses are zero");

  GLMParams params;
  params.family = GlmFamily::negbin;

  // moment estimator: 1/theta = sum((y - mu)^2 - mu) / sum(mu^2)
  auto update_theta = [&](const Eigen::VectorXd& mu) {
    double num = 0.0, den = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      num += (y(i) - mu(i)) * (y(i) - mu(i)) - mu(i);
      den += mu(i) * mu(i);
    }
    if (den <= 0.0 || num <= 0.0) return opts.dispersion_cap;  // no over-dispersion
    return std::min(den / num, opts.dispersion_cap);
  };

  Eigen::VectorXd coef =
      detail::irls_log_link(X, y, 0.0, opts, &params, nullptr, Eigen::VectorXd());
  double theta = update_theta(detail::mean_from_eta(X * coef));

  for (int outer = 1; outer <= opts.negbin_max_outer; ++outer) {
    if (report) report->outer_iterations = outer;
    Eigen::VectorXd next_coef = detail::irls_log_link(X, y, theta, opts, &params, report, coef);
    const double next_theta = update_theta(detail::mean_from_eta(X * next_coef));
    const double change = (next_coef - coef).cwiseAbs().maxCoeff() +
                          std::abs(next_theta - theta) / std::max(theta, 1.0);
    coef = next_coef;
    theta = next_theta;
    if (change < opts.negbin_tol) break;
    if (theta >= opts.dispersion_cap) break;
  }

  params.coefficients = coef;
  params.dispersion = theta;
  params.dispersion_capped = theta >= opts.dispersion_cap;
  params.fitted = true;
  return params;
}

/// Mean prediction exp(coef . x) with the linear predictor clamped at 700.
inline double predict_glm(const GLMParams& params, const Eigen::VectorXd& x_with_intercept,
                          bool* clamped = nullptr) {
  if (!params.fitted) throw DataError("predict_glm: parameters not fitted");
  if (x_with_intercept.size() != params.coefficients.size())
    throw DataError("predict_glm: covariate length mismatch");
  double eta = params.coefficients.dot(x_with_intercept);
  if (clamped) *clamped = eta > 700.0;
  if (eta > 700.0) eta = 700.0;
  return std::exp(eta);
}

}  // namespace odflow
