#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "odflow/mass_model.hpp"
#include "odflow/train_view.hpp"

namespace odflow {

/// Huff destination-choice model: P_ij = A_j^alpha d_ij^(-beta) normalized
/// over all destinations except the origin. Attractiveness is the regression
/// inflow prediction so it exists for interest nodes too.
struct HuffParams {
  double alpha = 1.0;
  double beta = 1.0;
  Eigen::VectorXd attractiveness;  // A_j for every node
  Eigen::VectorXd margins;         // O_i: observed for regular, predicted for interest
  MassModel mass;
  bool fitted = false;
};

struct HuffOptions {
  double grid_min = 0.25;
  double grid_max = 3.0;
  double grid_step = 0.25;
};

/// Choice probabilities out of origin i for given exponents. Rows sum to one
/// over the destination set.
inline Eigen::VectorXd huff_probabilities(const FlowNetwork& net,
                                          const Eigen::VectorXd& attractiveness, int origin,
                                          double alpha, double beta) {
  const int n = net.n();
  Eigen::VectorXd numer = Eigen::VectorXd::Zero(n);
  for (int j = 0; j < n; ++j) {
    if (j == origin) continue;
    const double d = net.distance(origin, j);
    if (!(d > 0.0)) continue;
    if (attractiveness(j) <= 0.0) continue;
    numer(j) = std::pow(attractiveness(j), alpha) * std::pow(d, -beta);
  }
  const double denom = numer.sum();
  if (!(denom > 0.0))
    throw ComputeError("huff: zero denominator at origin " + std::to_string(origin) +
                       " (no positive attractiveness)");
  return numer / denom;
}

inline double huff_training_loss(const TrainView& view, const Eigen::VectorXd& attractiveness,
                                 const Eigen::VectorXd& margins, double alpha, double beta) {
  const FlowNetwork& net = view.network();
  const int n = net.n();
  // denominators per origin
  Eigen::VectorXd a_pow(n);
  for (int j = 0; j < n; ++j)
    a_pow(j) = attractiveness(j) > 0.0 ? std::pow(attractiveness(j), alpha) : 0.0;
  if (a_pow.maxCoeff() <= 0.0) throw ComputeError("huff: all attractiveness values are zero");

  std::vector<double> denom(static_cast<std::size_t>(n), 0.0);
  std::vector<char> origin_used(static_cast<std::size_t>(n), 0);
  for (const EdgeKey& e : view.train_edges) {
    origin_used[static_cast<std::size_t>(e.a)] = 1;
    origin_used[static_cast<std::size_t>(e.b)] = 1;
  }
  for (int i = 0; i < n; ++i) {
    if (!origin_used[static_cast<std::size_t>(i)]) continue;
    for (int j = 0; j < n; ++j) {
      if (j == i || a_pow(j) <= 0.0) continue;
      const double d = net.distance(i, j);
      if (d > 0.0) denom[static_cast<std::size_t>(i)] += a_pow(j) * std::pow(d, -beta);
    }
  }

  auto predict_directed = [&](int i, int j) {
    const double d = net.distance(i, j);
    if (!(d > 0.0) || a_pow(j) <= 0.0 || denom[static_cast<std::size_t>(i)] <= 0.0) return 0.0;
    return margins(i) * a_pow(j) * std::pow(d, -beta) / denom[static_cast<std::size_t>(i)];
  };

  double loss = 0.0;
  for (const EdgeKey& e : view.train_edges) {
    const double y = view.flows->flow(e.a, e.b);
    const double r1 = y - predict_directed(e.a, e.b);
    const double r2 = y - predict_directed(e.b, e.a);
    loss += r1 * r1 + r2 * r2;
  }
  return loss;
}

inline HuffParams fit_huff(const TrainView& view, const HuffOptions& opts = {}) {
  const FlowNetwork& net = view.network();
  HuffParams params;
  params.mass = MassModel::fit(view);

  const int n = net.n();
  params.attractiveness = Eigen::VectorXd::Zero(n);
  for (int j = 0; j < n; ++j)
    params.attractiveness(j) = params.mass.predict_in(net, view.scaler, j);
  if (params.attractiveness.maxCoeff() <= 0.0)
    throw ComputeError("fit_huff: all predicted attractiveness values are zero");

  params.margins = Eigen::VectorXd::Zero(n);
  for (int node : view.regular_nodes) params.margins(node) = view.visible_margin(node);
  for (int node : view.interest_nodes)
    params.margins(node) = params.mass.predict_out(net, view.scaler, node);

  double best_loss = std::numeric_limits<double>::infinity();
  for (double alpha = opts.grid_min; alpha <= opts.grid_max + 1e-12; alpha += opts.grid_step) {
    for (double beta = opts.grid_min; beta <= opts.grid_max + 1e-12; beta += opts.grid_step) {
      const double loss =
          huff_training_loss(view, params.attractiveness, params.margins, alpha, beta);
      if (loss < best_loss) {
        best_loss = loss;
        params.alpha = alpha;
        params.beta = beta;
      }
    }
  }
  params.fitted = true;
  return params;
}

inline double predict_huff_directed(const HuffParams& params, const FlowNetwork& net, int i,
                                    int j) {
  if (!params.fitted) throw DataError("predict_huff: parameters not fitted");
  if (i == j) return 0.0;
  const Eigen::VectorXd p = huff_probabilities(net, params.attractiveness, i, params.alpha,
                                               params.beta);
  return params.margins(i) * p(j);
}

inline double predict_huff(const HuffParams& params, const FlowNetwork& net, int i, int j) {
  return (predict_huff_directed(params, net, i, j) + predict_huff_directed(params, net, j, i)) /
         2.0;
}

}  // namespace odflow
