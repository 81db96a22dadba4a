#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "odflow/config.hpp"
#include "odflow/network.hpp"

namespace odflow {

/// Synthetic-city recipe: lognormal node masses, gravity flows with power-law
/// distance decay, optional non-separable feature interaction, Poisson
/// sampling. One node per grid cell.
struct SynthConfig {
  int n_rows = 10;
  int n_cols = 10;
  double cell_size = 500.0;
  double mass_mu = 0.0;     // lognormal log-mean of node masses
  double mass_sigma = 1.0;  // lognormal log-sd
  double gravity_beta = 2.0;
  double flow_scale = 5e4;  // expected total trips, both directions
  double nonlinear_term = 0.0;
  std::uint64_t seed = 0;
  int n_distractors = 3;
  int noisy_copies = 2;
  double noise_sigma = 0.25;

  void validate() const {
    if (n_rows * n_cols < 2) throw DataError("SynthConfig: grid must have at least 2 cells");
    if (!(gravity_beta > 0.0)) throw DataError("SynthConfig: gravity_beta must be > 0");
    if (!(flow_scale > 0.0)) throw DataError("SynthConfig: flow_scale must be > 0");
    if (nonlinear_term < 0.0) throw DataError("SynthConfig: nonlinear_term must be >= 0");
    if (n_distractors < 0 || noisy_copies < 0)
      throw DataError("SynthConfig: feature counts must be >= 0");
  }

  static SynthConfig from_config(const Config& cfg) {
    SynthConfig s;
    s.n_rows = static_cast<int>(cfg.get_int("synth.n_rows", s.n_rows));
    s.n_cols = static_cast<int>(cfg.get_int("synth.n_cols", s.n_cols));
    s.cell_size = cfg.get_double("synth.cell_size", s.cell_size);
    s.mass_mu = cfg.get_double("synth.mass_mu", s.mass_mu);
    s.mass_sigma = cfg.get_double("synth.mass_sigma", s.mass_sigma);
    s.gravity_beta = cfg.get_double("synth.gravity_beta", s.gravity_beta);
    s.flow_scale = cfg.get_double("synth.flow_scale", s.flow_scale);
    s.nonlinear_term = cfg.get_double("synth.nonlinear_term", s.nonlinear_term);
    s.seed = static_cast<std::uint64_t>(cfg.get_int("synth.seed", 0));
    s.n_distractors = static_cast<int>(cfg.get_int("synth.n_distractors", s.n_distractors));
    s.noisy_copies = static_cast<int>(cfg.get_int("synth.noisy_copies", s.noisy_copies));
    s.noise_sigma = cfg.get_double("synth.noise_sigma", s.noise_sigma);
    return s;
  }
};

/// Latent process behind a synthetic city, kept for verification.
struct GroundTruth {
  Eigen::MatrixXd mu;      // latent mean flows, symmetric, zero diagonal
  double beta = 0.0;       // planted decay exponent
  Eigen::VectorXd masses;  // planted node masses
};

/// Draws a synthetic city. Flows are Poisson samples around a gravity mean
/// mu_ij ~ m_i m_j d_ij^(-beta) (1 + a g(x_i, x_j)) scaled to flow_scale.
/// The interaction g is a soft XOR of sharpened mass gates, observable from
/// the node features but not additive (hence not log-linear) in them.
inline std::pair<FlowNetwork, GroundTruth> generate_synthetic_city(const SynthConfig& cfg) {
  cfg.validate();
  GridSpec grid{0.0, 0.0, cfg.cell_size, cfg.n_rows, cfg.n_cols};
  const int n = grid.n_cells();
  std::mt19937_64 rng(cfg.seed);

  Eigen::VectorXd masses(n);
  {
    std::lognormal_distribution<double> mass_dist(cfg.mass_mu, cfg.mass_sigma);
    for (int i = 0; i < n; ++i) masses(i) = mass_dist(rng);
  }

  const int p = 1 + cfg.noisy_copies + cfg.n_distractors;
  Eigen::MatrixXd node_features(n, p);
  std::vector<std::string> node_names;
  node_names.push_back("log_mass");
  for (int c = 0; c < cfg.noisy_copies; ++c) node_names.push_back("log_mass_noisy" + std::to_string(c + 1));
  for (int c = 0; c < cfg.n_distractors; ++c) node_names.push_back("distractor" + std::to_string(c + 1));
  {
    std::normal_distribution<double> copy_noise(0.0, cfg.noise_sigma);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
      const double lm = std::log(masses(i));
      node_features(i, 0) = lm;
      for (int c = 0; c < cfg.noisy_copies; ++c) node_features(i, 1 + c) = lm + copy_noise(rng);
      for (int c = 0; c < cfg.n_distractors; ++c)
        node_features(i, 1 + cfg.noisy_copies + c) = unit(rng);
    }
  }

  std::vector<int> node_cell(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) node_cell[static_cast<std::size_t>(i)] = i;

  std::unordered_map<EdgeKey, std::vector<double>, EdgeKeyHash> edge_features;
  edge_features.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(n - 1) / 2);
  {
    std::normal_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        const double d = grid.centroid_distance(i, j);
        edge_features.emplace(EdgeKey(i, j),
                              std::vector<double>{d, std::log(d), unit(rng)});
      }
    }
  }

  // standardized log-mass drives the non-separable interaction term: a soft
  // XOR that boosts flows between one high-mass and one low-mass endpoint.
  // XOR is not representable by any additive function of endpoint features,
  // so log-linear models cannot absorb it
  Eigen::VectorXd z = node_features.col(0);
  z.array() -= z.mean();
  const double zsd = std::sqrt(z.array().square().mean());
  if (zsd > 0.0) z /= zsd;
  auto gate = [](double v) { return 1.0 / (1.0 + std::exp(-4.0 * v)); };
  auto interaction = [&](double zi, double zj) {
    const double gi = gate(zi), gj = gate(zj);
    return gi + gj - 2.0 * gi * gj;
  };

  Eigen::MatrixXd mu = Eigen::MatrixXd::Zero(n, n);
  double raw_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d = grid.centroid_distance(i, j);
      double v = masses(i) * masses(j) * std::pow(d, -cfg.gravity_beta);
      v *= 1.0 + cfg.nonlinear_term * interaction(z(i), z(j));
      mu(i, j) = v;
      mu(j, i) = v;
      raw_sum += 2.0 * v;
    }
  }
  const double scale = cfg.flow_scale / raw_sum;
  mu *= scale;

  std::unordered_map<EdgeKey, double, EdgeKeyHash> flows;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      std::poisson_distribution<long long> pois(mu(i, j));
      const long long w = pois(rng);
      if (w > 0) flows.emplace(EdgeKey(i, j), static_cast<double>(w));
    }
  }
  if (flows.empty())
    throw ComputeError("generate_synthetic_city: all sampled flows are zero; raise flow_scale");

  FlowNetwork net(grid, std::move(node_cell), std::move(node_features), std::move(node_names),
                  {"distance", "log_distance", "edge_noise"}, std::move(flows),
                  std::move(edge_features), 0, 1);
  return {std::move(net), GroundTruth{std::move(mu), cfg.gravity_beta, std::move(masses)}};
}

}  // namespace odflow
