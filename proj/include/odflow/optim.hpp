#pragma once

#include <cmath>
#include <vector>

#include "odflow/tensor.hpp"

namespace odflow::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    for (const Tensor& p : params_) {
      m_.push_back(Eigen::MatrixXd::Zero(p.rows(), p.cols()));
      v_.push_back(Eigen::MatrixXd::Zero(p.rows(), p.cols()));
    }
  }

  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const Eigen::MatrixXd& g = params_[i].grad();
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      Eigen::MatrixXd m_hat = m_[i] / bc1;
      Eigen::MatrixXd v_hat = v_[i] / bc2;
      params_[i].mutable_values().array() -=
          lr * m_hat.array() / (v_hat.array().sqrt() + cfg_.eps);
    }
  }

  long long step_count() const { return t_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<Eigen::MatrixXd> m_, v_;
  long long t_ = 0;
};

}  // namespace odflow::nn
